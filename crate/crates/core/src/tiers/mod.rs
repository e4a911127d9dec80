//! Time-aligned annotation documents.
//!
//! A document is a set of named tiers on one session timeline. Tier kinds are
//! inferred from their names:
//!
//! | name               | kind       |
//! |--------------------|------------|
//! | `speech@<who>`     | speech     |
//! | `seqthread@<A..>`  | sequential |
//! | `byplay@<A..>`     | byplay     |
//! | `alignment`        | alignment  |
//! | `labels`           | label      |
//!
//! Anything else is `other`. The alignment tier maps the session timeline back
//! to the source recordings; each of its segments has the value
//! `<recording>@<offset_ms>` (the offset may be omitted and defaults to 0).

mod eaf;
mod interchange;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eaf::{export_eaf_subset, import_eaf_subset};
pub use interchange::{export_interchange, import_interchange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierKind {
    Speech,
    Sequential,
    Byplay,
    Alignment,
    Label,
    Other,
}

impl TierKind {
    /// Kind and participant implied by a tier name.
    pub fn infer(name: &str) -> (TierKind, Option<&str>) {
        match name.split_once('@') {
            Some(("speech", who)) if !who.is_empty() => (TierKind::Speech, Some(who)),
            Some(("seqthread", t)) if !t.is_empty() => (TierKind::Sequential, None),
            Some(("byplay", t)) if !t.is_empty() => (TierKind::Byplay, None),
            _ => match name {
                "alignment" => (TierKind::Alignment, None),
                "labels" => (TierKind::Label, None),
                _ => (TierKind::Other, None),
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TierKind::Speech => "speech",
            TierKind::Sequential => "sequential",
            TierKind::Byplay => "byplay",
            TierKind::Alignment => "alignment",
            TierKind::Label => "label",
            TierKind::Other => "other",
        }
    }
}

impl std::str::FromStr for TierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "speech" => TierKind::Speech,
            "sequential" => TierKind::Sequential,
            "byplay" => TierKind::Byplay,
            "alignment" => TierKind::Alignment,
            "label" => TierKind::Label,
            "other" => TierKind::Other,
            other => return Err(format!("unknown tier kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub value: String,
}

impl Segment {
    pub fn new(start_ms: u64, end_ms: u64, value: impl Into<String>) -> Self {
        Segment {
            start_ms,
            end_ms,
            value: value.into(),
        }
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms.saturating_sub(self.start_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tier {
    pub name: String,
    pub kind: TierKind,
    pub participant: Option<String>,
    pub segments: Vec<Segment>,
}

impl Tier {
    /// A tier whose kind and participant come from its name.
    pub fn named(name: impl Into<String>, segments: Vec<Segment>) -> Self {
        let name = name.into();
        let (kind, participant) = TierKind::infer(&name);
        let participant = participant.map(str::to_string);
        Tier {
            name,
            kind,
            participant,
            segments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub session_id: String,
    pub timeline_duration_ms: u64,
    pub tiers: Vec<Tier>,
}

impl AnnotationDocument {
    /// Builds a document with tiers in name order.
    pub fn new(session_id: impl Into<String>, timeline_duration_ms: u64, mut tiers: Vec<Tier>) -> Self {
        tiers.sort_by(|a, b| a.name.cmp(&b.name));
        AnnotationDocument {
            session_id: session_id.into(),
            timeline_duration_ms,
            tiers,
        }
    }

    pub fn tier(&self, name: &str) -> Option<&Tier> {
        self.tiers.iter().find(|t| t.name == name)
    }

    pub fn tiers_of_kind(&self, kind: TierKind) -> impl Iterator<Item = &Tier> {
        self.tiers.iter().filter(move |t| t.kind == kind)
    }

    /// Entries of the single alignment tier.
    pub fn alignment_entries(&self) -> Result<Vec<AlignmentEntry>, TierError> {
        let mut tiers = self.tiers_of_kind(TierKind::Alignment);
        let tier = tiers.next().ok_or(TierError::NoAlignmentTier)?;
        if tiers.next().is_some() {
            return Err(TierError::MultipleAlignmentTiers);
        }
        let mut entries = tier
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                AlignmentEntry::from_segment(s).ok_or_else(|| TierError::BadAlignmentValue {
                    segment: i,
                    value: s.value.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        entries.sort_by_key(|e| (e.ref_start_ms, e.ref_end_ms));
        Ok(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub source_recording_id: String,
    pub ref_start_ms: u64,
    pub ref_end_ms: u64,
    /// Position of `ref_start_ms` inside the source recording.
    pub source_offset_ms: u64,
}

impl AlignmentEntry {
    pub fn from_segment(segment: &Segment) -> Option<Self> {
        let value = segment.value.trim();
        let (id, offset) = match value.rsplit_once('@') {
            Some((id, offset)) => (id, offset.parse().ok()?),
            None => (value, 0),
        };
        if id.is_empty() {
            return None;
        }
        Some(AlignmentEntry {
            source_recording_id: id.to_string(),
            ref_start_ms: segment.start_ms,
            ref_end_ms: segment.end_ms,
            source_offset_ms: offset,
        })
    }

    pub fn to_segment(&self) -> Segment {
        Segment::new(
            self.ref_start_ms,
            self.ref_end_ms,
            format!("{}@{}", self.source_recording_id, self.source_offset_ms),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TierError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("unsupported element <{0}>")]
    Unsupported(String),
    #[error("annotation {annotation} references missing time slot {slot:?}")]
    DanglingTimeSlot { annotation: String, slot: String },
    #[error("time slot {slot:?} has no usable time value")]
    UnalignedTimeSlot { slot: String },
    #[error("negative time {value} in {context}")]
    NegativeTime { value: i64, context: String },
    #[error("interchange line {line}: {message}")]
    Interchange { line: usize, message: String },
    #[error("document is invalid: {}", summarize(.0))]
    Invalid(Vec<TierDiagnostic>),
    #[error("document has no alignment tier")]
    NoAlignmentTier,
    #[error("document has more than one alignment tier")]
    MultipleAlignmentTiers,
    #[error("alignment segment {segment} has malformed value {value:?}")]
    BadAlignmentValue { segment: usize, value: String },
}

fn summarize(diags: &[TierDiagnostic]) -> String {
    diags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TierIssue {
    DuplicateTierName,
    EmptySpan,
    BeyondTimeline { end_ms: u64 },
    Unsorted,
    Overlap { previous: usize },
    EmptyTier,
    SpeechWithoutParticipant,
    BadAlignmentValue,
    MultipleAlignmentTiers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierDiagnostic {
    pub severity: Severity,
    pub tier: String,
    pub segment: Option<usize>,
    pub issue: TierIssue,
}

impl fmt::Display for TierDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}: tier {:?}", self.tier)?;
        if let Some(i) = self.segment {
            write!(f, " segment {i}")?;
        }
        let what = match &self.issue {
            TierIssue::DuplicateTierName => "duplicate tier name".to_string(),
            TierIssue::EmptySpan => "segment does not end after it starts".to_string(),
            TierIssue::BeyondTimeline { end_ms } => format!("ends at {end_ms} ms, past the timeline"),
            TierIssue::Unsorted => "segment starts before the previous one".to_string(),
            TierIssue::Overlap { previous } => format!("overlaps segment {previous}"),
            TierIssue::EmptyTier => "tier has no segments".to_string(),
            TierIssue::SpeechWithoutParticipant => "speech tier has no participant".to_string(),
            TierIssue::BadAlignmentValue => "alignment value is not <recording>@<offset>".to_string(),
            TierIssue::MultipleAlignmentTiers => "more than one alignment tier".to_string(),
        };
        write!(f, ": {what}")
    }
}

/// Structural checks. Errors for broken invariants, warnings for empty tiers
/// and speech tiers without a participant.
pub fn validate_tiers(doc: &AnnotationDocument) -> Vec<TierDiagnostic> {
    let mut out = Vec::new();
    let mut push = |severity, tier: &Tier, segment, issue| {
        out.push(TierDiagnostic {
            severity,
            tier: tier.name.clone(),
            segment,
            issue,
        })
    };
    let mut seen = BTreeSet::new();
    let mut alignment_tiers = 0;
    for tier in &doc.tiers {
        if !seen.insert(tier.name.as_str()) {
            push(Severity::Error, tier, None, TierIssue::DuplicateTierName);
        }
        if tier.segments.is_empty() {
            push(Severity::Warning, tier, None, TierIssue::EmptyTier);
        }
        if tier.kind == TierKind::Speech && tier.participant.as_deref().is_none_or(str::is_empty) {
            push(Severity::Warning, tier, None, TierIssue::SpeechWithoutParticipant);
        }
        if tier.kind == TierKind::Alignment {
            alignment_tiers += 1;
            if alignment_tiers == 2 {
                push(Severity::Error, tier, None, TierIssue::MultipleAlignmentTiers);
            }
        }
        for (i, seg) in tier.segments.iter().enumerate() {
            if seg.start_ms >= seg.end_ms {
                push(Severity::Error, tier, Some(i), TierIssue::EmptySpan);
            }
            if seg.end_ms > doc.timeline_duration_ms {
                push(
                    Severity::Error,
                    tier,
                    Some(i),
                    TierIssue::BeyondTimeline { end_ms: seg.end_ms },
                );
            }
            if i > 0 {
                let prev = &tier.segments[i - 1];
                if seg.start_ms < prev.start_ms {
                    push(Severity::Error, tier, Some(i), TierIssue::Unsorted);
                } else if seg.start_ms < prev.end_ms {
                    push(Severity::Error, tier, Some(i), TierIssue::Overlap { previous: i - 1 });
                }
            }
            if tier.kind == TierKind::Alignment && AlignmentEntry::from_segment(seg).is_none() {
                push(Severity::Error, tier, Some(i), TierIssue::BadAlignmentValue);
            }
        }
    }
    out
}

pub fn has_errors(diags: &[TierDiagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Fails with [`TierError::Invalid`] when validation finds errors.
pub fn ensure_valid(doc: AnnotationDocument) -> Result<AnnotationDocument, TierError> {
    let diags = validate_tiers(&doc);
    if has_errors(&diags) {
        return Err(TierError::Invalid(
            diags.into_iter().filter(|d| d.severity == Severity::Error).collect(),
        ));
    }
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRange {
    pub source_recording_id: String,
    pub start_ms_in_source: u64,
    pub end_ms_in_source: u64,
}

impl SourceRange {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms_in_source - self.start_ms_in_source
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapWarning {
    /// The segment spans more than one recording.
    Split,
    /// Part of the segment is covered by no recording.
    Uncovered { start_ms: u64, end_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceMapping {
    pub ranges: Vec<SourceRange>,
    pub warnings: Vec<MapWarning>,
}

/// Translates a timeline segment into ranges of the source recordings.
///
/// ```
/// use seqanno::tiers::{map_to_source, AnnotationDocument, Segment, Tier};
///
/// let doc = AnnotationDocument::new(
///     "s1",
///     3_600_000,
///     vec![Tier::named("alignment", vec![Segment::new(5_000, 3_600_000, "R1@0")])],
/// );
/// let mapped = map_to_source(&doc, &Segment::new(10_000, 15_000, "")).unwrap();
/// assert_eq!(mapped.ranges[0].start_ms_in_source, 5_000);
/// assert_eq!(mapped.ranges[0].end_ms_in_source, 10_000);
/// ```
pub fn map_to_source(doc: &AnnotationDocument, segment: &Segment) -> Result<SourceMapping, TierError> {
    let entries = doc.alignment_entries()?;
    let (start, end) = (segment.start_ms, segment.end_ms);
    let mut ranges = Vec::new();
    let mut warnings = Vec::new();
    let mut cursor = start;
    for entry in &entries {
        let lo = start.max(entry.ref_start_ms);
        let hi = end.min(entry.ref_end_ms);
        if lo >= hi {
            continue;
        }
        if lo > cursor {
            warnings.push(MapWarning::Uncovered {
                start_ms: cursor,
                end_ms: lo,
            });
        }
        cursor = cursor.max(hi);
        ranges.push(SourceRange {
            source_recording_id: entry.source_recording_id.clone(),
            start_ms_in_source: lo - entry.ref_start_ms + entry.source_offset_ms,
            end_ms_in_source: hi - entry.ref_start_ms + entry.source_offset_ms,
        });
    }
    if cursor < end {
        warnings.push(MapWarning::Uncovered {
            start_ms: cursor,
            end_ms: end,
        });
    }
    if ranges.len() > 1 {
        warnings.insert(0, MapWarning::Split);
    }
    Ok(SourceMapping { ranges, warnings })
}

/// Tier-kind overrides applied on import, keyed by tier name.
pub type KindOverrides = BTreeMap<String, TierKind>;

pub(crate) fn resolve_kind(
    name: &str,
    participant: Option<String>,
    overrides: &KindOverrides,
) -> (TierKind, Option<String>) {
    let (inferred, named) = TierKind::infer(name);
    let kind = overrides.get(name).copied().unwrap_or(inferred);
    let participant = participant.or_else(|| named.map(str::to_string));
    (kind, participant)
}
