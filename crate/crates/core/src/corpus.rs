//! Corpus directories: indexing, label search, statistics and cut-lists.
//!
//! ```text
//! <root>/registry.conf                 optional tag registry
//! <root>/sessions/<id>/annotations.eaf or annotations.jsonl
//! <root>/sessions/<id>/clips.tsv       clip_id, start_ms, end_ms, labels[, notes]
//! <root>/sessions/<id>/transcript.txt  optional
//! ```
//!
//! Clip files are tab-separated, one clip per line; blank lines and lines
//! starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::labels::{parse_label_string, LabelQuery, LabelSequence, LabelToken, TagRegistry};
use crate::sequence::{import_from_tiers, latencies, replay, CategoryRegistry, Span};
use crate::tiers::{
    import_eaf_subset, import_interchange, map_to_source, AnnotationDocument, KindOverrides,
    MapWarning, Segment, TierKind,
};
use crate::transcript::{parse_transcript, EventKind, Transcript, MEASURED_SILENCE_MIN_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDiagnostic {
    pub level: Level,
    /// Path relative to the corpus root, with `/` separators.
    pub path: String,
    pub message: String,
}

impl CorpusDiagnostic {
    fn new(level: Level, path: impl Into<String>, message: impl Into<String>) -> Self {
        CorpusDiagnostic {
            level,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for CorpusDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            Level::Warning => "warning",
            Level::Error => "error",
        };
        if self.path.is_empty() {
            write!(f, "{level}: {}", self.message)
        } else {
            write!(f, "{level}: {}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub session_id: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub labels: LabelSequence,
    pub notes: Option<String>,
}

impl ClipRecord {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub document: AnnotationDocument,
    /// Source recordings named by the alignment tier.
    pub recordings: BTreeSet<String>,
    pub transcript: Option<Transcript>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub registry: TagRegistry,
    pub sessions: BTreeMap<String, SessionEntry>,
    /// In session order, then file order.
    pub clips: Vec<ClipRecord>,
}

impl CorpusIndex {
    pub fn empty(registry: TagRegistry) -> Self {
        CorpusIndex {
            registry,
            sessions: BTreeMap::new(),
            clips: Vec::new(),
        }
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltIndex {
    pub index: CorpusIndex,
    pub diagnostics: Vec<CorpusDiagnostic>,
}

struct LoadedSession {
    id: String,
    entry: Option<SessionEntry>,
    clips: Vec<ClipRecord>,
    diagnostics: Vec<CorpusDiagnostic>,
}

fn load_document(dir: &Path, rel: &str, id: &str) -> Result<AnnotationDocument, CorpusDiagnostic> {
    let eaf = dir.join("annotations.eaf");
    let jsonl = dir.join("annotations.jsonl");
    let err = |path: String, msg: String| CorpusDiagnostic::new(Level::Error, path, msg);
    match (eaf.is_file(), jsonl.is_file()) {
        (true, true) => Err(err(
            rel.to_string(),
            "both annotations.eaf and annotations.jsonl present".into(),
        )),
        (false, false) => Err(err(rel.to_string(), "no annotations file; session skipped".into())),
        (true, false) => {
            let path = format!("{rel}/annotations.eaf");
            let bytes = fs::read(&eaf).map_err(|e| err(path.clone(), e.to_string()))?;
            import_eaf_subset(&bytes, Some(id), &KindOverrides::new()).map_err(|e| err(path, e.to_string()))
        }
        (false, true) => {
            let path = format!("{rel}/annotations.jsonl");
            let bytes = fs::read(&jsonl).map_err(|e| err(path.clone(), e.to_string()))?;
            import_interchange(&bytes).map_err(|e| err(path, e.to_string()))
        }
    }
}

fn load_session(root: &Path, id: &str, registry: &TagRegistry) -> LoadedSession {
    let dir = root.join("sessions").join(id);
    let rel = format!("sessions/{id}");
    let mut diagnostics = Vec::new();

    let entry = match load_document(&dir, &rel, id) {
        Ok(document) => {
            let recordings = match document.alignment_entries() {
                Ok(entries) => entries.into_iter().map(|e| e.source_recording_id).collect(),
                Err(e) => {
                    diagnostics.push(CorpusDiagnostic::new(Level::Warning, rel.clone(), e.to_string()));
                    BTreeSet::new()
                }
            };
            let transcript_path = dir.join("transcript.txt");
            let transcript = if transcript_path.is_file() {
                let path = format!("{rel}/transcript.txt");
                match fs::read_to_string(&transcript_path)
                    .map_err(|e| e.to_string())
                    .and_then(|t| parse_transcript(&t).map_err(|e| e.to_string()))
                {
                    Ok(t) => Some(t),
                    Err(e) => {
                        diagnostics.push(CorpusDiagnostic::new(Level::Error, path, e));
                        None
                    }
                }
            } else {
                None
            };
            Some(SessionEntry {
                document,
                recordings,
                transcript,
            })
        }
        Err(d) => {
            diagnostics.push(d);
            None
        }
    };

    let mut clips = Vec::new();
    let clips_path = dir.join("clips.tsv");
    let clips_rel = format!("{rel}/clips.tsv");
    if clips_path.is_file() {
        match fs::read_to_string(&clips_path) {
            Err(e) => diagnostics.push(CorpusDiagnostic::new(Level::Error, clips_rel, e.to_string())),
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let at = format!("{clips_rel}:{}", i + 1);
                    match parse_clip_line(line, id, registry) {
                        Ok(clip) => match &entry {
                            None => diagnostics.push(CorpusDiagnostic::new(
                                Level::Error,
                                at,
                                format!("clip {:?} references session {id:?}, which did not load; excluded", clip.clip_id),
                            )),
                            Some(s) if clip.end_ms > s.document.timeline_duration_ms => {
                                diagnostics.push(CorpusDiagnostic::new(
                                    Level::Error,
                                    at,
                                    format!(
                                        "clip {:?} ends at {} ms, past the session timeline ({} ms); excluded",
                                        clip.clip_id, clip.end_ms, s.document.timeline_duration_ms
                                    ),
                                ))
                            }
                            Some(_) => clips.push(clip),
                        },
                        Err(message) => diagnostics.push(CorpusDiagnostic::new(Level::Error, at, message)),
                    }
                }
            }
        }
    }
    LoadedSession {
        id: id.to_string(),
        entry,
        clips,
        diagnostics,
    }
}

/// Parses one `clips.tsv` line.
pub fn parse_clip_line(line: &str, session_id: &str, registry: &TagRegistry) -> Result<ClipRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(4..=5).contains(&fields.len()) {
        return Err(format!("expected 4 or 5 tab-separated fields, found {}", fields.len()));
    }
    let clip_id = fields[0].trim();
    if clip_id.is_empty() {
        return Err("empty clip id".into());
    }
    let time = |s: &str, what: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| format!("clip {clip_id:?}: {what} {s:?} is not a non-negative integer"))
    };
    let start_ms = time(fields[1], "start_ms")?;
    let end_ms = time(fields[2], "end_ms")?;
    if end_ms <= start_ms {
        return Err(format!("clip {clip_id:?}: span {start_ms}..{end_ms} is empty"));
    }
    let parsed = parse_label_string(fields[3], registry).map_err(|e| format!("clip {clip_id:?}: {e}"))?;
    Ok(ClipRecord {
        clip_id: clip_id.to_string(),
        session_id: session_id.to_string(),
        start_ms,
        end_ms,
        labels: parsed.sequence,
        notes: fields.get(4).map(|n| n.to_string()).filter(|n| !n.is_empty()),
    })
}

/// Loads a corpus directory. Problems become diagnostics; whatever loaded is
/// still indexed. Sessions load in parallel and merge in id order.
pub fn build_index(root: &Path) -> BuiltIndex {
    let mut diagnostics = Vec::new();
    let registry_path = root.join("registry.conf");
    let registry = if registry_path.is_file() {
        match fs::read_to_string(&registry_path)
            .map_err(|e| e.to_string())
            .and_then(|t| TagRegistry::from_conf(&t).map_err(|e| e.to_string()))
        {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(CorpusDiagnostic::new(
                    Level::Error,
                    "registry.conf",
                    format!("{e}; using the built-in registry"),
                ));
                TagRegistry::canonical()
            }
        }
    } else {
        TagRegistry::canonical()
    };

    let mut ids: Vec<String> = match fs::read_dir(root.join("sessions")) {
        Ok(entries) => entries
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect(),
        Err(_) => Vec::new(),
    };
    ids.sort();
    if !root.is_dir() {
        diagnostics.push(CorpusDiagnostic::new(
            Level::Error,
            "",
            format!("{} is not a readable directory", root.display()),
        ));
    }
    if ids.is_empty() {
        diagnostics.push(CorpusDiagnostic::new(Level::Warning, "", "no sessions"));
    }

    let loaded: Vec<LoadedSession> = ids.par_iter().map(|id| load_session(root, id, &registry)).collect();

    let mut index = CorpusIndex::empty(registry);
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for session in loaded {
        diagnostics.extend(session.diagnostics);
        if let Some(entry) = session.entry {
            index.sessions.insert(session.id.clone(), entry);
        }
        for clip in session.clips {
            if let Some(first) = seen.get(&clip.clip_id) {
                diagnostics.push(CorpusDiagnostic::new(
                    Level::Error,
                    format!("sessions/{}/clips.tsv", session.id),
                    format!("duplicate clip id {:?} (first in session {first:?}); excluded", clip.clip_id),
                ));
                continue;
            }
            seen.insert(clip.clip_id.clone(), session.id.clone());
            index.clips.push(clip);
        }
    }
    BuiltIndex { index, diagnostics }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClipHit<'a> {
    pub clip: &'a ClipRecord,
    /// Token positions matched by each pattern element.
    pub spans: Vec<usize>,
}

pub fn query_clips<'a>(index: &'a CorpusIndex, query: &LabelQuery) -> Vec<ClipHit<'a>> {
    index
        .clips
        .iter()
        .filter_map(|clip| {
            query
                .find(&clip.labels.tokens)
                .map(|spans| ClipHit { clip, spans })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsOptions {
    /// Width of the silence histogram bins.
    pub silence_bin_ms: u64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions { silence_bin_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub min_ms: i64,
    pub max_ms: i64,
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl LatencySummary {
    fn of(values: &mut [i64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_unstable();
        let n = values.len();
        let median_ms = if n % 2 == 1 {
            values[n / 2] as f64
        } else {
            (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
        };
        Some(LatencySummary {
            count: n,
            min_ms: values[0],
            max_ms: values[n - 1],
            mean_ms: values.iter().sum::<i64>() as f64 / n as f64,
            median_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub clips: usize,
    /// Tokens per base tag or plain name.
    pub tags: BTreeMap<String, usize>,
    /// Directed tokens per transmitter-recipient direction, e.g. `h->p`.
    pub directions: BTreeMap<String, usize>,
    /// Bin start in ms to count.
    pub silence_histogram: BTreeMap<u64, usize>,
    pub silences: usize,
    /// Per awaited category, over sessions with thread tiers.
    pub latency: BTreeMap<String, LatencySummary>,
    /// Sessions whose thread tiers could not be replayed.
    pub unreplayable_sessions: Vec<String>,
}

/// Speech-tier gaps of at least the transcription threshold.
fn speech_gaps(doc: &AnnotationDocument) -> Vec<u64> {
    speech_silences(doc)
        .into_iter()
        .map(|s| s.end_ms - s.start_ms)
        .filter(|&ms| ms >= MEASURED_SILENCE_MIN_MS as u64)
        .collect()
}

pub fn tag_counts(tokens: &[LabelToken], tags: &mut BTreeMap<String, usize>, directions: &mut BTreeMap<String, usize>) {
    for token in tokens {
        *tags.entry(token.tag().to_string()).or_default() += 1;
        if let LabelToken::Directed {
            transmitter,
            recipient,
            ..
        } = token
        {
            *directions
                .entry(format!("{}->{}", transmitter.as_char(), recipient.as_char()))
                .or_default() += 1;
        }
    }
}

/// Descriptive statistics. Silences come from gaps between speech segments
/// and from timed silences in session transcripts; latencies from replaying
/// sessions that carry thread tiers.
pub fn compute_stats(index: &CorpusIndex, options: &StatsOptions) -> StatsReport {
    let mut report = StatsReport {
        clips: index.clips.len(),
        ..StatsReport::default()
    };
    for clip in &index.clips {
        tag_counts(&clip.labels.tokens, &mut report.tags, &mut report.directions);
    }

    let bin = options.silence_bin_ms.max(1);
    let registry = CategoryRegistry::seeded();
    let mut latency_values: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for (id, session) in &index.sessions {
        let mut silences = speech_gaps(&session.document);
        if let Some(t) = &session.transcript {
            silences.extend(t.events.iter().filter_map(|e| match e.kind {
                EventKind::Silence {
                    duration_ms: Some(ms),
                } => Some(ms as u64),
                _ => None,
            }));
        }
        for ms in silences {
            *report.silence_histogram.entry(ms / bin * bin).or_default() += 1;
            report.silences += 1;
        }

        let has_threads = session.document.tiers_of_kind(TierKind::Sequential).next().is_some();
        if !has_threads {
            continue;
        }
        match import_from_tiers(&session.document).and_then(|inputs| replay(&inputs, &[], &registry)) {
            Ok(r) => {
                for l in latencies(&r.ledger) {
                    latency_values
                        .entry(l.awaited.as_str().to_string())
                        .or_default()
                        .push(l.latency_ms);
                }
            }
            Err(_) => report.unreplayable_sessions.push(id.clone()),
        }
    }
    report.latency = latency_values
        .into_iter()
        .filter_map(|(k, mut v)| LatencySummary::of(&mut v).map(|s| (k, s)))
        .collect();
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case")]
pub enum ManifestRow {
    Range {
        clip_id: String,
        source_recording_id: String,
        start_ms: u64,
        end_ms: u64,
        /// `split` when the clip spans recordings, `uncovered` when part of
        /// it maps to none.
        flags: Vec<String>,
        labels: String,
    },
    Error {
        clip_id: String,
        message: String,
        labels: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_HEADER: &str = "clip_id\tsource_recording_id\tstart_ms\tend_ms\tflags\tlabels";

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl Manifest {
    /// Header plus one row per line, LF endings. With a template, a
    /// `command` column is appended in which `{clip_id}`, `{source}`,
    /// `{start_ms}`, `{end_ms}` and `{duration_ms}` are substituted; error
    /// rows leave it empty.
    pub fn to_tsv(&self, command_template: Option<&str>) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        if command_template.is_some() {
            out.push_str("\tcommand");
        }
        out.push('\n');
        for row in &self.rows {
            match row {
                ManifestRow::Range {
                    clip_id,
                    source_recording_id,
                    start_ms,
                    end_ms,
                    flags,
                    labels,
                } => {
                    let flags = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
                    out.push_str(&format!(
                        "{}\t{}\t{start_ms}\t{end_ms}\t{flags}\t{}",
                        tsv_field(clip_id),
                        tsv_field(source_recording_id),
                        tsv_field(labels)
                    ));
                    if let Some(t) = command_template {
                        let cmd = t
                            .replace("{clip_id}", clip_id)
                            .replace("{source}", source_recording_id)
                            .replace("{start_ms}", &start_ms.to_string())
                            .replace("{end_ms}", &end_ms.to_string())
                            .replace("{duration_ms}", &(end_ms - start_ms).to_string());
                        out.push('\t');
                        out.push_str(&tsv_field(&cmd));
                    }
                }
                ManifestRow::Error {
                    clip_id,
                    message,
                    labels,
                } => {
                    out.push_str(&format!(
                        "{}\t\t\t\terror: {}\t{}",
                        tsv_field(clip_id),
                        tsv_field(message),
                        tsv_field(labels)
                    ));
                    if command_template.is_some() {
                        out.push('\t');
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// One row per clip and source range, in the order the clips are selected;
/// repeated ids are emitted once.
pub fn emit_cutlist<'a, I>(index: &CorpusIndex, clip_ids: I) -> Manifest
where
    I: IntoIterator<Item = &'a str>,
{
    let mut rows = Vec::new();
    let mut done = BTreeSet::new();
    for clip_id in clip_ids {
        if !done.insert(clip_id) {
            continue;
        }
        let Some(clip) = index.clip(clip_id) else {
            rows.push(ManifestRow::Error {
                clip_id: clip_id.to_string(),
                message: "unknown clip".into(),
                labels: String::new(),
            });
            continue;
        };
        let labels = clip.labels.to_string();
        let session = &index.sessions[&clip.session_id];
        match map_to_source(&session.document, &Segment::new(clip.start_ms, clip.end_ms, "")) {
            Err(e) => rows.push(ManifestRow::Error {
                clip_id: clip_id.to_string(),
                message: e.to_string(),
                labels,
            }),
            Ok(mapping) if mapping.ranges.is_empty() => rows.push(ManifestRow::Error {
                clip_id: clip_id.to_string(),
                message: "no source recording covers the clip".into(),
                labels,
            }),
            Ok(mapping) => {
                let mut flags = Vec::new();
                if mapping.warnings.contains(&MapWarning::Split) {
                    flags.push("split".to_string());
                }
                if mapping.warnings.iter().any(|w| matches!(w, MapWarning::Uncovered { .. })) {
                    flags.push("uncovered".to_string());
                }
                for range in mapping.ranges {
                    rows.push(ManifestRow::Range {
                        clip_id: clip_id.to_string(),
                        source_recording_id: range.source_recording_id,
                        start_ms: range.start_ms_in_source,
                        end_ms: range.end_ms_in_source,
                        flags: flags.clone(),
                        labels: labels.clone(),
                    });
                }
            }
        }
    }
    Manifest { rows }
}

/// Gaps between speech segments as spans, for callers that want the
/// silences of one document.
pub fn speech_silences(doc: &AnnotationDocument) -> Vec<Span> {
    let mut spans: Vec<(u64, u64)> = doc
        .tiers_of_kind(TierKind::Speech)
        .flat_map(|t| t.segments.iter().map(|s| (s.start_ms, s.end_ms)))
        .collect();
    spans.sort_unstable();
    let mut out = Vec::new();
    let mut reach: Option<u64> = None;
    for (s, e) in spans {
        if let Some(r) = reach {
            if s > r {
                out.push(Span::new(r, s));
            }
        }
        reach = Some(reach.map_or(e, |r| r.max(e)));
    }
    out
}
