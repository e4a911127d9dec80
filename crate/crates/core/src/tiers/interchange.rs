//! Line-delimited interchange format.
//!
//! One JSON object per line, LF endings, fields in a fixed order:
//!
//! ```text
//! {"record":"document","session_id":"s1","timeline_duration_ms":12000}
//! {"record":"tier","name":"speech@Pep","kind":"speech","participant":"Pep"}
//! {"record":"segment","start_ms":0,"end_ms":500,"value":"act(Pep,greeting1)"}
//! ```
//!
//! Tiers follow in name order, each directly followed by its segments.

use serde::{Deserialize, Serialize};

use super::{ensure_valid, AnnotationDocument, Segment, Tier, TierError, TierKind};

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Document {
        session_id: String,
        timeline_duration_ms: i64,
    },
    Tier {
        name: String,
        kind: TierKind,
        participant: Option<String>,
    },
    Segment {
        start_ms: i64,
        end_ms: i64,
        value: String,
    },
}

fn line(record: &Record) -> String {
    let mut s = serde_json::to_string(record).expect("records serialize");
    s.push('\n');
    s
}

/// Canonical, byte-deterministic rendering.
pub fn export_interchange(doc: &AnnotationDocument) -> Vec<u8> {
    let mut out = line(&Record::Document {
        session_id: doc.session_id.clone(),
        timeline_duration_ms: doc.timeline_duration_ms as i64,
    });
    let mut tiers: Vec<&Tier> = doc.tiers.iter().collect();
    tiers.sort_by(|a, b| a.name.cmp(&b.name));
    for tier in tiers {
        out.push_str(&line(&Record::Tier {
            name: tier.name.clone(),
            kind: tier.kind,
            participant: tier.participant.clone(),
        }));
        for seg in &tier.segments {
            out.push_str(&line(&Record::Segment {
                start_ms: seg.start_ms as i64,
                end_ms: seg.end_ms as i64,
                value: seg.value.clone(),
            }));
        }
    }
    out.into_bytes()
}

fn non_negative(value: i64, context: impl FnOnce() -> String) -> Result<u64, TierError> {
    u64::try_from(value).map_err(|_| TierError::NegativeTime {
        value,
        context: context(),
    })
}

pub fn import_interchange(bytes: &[u8]) -> Result<AnnotationDocument, TierError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TierError::Interchange {
        line: 0,
        message: e.to_string(),
    })?;
    let mut header = None;
    let mut tiers: Vec<Tier> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(raw).map_err(|e| TierError::Interchange {
            line: n,
            message: e.to_string(),
        })?;
        let misplaced = |what: &str| TierError::Interchange {
            line: n,
            message: format!("{what} record out of place"),
        };
        match record {
            Record::Document {
                session_id,
                timeline_duration_ms,
            } => {
                if header.is_some() || !tiers.is_empty() {
                    return Err(misplaced("document"));
                }
                let duration =
                    non_negative(timeline_duration_ms, || "timeline_duration_ms".to_string())?;
                header = Some((session_id, duration));
            }
            Record::Tier {
                name,
                kind,
                participant,
            } => {
                if header.is_none() {
                    return Err(misplaced("tier"));
                }
                tiers.push(Tier {
                    name,
                    kind,
                    participant,
                    segments: Vec::new(),
                });
            }
            Record::Segment {
                start_ms,
                end_ms,
                value,
            } => {
                let tier = tiers.last_mut().ok_or_else(|| misplaced("segment"))?;
                let at = || format!("tier {:?} segment {}", tier.name, tier.segments.len());
                let start = non_negative(start_ms, at)?;
                let end = non_negative(end_ms, at)?;
                tier.segments.push(Segment::new(start, end, value));
            }
        }
    }
    let (session_id, duration) = header.ok_or(TierError::Interchange {
        line: 1,
        message: "missing document record".into(),
    })?;
    ensure_valid(AnnotationDocument::new(session_id, duration, tiers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_header_only() {
        let doc = AnnotationDocument::new("s1", 0, vec![]);
        let bytes = export_interchange(&doc);
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "{\"record\":\"document\",\"session_id\":\"s1\",\"timeline_duration_ms\":0}\n"
        );
        assert_eq!(import_interchange(&bytes).unwrap(), doc);
    }

    #[test]
    fn tiers_come_out_in_name_order() {
        let doc = AnnotationDocument {
            session_id: "s".into(),
            timeline_duration_ms: 10,
            tiers: vec![
                Tier::named("speech@Pep", vec![]),
                Tier::named("alignment", vec![]),
                Tier::named("labels", vec![]),
            ],
        };
        let text = String::from_utf8(export_interchange(&doc)).unwrap();
        let names: Vec<_> = text
            .lines()
            .filter_map(|l| l.split("\"name\":\"").nth(1))
            .map(|rest| rest.split('"').next().unwrap())
            .collect();
        assert_eq!(names, ["alignment", "labels", "speech@Pep"]);
    }

    #[test]
    fn negative_times_are_rejected() {
        let text = "{\"record\":\"document\",\"session_id\":\"s\",\"timeline_duration_ms\":100}\n\
                    {\"record\":\"tier\",\"name\":\"labels\",\"kind\":\"label\",\"participant\":null}\n\
                    {\"record\":\"segment\",\"start_ms\":-5,\"end_ms\":10,\"value\":\"x\"}\n";
        assert!(matches!(
            import_interchange(text.as_bytes()),
            Err(TierError::NegativeTime { value: -5, .. })
        ));
    }

    #[test]
    fn overlapping_segments_fail_import() {
        let doc = AnnotationDocument::new(
            "s",
            100,
            vec![Tier::named(
                "labels",
                vec![Segment::new(0, 50, "a"), Segment::new(40, 60, "b")],
            )],
        );
        let err = import_interchange(&export_interchange(&doc)).unwrap_err();
        let TierError::Invalid(diags) = err else { panic!("expected validation error") };
        assert_eq!(diags[0].tier, "labels");
        assert_eq!(diags[0].segment, Some(1));
    }

    #[test]
    fn segment_before_tier_is_rejected() {
        let text = "{\"record\":\"document\",\"session_id\":\"s\",\"timeline_duration_ms\":100}\n\
                    {\"record\":\"segment\",\"start_ms\":0,\"end_ms\":10,\"value\":\"x\"}\n";
        assert!(matches!(
            import_interchange(text.as_bytes()),
            Err(TierError::Interchange { line: 2, .. })
        ));
        assert!(import_interchange(b"").is_err());
    }
}
