//! The subset of the ELAN annotation format this toolkit reads and writes:
//! the document root, the time order with its time slots, tiers, and
//! time-alignable annotations. Header metadata, linguistic types, locales and
//! controlled vocabularies are skipped. Reference annotations and anything
//! else raise [`TierError::Unsupported`].
//!
//! Two header properties carry what the format has no slot for:
//! `session_id` and `timeline_duration_ms`. A tier whose kind cannot be read
//! off its name gets a `tier_kind:<tier>` property.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{ensure_valid, resolve_kind, AnnotationDocument, KindOverrides, Segment, Tier, TierError, TierKind};

const SKIPPED: &[&str] = &[
    "MEDIA_DESCRIPTOR",
    "LINKED_FILE_DESCRIPTOR",
    "LINGUISTIC_TYPE",
    "LOCALE",
    "LANGUAGE",
    "CONSTRAINT",
    "CONTROLLED_VOCABULARY",
    "LEXICON_REF",
    "EXTERNAL_REF",
    "LICENSE",
];

fn xml_err(e: impl std::fmt::Display) -> TierError {
    TierError::Xml(e.to_string())
}

fn attrs(e: &BytesStart<'_>) -> Result<BTreeMap<String, String>, TierError> {
    let mut out = BTreeMap::new();
    for attr in e.attributes() {
        let attr = attr.map_err(xml_err)?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr.unescape_value().map_err(xml_err)?.into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

struct PendingAnnotation {
    id: String,
    ref1: String,
    ref2: String,
    value: String,
}

/// Reads an EAF-subset document. `session_id` is used when the file carries
/// no `session_id` property; `overrides` take precedence over the tier naming
/// convention and over `tier_kind:` properties.
pub fn import_eaf_subset(
    bytes: &[u8],
    session_id: Option<&str>,
    overrides: &KindOverrides,
) -> Result<AnnotationDocument, TierError> {
    let text = std::str::from_utf8(bytes).map_err(xml_err)?;
    let mut reader = Reader::from_str(text);

    let mut properties: BTreeMap<String, String> = BTreeMap::new();
    let mut slots: BTreeMap<String, Option<i64>> = BTreeMap::new();
    let mut raw_tiers: Vec<(String, Option<String>, Vec<PendingAnnotation>)> = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut property_name: Option<String> = None;
    let mut saw_root = false;

    loop {
        let event = reader.read_event().map_err(xml_err)?;
        let (start, is_empty) = match &event {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            _ => (None, false),
        };
        if let Some(e) = start {
            let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
            if SKIPPED.contains(&name.as_str()) {
                if !is_empty {
                    reader.read_to_end(e.name()).map_err(xml_err)?;
                }
                continue;
            }
            let parent = stack.last().map(String::as_str);
            let a = attrs(&e)?;
            match (parent, name.as_str()) {
                (None, "ANNOTATION_DOCUMENT") => saw_root = true,
                (Some("ANNOTATION_DOCUMENT"), "HEADER" | "TIME_ORDER") => {}
                (Some("HEADER"), "PROPERTY") => property_name = a.get("NAME").cloned(),
                (Some("TIME_ORDER"), "TIME_SLOT") => {
                    let id = a.get("TIME_SLOT_ID").cloned().unwrap_or_default();
                    let value = match a.get("TIME_VALUE") {
                        Some(v) => Some(v.trim().parse::<i64>().map_err(|_| {
                            TierError::UnalignedTimeSlot { slot: id.clone() }
                        })?),
                        None => None,
                    };
                    slots.insert(id, value);
                }
                (Some("ANNOTATION_DOCUMENT"), "TIER") => {
                    let id = a.get("TIER_ID").cloned().unwrap_or_default();
                    let participant = a.get("PARTICIPANT").filter(|p| !p.is_empty()).cloned();
                    raw_tiers.push((id, participant, Vec::new()));
                }
                (Some("TIER"), "ANNOTATION") => {}
                (Some("ANNOTATION"), "ALIGNABLE_ANNOTATION") => {
                    let tier = raw_tiers.last_mut().expect("inside a tier");
                    tier.2.push(PendingAnnotation {
                        id: a.get("ANNOTATION_ID").cloned().unwrap_or_default(),
                        ref1: a.get("TIME_SLOT_REF1").cloned().unwrap_or_default(),
                        ref2: a.get("TIME_SLOT_REF2").cloned().unwrap_or_default(),
                        value: String::new(),
                    });
                }
                (Some("ALIGNABLE_ANNOTATION"), "ANNOTATION_VALUE") => {}
                _ => return Err(TierError::Unsupported(name)),
            }
            if !is_empty {
                stack.push(name);
            } else if name == "PROPERTY" {
                property_name = None;
            }
            continue;
        }
        match event {
            Event::Text(t) => {
                let content = t.unescape().map_err(xml_err)?;
                match stack.last().map(String::as_str) {
                    Some("ANNOTATION_VALUE") => {
                        if let Some(ann) = raw_tiers.last_mut().and_then(|t| t.2.last_mut()) {
                            ann.value.push_str(&content);
                        }
                    }
                    Some("PROPERTY") => {
                        if let Some(name) = &property_name {
                            properties.entry(name.clone()).or_default().push_str(&content);
                        }
                    }
                    _ => {}
                }
            }
            Event::CData(c) => {
                if stack.last().map(String::as_str) == Some("ANNOTATION_VALUE") {
                    if let Some(ann) = raw_tiers.last_mut().and_then(|t| t.2.last_mut()) {
                        ann.value.push_str(&String::from_utf8_lossy(&c));
                    }
                }
            }
            Event::End(_) => {
                if stack.pop().as_deref() == Some("PROPERTY") {
                    property_name = None;
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !saw_root {
        return Err(TierError::Xml("missing ANNOTATION_DOCUMENT root".into()));
    }

    let mut times: BTreeMap<&str, u64> = BTreeMap::new();
    for (id, value) in &slots {
        if let Some(v) = value {
            let t = u64::try_from(*v).map_err(|_| TierError::NegativeTime {
                value: *v,
                context: format!("time slot {id:?}"),
            })?;
            times.insert(id, t);
        }
    }

    let mut kind_props: KindOverrides = BTreeMap::new();
    for (key, value) in &properties {
        if let Some(tier) = key.strip_prefix("tier_kind:") {
            let kind: TierKind = value.trim().parse().map_err(TierError::Xml)?;
            kind_props.insert(tier.to_string(), kind);
        }
    }
    kind_props.extend(overrides.iter().map(|(k, v)| (k.clone(), *v)));

    let mut tiers = Vec::new();
    for (name, participant, annotations) in raw_tiers {
        let mut segments = Vec::new();
        for ann in annotations {
            let lookup = |slot: &str| -> Result<u64, TierError> {
                match slots.get(slot) {
                    None => Err(TierError::DanglingTimeSlot {
                        annotation: ann.id.clone(),
                        slot: slot.to_string(),
                    }),
                    Some(None) => Err(TierError::UnalignedTimeSlot {
                        slot: slot.to_string(),
                    }),
                    Some(Some(_)) => Ok(times[slot]),
                }
            };
            segments.push(Segment::new(lookup(&ann.ref1)?, lookup(&ann.ref2)?, ann.value));
        }
        let (kind, participant) = resolve_kind(&name, participant, &kind_props);
        tiers.push(Tier {
            name,
            kind,
            participant,
            segments,
        });
    }

    let session_id = properties
        .get("session_id")
        .map(|s| s.trim().to_string())
        .or_else(|| session_id.map(str::to_string))
        .unwrap_or_else(|| "session".to_string());
    let duration = match properties.get("timeline_duration_ms") {
        Some(v) => {
            let raw: i64 = v.trim().parse().map_err(|_| {
                TierError::Xml(format!("timeline_duration_ms property {v:?} is not an integer"))
            })?;
            u64::try_from(raw).map_err(|_| TierError::NegativeTime {
                value: raw,
                context: "timeline_duration_ms".into(),
            })?
        }
        None => times.values().copied().max().unwrap_or(0),
    };
    ensure_valid(AnnotationDocument::new(session_id, duration, tiers))
}

/// Writes a document in the EAF subset. Time slots are numbered in
/// tier-then-segment order.
pub fn export_eaf_subset(doc: &AnnotationDocument) -> Vec<u8> {
    let mut tiers: Vec<&Tier> = doc.tiers.iter().collect();
    tiers.sort_by(|a, b| a.name.cmp(&b.name));

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(
        "<ANNOTATION_DOCUMENT AUTHOR=\"\" DATE=\"\" FORMAT=\"3.0\" VERSION=\"3.0\">\n",
    );
    out.push_str("    <HEADER MEDIA_FILE=\"\" TIME_UNITS=\"milliseconds\">\n");
    let _ = writeln!(
        out,
        "        <PROPERTY NAME=\"session_id\">{}</PROPERTY>",
        escape(doc.session_id.as_str())
    );
    let _ = writeln!(
        out,
        "        <PROPERTY NAME=\"timeline_duration_ms\">{}</PROPERTY>",
        doc.timeline_duration_ms
    );
    for tier in &tiers {
        if TierKind::infer(&tier.name).0 != tier.kind {
            let _ = writeln!(
                out,
                "        <PROPERTY NAME=\"tier_kind:{}\">{}</PROPERTY>",
                escape(tier.name.as_str()),
                tier.kind.as_str()
            );
        }
    }
    out.push_str("    </HEADER>\n    <TIME_ORDER>\n");
    let mut slot = 0;
    for tier in &tiers {
        for seg in &tier.segments {
            for t in [seg.start_ms, seg.end_ms] {
                slot += 1;
                let _ = writeln!(
                    out,
                    "        <TIME_SLOT TIME_SLOT_ID=\"ts{slot}\" TIME_VALUE=\"{t}\"/>"
                );
            }
        }
    }
    out.push_str("    </TIME_ORDER>\n");
    let (mut slot, mut ann) = (0, 0);
    for tier in &tiers {
        let _ = write!(
            out,
            "    <TIER LINGUISTIC_TYPE_REF=\"default-lt\" TIER_ID=\"{}\"",
            escape(tier.name.as_str())
        );
        if let Some(p) = &tier.participant {
            let _ = write!(out, " PARTICIPANT=\"{}\"", escape(p.as_str()));
        }
        out.push_str(">\n");
        for seg in &tier.segments {
            ann += 1;
            slot += 2;
            let _ = writeln!(
                out,
                "        <ANNOTATION>\n            <ALIGNABLE_ANNOTATION ANNOTATION_ID=\"a{ann}\" \
                 TIME_SLOT_REF1=\"ts{}\" TIME_SLOT_REF2=\"ts{slot}\">\n                \
                 <ANNOTATION_VALUE>{}</ANNOTATION_VALUE>\n            </ALIGNABLE_ANNOTATION>\n        \
                 </ANNOTATION>",
                slot - 1,
                escape(seg.value.as_str())
            );
        }
        out.push_str("    </TIER>\n");
    }
    out.push_str(
        "    <LINGUISTIC_TYPE GRAPHIC_REFERENCES=\"false\" LINGUISTIC_TYPE_ID=\"default-lt\" \
         TIME_ALIGNABLE=\"true\"/>\n",
    );
    out.push_str("</ANNOTATION_DOCUMENT>\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<ANNOTATION_DOCUMENT AUTHOR="" DATE="2022-03-01" FORMAT="3.0" VERSION="3.0">
    <HEADER MEDIA_FILE="" TIME_UNITS="milliseconds">
        <MEDIA_DESCRIPTOR MEDIA_URL="file:///session.mp4" MIME_TYPE="video/mp4"/>
        <PROPERTY NAME="URN">urn:nl-mpi-tools-elan-eaf:x</PROPERTY>
    </HEADER>
    <TIME_ORDER>
        <TIME_SLOT TIME_SLOT_ID="ts1" TIME_VALUE="0"/>
        <TIME_SLOT TIME_SLOT_ID="ts2" TIME_VALUE="1000"/>
    </TIME_ORDER>
    <TIER LINGUISTIC_TYPE_REF="default-lt" TIER_ID="speech@Pep" PARTICIPANT="Pep">
        <ANNOTATION>
            <ALIGNABLE_ANNOTATION ANNOTATION_ID="a1" TIME_SLOT_REF1="ts1" TIME_SLOT_REF2="ts2">
                <ANNOTATION_VALUE>hi &amp; welcome</ANNOTATION_VALUE>
            </ALIGNABLE_ANNOTATION>
        </ANNOTATION>
    </TIER>
    <LINGUISTIC_TYPE GRAPHIC_REFERENCES="false" LINGUISTIC_TYPE_ID="default-lt" TIME_ALIGNABLE="true"/>
    <LOCALE COUNTRY_CODE="FR" LANGUAGE_CODE="fr"/>
    <CONSTRAINT DESCRIPTION="Time subdivision" STEREOTYPE="Time_Subdivision"/>
</ANNOTATION_DOCUMENT>
"#;

    fn none() -> KindOverrides {
        KindOverrides::new()
    }

    #[test]
    fn minimal_document() {
        let doc = import_eaf_subset(MINIMAL.as_bytes(), Some("s1"), &none()).unwrap();
        assert_eq!(doc.session_id, "s1");
        assert_eq!(doc.timeline_duration_ms, 1000);
        assert_eq!(doc.tiers.len(), 1);
        let tier = &doc.tiers[0];
        assert_eq!(tier.kind, TierKind::Speech);
        assert_eq!(tier.participant.as_deref(), Some("Pep"));
        assert_eq!(tier.segments, vec![Segment::new(0, 1000, "hi & welcome")]);
    }

    #[test]
    fn missing_time_slot_is_named() {
        let broken = MINIMAL.replace("TIME_SLOT_REF2=\"ts2\"", "TIME_SLOT_REF2=\"ts9\"");
        let err = import_eaf_subset(broken.as_bytes(), None, &none()).unwrap_err();
        assert_eq!(
            err,
            TierError::DanglingTimeSlot {
                annotation: "a1".into(),
                slot: "ts9".into()
            }
        );
        assert!(err.to_string().contains("ts9"));
    }

    #[test]
    fn negative_time_slot() {
        let broken = MINIMAL.replace("TIME_VALUE=\"0\"", "TIME_VALUE=\"-40\"");
        assert!(matches!(
            import_eaf_subset(broken.as_bytes(), None, &none()),
            Err(TierError::NegativeTime { value: -40, .. })
        ));
    }

    #[test]
    fn unaligned_time_slot() {
        let broken = MINIMAL.replace("TIME_SLOT_ID=\"ts2\" TIME_VALUE=\"1000\"", "TIME_SLOT_ID=\"ts2\"");
        assert_eq!(
            import_eaf_subset(broken.as_bytes(), None, &none()),
            Err(TierError::UnalignedTimeSlot { slot: "ts2".into() })
        );
    }

    #[test]
    fn reference_annotations_are_unsupported() {
        let with_ref = MINIMAL.replace(
            "</TIER>",
            "<ANNOTATION><REF_ANNOTATION ANNOTATION_ID=\"a2\" ANNOTATION_REF=\"a1\">\
             <ANNOTATION_VALUE>x</ANNOTATION_VALUE></REF_ANNOTATION></ANNOTATION></TIER>",
        );
        assert_eq!(
            import_eaf_subset(with_ref.as_bytes(), None, &none()),
            Err(TierError::Unsupported("REF_ANNOTATION".into()))
        );
    }

    #[test]
    fn overrides_win() {
        let mut overrides = none();
        overrides.insert("speech@Pep".into(), TierKind::Other);
        let doc = import_eaf_subset(MINIMAL.as_bytes(), None, &overrides).unwrap();
        assert_eq!(doc.tiers[0].kind, TierKind::Other);
        assert_eq!(doc.session_id, "session");
    }

    #[test]
    fn overlapping_annotations_fail_validation() {
        let doc = AnnotationDocument::new(
            "s",
            100,
            vec![Tier::named("labels", vec![Segment::new(0, 50, "a"), Segment::new(40, 60, "b")])],
        );
        let bytes = export_eaf_subset(&doc);
        assert!(matches!(
            import_eaf_subset(&bytes, None, &none()),
            Err(TierError::Invalid(_))
        ));
    }

    #[test]
    fn export_import_round_trip() {
        let mut custom = Tier::named("gestures", vec![Segment::new(5, 9, "nod <big>")]);
        custom.kind = TierKind::Byplay;
        let doc = AnnotationDocument::new(
            "session \"7\"",
            2_000,
            vec![
                Tier::named("speech@Hum1", vec![Segment::new(0, 400, "hi"), Segment::new(400, 900, "")]),
                Tier::named("alignment", vec![Segment::new(0, 2_000, "R1@0")]),
                custom,
            ],
        );
        let back = import_eaf_subset(&export_eaf_subset(&doc), None, &none()).unwrap();
        assert_eq!(back, doc);
    }
}
