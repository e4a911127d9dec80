//! Ledgers as annotation tiers.
//!
//! Actions go on `speech@<producer>` tiers as `act(<producer>,<category>)`,
//! with a trailing `,byplay` for byplay actions. Each thread gets a
//! `seqthread@<letter>` or `byplay@<letter>` tier holding its projections:
//! `wait(<cat>,...)` or `repair()` from opening to the first narrowing, then
//! one `narrow(<cat>,...)` segment per narrowing, the last segment ending when
//! the projection closes. An abandoned projection's last segment carries a
//! `;abandon(<reason>)` suffix, a repair closed by an account a
//! `;repair_account()` suffix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::tiers::{ensure_valid, AnnotationDocument, Segment, Tier, TierKind};

use super::{
    letters_ordinal, ActionEvent, Category, Directive, DirectiveKind, Framework, LedgerInput,
    ProjectionKind, ProjectionStatus, SequenceError, Span, ThreadId, ThreadLedger,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TierValue {
    Act {
        producer: String,
        category: Category,
        byplay: bool,
    },
    Wait(BTreeSet<Category>),
    Narrow(BTreeSet<Category>),
    Abandon(String),
    Repair,
    RepairAccount,
}

fn join(cats: &BTreeSet<Category>) -> String {
    cats.iter().map(Category::as_str).collect::<Vec<_>>().join(",")
}

impl fmt::Display for TierValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TierValue::Act {
                producer,
                category,
                byplay,
            } => {
                write!(f, "act({producer},{category}")?;
                if *byplay {
                    f.write_str(",byplay")?;
                }
                f.write_str(")")
            }
            TierValue::Wait(c) => write!(f, "wait({})", join(c)),
            TierValue::Narrow(c) => write!(f, "narrow({})", join(c)),
            TierValue::Abandon(r) => write!(f, "abandon({r})"),
            TierValue::Repair => f.write_str("repair()"),
            TierValue::RepairAccount => f.write_str("repair_account()"),
        }
    }
}

fn categories(args: &[&str]) -> Result<BTreeSet<Category>, String> {
    if args.is_empty() || args == [""] {
        return Err("expects at least one category".into());
    }
    args.iter()
        .map(|a| {
            if Category::is_valid_name(a) {
                Ok(Category::new(*a))
            } else {
                Err(format!("{a:?} is not a category name"))
            }
        })
        .collect()
}

fn parse_item(item: &str) -> Result<TierValue, String> {
    let (name, rest) = item
        .split_once('(')
        .ok_or_else(|| format!("{item:?} is not of the form name(...)"))?;
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| format!("{item:?} lacks a closing parenthesis"))?;
    if inner.contains(['(', ')']) {
        return Err(format!("{item:?} has nested parentheses"));
    }
    let args: Vec<&str> = inner.split(',').collect();
    let free = |s: &str| !s.is_empty();
    match name {
        "act" => match args.as_slice() {
            [producer, category] | [producer, category, "byplay"]
                if free(producer) && Category::is_valid_name(category) =>
            {
                Ok(TierValue::Act {
                    producer: producer.to_string(),
                    category: Category::new(*category),
                    byplay: args.len() == 3,
                })
            }
            _ => Err(format!("{item:?} is not act(<producer>,<category>[,byplay])")),
        },
        "wait" => Ok(TierValue::Wait(categories(&args)?)),
        "narrow" => Ok(TierValue::Narrow(categories(&args)?)),
        "abandon" => match args.as_slice() {
            [reason] if free(reason) => Ok(TierValue::Abandon(reason.to_string())),
            _ => Err(format!("{item:?} is not abandon(<reason>)")),
        },
        "repair" if inner.is_empty() => Ok(TierValue::Repair),
        "repair_account" if inner.is_empty() => Ok(TierValue::RepairAccount),
        _ => Err(format!("unknown value {item:?}")),
    }
}

/// Parses a tier value: one or more `;`-separated items, exact and
/// case-sensitive.
///
/// ```
/// use seqanno::sequence::{parse_tier_value, TierValue};
///
/// let items = parse_tier_value("narrow(offer,proposal);abandon(superseded)").unwrap();
/// assert_eq!(items.len(), 2);
/// assert_eq!(items[1], TierValue::Abandon("superseded".into()));
/// assert!(parse_tier_value("wiat(greeting2)").is_err());
/// ```
pub fn parse_tier_value(value: &str) -> Result<Vec<TierValue>, String> {
    value.split(';').map(parse_item).collect()
}

fn family_rank(f: Framework) -> u8 {
    match f {
        Framework::Main => 0,
        Framework::Byplay => 1,
    }
}

/// Stable sort into replay order: by time, actions before directives at the
/// same instant, directives by thread with narrowing before abandonment.
/// Actions sharing a start keep their relative order.
pub fn canonical_order(mut inputs: Vec<LedgerInput>) -> Vec<LedgerInput> {
    inputs.sort_by_key(|input| match input {
        LedgerInput::Act(e) => (e.span.start_ms, 0, 0, 0, 0),
        LedgerInput::Directive(d) => (
            d.at_ms,
            1,
            family_rank(d.thread.family),
            d.thread.ordinal,
            matches!(d.kind, DirectiveKind::Abandon { .. }) as u8,
        ),
    });
    inputs
}

/// Renders the ledger as a tier document. Fails when the result would not
/// validate, e.g. when one producer's actions overlap.
pub fn export_to_tiers(ledger: &ThreadLedger, session_id: &str) -> Result<AnnotationDocument, SequenceError> {
    let mut timeline = ledger.events.iter().map(|e| e.span.end_ms).max().unwrap_or(0);
    timeline = timeline.max(ledger.directives.iter().map(|d| d.at_ms).max().unwrap_or(0));
    for p in ledger.open_projections() {
        timeline = timeline.max(p.last_boundary_ms() + 1);
    }

    let mut speech: BTreeMap<&str, Vec<Segment>> = BTreeMap::new();
    for e in &ledger.events {
        let value = TierValue::Act {
            producer: e.producer.clone(),
            category: e.category.clone(),
            byplay: e.framework == Framework::Byplay,
        };
        speech
            .entry(e.producer.as_str())
            .or_default()
            .push(Segment::new(e.span.start_ms, e.span.end_ms, value.to_string()));
    }
    let mut tiers: Vec<Tier> = speech
        .into_iter()
        .map(|(producer, segments)| Tier::named(format!("speech@{producer}"), segments))
        .collect();

    for &thread in &ledger.threads {
        let mut segments = Vec::new();
        for p in ledger.projections_on(thread) {
            let close = p.closed_at_ms().unwrap_or(timeline);
            let mut pieces: Vec<(u64, String)> = vec![(
                p.opened_at_ms,
                match p.kind {
                    ProjectionKind::Repair { .. } => TierValue::Repair.to_string(),
                    ProjectionKind::Normal => TierValue::Wait(p.awaited.clone()).to_string(),
                },
            )];
            for n in &p.narrowings {
                pieces.push((n.at_ms, TierValue::Narrow(n.awaited.clone()).to_string()));
            }
            let suffix = match &p.status {
                ProjectionStatus::Abandoned { reason, .. } => {
                    Some(TierValue::Abandon(reason.clone()))
                }
                ProjectionStatus::Satisfied { matched: Some(_), .. } if p.is_repair() => {
                    Some(TierValue::RepairAccount)
                }
                _ => None,
            };
            let last = pieces.len() - 1;
            for (i, (start, value)) in pieces.iter().enumerate() {
                let end = if i == last { close } else { pieces[i + 1].0 };
                let mut value = value.clone();
                if let (true, Some(s)) = (i == last, &suffix) {
                    value = format!("{value};{s}");
                }
                segments.push(Segment::new(*start, end, value));
            }
        }
        tiers.push(Tier::named(thread.tier_name(), segments));
    }
    Ok(ensure_valid(AnnotationDocument::new(session_id, timeline, tiers))?)
}

struct Opening {
    family: Framework,
    start_ms: u64,
    /// `None` for a repair.
    awaited: Option<BTreeSet<Category>>,
    tier: String,
    segment: usize,
}

fn tier_thread(tier: &Tier) -> Option<Result<ThreadId, SequenceError>> {
    let family = match tier.kind {
        TierKind::Sequential => Framework::Main,
        TierKind::Byplay => Framework::Byplay,
        _ => return None,
    };
    let suffix = tier.name.rsplit_once('@').map(|(_, s)| s).unwrap_or("");
    Some(
        letters_ordinal(suffix)
            .map(|ordinal| ThreadId { family, ordinal })
            .ok_or_else(|| SequenceError::TierValue {
                tier: tier.name.clone(),
                segment: 0,
                message: format!("thread tier name must end in @<letters>, got {:?}", tier.name),
            }),
    )
}

/// Recovers the replay inputs from a document written by
/// [`export_to_tiers`], in canonical order. Tiers of other kinds are ignored.
pub fn import_from_tiers(doc: &AnnotationDocument) -> Result<Vec<LedgerInput>, SequenceError> {
    let bad = |tier: &Tier, segment: usize, message: String| SequenceError::TierValue {
        tier: tier.name.clone(),
        segment,
        message,
    };

    let mut acts: Vec<(ActionEvent, bool)> = Vec::new();
    for tier in doc.tiers_of_kind(TierKind::Speech) {
        for (i, seg) in tier.segments.iter().enumerate() {
            let items = parse_tier_value(&seg.value).map_err(|m| bad(tier, i, m))?;
            let [TierValue::Act {
                producer,
                category,
                byplay,
            }] = items.as_slice()
            else {
                return Err(bad(tier, i, format!("expected a single act(...), got {:?}", seg.value)));
            };
            acts.push((
                ActionEvent {
                    span: Span::new(seg.start_ms, seg.end_ms),
                    producer: producer.clone(),
                    framework: if *byplay { Framework::Byplay } else { Framework::Main },
                    category: category.clone(),
                    awaited_next: BTreeSet::new(),
                },
                false,
            ));
        }
    }

    let mut openings = Vec::new();
    let mut directives = Vec::new();
    for tier in &doc.tiers {
        let Some(thread) = tier_thread(tier) else { continue };
        let thread = thread?;
        // end of the projection currently being read, if it is still open
        let mut open_until: Option<u64> = None;
        for (i, seg) in tier.segments.iter().enumerate() {
            let items = parse_tier_value(&seg.value).map_err(|m| bad(tier, i, m))?;
            let (head, tail) = items.split_first().expect("split yields one item");
            match head {
                TierValue::Wait(_) | TierValue::Repair => {
                    openings.push(Opening {
                        family: thread.family,
                        start_ms: seg.start_ms,
                        awaited: match head {
                            TierValue::Wait(c) => Some(c.clone()),
                            _ => None,
                        },
                        tier: tier.name.clone(),
                        segment: i,
                    });
                }
                TierValue::Narrow(c) => {
                    if open_until != Some(seg.start_ms) {
                        return Err(bad(tier, i, "narrow(...) must directly follow its projection".into()));
                    }
                    directives.push(Directive {
                        at_ms: seg.start_ms,
                        thread,
                        kind: DirectiveKind::Narrow { awaited: c.clone() },
                    });
                }
                _ => return Err(bad(tier, i, format!("{head} cannot start a thread segment"))),
            }
            open_until = Some(seg.end_ms);
            match tail {
                [] => {}
                [TierValue::Abandon(reason)] => {
                    directives.push(Directive {
                        at_ms: seg.end_ms,
                        thread,
                        kind: DirectiveKind::Abandon {
                            reason: reason.clone(),
                        },
                    });
                    open_until = None;
                }
                [TierValue::RepairAccount] => open_until = None,
                _ => return Err(bad(tier, i, format!("unexpected suffix in {:?}", seg.value))),
            }
        }
    }

    for o in &openings {
        let tier = doc.tier(&o.tier).expect("opening comes from a tier");
        let matches: Vec<usize> = acts
            .iter()
            .enumerate()
            .filter(|(_, (e, _))| {
                e.framework == o.family
                    && e.span.start_ms == o.start_ms
                    && e.is_repair_init() == o.awaited.is_none()
            })
            .map(|(i, _)| i)
            .collect();
        let [i] = matches.as_slice() else {
            let what = if matches.is_empty() { "no" } else { "more than one" };
            return Err(bad(tier, o.segment, format!("{what} action opens this projection")));
        };
        let (event, linked) = &mut acts[*i];
        if *linked {
            return Err(bad(tier, o.segment, "action already opens another projection".into()));
        }
        *linked = true;
        if let Some(awaited) = &o.awaited {
            event.awaited_next = awaited.clone();
        }
    }

    acts.sort_by(|(a, _), (b, _)| {
        (a.span.start_ms, family_rank(a.framework), &a.producer, &a.category, a.span.end_ms).cmp(&(
            b.span.start_ms,
            family_rank(b.framework),
            &b.producer,
            &b.category,
            b.span.end_ms,
        ))
    });
    let inputs = acts
        .into_iter()
        .map(|(e, _)| LedgerInput::Act(e))
        .chain(directives.into_iter().map(LedgerInput::Directive))
        .collect();
    Ok(canonical_order(inputs))
}
