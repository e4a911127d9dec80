//! Generators and independent checkers shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use seqanno::sequence::{
    ActionEvent, CategoryRegistry, Directive, Framework, LedgerInput, ProjectionStatus, ThreadLedger,
    SEEDED_CATEGORIES,
};
use seqanno::tiers::{AnnotationDocument, Segment, Tier};

const VALUE_PIECES: &[&str] = &[
    "hi", "(.)", "<laugh>", "a & b", "\"quoted\"", "it's", "café", "tab\there", "x", "((gaze))", "  ", "ünï",
];

fn random_value<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(0..4);
    (0..n)
        .map(|_| *VALUE_PIECES.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_segments<R: Rng>(rng: &mut R, alignment: bool) -> Vec<Segment> {
    let mut t = rng.gen_range(0..500u64);
    let n = rng.gen_range(if alignment { 1..4 } else { 0..8 });
    let mut out = Vec::new();
    for i in 0..n {
        let start = t + rng.gen_range(0..800);
        let end = start + rng.gen_range(1..3000);
        let value = if alignment {
            format!("rec{}@{}", i % 2, rng.gen_range(0..100_000))
        } else {
            random_value(rng)
        };
        out.push(Segment::new(start, end, value));
        t = end;
    }
    out
}

/// A document that passes validation without errors.
pub fn random_document<R: Rng>(rng: &mut R) -> AnnotationDocument {
    let mut names: Vec<&str> = vec![
        "speech@Pep",
        "speech@Hum1",
        "gaze@Hum1",
        "labels",
        "notes",
        "seqthread@A",
        "byplay@A",
        "alignment",
    ];
    names.shuffle(rng);
    let count = rng.gen_range(1..=names.len());
    let tiers: Vec<Tier> = names[..count]
        .iter()
        .map(|name| Tier::named(*name, random_segments(rng, *name == "alignment")))
        .collect();
    let end = tiers
        .iter()
        .flat_map(|t| t.segments.iter().map(|s| s.end_ms))
        .max()
        .unwrap_or(0);
    let session = format!("s{}", rng.gen_range(0..1000));
    AnnotationDocument::new(session, end + rng.gen_range(0..2000), tiers)
}

const PRODUCERS: &[&str] = &["Pep", "Hum1", "Hum2"];
const REASONS: &[&str] = &["superseded", "timeout", "withdrawn"];

fn random_awaited<R: Rng>(rng: &mut R) -> Vec<&'static str> {
    let n = rng.gen_range(0..=3);
    let mut picked: Vec<&str> = SEEDED_CATEGORIES.choose_multiple(rng, n).copied().collect();
    picked.sort_unstable();
    picked
}

fn propose<R: Rng>(rng: &mut R, ledger: &ThreadLedger, clock: u64, busy_until: &[u64; 3]) -> Option<LedgerInput> {
    let open: Vec<_> = ledger.open_projections().collect();
    if !open.is_empty() && rng.gen_bool(0.2) {
        let p = open.choose(rng).unwrap();
        let input = if rng.gen_bool(0.5) {
            let current: Vec<&str> = p.current_awaited().iter().map(|c| c.as_str()).collect();
            let n = rng.gen_range(1..=current.len().max(1));
            let keep: Vec<&str> = current.choose_multiple(rng, n).copied().collect();
            Directive::narrow(clock, p.thread, &keep)
        } else {
            Directive::abandon(clock, p.thread, REASONS.choose(rng).unwrap())
        };
        return Some(input.into());
    }
    let who = rng.gen_range(0..PRODUCERS.len());
    if busy_until[who] > clock {
        return None;
    }
    let category = *SEEDED_CATEGORIES.choose(rng).unwrap();
    let awaited = if category == "repair_init" { Vec::new() } else { random_awaited(rng) };
    let end = clock + rng.gen_range(100..2000);
    let event = if rng.gen_bool(0.15) {
        ActionEvent::byplay(clock, end, PRODUCERS[who], category, &awaited)
    } else {
        ActionEvent::main(clock, end, PRODUCERS[who], category, &awaited)
    };
    Some(event.into())
}

/// Up to `max_inputs` inputs that the ledger accepts, in canonical order:
/// strictly increasing times, one producer never overlapping itself.
pub fn random_inputs<R: Rng>(rng: &mut R, max_inputs: usize) -> Vec<LedgerInput> {
    let target = rng.gen_range(1..=max_inputs);
    let mut ledger = ThreadLedger::new(CategoryRegistry::seeded());
    let mut inputs = Vec::new();
    let mut busy_until = [0u64; 3];
    let mut clock = 0;
    let mut attempts = 0;
    while inputs.len() < target && attempts < target * 20 {
        attempts += 1;
        clock += rng.gen_range(1..1500);
        let Some(input) = propose(rng, &ledger, clock, &busy_until) else {
            continue;
        };
        let mut trial = ledger.clone();
        if trial.apply(input.clone()).is_ok() {
            if let LedgerInput::Act(e) = &input {
                let who = PRODUCERS.iter().position(|p| *p == e.producer).unwrap();
                busy_until[who] = e.span.end_ms;
            }
            ledger = trial;
            inputs.push(input);
        }
    }
    inputs
}

/// Closed-interval occupancy of a projection: open through the end of time
/// while unresolved.
fn occupancy(p: &seqanno::sequence::Projection) -> (u64, u64) {
    (p.opened_at_ms, p.closed_at_ms().unwrap_or(u64::MAX))
}

/// Invariant violations, computed from the public ledger fields only.
pub fn ledger_violations(ledger: &ThreadLedger, closed_out: bool) -> Vec<String> {
    let mut out = Vec::new();
    let ps = &ledger.projections;
    for p in ps {
        // minimality: every lower thread of the family was busy at some
        // point of p's open interval
        let (start, end) = occupancy(p);
        for lower in 0..p.thread.ordinal {
            let busy = ps.iter().any(|q| {
                q.thread.family == p.thread.family && q.thread.ordinal == lower && {
                    let (qs, qe) = occupancy(q);
                    qs <= end && start <= qe
                }
            });
            if !busy {
                out.push(format!("projection {} on {} skipped free ordinal {lower}", p.id, p.thread));
            }
        }
        // byplay never satisfies main projections
        if let ProjectionStatus::Satisfied { by, .. } = &p.status {
            if p.thread.family == Framework::Main && ledger.events[*by].framework == Framework::Byplay {
                out.push(format!("byplay event {by} satisfied main projection {}", p.id));
            }
        }
        if closed_out && p.is_open() {
            out.push(format!("projection {} still open after close-out", p.id));
        }
    }
    // one open projection per thread: half-open intervals are disjoint
    for (i, a) in ps.iter().enumerate() {
        for b in &ps[i + 1..] {
            if a.thread == b.thread {
                let (a0, a1) = occupancy(a);
                let (b0, b1) = occupancy(b);
                if a0 < b1 && b0 < a1 {
                    out.push(format!("projections {} and {} overlap on {}", a.id, b.id, a.thread));
                }
            }
        }
    }
    out
}
