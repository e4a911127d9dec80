use serde::{Deserialize, Serialize};

use super::{Category, EventId, Framework, ProjectionId, ProjectionStatus, ThreadLedger};

/// Consecutive actions of one producer separated by less than this many
/// milliseconds belong to the same turn.
pub const TURN_GAP_MS: u64 = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub producer: String,
    pub events: Vec<EventId>,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// Main-framework actions grouped into turns.
pub fn turns(ledger: &ThreadLedger) -> Vec<Turn> {
    let mut out: Vec<Turn> = Vec::new();
    for (id, e) in ledger.events.iter().enumerate() {
        if e.framework != Framework::Main {
            continue;
        }
        match out.last_mut() {
            Some(t) if t.producer == e.producer && e.span.start_ms < t.end_ms + TURN_GAP_MS => {
                t.events.push(id);
                t.end_ms = t.end_ms.max(e.span.end_ms);
            }
            _ => out.push(Turn {
                producer: e.producer.clone(),
                events: vec![id],
                start_ms: e.span.start_ms,
                end_ms: e.span.end_ms,
            }),
        }
    }
    out
}

/// The projection an action is rendered against: the one it satisfied
/// directly, else the one it opened.
fn sequence_of(ledger: &ThreadLedger, event: EventId) -> Option<ProjectionId> {
    let satisfied = ledger.projections.iter().find(|p| {
        matches!(&p.status, ProjectionStatus::Satisfied { by, matched: Some(_), .. } if *by == event)
    });
    satisfied
        .or_else(|| ledger.projections.iter().find(|p| p.opened_by == event))
        .map(|p| p.id)
}

/// Renders main-framework actions as `[P1+P2->H1]`: producer initial plus
/// the creation rank of the sequence the action belongs to, `+` inside a
/// turn, `->` between turns, `?` for actions attached to no sequence.
pub fn stacking_string(ledger: &ThreadLedger) -> String {
    let main: Vec<ProjectionId> = ledger
        .projections
        .iter()
        .filter(|p| p.thread.family == Framework::Main)
        .map(|p| p.id)
        .collect();
    let rank = |pid: ProjectionId| main.iter().position(|&m| m == pid).map(|i| i + 1);
    let rendered: Vec<String> = turns(ledger)
        .iter()
        .map(|turn| {
            turn.events
                .iter()
                .map(|&id| {
                    let initial: String = ledger.events[id]
                        .producer
                        .chars()
                        .next()
                        .map(|c| c.to_uppercase().collect())
                        .unwrap_or_default();
                    match sequence_of(ledger, id).and_then(rank) {
                        Some(n) => format!("{initial}{n}"),
                        None => format!("{initial}?"),
                    }
                })
                .collect::<Vec<_>>()
                .join("+")
        })
        .collect();
    format!("[{}]", rendered.join("->"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub projection: ProjectionId,
    /// Awaited category that was answered.
    pub awaited: Category,
    pub opened_by: EventId,
    pub satisfied_by: EventId,
    /// From the end of the opener's turn to the start of the satisfier;
    /// negative when the response overlaps the opening turn.
    pub latency_ms: i64,
}

/// Response latencies of directly satisfied main projections.
pub fn latencies(ledger: &ThreadLedger) -> Vec<Latency> {
    let turns = turns(ledger);
    ledger
        .projections
        .iter()
        .filter(|p| p.thread.family == Framework::Main)
        .filter_map(|p| match &p.status {
            ProjectionStatus::Satisfied {
                by,
                at_ms,
                matched: Some(awaited),
            } => {
                let turn_end = turns
                    .iter()
                    .find(|t| t.events.contains(&p.opened_by))
                    .map_or(ledger.events[p.opened_by].span.end_ms, |t| t.end_ms);
                Some(Latency {
                    projection: p.id,
                    awaited: awaited.clone(),
                    opened_by: p.opened_by,
                    satisfied_by: *by,
                    latency_ms: *at_ms as i64 - turn_end as i64,
                })
            }
            _ => None,
        })
        .collect()
}
