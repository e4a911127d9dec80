//! Sequential threads.
//!
//! Every action may open a projection: the set of categories it makes
//! relevant next. Open projections sit on threads labelled `A`, `B`, `C`, …,
//! one projection per thread at a time, and a new projection takes the
//! lowest free thread. Main-framework and byplay actions have separate thread
//! families. A later action whose category satisfies an awaited category
//! closes the oldest matching projection; byplay actions meanwhile count as
//! delays on every open main projection. `repair_init` opens a repair that
//! closes as soon as one of the projections it targets is satisfied, or when
//! a `repair_account` arrives.
//!
//! ```
//! use seqanno::sequence::{ActionEvent, CategoryRegistry, ThreadLedger};
//!
//! let mut ledger = ThreadLedger::new(CategoryRegistry::seeded());
//! ledger.apply_event(ActionEvent::main(0, 500, "Pep", "greeting1", &["greeting2"])).unwrap();
//! ledger.apply_event(ActionEvent::main(800, 1200, "Hum", "greeting2", &[])).unwrap();
//! assert!(ledger.open_projections().next().is_none());
//! assert_eq!(seqanno::sequence::stacking_string(&ledger), "[P1->H1]");
//! ```

mod render;
mod tiers;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{latencies, stacking_string, turns, Latency, Turn};
pub use tiers::{
    canonical_order, export_to_tiers, import_from_tiers, parse_tier_value, TierValue,
};

pub type EventId = usize;
pub type ProjectionId = usize;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Category(String);

impl Category {
    pub fn new(name: impl Into<String>) -> Self {
        Category(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn is_valid_name(name: &str) -> bool {
        !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Category {
    fn from(s: &str) -> Self {
        Category::new(s)
    }
}

pub const SEEDED_CATEGORIES: [&str; 15] = [
    "greeting1",
    "greeting2",
    "offer",
    "acceptance",
    "rejection",
    "request",
    "question",
    "answer",
    "proposal",
    "howareyou",
    "repair_init",
    "repair_account",
    "laughter",
    "closing1",
    "closing2",
];

/// Known categories and, for each, the awaited categories it satisfies.
/// Every category satisfies itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRegistry {
    satisfies: BTreeMap<Category, BTreeSet<Category>>,
}

impl CategoryRegistry {
    pub fn empty() -> Self {
        CategoryRegistry {
            satisfies: BTreeMap::new(),
        }
    }

    pub fn seeded() -> Self {
        let mut reg = Self::empty();
        for name in SEEDED_CATEGORIES {
            reg.register(name).expect("seed names are valid");
        }
        reg
    }

    /// Adds a category; registering an existing one is a no-op.
    pub fn register(&mut self, name: &str) -> Result<(), SequenceError> {
        if !Category::is_valid_name(name) {
            return Err(SequenceError::BadCategoryName(name.to_string()));
        }
        let cat = Category::new(name);
        self.satisfies
            .entry(cat.clone())
            .or_insert_with(|| BTreeSet::from([cat]));
        Ok(())
    }

    /// Lets `by` also satisfy an awaited `awaited`.
    pub fn add_satisfaction(&mut self, by: &str, awaited: &str) -> Result<(), SequenceError> {
        let awaited = self.known(awaited)?.clone();
        let by = self.known(by)?.clone();
        self.satisfies.get_mut(&by).expect("known").insert(awaited);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.satisfies.contains_key(name)
    }

    pub fn categories(&self) -> impl Iterator<Item = &Category> {
        self.satisfies.keys()
    }

    pub fn can_satisfy(&self, by: &Category, awaited: &Category) -> bool {
        self.satisfies.get(by).is_some_and(|s| s.contains(awaited))
    }

    fn known(&self, name: &str) -> Result<&Category, SequenceError> {
        self.satisfies
            .get_key_value(name)
            .map(|(k, _)| k)
            .ok_or_else(|| SequenceError::UnknownCategory(name.to_string()))
    }
}

impl std::borrow::Borrow<str> for Category {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Main,
    Byplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadId {
    pub family: Framework,
    pub ordinal: u32,
}

impl ThreadId {
    pub const fn main(ordinal: u32) -> Self {
        ThreadId {
            family: Framework::Main,
            ordinal,
        }
    }

    pub const fn byplay(ordinal: u32) -> Self {
        ThreadId {
            family: Framework::Byplay,
            ordinal,
        }
    }

    /// `A`..`Z`, then `AA`, `AB`, …
    pub fn letter(&self) -> String {
        ordinal_letters(self.ordinal)
    }

    pub fn tier_name(&self) -> String {
        match self.family {
            Framework::Main => format!("seqthread@{}", self.letter()),
            Framework::Byplay => format!("byplay@{}", self.letter()),
        }
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Framework::Main => f.write_str(&self.letter()),
            Framework::Byplay => write!(f, "byplay:{}", self.letter()),
        }
    }
}

pub fn ordinal_letters(ordinal: u32) -> String {
    let mut n = ordinal as u64 + 1;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'A' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

pub fn letters_ordinal(letters: &str) -> Option<u32> {
    if letters.is_empty() || !letters.bytes().all(|b| b.is_ascii_uppercase()) {
        return None;
    }
    let mut n: u64 = 0;
    for b in letters.bytes() {
        n = n.checked_mul(26)?.checked_add((b - b'A') as u64 + 1)?;
    }
    u32::try_from(n - 1).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Span {
    pub fn new(start_ms: u64, end_ms: u64) -> Self {
        Span { start_ms, end_ms }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start_ms < other.end_ms && other.start_ms < self.end_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub span: Span,
    pub producer: String,
    pub framework: Framework,
    pub category: Category,
    /// What this action makes relevant next; empty when it projects nothing.
    pub awaited_next: BTreeSet<Category>,
}

impl ActionEvent {
    pub fn new(
        framework: Framework,
        start_ms: u64,
        end_ms: u64,
        producer: &str,
        category: &str,
        awaited_next: &[&str],
    ) -> Self {
        ActionEvent {
            span: Span::new(start_ms, end_ms),
            producer: producer.to_string(),
            framework,
            category: Category::new(category),
            awaited_next: awaited_next.iter().map(|c| Category::new(*c)).collect(),
        }
    }

    pub fn main(start_ms: u64, end_ms: u64, producer: &str, category: &str, awaited_next: &[&str]) -> Self {
        Self::new(Framework::Main, start_ms, end_ms, producer, category, awaited_next)
    }

    pub fn byplay(start_ms: u64, end_ms: u64, producer: &str, category: &str, awaited_next: &[&str]) -> Self {
        Self::new(Framework::Byplay, start_ms, end_ms, producer, category, awaited_next)
    }

    pub fn is_repair_init(&self) -> bool {
        self.category.as_str() == "repair_init"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectiveKind {
    /// Replaces the awaited set of the projection open on the thread.
    Narrow { awaited: BTreeSet<Category> },
    Abandon { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub at_ms: u64,
    pub thread: ThreadId,
    #[serde(flatten)]
    pub kind: DirectiveKind,
}

impl Directive {
    pub fn narrow(at_ms: u64, thread: ThreadId, awaited: &[&str]) -> Self {
        Directive {
            at_ms,
            thread,
            kind: DirectiveKind::Narrow {
                awaited: awaited.iter().map(|c| Category::new(*c)).collect(),
            },
        }
    }

    pub fn abandon(at_ms: u64, thread: ThreadId, reason: &str) -> Self {
        Directive {
            at_ms,
            thread,
            kind: DirectiveKind::Abandon {
                reason: reason.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum LedgerInput {
    Act(ActionEvent),
    Directive(Directive),
}

impl LedgerInput {
    pub fn time_ms(&self) -> u64 {
        match self {
            LedgerInput::Act(e) => e.span.start_ms,
            LedgerInput::Directive(d) => d.at_ms,
        }
    }
}

impl From<ActionEvent> for LedgerInput {
    fn from(e: ActionEvent) -> Self {
        LedgerInput::Act(e)
    }
}

impl From<Directive> for LedgerInput {
    fn from(d: Directive) -> Self {
        LedgerInput::Directive(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionKind {
    Normal,
    Repair { targets: BTreeSet<ProjectionId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ProjectionStatus {
    Open,
    /// `matched` is the awaited category the satisfier answered; it is absent
    /// when a repair closed because one of its targets was satisfied.
    Satisfied {
        by: EventId,
        at_ms: u64,
        matched: Option<Category>,
    },
    Abandoned { reason: String, at_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Narrowing {
    pub at_ms: u64,
    pub awaited: BTreeSet<Category>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub id: ProjectionId,
    pub opened_by: EventId,
    pub thread: ThreadId,
    pub opened_at_ms: u64,
    /// The awaited set at opening; see `narrowings` for later replacements.
    pub awaited: BTreeSet<Category>,
    pub narrowings: Vec<Narrowing>,
    pub kind: ProjectionKind,
    pub status: ProjectionStatus,
    pub delays: Vec<EventId>,
}

impl Projection {
    pub fn is_open(&self) -> bool {
        self.status == ProjectionStatus::Open
    }

    pub fn is_repair(&self) -> bool {
        matches!(self.kind, ProjectionKind::Repair { .. })
    }

    pub fn closed_at_ms(&self) -> Option<u64> {
        match &self.status {
            ProjectionStatus::Open => None,
            ProjectionStatus::Satisfied { at_ms, .. } | ProjectionStatus::Abandoned { at_ms, .. } => {
                Some(*at_ms)
            }
        }
    }

    pub fn current_awaited(&self) -> &BTreeSet<Category> {
        self.narrowings.last().map_or(&self.awaited, |n| &n.awaited)
    }

    /// The awaited set in force at `at_ms`.
    pub fn awaited_at(&self, at_ms: u64) -> &BTreeSet<Category> {
        self.narrowings
            .iter()
            .rev()
            .find(|n| n.at_ms <= at_ms)
            .map_or(&self.awaited, |n| &n.awaited)
    }

    /// Opening time or latest narrowing, whichever is later.
    pub fn last_boundary_ms(&self) -> u64 {
        self.narrowings.last().map_or(self.opened_at_ms, |n| n.at_ms)
    }

    /// Whether the projection occupies `at_ms`, counting both endpoints.
    fn touches(&self, from_ms: u64, to_ms: Option<u64>) -> bool {
        let close = self.closed_at_ms();
        to_ms.is_none_or(|t| self.opened_at_ms <= t) && close.is_none_or(|c| from_ms <= c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    Opened { projection: ProjectionId, thread: ThreadId },
    Satisfied {
        projection: ProjectionId,
        by: EventId,
        matched: Option<Category>,
    },
    Delayed { projection: ProjectionId, by: EventId },
    Narrowed { projection: ProjectionId, awaited: BTreeSet<Category> },
    Abandoned { projection: ProjectionId, reason: String },
    Unattached { event: EventId },
    /// More than one open projection could take the event; the oldest did.
    AmbiguousSatisfaction {
        event: EventId,
        candidates: Vec<ProjectionId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SequenceError {
    #[error("input at {at_ms} ms precedes the latest applied input at {latest_ms} ms")]
    OutOfOrder { at_ms: u64, latest_ms: u64 },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("category name {0:?} must be lowercase letters, digits and underscores")]
    BadCategoryName(String),
    #[error("span {start_ms}..{end_ms} does not end after it starts")]
    EmptySpan { start_ms: u64, end_ms: u64 },
    #[error("producer {0:?} must be non-empty without whitespace, commas, parentheses or semicolons")]
    BadProducer(String),
    #[error("abandon reason {0:?} must be non-empty without commas, parentheses or semicolons")]
    BadReason(String),
    #[error("repair_init opens its own repair projection and cannot carry an awaited set")]
    RepairWithAwaited,
    #[error("narrowing to an empty awaited set; abandon the projection instead")]
    EmptyNarrowing,
    #[error("no projection {0}")]
    UnknownProjection(ProjectionId),
    #[error("projection {0} is not open")]
    NotOpen(ProjectionId),
    #[error("thread {0} has no open projection")]
    NoOpenProjection(ThreadId),
    #[error("directive at {at_ms} ms must come after projection {projection}'s last change at {boundary_ms} ms")]
    DirectiveTooEarly {
        projection: ProjectionId,
        at_ms: u64,
        boundary_ms: u64,
    },
    #[error("silence {start_ms}..{end_ms} overlaps event {event}")]
    SilenceOverlapsEvent { start_ms: u64, end_ms: u64, event: EventId },
    #[error("tier {tier:?} segment {segment}: {message}")]
    TierValue {
        tier: String,
        segment: usize,
        message: String,
    },
    #[error(transparent)]
    Tier(#[from] crate::tiers::TierError),
}

fn is_free_text(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| matches!(c, ',' | '(' | ')' | ';'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadLedger {
    pub registry: CategoryRegistry,
    pub events: Vec<ActionEvent>,
    pub directives: Vec<Directive>,
    pub projections: Vec<Projection>,
    /// Threads in creation order.
    pub threads: Vec<ThreadId>,
    pub unattached: Vec<EventId>,
    latest_ms: Option<u64>,
}

impl ThreadLedger {
    pub fn new(registry: CategoryRegistry) -> Self {
        ThreadLedger {
            registry,
            events: Vec::new(),
            directives: Vec::new(),
            projections: Vec::new(),
            threads: Vec::new(),
            unattached: Vec::new(),
            latest_ms: None,
        }
    }

    pub fn open_projections(&self) -> impl Iterator<Item = &Projection> {
        self.projections.iter().filter(|p| p.is_open())
    }

    pub fn open_on(&self, thread: ThreadId) -> Option<&Projection> {
        self.open_projections().find(|p| p.thread == thread)
    }

    pub fn projections_on(&self, thread: ThreadId) -> impl Iterator<Item = &Projection> {
        self.projections.iter().filter(move |p| p.thread == thread)
    }

    /// Lowest thread of the family with no open projection, creating one
    /// when all are busy.
    pub fn allocate_thread(&mut self, family: Framework) -> ThreadId {
        let existing = self.threads.iter().filter(|t| t.family == family).count() as u32;
        for ordinal in 0..existing {
            let thread = ThreadId { family, ordinal };
            if self.open_on(thread).is_none() {
                return thread;
            }
        }
        let thread = ThreadId {
            family,
            ordinal: existing,
        };
        self.threads.push(thread);
        thread
    }

    fn check_clock(&self, at_ms: u64) -> Result<(), SequenceError> {
        match self.latest_ms {
            Some(latest_ms) if at_ms < latest_ms => Err(SequenceError::OutOfOrder { at_ms, latest_ms }),
            _ => Ok(()),
        }
    }

    fn advance_clock(&mut self, at_ms: u64) -> Result<(), SequenceError> {
        self.check_clock(at_ms)?;
        self.latest_ms = Some(at_ms);
        Ok(())
    }

    fn check_event(&self, e: &ActionEvent) -> Result<(), SequenceError> {
        if e.span.end_ms <= e.span.start_ms {
            return Err(SequenceError::EmptySpan {
                start_ms: e.span.start_ms,
                end_ms: e.span.end_ms,
            });
        }
        if !is_free_text(&e.producer) || e.producer.chars().any(char::is_whitespace) {
            return Err(SequenceError::BadProducer(e.producer.clone()));
        }
        self.registry.known(e.category.as_str())?;
        for c in &e.awaited_next {
            self.registry.known(c.as_str())?;
        }
        if e.is_repair_init() && !e.awaited_next.is_empty() {
            return Err(SequenceError::RepairWithAwaited);
        }
        Ok(())
    }

    pub fn apply(&mut self, input: LedgerInput) -> Result<Vec<Effect>, SequenceError> {
        match input {
            LedgerInput::Act(e) => self.apply_event(e),
            LedgerInput::Directive(d) => self.apply_directive(d),
        }
    }

    pub fn apply_event(&mut self, e: ActionEvent) -> Result<Vec<Effect>, SequenceError> {
        self.check_clock(e.span.start_ms)?;
        self.check_event(&e)?;
        self.advance_clock(e.span.start_ms)?;
        let id = self.events.len();
        let at = e.span.start_ms;
        let family = e.framework;
        let mut effects = Vec::new();

        let candidates: Vec<ProjectionId> = self
            .open_projections()
            .filter(|p| p.thread.family == family && p.last_boundary_ms() < at)
            .filter(|p| {
                p.current_awaited()
                    .iter()
                    .any(|a| self.registry.can_satisfy(&e.category, a))
            })
            .map(|p| p.id)
            .collect();
        let satisfied = candidates.first().copied();
        if candidates.len() > 1 {
            effects.push(Effect::AmbiguousSatisfaction {
                event: id,
                candidates: candidates.clone(),
            });
        }
        if let Some(pid) = satisfied {
            let matched = self.projections[pid]
                .current_awaited()
                .iter()
                .find(|a| self.registry.can_satisfy(&e.category, a))
                .cloned();
            self.projections[pid].status = ProjectionStatus::Satisfied {
                by: id,
                at_ms: at,
                matched: matched.clone(),
            };
            effects.push(Effect::Satisfied {
                projection: pid,
                by: id,
                matched,
            });
            self.cascade_repairs(pid, id, at, &mut effects);
        }

        if family == Framework::Byplay {
            let open_main: Vec<ProjectionId> = self
                .open_projections()
                .filter(|p| p.thread.family == Framework::Main)
                .map(|p| p.id)
                .collect();
            for pid in open_main {
                self.projections[pid].delays.push(id);
                effects.push(Effect::Delayed { projection: pid, by: id });
            }
        }

        let opens = if e.is_repair_init() {
            let targets: BTreeSet<ProjectionId> = self
                .open_projections()
                .filter(|p| p.thread.family == family)
                .map(|p| p.id)
                .collect();
            Some((
                ProjectionKind::Repair { targets },
                BTreeSet::from([Category::new("repair_account")]),
            ))
        } else if !e.awaited_next.is_empty() {
            Some((ProjectionKind::Normal, e.awaited_next.clone()))
        } else {
            None
        };
        let opened = opens.is_some();
        if let Some((kind, awaited)) = opens {
            let thread = self.allocate_thread(family);
            let pid = self.projections.len();
            self.projections.push(Projection {
                id: pid,
                opened_by: id,
                thread,
                opened_at_ms: at,
                awaited,
                narrowings: Vec::new(),
                kind,
                status: ProjectionStatus::Open,
                delays: Vec::new(),
            });
            effects.push(Effect::Opened { projection: pid, thread });
        }

        if family == Framework::Main && satisfied.is_none() && !opened {
            self.unattached.push(id);
            effects.push(Effect::Unattached { event: id });
        }
        self.events.push(e);
        Ok(effects)
    }

    fn cascade_repairs(&mut self, first: ProjectionId, by: EventId, at: u64, effects: &mut Vec<Effect>) {
        let mut closed = vec![first];
        while let Some(done) = closed.pop() {
            let repairs: Vec<ProjectionId> = self
                .open_projections()
                .filter(|p| p.last_boundary_ms() < at)
                .filter(|p| matches!(&p.kind, ProjectionKind::Repair { targets } if targets.contains(&done)))
                .map(|p| p.id)
                .collect();
            for rid in repairs {
                self.projections[rid].status = ProjectionStatus::Satisfied {
                    by,
                    at_ms: at,
                    matched: None,
                };
                effects.push(Effect::Satisfied {
                    projection: rid,
                    by,
                    matched: None,
                });
                closed.push(rid);
            }
        }
    }

    pub fn apply_directive(&mut self, d: Directive) -> Result<Vec<Effect>, SequenceError> {
        self.check_clock(d.at_ms)?;
        let pid = self
            .open_on(d.thread)
            .map(|p| p.id)
            .ok_or(SequenceError::NoOpenProjection(d.thread))?;
        let effects = match &d.kind {
            DirectiveKind::Narrow { awaited } => {
                if awaited.is_empty() {
                    return Err(SequenceError::EmptyNarrowing);
                }
                for c in awaited {
                    self.registry.known(c.as_str())?;
                }
                self.check_boundary(pid, d.at_ms)?;
                self.advance_clock(d.at_ms)?;
                self.projections[pid].narrowings.push(Narrowing {
                    at_ms: d.at_ms,
                    awaited: awaited.clone(),
                });
                vec![Effect::Narrowed {
                    projection: pid,
                    awaited: awaited.clone(),
                }]
            }
            DirectiveKind::Abandon { reason } => self.abandon(pid, reason, d.at_ms)?,
        };
        self.directives.push(d);
        Ok(effects)
    }

    fn check_boundary(&self, pid: ProjectionId, at_ms: u64) -> Result<(), SequenceError> {
        let boundary_ms = self.projections[pid].last_boundary_ms();
        if at_ms <= boundary_ms {
            return Err(SequenceError::DirectiveTooEarly {
                projection: pid,
                at_ms,
                boundary_ms,
            });
        }
        Ok(())
    }

    /// Closes an open projection without satisfaction. Prefer
    /// [`ThreadLedger::apply_directive`] when the abandonment should survive
    /// a tier export, since only directives are recorded as inputs.
    pub fn abandon(&mut self, projection: ProjectionId, reason: &str, at_ms: u64) -> Result<Vec<Effect>, SequenceError> {
        let p = self
            .projections
            .get(projection)
            .ok_or(SequenceError::UnknownProjection(projection))?;
        if !p.is_open() {
            return Err(SequenceError::NotOpen(projection));
        }
        if !is_free_text(reason) {
            return Err(SequenceError::BadReason(reason.to_string()));
        }
        self.check_clock(at_ms)?;
        self.check_boundary(projection, at_ms)?;
        self.advance_clock(at_ms)?;
        self.projections[projection].status = ProjectionStatus::Abandoned {
            reason: reason.to_string(),
            at_ms,
        };
        Ok(vec![Effect::Abandoned {
            projection,
            reason: reason.to_string(),
        }])
    }

    /// Abandons everything still open with reason `clip_end`, main threads
    /// first. Each abandonment is recorded as a directive.
    pub fn close_out(&mut self, at_ms: u64) -> Result<Vec<Effect>, SequenceError> {
        let mut open: Vec<ThreadId> = self.open_projections().map(|p| p.thread).collect();
        open.sort();
        let mut effects = Vec::new();
        for thread in open {
            effects.extend(self.apply_directive(Directive::abandon(at_ms, thread, "clip_end"))?);
        }
        Ok(effects)
    }

    /// Reads a silence against the projections open across it.
    pub fn classify_silence(&self, span: Span) -> Result<SilenceClass, SequenceError> {
        if let Some(event) = self.events.iter().position(|e| e.span.overlaps(&span)) {
            return Err(SequenceError::SilenceOverlapsEvent {
                start_ms: span.start_ms,
                end_ms: span.end_ms,
                event,
            });
        }
        let mut awaiting: Vec<AwaitingThread> = self
            .projections
            .iter()
            .filter(|p| p.thread.family == Framework::Main)
            .filter(|p| p.opened_at_ms < span.end_ms && p.closed_at_ms().is_none_or(|c| c > span.start_ms))
            .map(|p| AwaitingThread {
                thread: p.thread,
                projection: p.id,
                awaited: p.awaited_at(span.start_ms).clone(),
            })
            .collect();
        if awaiting.is_empty() {
            return Ok(SilenceClass::Lapse);
        }
        awaiting.sort_by_key(|a| (a.thread, a.projection));
        Ok(SilenceClass::ResponseGap { awaiting })
    }

    /// Post-hoc check: each projection sits on the lowest thread that was
    /// not occupied somewhere in its open interval. Returns offending ids.
    pub fn allocation_violations(&self) -> Vec<ProjectionId> {
        self.projections
            .iter()
            .filter(|p| {
                (0..p.thread.ordinal).any(|lower| {
                    let lower = ThreadId {
                        family: p.thread.family,
                        ordinal: lower,
                    };
                    !self
                        .projections_on(lower)
                        .any(|q| q.touches(p.opened_at_ms, p.closed_at_ms()))
                })
            })
            .map(|p| p.id)
            .collect()
    }

    /// Pairs of projections on one thread whose open intervals overlap.
    pub fn thread_overlaps(&self) -> Vec<(ProjectionId, ProjectionId)> {
        let mut out = Vec::new();
        for (i, p) in self.projections.iter().enumerate() {
            for q in &self.projections[i + 1..] {
                if p.thread != q.thread {
                    continue;
                }
                let p_end = p.closed_at_ms().unwrap_or(u64::MAX);
                let q_end = q.closed_at_ms().unwrap_or(u64::MAX);
                if p.opened_at_ms < q_end && q.opened_at_ms < p_end {
                    out.push((p.id, q.id));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwaitingThread {
    pub thread: ThreadId,
    pub projection: ProjectionId,
    pub awaited: BTreeSet<Category>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum SilenceClass {
    /// At least one main projection was waiting for a response.
    ResponseGap { awaiting: Vec<AwaitingThread> },
    /// Nothing was pending.
    Lapse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedSilence {
    pub span: Span,
    #[serde(flatten)]
    pub class: SilenceClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "lint", rename_all = "snake_case")]
pub enum SequenceDiagnostic {
    UnresolvedProjection { projection: ProjectionId, thread: ThreadId },
    AmbiguousSatisfaction {
        event: EventId,
        candidates: Vec<ProjectionId>,
    },
}

impl fmt::Display for SequenceDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceDiagnostic::UnresolvedProjection { projection, thread } => {
                write!(f, "unresolved_projection: projection {projection} on thread {thread} is still open")
            }
            SequenceDiagnostic::AmbiguousSatisfaction { event, candidates } => {
                let ids: Vec<String> = candidates.iter().map(ToString::to_string).collect();
                write!(
                    f,
                    "ambiguous_satisfaction: event {event} matched projections {}; the oldest was taken",
                    ids.join(", ")
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replay {
    pub ledger: ThreadLedger,
    /// Effects of each input, in input order.
    pub steps: Vec<Vec<Effect>>,
    pub silences: Vec<ClassifiedSilence>,
    pub diagnostics: Vec<SequenceDiagnostic>,
}

/// Folds the inputs into a fresh ledger, then classifies the silences
/// against it.
pub fn replay(
    inputs: &[LedgerInput],
    silences: &[Span],
    registry: &CategoryRegistry,
) -> Result<Replay, SequenceError> {
    let mut ledger = ThreadLedger::new(registry.clone());
    let mut steps = Vec::with_capacity(inputs.len());
    let mut diagnostics = Vec::new();
    for input in inputs {
        let effects = ledger.apply(input.clone())?;
        for effect in &effects {
            if let Effect::AmbiguousSatisfaction { event, candidates } = effect {
                diagnostics.push(SequenceDiagnostic::AmbiguousSatisfaction {
                    event: *event,
                    candidates: candidates.clone(),
                });
            }
        }
        steps.push(effects);
    }
    for p in ledger.open_projections() {
        diagnostics.push(SequenceDiagnostic::UnresolvedProjection {
            projection: p.id,
            thread: p.thread,
        });
    }
    let silences = silences
        .iter()
        .map(|&span| {
            Ok(ClassifiedSilence {
                span,
                class: ledger.classify_silence(span)?,
            })
        })
        .collect::<Result<Vec<_>, SequenceError>>()?;
    Ok(Replay {
        ledger,
        steps,
        silences,
        diagnostics,
    })
}

/// Gaps between the union of all event spans, in time order.
pub fn silences_between(events: &[ActionEvent]) -> Vec<Span> {
    let mut spans: Vec<Span> = events.iter().map(|e| e.span).collect();
    spans.sort_by_key(|s| (s.start_ms, s.end_ms));
    let mut out = Vec::new();
    let mut reach: Option<u64> = None;
    for s in spans {
        if let Some(r) = reach {
            if s.start_ms > r {
                out.push(Span::new(r, s.start_ms));
            }
        }
        reach = Some(reach.map_or(s.end_ms, |r| r.max(s.end_ms)));
    }
    out
}

#[cfg(test)]
mod tests;
