//! Keyword-triggered dialogue machine and a simulator that turns scripted
//! user turns into annotated interaction logs.
//!
//! Machine files are line based; `#` starts a comment line.
//!
//! ```text
//! initial greeting
//! robot Pep
//! user Hum
//! opening hi (.) can I help you? @greeting1+offer
//! fallback reissue how can I help you? @offer
//! silence_threshold 1000
//! ms_per_word 300
//!
//! [await]
//! greeting1 -> greeting2
//! offer -> acceptance rejection request question
//!
//! [label]
//! howareyou -> question
//!
//! [state greeting]
//! rule coffee tea -> served : here you are @answer
//! ```
//!
//! A rule reads `rule <keywords> -> <target> : <response> @<cat>[+<cat>...]`.
//! Inside the response, `\:`, `\@` and `\\` stand for literal `:`, `@` and
//! `\`. Keywords are lowercased and matched as whole words, ignoring case.
//! When an utterance holds keywords of several rules, the rule declared
//! first wins. `opening` is spoken by the robot before the script starts.
//!
//! Scripts hold `user <duration_ms> <text> @<cat>[+<cat>...]` and
//! `pause <ms>` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{parse_label_string, LabelDiagnostic, LabelError, LabelSequence, TagRegistry};
use crate::sequence::{
    export_to_tiers, replay, ActionEvent, Category, CategoryRegistry, Framework, SequenceError, Span,
};
use crate::tiers::{AnnotationDocument, Segment, Tier};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown state {name:?}")]
    UnknownState { line: usize, name: String },
    #[error("line {line}: rule has no trigger keywords")]
    EmptyTrigger { line: usize },
    #[error("ambiguous trigger: keyword {keyword:?} appears in rules on lines {first} and {second} of state {state:?}")]
    AmbiguousTrigger {
        state: String,
        keyword: String,
        first: usize,
        second: usize,
    },
    #[error("line {line}: unknown category {name:?}")]
    UnknownCategory { line: usize, name: String },
    #[error("no state {0:?}")]
    NoSuchState(String),
    #[error(transparent)]
    Labels(#[from] LabelError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub source: String,
    pub keywords: BTreeSet<String>,
    pub response: Prompt,
    pub target: String,
    /// Line of the machine file that declared the rule.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Fallback {
    StaySilent,
    ReissuePrompt(Prompt),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueMachine {
    /// In declaration order.
    pub states: Vec<String>,
    pub initial: String,
    pub rules: Vec<Rule>,
    pub fallback: Fallback,
    pub opening: Option<Prompt>,
    pub robot: String,
    pub user: String,
    pub silence_threshold_ms: u64,
    pub ms_per_word: u64,
    /// What each category makes relevant next.
    pub awaits: BTreeMap<Category, BTreeSet<Category>>,
    /// Label tag to use for a category when it differs from the name.
    pub labels: BTreeMap<Category, String>,
    pub categories: CategoryRegistry,
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn unescaped_positions(s: &str, target: char) -> Vec<usize> {
    let mut out = Vec::new();
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == target {
            out.push(i);
        }
    }
    out
}

/// Word tokens of an utterance: maximal alphanumeric runs, lowercased.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn parse_prompt(
    body: &str,
    line: usize,
    categories: &CategoryRegistry,
) -> Result<Prompt, SimError> {
    let at = *unescaped_positions(body, '@').last().ok_or_else(|| SimError::Syntax {
        line,
        message: "missing @<category>".into(),
    })?;
    let text = unescape(body[..at].trim());
    let cats = body[at + 1..]
        .trim()
        .split('+')
        .map(|c| {
            let c = c.trim();
            if categories.contains(c) {
                Ok(Category::new(c))
            } else {
                Err(SimError::UnknownCategory {
                    line,
                    name: c.to_string(),
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prompt {
        text,
        categories: cats,
    })
}

fn parse_rule(
    rest: &str,
    source: &str,
    line: usize,
    categories: &CategoryRegistry,
) -> Result<Rule, SimError> {
    let syntax = |message: &str| SimError::Syntax {
        line,
        message: message.to_string(),
    };
    let (trigger, rest) = rest
        .split_once("->")
        .ok_or_else(|| syntax("rule needs `-> <target>`"))?;
    let keywords: BTreeSet<String> = trigger.split_whitespace().map(str::to_lowercase).collect();
    if keywords.is_empty() {
        return Err(SimError::EmptyTrigger { line });
    }
    if let Some(bad) = keywords.iter().find(|k| !k.chars().all(char::is_alphanumeric)) {
        return Err(syntax(&format!("keyword {bad:?} is not a single word")));
    }
    let colon = *unescaped_positions(rest, ':')
        .first()
        .ok_or_else(|| syntax("rule needs `: <response>`"))?;
    let target = rest[..colon].trim();
    if target.is_empty() || target.contains(char::is_whitespace) {
        return Err(syntax("rule target must be one state name"));
    }
    let response = parse_prompt(&rest[colon + 1..], line, categories)?;
    Ok(Rule {
        source: source.to_string(),
        keywords,
        response,
        target: target.to_string(),
        line,
    })
}

fn category_list(
    words: &str,
    line: usize,
    categories: &CategoryRegistry,
) -> Result<BTreeSet<Category>, SimError> {
    words
        .split_whitespace()
        .map(|c| {
            if categories.contains(c) {
                Ok(Category::new(c))
            } else {
                Err(SimError::UnknownCategory {
                    line,
                    name: c.to_string(),
                })
            }
        })
        .collect()
}

enum Section {
    Preamble,
    Await,
    Label,
    State(String),
}

/// Parses and validates a machine file.
pub fn load_machine(text: &str) -> Result<DialogueMachine, SimError> {
    let mut categories = CategoryRegistry::seeded();
    // extra categories first, so later lines may use them anywhere
    for (i, raw) in text.lines().enumerate() {
        if let Some(rest) = raw.trim().strip_prefix("categories ") {
            for name in rest.split_whitespace() {
                categories.register(name).map_err(|e| SimError::Syntax {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            }
        }
    }

    let mut states: Vec<String> = Vec::new();
    let mut initial: Option<(String, usize)> = None;
    let mut rules: Vec<Rule> = Vec::new();
    let mut fallback = Fallback::StaySilent;
    let mut opening = None;
    let mut robot = "Robot".to_string();
    let mut user = "Human".to_string();
    let mut silence_threshold_ms = 1000;
    let mut ms_per_word = 300;
    let mut awaits = BTreeMap::new();
    let mut labels = BTreeMap::new();
    let mut section = Section::Preamble;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |message: String| SimError::Syntax { line, message };
        if let Some(header) = trimmed.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            let header = header.trim();
            section = match header {
                "await" => Section::Await,
                "label" => Section::Label,
                _ => match header.strip_prefix("state ").map(str::trim) {
                    Some(name) if !name.is_empty() && !name.contains(char::is_whitespace) => {
                        if states.iter().any(|s| s == name) {
                            return Err(syntax(format!("state {name:?} declared twice")));
                        }
                        states.push(name.to_string());
                        Section::State(name.to_string())
                    }
                    _ => return Err(syntax(format!("unknown section [{header}]"))),
                },
            };
            continue;
        }
        let (word, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        let rest = rest.trim();
        match &section {
            Section::Preamble => match word {
                "initial" => initial = Some((rest.to_string(), line)),
                "robot" | "user" if !rest.is_empty() && !rest.contains(char::is_whitespace) => {
                    if word == "robot" {
                        robot = rest.to_string();
                    } else {
                        user = rest.to_string();
                    }
                }
                "opening" => opening = Some(parse_prompt(rest, line, &categories)?),
                "fallback" => {
                    fallback = match rest.split_once(char::is_whitespace) {
                        None if rest == "silent" => Fallback::StaySilent,
                        Some(("reissue", body)) => Fallback::ReissuePrompt(parse_prompt(body, line, &categories)?),
                        _ => return Err(syntax("fallback is `silent` or `reissue <text> @<cat>`".into())),
                    }
                }
                "silence_threshold" | "ms_per_word" => {
                    let n: u64 = rest
                        .parse()
                        .map_err(|_| syntax(format!("{word} needs a whole number of milliseconds")))?;
                    if word == "ms_per_word" {
                        ms_per_word = n.max(1);
                    } else {
                        silence_threshold_ms = n;
                    }
                }
                "categories" => {}
                _ => return Err(syntax(format!("unknown directive {word:?}"))),
            },
            Section::Await | Section::Label => {
                let (key, value) = trimmed
                    .split_once("->")
                    .ok_or_else(|| syntax("expected `<category> -> ...`".into()))?;
                let key = key.trim();
                if !categories.contains(key) {
                    return Err(SimError::UnknownCategory {
                        line,
                        name: key.to_string(),
                    });
                }
                if matches!(section, Section::Await) {
                    awaits.insert(Category::new(key), category_list(value, line, &categories)?);
                } else {
                    labels.insert(Category::new(key), value.trim().to_string());
                }
            }
            Section::State(source) => {
                if word != "rule" {
                    return Err(syntax(format!("expected `rule`, found {word:?}")));
                }
                rules.push(parse_rule(rest, source, line, &categories)?);
            }
        }
    }

    let (initial, initial_line) = initial.ok_or(SimError::Syntax {
        line: 1,
        message: "missing `initial <state>`".into(),
    })?;
    if !states.contains(&initial) {
        return Err(SimError::UnknownState {
            line: initial_line,
            name: initial,
        });
    }
    let mut seen: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for rule in &rules {
        if !states.contains(&rule.target) {
            return Err(SimError::UnknownState {
                line: rule.line,
                name: rule.target.clone(),
            });
        }
        for k in &rule.keywords {
            if let Some(&first) = seen.get(&(rule.source.as_str(), k.as_str())) {
                return Err(SimError::AmbiguousTrigger {
                    state: rule.source.clone(),
                    keyword: k.clone(),
                    first,
                    second: rule.line,
                });
            }
            seen.insert((rule.source.as_str(), k.as_str()), rule.line);
        }
    }
    Ok(DialogueMachine {
        states,
        initial,
        rules,
        fallback,
        opening,
        robot,
        user,
        silence_threshold_ms,
        ms_per_word,
        awaits,
        labels,
        categories,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum Origin {
    Opening,
    Rule { line: usize },
    Fallback,
    Script { item: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub prompt: Prompt,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub response: Option<Response>,
    pub next_state: String,
}

/// Fires the first rule of `state` sharing a word with the utterance; with
/// no match the fallback applies and the state is kept.
pub fn step(machine: &DialogueMachine, state: &str, utterance: &str) -> Result<StepOutcome, SimError> {
    if !machine.states.iter().any(|s| s == state) {
        return Err(SimError::NoSuchState(state.to_string()));
    }
    let said: BTreeSet<String> = words(utterance).into_iter().collect();
    let fired = machine
        .rules
        .iter()
        .filter(|r| r.source == state)
        .find(|r| r.keywords.iter().any(|k| said.contains(k)));
    Ok(match fired {
        Some(rule) => StepOutcome {
            response: Some(Response {
                prompt: rule.response.clone(),
                origin: Origin::Rule { line: rule.line },
            }),
            next_state: rule.target.clone(),
        },
        None => StepOutcome {
            response: match &machine.fallback {
                Fallback::StaySilent => None,
                Fallback::ReissuePrompt(p) => Some(Response {
                    prompt: p.clone(),
                    origin: Origin::Fallback,
                }),
            },
            next_state: state.to_string(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum ScriptItem {
    User {
        duration_ms: u64,
        text: String,
        categories: Vec<Category>,
    },
    Pause { ms: u64 },
}

pub fn load_script(text: &str, machine: &DialogueMachine) -> Result<Vec<ScriptItem>, SimError> {
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |message: &str| SimError::Syntax {
            line,
            message: message.to_string(),
        };
        let (word, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        let rest = rest.trim();
        match word {
            "pause" => items.push(ScriptItem::Pause {
                ms: rest.parse().map_err(|_| syntax("pause needs milliseconds"))?,
            }),
            "user" => {
                let (dur, body) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                let duration_ms: u64 = dur.parse().map_err(|_| syntax("user needs a duration in ms"))?;
                if duration_ms == 0 {
                    return Err(syntax("user turns must last at least 1 ms"));
                }
                let prompt = parse_prompt(body, line, &machine.categories)?;
                items.push(ScriptItem::User {
                    duration_ms,
                    text: prompt.text,
                    categories: prompt.categories,
                });
            }
            _ => return Err(syntax("expected `user` or `pause`")),
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Robot,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Turn {
        start_ms: u64,
        end_ms: u64,
        speaker: Speaker,
        text: String,
        categories: Vec<Category>,
        origin: Origin,
        /// State after the turn.
        state: String,
    },
    Silence { start_ms: u64, end_ms: u64 },
}

impl LogEvent {
    pub fn span(&self) -> Span {
        match self {
            LogEvent::Turn { start_ms, end_ms, .. } | LogEvent::Silence { start_ms, end_ms } => {
                Span::new(*start_ms, *end_ms)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimLog {
    pub events: Vec<LogEvent>,
    pub final_state: String,
}

impl SimLog {
    pub fn end_ms(&self) -> u64 {
        self.events.last().map_or(0, |e| e.span().end_ms)
    }
}

fn robot_turn(machine: &DialogueMachine, at: u64, response: Response, state: &str) -> LogEvent {
    let n = words(&response.prompt.text).len().max(1) as u64;
    LogEvent::Turn {
        start_ms: at,
        end_ms: at + n * machine.ms_per_word,
        speaker: Speaker::Robot,
        text: response.prompt.text,
        categories: response.prompt.categories,
        origin: response.origin,
        state: state.to_string(),
    }
}

/// Runs the script: the opening (if any) at 0, user turns back to back,
/// each robot reply `response_delay_ms` after the user turn ends, pauses as
/// logged silences.
pub fn simulate(machine: &DialogueMachine, script: &[ScriptItem], response_delay_ms: u64) -> SimLog {
    let mut events = Vec::new();
    let mut state = machine.initial.clone();
    let mut clock = 0;
    if let Some(opening) = &machine.opening {
        let turn = robot_turn(
            machine,
            0,
            Response {
                prompt: opening.clone(),
                origin: Origin::Opening,
            },
            &state,
        );
        clock = turn.span().end_ms;
        events.push(turn);
    }
    for (item_index, item) in script.iter().enumerate() {
        match item {
            ScriptItem::Pause { ms } => {
                if *ms > 0 {
                    events.push(LogEvent::Silence {
                        start_ms: clock,
                        end_ms: clock + ms,
                    });
                    clock += ms;
                }
            }
            ScriptItem::User {
                duration_ms,
                text,
                categories,
            } => {
                let outcome = step(machine, &state, text).expect("the machine only reaches declared states");
                events.push(LogEvent::Turn {
                    start_ms: clock,
                    end_ms: clock + duration_ms,
                    speaker: Speaker::User,
                    text: text.clone(),
                    categories: categories.clone(),
                    origin: Origin::Script { item: item_index },
                    state: state.clone(),
                });
                clock += duration_ms;
                state = outcome.next_state;
                if let Some(response) = outcome.response {
                    let turn = robot_turn(machine, clock + response_delay_ms, response, &state);
                    clock = turn.span().end_ms;
                    events.push(turn);
                }
            }
        }
    }
    SimLog {
        events,
        final_state: state,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedLog {
    pub labels: LabelSequence,
    pub label_diagnostics: Vec<LabelDiagnostic>,
    /// Label tokens contributed by each log event, in log order.
    pub event_labels: Vec<String>,
    pub events: Vec<ActionEvent>,
    pub silences: Vec<Span>,
}

impl DialogueMachine {
    fn producer(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::Robot => &self.robot,
            Speaker::User => &self.user,
        }
    }

    fn label_token(&self, category: &Category, speaker: Speaker, registry: &TagRegistry) -> String {
        let tag = self.labels.get(category).map_or(category.as_str(), String::as_str);
        if registry.is_plain(tag) {
            return tag.to_string();
        }
        match speaker {
            Speaker::Robot => format!("p{tag}h"),
            Speaker::User => format!("h{tag}p"),
        }
    }
}

/// Labels and action events for a log. A turn's span is shared evenly among
/// its categories; silences of at least the machine's threshold become
/// `silence` tokens.
pub fn annotate_log(
    log: &SimLog,
    machine: &DialogueMachine,
    registry: &TagRegistry,
) -> Result<AnnotatedLog, SimError> {
    let mut tokens = Vec::new();
    let mut event_labels = Vec::new();
    let mut events = Vec::new();
    let mut silences = Vec::new();
    for e in &log.events {
        match e {
            LogEvent::Silence { start_ms, end_ms } => {
                silences.push(Span::new(*start_ms, *end_ms));
                if end_ms - start_ms >= machine.silence_threshold_ms {
                    tokens.push("silence".to_string());
                    event_labels.push("silence".to_string());
                } else {
                    event_labels.push(String::new());
                }
            }
            LogEvent::Turn {
                start_ms,
                end_ms,
                speaker,
                categories,
                ..
            } => {
                let mut own = Vec::new();
                let n = categories.len() as u64;
                let width = (end_ms - start_ms) / n.max(1);
                for (i, c) in categories.iter().enumerate() {
                    let s = start_ms + width * i as u64;
                    let end = if i as u64 + 1 == n { *end_ms } else { s + width };
                    own.push(machine.label_token(c, *speaker, registry));
                    events.push(ActionEvent {
                        span: Span::new(s, end.max(s + 1)),
                        producer: machine.producer(*speaker).to_string(),
                        framework: Framework::Main,
                        category: c.clone(),
                        awaited_next: machine.awaits.get(c).cloned().unwrap_or_default(),
                    });
                }
                event_labels.push(own.join(", "));
                tokens.extend(own);
            }
        }
    }
    let parsed = parse_label_string(&tokens.join(", "), registry)?;
    Ok(AnnotatedLog {
        labels: parsed.sequence,
        label_diagnostics: parsed.diagnostics,
        event_labels,
        events,
        silences,
    })
}

/// Clip line for one log event: id, start, end, labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub clip_id: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub labels: String,
}

impl fmt::Display for SyntheticClip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.clip_id, self.start_ms, self.end_ms, self.labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSession {
    pub document: AnnotationDocument,
    pub clips: Vec<SyntheticClip>,
}

/// A session document for a log: the replayed ledger's action and thread
/// tiers, a `labels` tier, a `text@<speaker>` tier per speaker, and an
/// identity alignment onto recording `recording_id`. One clip per log event.
pub fn synthetic_session(
    log: &SimLog,
    machine: &DialogueMachine,
    registry: &TagRegistry,
    session_id: &str,
    recording_id: &str,
) -> Result<SyntheticSession, SimError> {
    let annotated = annotate_log(log, machine, registry)?;
    let inputs: Vec<_> = annotated.events.iter().cloned().map(Into::into).collect();
    let replayed = replay(&inputs, &[], &machine.categories)?;
    let mut document = export_to_tiers(&replayed.ledger, session_id)?;
    let end = document.timeline_duration_ms.max(log.end_ms());
    document.timeline_duration_ms = end;

    let mut text_tiers: BTreeMap<&str, Vec<Segment>> = BTreeMap::new();
    let mut label_segments = Vec::new();
    let mut clips = Vec::new();
    for (i, (e, labels)) in log.events.iter().zip(&annotated.event_labels).enumerate() {
        let span = e.span();
        if let LogEvent::Turn { speaker, text, .. } = e {
            text_tiers
                .entry(machine.producer(*speaker))
                .or_default()
                .push(Segment::new(span.start_ms, span.end_ms, text.clone()));
        }
        if !labels.is_empty() {
            label_segments.push(Segment::new(span.start_ms, span.end_ms, labels.clone()));
        }
        clips.push(SyntheticClip {
            clip_id: format!("{session_id}-{:03}", i + 1),
            start_ms: span.start_ms,
            end_ms: span.end_ms,
            labels: labels.clone(),
        });
    }
    for (who, segments) in text_tiers {
        document.tiers.push(Tier::named(format!("text@{who}"), segments));
    }
    document.tiers.push(Tier::named("labels", label_segments));
    if end > 0 {
        document
            .tiers
            .push(Tier::named("alignment", vec![Segment::new(0, end, format!("{recording_id}@0"))]));
    }
    let document = AnnotationDocument::new(document.session_id, end, document.tiers);
    Ok(SyntheticSession {
        document: crate::tiers::ensure_valid(document).map_err(SequenceError::from)?,
        clips,
    })
}
