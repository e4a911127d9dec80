//! Simplified Jefferson-style transcripts.
//!
//! Four conventions are recognised inside a line payload: `(.)` for a
//! perceptible pause under 200 ms, `(N.N)` for a measured silence in seconds
//! (dot or comma decimal), trailing colons on a word for prolongation, a
//! trailing `?` for rising intonation, and `((...))` for conduct that was not
//! transcribed as talk.
//!
//! ```
//! use seqanno::transcript::parse_transcript;
//!
//! let t = parse_transcript("1 Pep : hi (.) can I help you?\n2        (1.0)\n3 Hum1: hi\n").unwrap();
//! let gap = t.measured_gap(1, 3).unwrap();
//! assert_eq!(gap.duration_ms, 1000);
//! assert!(gap.complete);
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shortest silence that may be written with a measured duration.
pub const MEASURED_SILENCE_MIN_MS: u32 = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("line {line}: malformed duration {text:?}")]
    BadDuration { line: u32, text: String },
    #[error("line {line}: measured silence {ms} ms is below {MEASURED_SILENCE_MIN_MS} ms, write (.)")]
    SilenceTooShort { line: u32, ms: u32 },
    #[error("line {line}: unmatched \"((\"")]
    UnmatchedEvent { line: u32 },
    #[error("line {line}: line numbers must increase (previous was {previous})")]
    LineOrder { line: u32, previous: u32 },
    #[error("line number {0:?} is out of range")]
    BadLineNumber(String),
    #[error("line {0} does not exist in the transcript")]
    UnknownLine(u32),
    #[error("gap needs from < to, got {from}..{to}")]
    EmptyInterval { from: u32, to: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    /// The word as written, colons included, without the final `?`.
    pub form: String,
    /// The word with prolongation colons removed.
    pub text: String,
    pub prolongation_degree: u32,
    pub rising_final: bool,
}

impl Word {
    fn parse(raw: &str) -> Word {
        let (form, rising_final) = match raw.strip_suffix('?') {
            Some(stem) if !stem.is_empty() => (stem, true),
            _ => (raw, false),
        };
        let prolongation_degree = form.chars().filter(|&c| c == ':').count() as u32;
        Word {
            form: form.to_string(),
            text: form.replace(':', ""),
            prolongation_degree,
            rising_final,
        }
    }

    fn render(&self) -> String {
        if self.rising_final {
            format!("{}?", self.form)
        } else {
            self.form.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum TurnItem {
    Word(Word),
    MicroPause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Turn { items: Vec<TurnItem> },
    /// `duration_ms == None` is a micro-pause.
    Silence { duration_ms: Option<u32> },
    Nonverbal { description: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub line_no: u32,
    pub speaker: Option<String>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl TranscriptEvent {
    pub fn words(&self) -> impl Iterator<Item = &Word> {
        let items: &[TurnItem] = match &self.kind {
            EventKind::Turn { items } => items,
            _ => &[],
        };
        items.iter().filter_map(|item| match item {
            TurnItem::Word(w) => Some(w),
            TurnItem::MicroPause => None,
        })
    }

    pub fn is_micro_pause(&self) -> bool {
        matches!(self.kind, EventKind::Silence { duration_ms: None })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<TranscriptEvent>,
    pub participants: BTreeSet<String>,
}

/// Silence total between two lines. `complete == false` means something of
/// unknown length sat in the interval, so the total is a lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub duration_ms: u64,
    pub complete: bool,
}

enum Piece<'a> {
    Word(&'a str),
    Micro,
    Timed(u32),
    Event(&'a str),
}

fn parse_seconds(text: &str) -> Option<u32> {
    let (int, frac) = match text.split_once(['.', ',']) {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    if int.is_empty()
        || frac.len() > 3
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
        || (text.len() > int.len() && frac.is_empty())
    {
        return None;
    }
    let whole: u32 = int.parse().ok()?;
    let mut millis = 0;
    for (i, b) in frac.bytes().enumerate() {
        millis += u32::from(b - b'0') * 10u32.pow(2 - i as u32);
    }
    whole.checked_mul(1000)?.checked_add(millis)
}

fn format_seconds(ms: u32) -> String {
    let mut frac = format!("{:03}", ms % 1000);
    while frac.len() > 1 && frac.ends_with('0') {
        frac.pop();
    }
    format!("{}.{}", ms / 1000, frac)
}

fn split_payload(line: u32, payload: &str) -> Result<Vec<Piece<'_>>, TranscriptError> {
    let mut pieces = Vec::new();
    let mut rest = payload.trim_start();
    while !rest.is_empty() {
        if let Some(inner) = rest.strip_prefix("((") {
            let end = inner.find("))").ok_or(TranscriptError::UnmatchedEvent { line })?;
            pieces.push(Piece::Event(inner[..end].trim()));
            rest = &inner[end + 2..];
        } else if let Some(inner) = rest.strip_prefix('(') {
            let end = inner.find(')').ok_or_else(|| TranscriptError::BadDuration {
                line,
                text: rest.split_whitespace().next().unwrap_or(rest).to_string(),
            })?;
            let body = &inner[..end];
            if body == "." {
                pieces.push(Piece::Micro);
            } else {
                let ms = parse_seconds(body).ok_or_else(|| TranscriptError::BadDuration {
                    line,
                    text: format!("({body})"),
                })?;
                if ms < MEASURED_SILENCE_MIN_MS {
                    return Err(TranscriptError::SilenceTooShort { line, ms });
                }
                pieces.push(Piece::Timed(ms));
            }
            rest = &inner[end + 1..];
        } else {
            let end = rest
                .find(|c: char| c.is_whitespace() || c == '(')
                .unwrap_or(rest.len());
            pieces.push(Piece::Word(&rest[..end]));
            rest = &rest[end..];
        }
        rest = rest.trim_start();
    }
    Ok(pieces)
}

/// `Name:` or `Name :` at the start of a payload, but not the colons of a
/// prolonged word such as `hu::::m`.
fn split_speaker(payload: &str) -> (Option<&str>, &str) {
    let name_end = payload
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(payload.len());
    if name_end == 0 || !payload.as_bytes()[0].is_ascii_alphabetic() {
        return (None, payload);
    }
    let after = payload[name_end..].trim_start();
    match after.strip_prefix(':') {
        Some(rest) if rest.is_empty() || rest.starts_with(char::is_whitespace) => {
            (Some(&payload[..name_end]), rest)
        }
        _ => (None, payload),
    }
}

fn flush_turn(
    events: &mut Vec<TranscriptEvent>,
    items: &mut Vec<TurnItem>,
    line_no: u32,
    speaker: Option<&str>,
) {
    if items.is_empty() {
        return;
    }
    if items.iter().any(|i| matches!(i, TurnItem::Word(_))) {
        events.push(TranscriptEvent {
            line_no,
            speaker: speaker.map(str::to_string),
            kind: EventKind::Turn {
                items: std::mem::take(items),
            },
        });
    } else {
        for _ in items.drain(..) {
            events.push(TranscriptEvent {
                line_no,
                speaker: None,
                kind: EventKind::Silence { duration_ms: None },
            });
        }
    }
}

/// Parses a transcript, one `[NN] [Speaker:] payload` line at a time.
///
/// Lines without a number continue the numbering of the previous line.
/// Silences never carry a speaker, even on a speaker-labelled line.
pub fn parse_transcript(text: &str) -> Result<Transcript, TranscriptError> {
    let mut events = Vec::new();
    let mut previous: Option<u32> = None;
    for raw in text.lines() {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let digits = trimmed.bytes().take_while(u8::is_ascii_digit).count();
        let followed_by_space = trimmed[digits..]
            .chars()
            .next()
            .is_none_or(char::is_whitespace);
        let (line_no, payload) = if digits > 0 && followed_by_space {
            let n: u32 = trimmed[..digits]
                .parse()
                .map_err(|_| TranscriptError::BadLineNumber(trimmed[..digits].to_string()))?;
            if let Some(prev) = previous.filter(|&p| n <= p) {
                return Err(TranscriptError::LineOrder { line: n, previous: prev });
            }
            (n, trimmed[digits..].trim_start())
        } else {
            (previous.map_or(1, |p| p + 1), trimmed)
        };
        previous = Some(line_no);

        let (speaker, payload) = split_speaker(payload);
        let mut items = Vec::new();
        for piece in split_payload(line_no, payload)? {
            match piece {
                // A detached "?" marks the rise on the word before it.
                Piece::Word("?") if matches!(items.last(), Some(TurnItem::Word(_))) => {
                    if let Some(TurnItem::Word(prev)) = items.last_mut() {
                        prev.rising_final = true;
                    }
                }
                Piece::Word(w) => items.push(TurnItem::Word(Word::parse(w))),
                Piece::Micro => items.push(TurnItem::MicroPause),
                Piece::Timed(ms) => {
                    flush_turn(&mut events, &mut items, line_no, speaker);
                    events.push(TranscriptEvent {
                        line_no,
                        speaker: None,
                        kind: EventKind::Silence {
                            duration_ms: Some(ms),
                        },
                    });
                }
                Piece::Event(description) => {
                    flush_turn(&mut events, &mut items, line_no, speaker);
                    events.push(TranscriptEvent {
                        line_no,
                        speaker: speaker.map(str::to_string),
                        kind: EventKind::Nonverbal {
                            description: description.to_string(),
                        },
                    });
                }
            }
        }
        flush_turn(&mut events, &mut items, line_no, speaker);
    }
    let participants = events.iter().filter_map(|e| e.speaker.clone()).collect();
    Ok(Transcript {
        events,
        participants,
    })
}

impl Transcript {
    pub fn has_line(&self, line_no: u32) -> bool {
        self.events.iter().any(|e| e.line_no == line_no)
    }

    fn line_gap(&self, from_exclusive: u32, to_exclusive: u32) -> Gap {
        self.events
            .iter()
            .filter(|e| e.line_no > from_exclusive && e.line_no < to_exclusive)
            .fold(
                Gap {
                    duration_ms: 0,
                    complete: true,
                },
                |gap, e| gap.plus(e),
            )
    }

    /// Measured silence on exactly one line.
    pub fn gap_at(&self, line_no: u32) -> Gap {
        self.events
            .iter()
            .filter(|e| e.line_no == line_no)
            .fold(
                Gap {
                    duration_ms: 0,
                    complete: true,
                },
                |gap, e| gap.plus(e),
            )
    }

    /// Sum of measured silences strictly between two lines.
    pub fn measured_gap(&self, from_line: u32, to_line: u32) -> Result<Gap, TranscriptError> {
        for line in [from_line, to_line] {
            if !self.has_line(line) {
                return Err(TranscriptError::UnknownLine(line));
            }
        }
        if from_line >= to_line {
            return Err(TranscriptError::EmptyInterval {
                from: from_line,
                to: to_line,
            });
        }
        Ok(self.line_gap(from_line, to_line))
    }

    pub fn total_measured_silence_ms(&self) -> u64 {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Silence { duration_ms } => duration_ms.map(u64::from),
                _ => None,
            })
            .sum()
    }

    /// Renders the transcript back to its line format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut i = 0;
        while i < self.events.len() {
            let line_no = self.events[i].line_no;
            let line: Vec<&TranscriptEvent> = self.events[i..]
                .iter()
                .take_while(|e| e.line_no == line_no)
                .collect();
            i += line.len();
            let _ = write!(out, "{line_no}");
            if let Some(speaker) = line.iter().find_map(|e| e.speaker.as_deref()) {
                let _ = write!(out, " {speaker}:");
            }
            for event in line {
                out.push(' ');
                match &event.kind {
                    EventKind::Turn { items } => {
                        let words: Vec<String> = items
                            .iter()
                            .map(|item| match item {
                                TurnItem::Word(w) => w.render(),
                                TurnItem::MicroPause => "(.)".to_string(),
                            })
                            .collect();
                        out.push_str(&words.join(" "));
                    }
                    EventKind::Silence { duration_ms: None } => out.push_str("(.)"),
                    EventKind::Silence {
                        duration_ms: Some(ms),
                    } => {
                        let _ = write!(out, "({})", format_seconds(*ms));
                    }
                    EventKind::Nonverbal { description } => {
                        let _ = write!(out, "(({description}))");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// One JSON record per event.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

impl Gap {
    fn plus(self, event: &TranscriptEvent) -> Gap {
        match event.kind {
            EventKind::Silence {
                duration_ms: Some(ms),
            } => Gap {
                duration_ms: self.duration_ms + u64::from(ms),
                ..self
            },
            _ => Gap {
                complete: false,
                ..self
            },
        }
    }

    /// Concatenation of adjacent intervals.
    pub fn then(self, other: Gap) -> Gap {
        Gap {
            duration_ms: self.duration_ms + other.duration_ms,
            complete: self.complete && other.complete,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE_ONE: &str = "\
1 Pep : hi (.) can I help you?
2        (1.0)
3 Hum1: hi
4        ((hum1 and hum2 laugh))
5 Hum1: you alright? yes you can help me
6        (1.5)
7 Hum1: if you do not respond
8        (2.0)
9 Pep : how can I help you?
";

    pub(crate) const SAMPLE_TWO: &str = "\
01 Pep: Hi (.) can I help you ?
02       (0.4)
03 Hum: (1.0) ((starts torquing away))
04 Hum: ((laugh while orienting back towards pepper))
05      (0.9)
06 Hum: ((inhale demonstrably))
07      (0.3)
08       (0.2) ((starts torquing away))
09 Hum: but hum what do I ask?
10 Hum: ((orients back towards pepper))
11      (1.6)
12 Hum: hu::::m
13      (0.5)
14 Hum: I'm looking for a biology book.
";

    fn word(text: &str) -> TurnItem {
        TurnItem::Word(Word::parse(text))
    }

    #[test]
    fn first_line_of_sample_one() {
        let t = parse_transcript("1 Pep : hi (.) can I help you?").unwrap();
        assert_eq!(t.events.len(), 1);
        let e = &t.events[0];
        assert_eq!(e.speaker.as_deref(), Some("Pep"));
        let EventKind::Turn { items } = &e.kind else {
            panic!("expected a turn")
        };
        assert_eq!(
            items,
            &vec![word("hi"), TurnItem::MicroPause, word("can"), word("I"), word("help"), word("you?")]
        );
        let last = e.words().last().unwrap();
        assert!(last.rising_final);
        assert_eq!(last.text, "you");
    }

    #[test]
    fn measured_silence_line() {
        let t = parse_transcript("2        (1.0)").unwrap();
        assert_eq!(
            t.events,
            vec![TranscriptEvent {
                line_no: 2,
                speaker: None,
                kind: EventKind::Silence {
                    duration_ms: Some(1000)
                }
            }]
        );
    }

    #[test]
    fn detached_question_mark_marks_rise() {
        let t = parse_transcript("01 Pep: Hi (.) can I help you ?").unwrap();
        let words: Vec<_> = t.events[0].words().collect();
        assert_eq!(words.len(), 5);
        assert!(words[4].rising_final);
    }

    #[test]
    fn prolongation_is_counted() {
        let t = parse_transcript("12 Hum: hu::::m").unwrap();
        let w = t.events[0].words().next().unwrap();
        assert_eq!(w.text, "hum");
        assert_eq!(w.prolongation_degree, 4);
        assert!(!w.rising_final);
    }

    #[test]
    fn silence_on_speaker_line_is_unattributed() {
        let t = parse_transcript("03 Hum: (1.0) ((starts torquing away))").unwrap();
        assert_eq!(t.events.len(), 2);
        assert_eq!(t.events[0].speaker, None);
        assert_eq!(t.events[0].kind, EventKind::Silence { duration_ms: Some(1000) });
        assert_eq!(t.events[1].speaker.as_deref(), Some("Hum"));
        assert_eq!(
            t.events[1].kind,
            EventKind::Nonverbal {
                description: "starts torquing away".into()
            }
        );
    }

    #[test]
    fn comma_decimal_is_accepted() {
        let t = parse_transcript("1 (6,6)").unwrap();
        assert_eq!(t.events[0].kind, EventKind::Silence { duration_ms: Some(6600) });
    }

    #[test]
    fn malformed_duration_names_the_line() {
        assert_eq!(
            parse_transcript("1 Pep: hi\n2 (1.x)"),
            Err(TranscriptError::BadDuration {
                line: 2,
                text: "(1.x)".into()
            })
        );
        assert!(matches!(
            parse_transcript("4 (1."),
            Err(TranscriptError::BadDuration { line: 4, .. })
        ));
        assert!(matches!(
            parse_transcript("4 (1.)"),
            Err(TranscriptError::BadDuration { line: 4, .. })
        ));
    }

    #[test]
    fn unmatched_double_paren() {
        assert_eq!(
            parse_transcript("1 Hum: ((laughs"),
            Err(TranscriptError::UnmatchedEvent { line: 1 })
        );
    }

    #[test]
    fn short_measured_silence_is_rejected() {
        assert_eq!(
            parse_transcript("1 (0.1)"),
            Err(TranscriptError::SilenceTooShort { line: 1, ms: 100 })
        );
    }

    #[test]
    fn decreasing_line_numbers_are_rejected() {
        assert!(matches!(
            parse_transcript("3 Pep: hi\n2 Hum: hi"),
            Err(TranscriptError::LineOrder { line: 2, previous: 3 })
        ));
    }

    #[test]
    fn micro_pause_alone_is_a_silence() {
        let t = parse_transcript("5 (.)").unwrap();
        assert!(t.events[0].is_micro_pause());
    }

    #[test]
    fn unnumbered_lines_continue_numbering() {
        let t = parse_transcript("Pep: hi\nHum: hello").unwrap();
        assert_eq!(t.events[0].line_no, 1);
        assert_eq!(t.events[1].line_no, 2);
        assert_eq!(
            t.participants,
            ["Hum", "Pep"].into_iter().map(String::from).collect()
        );
    }

    #[test]
    fn sample_one_gaps() {
        let t = parse_transcript(SAMPLE_ONE).unwrap();
        assert_eq!(
            t.measured_gap(1, 3).unwrap(),
            Gap {
                duration_ms: 1000,
                complete: true
            }
        );
        assert_eq!(
            t.measured_gap(1, 2).unwrap(),
            Gap {
                duration_ms: 0,
                complete: true
            }
        );
        assert_eq!(t.measured_gap(5, 9).unwrap().duration_ms, 3500);
        assert!(!t.measured_gap(5, 9).unwrap().complete);
        assert_eq!(t.measured_gap(1, 42), Err(TranscriptError::UnknownLine(42)));
        assert!(matches!(t.measured_gap(3, 1), Err(TranscriptError::EmptyInterval { .. })));
    }

    #[test]
    fn sample_two_gap_is_a_lower_bound() {
        let t = parse_transcript(SAMPLE_TWO).unwrap();
        // 0.4 + 1.0 + 0.9 + 0.3 + 0.2 + 1.6, summed by hand
        let gap = t.measured_gap(1, 12).unwrap();
        assert_eq!(gap.duration_ms, 4400);
        assert!(!gap.complete);
        assert!(gap.duration_ms <= 6600);
    }

    #[test]
    fn seconds_formatting() {
        assert_eq!(format_seconds(1000), "1.0");
        assert_eq!(format_seconds(6600), "6.6");
        assert_eq!(format_seconds(250), "0.25");
        assert_eq!(parse_seconds("0.25"), Some(250));
        assert_eq!(parse_seconds("2"), Some(2000));
        assert_eq!(parse_seconds("1.2345"), None);
    }

    #[test]
    fn samples_reserialize() {
        for text in [SAMPLE_ONE, SAMPLE_TWO] {
            let t = parse_transcript(text).unwrap();
            assert_eq!(parse_transcript(&t.to_text()).unwrap(), t);
        }
    }

    #[test]
    fn records_are_one_per_line() {
        let t = parse_transcript(SAMPLE_TWO).unwrap();
        assert_eq!(t.to_records().lines().count(), t.events.len());
    }
}
