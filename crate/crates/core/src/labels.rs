//! Shortclip label strings.
//!
//! A clip is characterized by a comma-separated list of tags in order of
//! appearance. Directed tags carry the transmitter as a one-letter prefix and
//! the recipient as a one-letter suffix (`h` for a human, `p` for the robot),
//! and pairable tags may carry a pair-part digit before the suffix:
//!
//! ```
//! use seqanno::labels::{parse_label_string, LabelToken, Party, PairPart, TagRegistry};
//!
//! let registry = TagRegistry::canonical();
//! let parsed = parse_label_string("hgreeting1p, hquestionp, silence, pgreeting2h", &registry).unwrap();
//! assert_eq!(parsed.sequence.tokens.len(), 4);
//! assert_eq!(
//!     parsed.sequence.tokens[3],
//!     LabelToken::directed(Party::Robot, "greeting", Some(PairPart::Second), Party::Human),
//! );
//! assert!(parsed.diagnostics.is_empty());
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while parsing label strings, query patterns or registry files.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("empty label field at index {index}")]
    EmptyField { index: usize },
    #[error("illegal character {ch:?} in field {index}")]
    IllegalCharacter { index: usize, ch: char },
    #[error("malformed query token {token:?} at position {index}: {reason}")]
    BadPattern {
        index: usize,
        token: String,
        reason: &'static str,
    },
    #[error("registry line {line}: {message}")]
    Registry { line: usize, message: String },
}

/// Who produced (or received) a directed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Human,
    Robot,
}

impl Party {
    pub fn from_char(c: char) -> Option<Party> {
        match c {
            'h' => Some(Party::Human),
            'p' => Some(Party::Robot),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Party::Human => 'h',
            Party::Robot => 'p',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairPart {
    First,
    Second,
}

impl PairPart {
    pub fn from_digit(c: char) -> Option<PairPart> {
        match c {
            '1' => Some(PairPart::First),
            '2' => Some(PairPart::Second),
            _ => None,
        }
    }

    pub fn as_digit(self) -> char {
        match self {
            PairPart::First => '1',
            PairPart::Second => '2',
        }
    }
}

/// The vocabulary used to decide whether a field is a directed action or a
/// plain phenomenon tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRegistry {
    directed: BTreeSet<String>,
    plain: BTreeSet<String>,
    pairable: BTreeSet<String>,
}

const CANONICAL_DIRECTED: &[&str] = &[
    "acceptance",
    "answer",
    "closing",
    "greeting",
    "offer",
    "proposal",
    "question",
    "rejection",
    "repair",
    "repeat",
    "request",
];
const CANONICAL_PLAIN: &[&str] = &[
    "eyecontact",
    "gazeaway",
    "inhale",
    "laughter",
    "overlap",
    "silence",
    "torque",
];
const CANONICAL_PAIRABLE: &[&str] = &["closing", "greeting"];

impl TagRegistry {
    pub fn new<I, J, K, S>(directed: I, plain: J, pairable: K) -> Result<Self, LabelError>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = S>,
        K: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let registry = TagRegistry {
            directed: directed.into_iter().map(Into::into).collect(),
            plain: plain.into_iter().map(Into::into).collect(),
            pairable: pairable.into_iter().map(Into::into).collect(),
        };
        registry.check().map_err(|message| LabelError::Registry { line: 0, message })?;
        Ok(registry)
    }

    /// The tags that appear in the published labelling examples.
    pub fn canonical() -> Self {
        TagRegistry::new(
            CANONICAL_DIRECTED.iter().copied(),
            CANONICAL_PLAIN.iter().copied(),
            CANONICAL_PAIRABLE.iter().copied(),
        )
        .expect("canonical registry is well formed")
    }

    fn check(&self) -> Result<(), String> {
        for tag in self.directed.iter().chain(&self.plain) {
            if tag.is_empty() || !tag.bytes().all(|b| b.is_ascii_lowercase()) {
                return Err(format!("tag {tag:?} must be nonempty lowercase ASCII letters"));
            }
        }
        if let Some(both) = self.directed.intersection(&self.plain).next() {
            return Err(format!("tag {both:?} is both directed and plain"));
        }
        if let Some(stray) = self.pairable.difference(&self.directed).next() {
            return Err(format!("pairable tag {stray:?} is not a directed tag"));
        }
        // A plain tag spelled like a directed token could never be parsed back.
        if let Some(shadowed) = self.plain.iter().find(|t| self.split_directed(t).is_some()) {
            return Err(format!("plain tag {shadowed:?} reads as a directed token"));
        }
        Ok(())
    }

    /// Reads the sectioned registry file: `[directed]`, `[plain]` and
    /// `[pairable]` headers, one tag per line, `#` comments.
    pub fn from_conf(text: &str) -> Result<Self, LabelError> {
        #[derive(Clone, Copy)]
        enum Section {
            Directed,
            Plain,
            Pairable,
        }
        let mut section = None;
        let (mut directed, mut plain, mut pairable) = (Vec::new(), Vec::new(), Vec::new());
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| LabelError::Registry { line: n + 1, message };
            if line.starts_with('[') {
                section = Some(match line {
                    "[directed]" => Section::Directed,
                    "[plain]" => Section::Plain,
                    "[pairable]" => Section::Pairable,
                    other => return Err(err(format!("unknown section {other}"))),
                });
                continue;
            }
            if line.contains(char::is_whitespace) {
                return Err(err(format!("expected one tag per line, got {line:?}")));
            }
            match section {
                Some(Section::Directed) => directed.push(line.to_string()),
                Some(Section::Plain) => plain.push(line.to_string()),
                Some(Section::Pairable) => pairable.push(line.to_string()),
                None => return Err(err("tag outside of a section".into())),
            }
        }
        let registry = TagRegistry {
            directed: directed.into_iter().collect(),
            plain: plain.into_iter().collect(),
            pairable: pairable.into_iter().collect(),
        };
        registry.check().map_err(|message| LabelError::Registry { line: 0, message })?;
        Ok(registry)
    }

    pub fn to_conf(&self) -> String {
        let mut out = String::new();
        for (header, tags) in [
            ("[directed]", &self.directed),
            ("[plain]", &self.plain),
            ("[pairable]", &self.pairable),
        ] {
            out.push_str(header);
            out.push('\n');
            for tag in tags {
                out.push_str(tag);
                out.push('\n');
            }
        }
        out
    }

    pub fn is_directed(&self, tag: &str) -> bool {
        self.directed.contains(tag)
    }

    pub fn is_plain(&self, tag: &str) -> bool {
        self.plain.contains(tag)
    }

    pub fn is_pairable(&self, tag: &str) -> bool {
        self.pairable.contains(tag)
    }

    pub fn directed_tags(&self) -> impl Iterator<Item = &str> {
        self.directed.iter().map(String::as_str)
    }

    pub fn plain_tags(&self) -> impl Iterator<Item = &str> {
        self.plain.iter().map(String::as_str)
    }

    pub fn pairable_tags(&self) -> impl Iterator<Item = &str> {
        self.pairable.iter().map(String::as_str)
    }

    /// Splits the interior of a `<party><tag>[digit]<party>` field into the
    /// registered base and optional pair part.
    fn split_interior<'a>(&self, interior: &'a str) -> Option<(&'a str, Option<PairPart>)> {
        if self.directed.contains(interior) {
            return Some((interior, None));
        }
        let last = interior.chars().last()?;
        let part = PairPart::from_digit(last)?;
        let base = &interior[..interior.len() - 1];
        self.pairable.contains(base).then_some((base, Some(part)))
    }

    fn split_directed(&self, field: &str) -> Option<LabelToken> {
        let mut chars = field.chars();
        let first = chars.next().and_then(Party::from_char)?;
        let last = chars.next_back().and_then(Party::from_char)?;
        let (base, pair_part) = self.split_interior(chars.as_str())?;
        Some(LabelToken::Directed {
            transmitter: first,
            base: base.to_string(),
            pair_part,
            recipient: last,
        })
    }
}

impl Default for TagRegistry {
    fn default() -> Self {
        TagRegistry::canonical()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LabelToken {
    Directed {
        transmitter: Party,
        base: String,
        pair_part: Option<PairPart>,
        recipient: Party,
    },
    Plain {
        name: String,
    },
}

impl LabelToken {
    pub fn directed(
        transmitter: Party,
        base: impl Into<String>,
        pair_part: Option<PairPart>,
        recipient: Party,
    ) -> Self {
        LabelToken::Directed {
            transmitter,
            base: base.into(),
            pair_part,
            recipient,
        }
    }

    pub fn plain(name: impl Into<String>) -> Self {
        LabelToken::Plain { name: name.into() }
    }

    /// Base tag for directed tokens, name for plain ones.
    pub fn tag(&self) -> &str {
        match self {
            LabelToken::Directed { base, .. } => base,
            LabelToken::Plain { name } => name,
        }
    }
}

impl fmt::Display for LabelToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelToken::Directed {
                transmitter,
                base,
                pair_part,
                recipient,
            } => {
                write!(f, "{}{}", transmitter.as_char(), base)?;
                if let Some(part) = pair_part {
                    write!(f, "{}", part.as_digit())?;
                }
                write!(f, "{}", recipient.as_char())
            }
            LabelToken::Plain { name } => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub tokens: Vec<LabelToken>,
    pub source_text: String,
}

impl LabelSequence {
    pub fn from_tokens(tokens: Vec<LabelToken>) -> Self {
        let source_text = serialize_tokens(&tokens);
        LabelSequence {
            tokens,
            source_text,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_tokens(&self.tokens))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelWarning {
    UnknownTag { name: String },
    Unpaired { base: String, part: PairPart },
    SelfAddressed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDiagnostic {
    pub token_index: usize,
    pub warning: LabelWarning,
}

impl fmt::Display for LabelDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.warning {
            LabelWarning::UnknownTag { name } => write!(f, "unknown tag {name:?}"),
            LabelWarning::Unpaired { base, part } => {
                write!(f, "unpaired {base}{}", part.as_digit())
            }
            LabelWarning::SelfAddressed => f.write_str("self-addressed token"),
        }?;
        write!(f, " (token {})", self.token_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedLabels {
    pub sequence: LabelSequence,
    pub diagnostics: Vec<LabelDiagnostic>,
}

fn split_fields(text: &str) -> Result<Vec<&str>, LabelError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut fields = Vec::new();
    for (index, raw) in text.split(',').enumerate() {
        let field = raw.trim();
        if field.is_empty() {
            return Err(LabelError::EmptyField { index });
        }
        fields.push(field);
    }
    Ok(fields)
}

/// Parses a comma-separated label string.
///
/// A field is directed when its first and last characters are party letters
/// and the interior is a registered directed tag (optionally followed by a
/// pair-part digit for pairable tags). Everything else is plain; plain names
/// the registry does not know are kept and reported.
pub fn parse_label_string(text: &str, registry: &TagRegistry) -> Result<ParsedLabels, LabelError> {
    let mut tokens = Vec::new();
    let mut diagnostics = Vec::new();
    for (index, field) in split_fields(text)?.into_iter().enumerate() {
        if let Some(ch) = field
            .chars()
            .find(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
        {
            return Err(LabelError::IllegalCharacter { index, ch });
        }
        let token = registry
            .split_directed(field)
            .unwrap_or_else(|| LabelToken::plain(field));
        if let LabelToken::Plain { name } = &token {
            if !registry.is_plain(name) {
                diagnostics.push(LabelDiagnostic {
                    token_index: index,
                    warning: LabelWarning::UnknownTag { name: name.clone() },
                });
            }
        }
        tokens.push(token);
    }
    Ok(ParsedLabels {
        sequence: LabelSequence {
            tokens,
            source_text: text.to_string(),
        },
        diagnostics,
    })
}

fn serialize_tokens(tokens: &[LabelToken]) -> String {
    tokens
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Canonical `tok, tok, ...` rendering.
pub fn serialize_label_sequence(seq: &LabelSequence) -> String {
    serialize_tokens(&seq.tokens)
}

/// Pair completeness, unknown tags and self-addressed tokens. Never fails.
pub fn lint_labels(seq: &LabelSequence, registry: &TagRegistry) -> Vec<LabelDiagnostic> {
    let mut out = Vec::new();
    let mut pending_first: Vec<(usize, &str)> = Vec::new();
    for (index, token) in seq.tokens.iter().enumerate() {
        match token {
            LabelToken::Plain { name } => {
                if !registry.is_plain(name) {
                    out.push(LabelDiagnostic {
                        token_index: index,
                        warning: LabelWarning::UnknownTag { name: name.clone() },
                    });
                }
            }
            LabelToken::Directed {
                transmitter,
                base,
                pair_part,
                recipient,
            } => {
                if !registry.is_directed(base) {
                    out.push(LabelDiagnostic {
                        token_index: index,
                        warning: LabelWarning::UnknownTag { name: base.clone() },
                    });
                }
                if transmitter == recipient {
                    out.push(LabelDiagnostic {
                        token_index: index,
                        warning: LabelWarning::SelfAddressed,
                    });
                }
                match pair_part {
                    Some(PairPart::First) => pending_first.push((index, base)),
                    Some(PairPart::Second) => {
                        // Answer the earliest first part still waiting.
                        match pending_first.iter().position(|(_, b)| b == base) {
                            Some(pos) => {
                                pending_first.remove(pos);
                            }
                            None => out.push(LabelDiagnostic {
                                token_index: index,
                                warning: LabelWarning::Unpaired {
                                    base: base.clone(),
                                    part: PairPart::Second,
                                },
                            }),
                        }
                    }
                    None => {}
                }
            }
        }
    }
    for (index, base) in pending_first {
        out.push(LabelDiagnostic {
            token_index: index,
            warning: LabelWarning::Unpaired {
                base: base.to_string(),
                part: PairPart::First,
            },
        });
    }
    out.sort_by_key(|d| d.token_index);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartyPattern {
    Any,
    Is(Party),
}

impl PartyPattern {
    fn from_char(c: char) -> Option<Self> {
        match c {
            '?' => Some(PartyPattern::Any),
            c => Party::from_char(c).map(PartyPattern::Is),
        }
    }

    fn accepts(self, party: Party) -> bool {
        match self {
            PartyPattern::Any => true,
            PartyPattern::Is(p) => p == party,
        }
    }
}

/// One element of a label query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenPattern {
    /// `*`: any token.
    Any,
    /// A directed pattern. `tag == None` is the `*` wildcard; `pair_part == None`
    /// accepts any pair part.
    Directed {
        transmitter: PartyPattern,
        tag: Option<String>,
        pair_part: Option<PairPart>,
        recipient: PartyPattern,
    },
    Plain(String),
}

impl TokenPattern {
    pub fn matches(&self, token: &LabelToken) -> bool {
        match (self, token) {
            (TokenPattern::Any, _) => true,
            (
                TokenPattern::Directed {
                    transmitter,
                    tag,
                    pair_part,
                    recipient,
                },
                LabelToken::Directed {
                    transmitter: t,
                    base,
                    pair_part: p,
                    recipient: r,
                },
            ) => {
                transmitter.accepts(*t)
                    && recipient.accepts(*r)
                    && tag.as_ref().is_none_or(|tag| tag == base)
                    && pair_part.is_none_or(|part| Some(part) == *p)
            }
            (TokenPattern::Plain(want), LabelToken::Plain { name }) => want == name,
            _ => false,
        }
    }
}

/// A parsed, reusable label query: whitespace-separated token patterns matched
/// as an ordered subsequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelQuery {
    pub patterns: Vec<TokenPattern>,
}

impl LabelQuery {
    pub fn parse(pattern: &str, registry: &TagRegistry) -> Result<Self, LabelError> {
        let patterns = pattern
            .split_whitespace()
            .enumerate()
            .map(|(index, token)| parse_token_pattern(index, token, registry))
            .collect::<Result<_, _>>()?;
        Ok(LabelQuery { patterns })
    }

    /// Leftmost embedding of the pattern list into `tokens`, if any.
    pub fn find(&self, tokens: &[LabelToken]) -> Option<Vec<usize>> {
        let mut spans = Vec::with_capacity(self.patterns.len());
        let mut next = 0;
        for pattern in &self.patterns {
            let offset = tokens[next..].iter().position(|t| pattern.matches(t))?;
            spans.push(next + offset);
            next += offset + 1;
        }
        Some(spans)
    }
}

fn parse_token_pattern(
    index: usize,
    token: &str,
    registry: &TagRegistry,
) -> Result<TokenPattern, LabelError> {
    let bad = |reason| LabelError::BadPattern {
        index,
        token: token.to_string(),
        reason,
    };
    if token == "*" {
        return Ok(TokenPattern::Any);
    }
    if token
        .chars()
        .any(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '*' || c == '?'))
    {
        return Err(bad("illegal character"));
    }
    let mut chars = token.chars();
    let ends = (
        chars.next().and_then(PartyPattern::from_char),
        chars.next_back().and_then(PartyPattern::from_char),
    );
    let interior = chars.as_str();
    if let (Some(transmitter), Some(recipient)) = ends {
        if token.len() >= 3 {
            let directed = |tag, pair_part| TokenPattern::Directed {
                transmitter,
                tag,
                pair_part,
                recipient,
            };
            if let Some(rest) = interior.strip_prefix('*') {
                let mut rest_chars = rest.chars();
                return match (rest_chars.next(), rest_chars.next()) {
                    (None, _) => Ok(directed(None, None)),
                    (Some(d), None) => PairPart::from_digit(d)
                        .map(|part| directed(None, Some(part)))
                        .ok_or_else(|| bad("wildcard may only be followed by 1 or 2")),
                    _ => Err(bad("wildcard may only be followed by 1 or 2")),
                };
            }
            if !interior.contains(['*', '?']) {
                if registry.is_directed(interior) {
                    return Ok(directed(Some(interior.to_string()), None));
                }
                if let Some((base, part)) = registry.split_interior(interior) {
                    return Ok(directed(Some(base.to_string()), part));
                }
            }
        }
    }
    if token.contains(['*', '?']) {
        return Err(bad("wildcards are only allowed in directed patterns over registered tags"));
    }
    Ok(TokenPattern::Plain(token.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub matched: bool,
    pub spans: Vec<usize>,
}

/// Ordered-subsequence query over a label sequence.
///
/// ```
/// use seqanno::labels::{match_label_query, parse_label_string, TagRegistry};
///
/// let registry = TagRegistry::canonical();
/// let seq = parse_label_string("hgreeting1p, hquestionp, silence, pgreeting2h", &registry)
///     .unwrap()
///     .sequence;
/// let hit = match_label_query(&seq, "h*p silence", &registry).unwrap();
/// assert!(hit.matched);
/// assert_eq!(hit.spans, vec![0, 2]);
/// ```
pub fn match_label_query(
    seq: &LabelSequence,
    pattern: &str,
    registry: &TagRegistry,
) -> Result<QueryMatch, LabelError> {
    let query = LabelQuery::parse(pattern, registry)?;
    Ok(match query.find(&seq.tokens) {
        Some(spans) => QueryMatch {
            matched: true,
            spans,
        },
        None => QueryMatch {
            matched: false,
            spans: Vec::new(),
        },
    })
}
