use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use seqanno::corpus::{self, Level, ManifestRow, StatsOptions};
use seqanno::labels::{lint_labels, parse_label_string, LabelQuery, LabelToken, TagRegistry};
use seqanno::sequence::{
    import_from_tiers, replay, silences_between, stacking_string, ActionEvent, CategoryRegistry, LedgerInput,
    ProjectionStatus, Replay, SilenceClass,
};
use seqanno::sim::{self, LogEvent};
use seqanno::tiers::{
    export_eaf_subset, export_interchange, has_errors, import_eaf_subset, import_interchange, map_to_source,
    validate_tiers, AnnotationDocument, KindOverrides, Segment,
};
use seqanno::transcript::parse_transcript;

#[derive(Parser)]
#[command(name = "seqanno", version, about = "Sequential annotation toolkit for interaction corpora")]
struct Cli {
    /// Tag registry file (defaults to the built-in registry).
    #[arg(long, global = true, value_name = "PATH")]
    registry: Option<PathBuf>,
    /// Annotation file format; guessed from the extension when omitted.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// One JSON record per line instead of readable text.
    #[arg(long, global = true)]
    structured: bool,
    /// Write output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    EafSubset,
    Interchange,
}

#[derive(Subcommand)]
enum Command {
    /// Shortclip label strings, one per input line.
    #[command(subcommand)]
    Labels(LabelsCmd),
    /// Transcripts in the line-numbered transcription notation.
    #[command(subcommand)]
    Transcript(TranscriptCmd),
    /// Tiered annotation documents.
    #[command(subcommand)]
    Annot(AnnotCmd),
    /// Sequential-thread ledgers stored in thread tiers.
    #[command(subcommand)]
    Seq(SeqCmd),
    /// Corpus directories of sessions and clips.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Keyword dialogue machines.
    #[command(subcommand)]
    Sim(SimCmd),
}

#[derive(Subcommand)]
enum LabelsCmd {
    Parse { input: String },
    Lint { input: String },
    Query { pattern: String, input: String },
}

#[derive(Subcommand)]
enum TranscriptCmd {
    Parse { input: String },
    /// Silence between two line numbers.
    Gap { input: String, from: u32, to: u32 },
}

#[derive(Args)]
struct DocArgs {
    input: String,
    /// Session id for formats that do not carry one.
    #[arg(long)]
    session_id: Option<String>,
}

#[derive(Subcommand)]
enum AnnotCmd {
    /// Read a document and write it as interchange records.
    Import(DocArgs),
    Validate(DocArgs),
    /// Read an interchange document and write it as `--format` (default eaf-subset).
    Export(DocArgs),
    /// Map a timeline span onto source recordings.
    Map {
        #[command(flatten)]
        doc: DocArgs,
        start_ms: u64,
        end_ms: u64,
    },
}

#[derive(Subcommand)]
enum SeqCmd {
    Replay(DocArgs),
    Lint(DocArgs),
    Stacking(DocArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    Index { root: PathBuf },
    Query { root: PathBuf, pattern: String },
    Stats {
        root: PathBuf,
        #[arg(long, default_value_t = 500)]
        silence_bin_ms: u64,
    },
    Cutlist {
        root: PathBuf,
        clip_ids: Vec<String>,
        /// File with one clip id per line (`-` for stdin).
        #[arg(long)]
        ids_from: Option<String>,
        /// Command line per row, with {clip_id} {source} {start_ms} {end_ms} {duration_ms}.
        #[arg(long)]
        template: Option<String>,
    },
}

#[derive(Args)]
struct SimArgs {
    machine: String,
    /// Milliseconds between the end of a user turn and the robot's reply.
    #[arg(long, default_value_t = 600)]
    delay_ms: u64,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Validate a machine; with a script, also replay the simulated log.
    Check {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        script: Option<String>,
    },
    Run {
        #[command(flatten)]
        sim: SimArgs,
        script: String,
    },
    /// Write a one-session corpus for a simulated log into `--out`.
    Gen {
        #[command(flatten)]
        sim: SimArgs,
        script: String,
        #[arg(long, default_value = "sim")]
        session_id: String,
    },
}

enum Fail {
    /// Bad invocation or unreadable files: exit 2.
    Usage(String),
    /// Input read fine but is invalid: exit 1.
    Invalid(String),
}

type Outcome = Result<bool, Fail>;

fn io_fail(path: &dyn std::fmt::Debug, e: io::Error) -> Fail {
    Fail::Usage(format!("{path:?}: {e}"))
}

fn read_input(path: &str) -> Result<Vec<u8>, Fail> {
    if path == "-" {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf).map_err(|e| io_fail(&"stdin", e))?;
        Ok(buf)
    } else {
        fs::read(path).map_err(|e| io_fail(&path, e))
    }
}

fn read_text(path: &str) -> Result<String, Fail> {
    String::from_utf8(read_input(path)?).map_err(|_| Fail::Invalid(format!("{path}: not UTF-8")))
}

struct Ctx {
    structured: bool,
    format: Option<Format>,
    registry: TagRegistry,
    out: String,
}

impl Ctx {
    fn line(&mut self, s: impl AsRef<str>) {
        self.out.push_str(s.as_ref());
        self.out.push('\n');
    }

    fn record(&mut self, value: serde_json::Value) {
        self.line(value.to_string());
    }

    fn input_format(&self, path: &str) -> Format {
        self.format.unwrap_or(if path.ends_with(".eaf") {
            Format::EafSubset
        } else {
            Format::Interchange
        })
    }

    fn load_doc(&self, args: &DocArgs) -> Result<AnnotationDocument, Fail> {
        let bytes = read_input(&args.input)?;
        let doc = match self.input_format(&args.input) {
            Format::EafSubset => import_eaf_subset(&bytes, args.session_id.as_deref(), &KindOverrides::new()),
            Format::Interchange => import_interchange(&bytes).map(|mut d| {
                if let Some(id) = &args.session_id {
                    d.session_id = id.clone();
                }
                d
            }),
        };
        doc.map_err(|e| Fail::Invalid(format!("{}: {e}", args.input)))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let registry = match &cli.registry {
        None => Ok(TagRegistry::canonical()),
        Some(path) => fs::read_to_string(path)
            .map_err(|e| io_fail(path, e))
            .and_then(|text| TagRegistry::from_conf(&text).map_err(|e| Fail::Usage(format!("{path:?}: {e}")))),
    };
    let mut ctx = Ctx {
        structured: cli.structured,
        format: cli.format,
        registry: TagRegistry::canonical(),
        out: String::new(),
    };
    // `sim gen` takes --out as a directory
    let writes_files = matches!(cli.command, Command::Sim(SimCmd::Gen { .. }));
    let result = registry.and_then(|r| {
        ctx.registry = r;
        dispatch(&mut ctx, cli.command, cli.out.as_deref())
    });
    let code = match result {
        Ok(findings) => u8::from(findings),
        Err(Fail::Invalid(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Fail::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    };
    let written = match &cli.out {
        _ if writes_files || code == 2 => Ok(()),
        Some(path) => fs::write(path, &ctx.out),
        None => io::stdout().write_all(ctx.out.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}

fn dispatch(ctx: &mut Ctx, command: Command, out: Option<&Path>) -> Outcome {
    match command {
        Command::Labels(cmd) => labels(ctx, cmd),
        Command::Transcript(cmd) => transcript(ctx, cmd),
        Command::Annot(cmd) => annot(ctx, cmd),
        Command::Seq(cmd) => seq(ctx, cmd),
        Command::Corpus(cmd) => corpus_cmd(ctx, cmd),
        Command::Sim(cmd) => sim_cmd(ctx, cmd, out),
    }
}

fn describe(token: &LabelToken) -> String {
    match token {
        LabelToken::Directed {
            transmitter,
            base,
            pair_part,
            recipient,
        } => {
            let part = pair_part.map_or(String::new(), |p| format!(" part {}", p.as_digit()));
            format!("{}->{} {base}{part}", transmitter.as_char(), recipient.as_char())
        }
        LabelToken::Plain { name } => format!("{name} (plain)"),
    }
}

fn label_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn labels(ctx: &mut Ctx, cmd: LabelsCmd) -> Outcome {
    let (input, mode) = match &cmd {
        LabelsCmd::Parse { input } => (input, 0),
        LabelsCmd::Lint { input } => (input, 1),
        LabelsCmd::Query { input, .. } => (input, 2),
    };
    let query = match &cmd {
        LabelsCmd::Query { pattern, .. } => Some(
            LabelQuery::parse(pattern, &ctx.registry).map_err(|e| Fail::Usage(format!("pattern: {e}")))?,
        ),
        _ => None,
    };
    let text = read_text(input)?;
    let mut findings = false;
    for (line, raw) in label_lines(&text) {
        let parsed = match parse_label_string(raw, &ctx.registry) {
            Ok(p) => p,
            Err(e) => {
                findings = true;
                if ctx.structured {
                    ctx.record(json!({"line": line, "error": e.to_string()}));
                } else {
                    ctx.line(format!("line {line}: error: {e}"));
                }
                continue;
            }
        };
        match mode {
            0 => {
                if ctx.structured {
                    ctx.record(json!({
                        "line": line,
                        "tokens": parsed.sequence.tokens,
                        "diagnostics": parsed.diagnostics,
                    }));
                } else {
                    ctx.line(format!("line {line}: {} tokens", parsed.sequence.len()));
                    for (i, t) in parsed.sequence.tokens.iter().enumerate() {
                        ctx.line(format!("  {i:>3}  {:<16} {}", t.to_string(), describe(t)));
                    }
                    for d in &parsed.diagnostics {
                        ctx.line(format!("  warning: token {}: {d}", d.token_index));
                    }
                }
            }
            1 => {
                let diags = lint_labels(&parsed.sequence, &ctx.registry);
                findings |= !diags.is_empty();
                for d in diags {
                    if ctx.structured {
                        ctx.record(json!({"line": line, "diagnostic": d, "message": d.to_string()}));
                    } else {
                        ctx.line(format!("line {line}: token {}: {d}", d.token_index));
                    }
                }
            }
            _ => {
                let q = query.as_ref().expect("query mode has a pattern");
                if let Some(spans) = q.find(&parsed.sequence.tokens) {
                    if ctx.structured {
                        ctx.record(json!({"line": line, "spans": spans, "labels": parsed.sequence.to_string()}));
                    } else {
                        ctx.line(format!("line {line} {spans:?}: {}", parsed.sequence));
                    }
                }
            }
        }
    }
    Ok(findings)
}

fn transcript(ctx: &mut Ctx, cmd: TranscriptCmd) -> Outcome {
    let input = match &cmd {
        TranscriptCmd::Parse { input } | TranscriptCmd::Gap { input, .. } => input,
    };
    let t = parse_transcript(&read_text(input)?).map_err(|e| Fail::Invalid(format!("{input}: {e}")))?;
    match cmd {
        TranscriptCmd::Parse { .. } => {
            let text = if ctx.structured { t.to_records() } else { t.to_text() };
            ctx.out.push_str(&text);
        }
        TranscriptCmd::Gap { from, to, .. } => {
            let gap = t.measured_gap(from, to).map_err(|e| Fail::Usage(e.to_string()))?;
            if ctx.structured {
                ctx.record(json!({"from": from, "to": to, "duration_ms": gap.duration_ms, "complete": gap.complete}));
            } else {
                let bound = if gap.complete { "" } else { "at least " };
                ctx.line(format!("lines {from}-{to}: {bound}{} ms of silence", gap.duration_ms));
            }
        }
    }
    Ok(false)
}

fn annot(ctx: &mut Ctx, cmd: AnnotCmd) -> Outcome {
    match cmd {
        AnnotCmd::Import(args) => {
            let doc = ctx.load_doc(&args)?;
            ctx.out.push_str(&String::from_utf8(export_interchange(&doc)).expect("interchange is UTF-8"));
            Ok(has_errors(&validate_tiers(&doc)))
        }
        AnnotCmd::Export(args) => {
            let bytes = read_input(&args.input)?;
            let mut doc = import_interchange(&bytes).map_err(|e| Fail::Invalid(format!("{}: {e}", args.input)))?;
            if let Some(id) = args.session_id {
                doc.session_id = id;
            }
            let bytes = match ctx.format.unwrap_or(Format::EafSubset) {
                Format::EafSubset => export_eaf_subset(&doc),
                Format::Interchange => export_interchange(&doc),
            };
            ctx.out.push_str(&String::from_utf8(bytes).expect("exports are UTF-8"));
            Ok(false)
        }
        AnnotCmd::Validate(args) => {
            let doc = ctx.load_doc(&args)?;
            let diags = validate_tiers(&doc);
            for d in &diags {
                if ctx.structured {
                    ctx.record(json!({"diagnostic": d, "message": d.to_string()}));
                } else {
                    ctx.line(d.to_string());
                }
            }
            if !ctx.structured && diags.is_empty() {
                ctx.line(format!("{}: {} tiers, no issues", doc.session_id, doc.tiers.len()));
            }
            Ok(has_errors(&diags))
        }
        AnnotCmd::Map { doc, start_ms, end_ms } => {
            if end_ms <= start_ms {
                return Err(Fail::Usage("end_ms must be greater than start_ms".into()));
            }
            let doc = ctx.load_doc(&doc)?;
            let mapping = map_to_source(&doc, &Segment::new(start_ms, end_ms, ""))
                .map_err(|e| Fail::Invalid(e.to_string()))?;
            if ctx.structured {
                for r in &mapping.ranges {
                    ctx.record(json!({"range": r}));
                }
                for w in &mapping.warnings {
                    ctx.record(json!({"warning": w}));
                }
            } else {
                for r in &mapping.ranges {
                    ctx.line(format!("{}\t{}\t{}", r.source_recording_id, r.start_ms_in_source, r.end_ms_in_source));
                }
                for w in &mapping.warnings {
                    ctx.line(format!("warning: {w:?}"));
                }
            }
            Ok(!mapping.warnings.is_empty())
        }
    }
}

fn replay_doc(ctx: &Ctx, args: &DocArgs) -> Result<Replay, Fail> {
    let doc = ctx.load_doc(args)?;
    let inputs = import_from_tiers(&doc).map_err(|e| Fail::Invalid(e.to_string()))?;
    let events: Vec<ActionEvent> = inputs
        .iter()
        .filter_map(|i| match i {
            LedgerInput::Act(e) => Some(e.clone()),
            LedgerInput::Directive(_) => None,
        })
        .collect();
    replay(&inputs, &silences_between(&events), &CategoryRegistry::seeded()).map_err(|e| Fail::Invalid(e.to_string()))
}

fn status_text(r: &Replay, status: &ProjectionStatus) -> String {
    match status {
        ProjectionStatus::Open => "open".into(),
        ProjectionStatus::Satisfied { by, at_ms, matched } => {
            let what = matched.as_ref().map_or("completion", |c| c.as_str());
            format!(
                "satisfied at {at_ms} ms by event {by} ({} {what})",
                r.ledger.events[*by].producer
            )
        }
        ProjectionStatus::Abandoned { reason, at_ms } => format!("abandoned at {at_ms} ms ({reason})"),
    }
}

fn seq(ctx: &mut Ctx, cmd: SeqCmd) -> Outcome {
    match cmd {
        SeqCmd::Replay(args) => {
            let r = replay_doc(ctx, &args)?;
            for p in &r.ledger.projections {
                let opener = &r.ledger.events[p.opened_by];
                if ctx.structured {
                    ctx.record(json!({"record": "projection", "thread": p.thread.to_string(), "projection": p}));
                } else {
                    let awaited: Vec<&str> = p.current_awaited().iter().map(|c| c.as_str()).collect();
                    let mut line = format!(
                        "{:<10} #{:<3} {} {} at {} ms, awaiting {{{}}}: {}",
                        p.thread.to_string(),
                        p.id,
                        opener.producer,
                        if p.is_repair() { "repair" } else { opener.category.as_str() },
                        p.opened_at_ms,
                        awaited.join(","),
                        status_text(&r, &p.status)
                    );
                    if !p.delays.is_empty() {
                        let _ = write!(line, "; delayed by events {:?}", p.delays);
                    }
                    ctx.line(line);
                }
            }
            for s in &r.silences {
                if ctx.structured {
                    ctx.record(json!({"record": "silence", "silence": s}));
                } else {
                    let class = match &s.class {
                        SilenceClass::Lapse => "lapse".to_string(),
                        SilenceClass::ResponseGap { awaiting } => {
                            let threads: Vec<String> = awaiting.iter().map(|a| a.thread.to_string()).collect();
                            format!("response gap over {}", threads.join(", "))
                        }
                    };
                    ctx.line(format!("silence {}-{} ms: {class}", s.span.start_ms, s.span.end_ms));
                }
            }
            emit_seq_diagnostics(ctx, &r);
            Ok(false)
        }
        SeqCmd::Lint(args) => {
            let r = replay_doc(ctx, &args)?;
            emit_seq_diagnostics(ctx, &r);
            Ok(!r.diagnostics.is_empty())
        }
        SeqCmd::Stacking(args) => {
            let r = replay_doc(ctx, &args)?;
            let s = stacking_string(&r.ledger);
            if ctx.structured {
                ctx.record(json!({"stacking": s}));
            } else {
                ctx.line(s);
            }
            Ok(false)
        }
    }
}

fn emit_seq_diagnostics(ctx: &mut Ctx, r: &Replay) {
    for d in &r.diagnostics {
        if ctx.structured {
            ctx.record(json!({"record": "diagnostic", "diagnostic": d, "message": d.to_string()}));
        } else {
            ctx.line(format!("lint: {d}"));
        }
    }
}

fn index(root: &Path) -> Result<corpus::BuiltIndex, Fail> {
    if !root.is_dir() {
        return Err(Fail::Usage(format!("{root:?} is not a directory")));
    }
    let mut built = corpus::build_index(root);
    for d in &built.diagnostics {
        eprintln!("{d}");
    }
    built.diagnostics.sort_by(|a, b| (&a.path, &a.message).cmp(&(&b.path, &b.message)));
    Ok(built)
}

fn corpus_cmd(ctx: &mut Ctx, cmd: CorpusCmd) -> Outcome {
    match cmd {
        CorpusCmd::Index { root } => {
            let built = index(&root)?;
            let errors = built.diagnostics.iter().any(|d| d.level == Level::Error);
            if ctx.structured {
                for c in &built.index.clips {
                    ctx.record(json!({"record": "clip", "clip": c}));
                }
                for d in &built.diagnostics {
                    ctx.record(json!({"record": "diagnostic", "diagnostic": d}));
                }
            } else {
                ctx.line(format!(
                    "{} sessions, {} clips, {} diagnostics",
                    built.index.sessions.len(),
                    built.index.clips.len(),
                    built.diagnostics.len()
                ));
                for c in &built.index.clips {
                    ctx.line(format!("{}\t{}\t{}\t{}\t{}", c.clip_id, c.session_id, c.start_ms, c.end_ms, c.labels));
                }
            }
            Ok(errors)
        }
        CorpusCmd::Query { root, pattern } => {
            let built = index(&root)?;
            let query =
                LabelQuery::parse(&pattern, &built.index.registry).map_err(|e| Fail::Usage(format!("pattern: {e}")))?;
            for hit in corpus::query_clips(&built.index, &query) {
                if ctx.structured {
                    ctx.record(json!(hit));
                } else {
                    ctx.line(format!("{}\t{:?}\t{}", hit.clip.clip_id, hit.spans, hit.clip.labels));
                }
            }
            Ok(false)
        }
        CorpusCmd::Stats { root, silence_bin_ms } => {
            if silence_bin_ms == 0 {
                return Err(Fail::Usage("--silence-bin-ms must be positive".into()));
            }
            let built = index(&root)?;
            let report = corpus::compute_stats(&built.index, &StatsOptions { silence_bin_ms });
            if ctx.structured {
                ctx.record(json!(report));
            } else {
                ctx.line(format!("clips: {}", report.clips));
                ctx.line("tags:");
                for (t, n) in &report.tags {
                    ctx.line(format!("  {t:<14}{n}"));
                }
                ctx.line("directions:");
                for (d, n) in &report.directions {
                    ctx.line(format!("  {d:<14}{n}"));
                }
                ctx.line(format!("silences: {}", report.silences));
                for (bin, n) in &report.silence_histogram {
                    ctx.line(format!("  {bin:>6}-{:<6} ms  {n}", bin + silence_bin_ms));
                }
                ctx.line("latency (ms):");
                for (cat, l) in &report.latency {
                    ctx.line(format!(
                        "  {cat:<14}n={} min={} median={} mean={:.1} max={}",
                        l.count, l.min_ms, l.median_ms, l.mean_ms, l.max_ms
                    ));
                }
                for s in &report.unreplayable_sessions {
                    ctx.line(format!("unreplayable session: {s}"));
                }
            }
            Ok(false)
        }
        CorpusCmd::Cutlist {
            root,
            mut clip_ids,
            ids_from,
            template,
        } => {
            if let Some(path) = ids_from {
                let text = read_text(&path)?;
                clip_ids.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
            }
            let built = index(&root)?;
            let ids: Vec<String> = if clip_ids.is_empty() {
                built.index.clips.iter().map(|c| c.clip_id.clone()).collect()
            } else {
                clip_ids
            };
            let manifest = corpus::emit_cutlist(&built.index, ids.iter().map(String::as_str));
            let failed = manifest.rows.iter().any(|r| matches!(r, ManifestRow::Error { .. }));
            if ctx.structured {
                for r in &manifest.rows {
                    ctx.record(json!(r));
                }
            } else {
                ctx.out.push_str(&manifest.to_tsv(template.as_deref()));
            }
            Ok(failed)
        }
    }
}

fn load_machine(path: &str) -> Result<sim::DialogueMachine, Fail> {
    sim::load_machine(&read_text(path)?).map_err(|e| Fail::Invalid(format!("{path}: {e}")))
}

fn run_script(machine: &sim::DialogueMachine, path: &str, delay_ms: u64) -> Result<sim::SimLog, Fail> {
    let script = sim::load_script(&read_text(path)?, machine).map_err(|e| Fail::Invalid(format!("{path}: {e}")))?;
    Ok(sim::simulate(machine, &script, delay_ms))
}

fn sim_cmd(ctx: &mut Ctx, cmd: SimCmd, out: Option<&Path>) -> Outcome {
    match cmd {
        SimCmd::Check { sim: args, script } => {
            let machine = load_machine(&args.machine)?;
            let mut findings = false;
            if let Some(script) = script {
                let log = run_script(&machine, &script, args.delay_ms)?;
                let annotated =
                    sim::annotate_log(&log, &machine, &ctx.registry).map_err(|e| Fail::Invalid(e.to_string()))?;
                let inputs: Vec<LedgerInput> = annotated.events.iter().cloned().map(Into::into).collect();
                let r = replay(&inputs, &annotated.silences, &machine.categories)
                    .map_err(|e| Fail::Invalid(e.to_string()))?;
                for d in &annotated.label_diagnostics {
                    ctx.line(format!("label warning: token {}: {d}", d.token_index));
                }
                emit_seq_diagnostics(ctx, &r);
                findings = !annotated.label_diagnostics.is_empty() || !r.diagnostics.is_empty();
            }
            if !findings && !ctx.structured {
                ctx.line(format!(
                    "ok: {} states, {} rules",
                    machine.states.len(),
                    machine.rules.len()
                ));
            }
            Ok(findings)
        }
        SimCmd::Run { sim: args, script } => {
            let machine = load_machine(&args.machine)?;
            let log = run_script(&machine, &script, args.delay_ms)?;
            let annotated =
                sim::annotate_log(&log, &machine, &ctx.registry).map_err(|e| Fail::Invalid(e.to_string()))?;
            for e in &log.events {
                if ctx.structured {
                    ctx.record(json!(e));
                } else {
                    match e {
                        LogEvent::Turn {
                            start_ms,
                            end_ms,
                            speaker,
                            text,
                            categories,
                            ..
                        } => {
                            let who = match speaker {
                                sim::Speaker::Robot => &machine.robot,
                                sim::Speaker::User => &machine.user,
                            };
                            let cats: Vec<&str> = categories.iter().map(|c| c.as_str()).collect();
                            ctx.line(format!("{start_ms:>7} {end_ms:>7}  {who}: {text}  @{}", cats.join("+")));
                        }
                        LogEvent::Silence { start_ms, end_ms } => {
                            ctx.line(format!("{start_ms:>7} {end_ms:>7}  ({:.1})", (end_ms - start_ms) as f64 / 1000.0));
                        }
                    }
                }
            }
            if ctx.structured {
                ctx.record(json!({"labels": annotated.labels.to_string(), "final_state": log.final_state}));
            } else {
                ctx.line(format!("labels: {}", annotated.labels));
            }
            Ok(false)
        }
        SimCmd::Gen {
            sim: args,
            script,
            session_id,
        } => {
            let dir = out.ok_or_else(|| Fail::Usage("sim gen needs --out <directory>".into()))?;
            let machine = load_machine(&args.machine)?;
            let log = run_script(&machine, &script, args.delay_ms)?;
            let session = sim::synthetic_session(&log, &machine, &ctx.registry, &session_id, &session_id)
                .map_err(|e| Fail::Invalid(e.to_string()))?;
            let session_dir = dir.join("sessions").join(&session_id);
            fs::create_dir_all(&session_dir).map_err(|e| io_fail(&session_dir, e))?;
            let write = |path: PathBuf, bytes: &[u8]| fs::write(&path, bytes).map_err(|e| io_fail(&path, e));
            write(dir.join("registry.conf"), ctx.registry.to_conf().as_bytes())?;
            write(session_dir.join("annotations.jsonl"), &export_interchange(&session.document))?;
            let clips: String = session.clips.iter().map(|c| format!("{c}\n")).collect();
            write(session_dir.join("clips.tsv"), clips.as_bytes())?;
            eprintln!("wrote {} clips to {:?}", session.clips.len(), session_dir);
            Ok(false)
        }
    }
}
