use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_seqanno"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const PUBLISHED: &str = "hgreeting1p, hquestionp, silence, pgreeting2h\n";

#[test]
fn labels_parse_reports_four_tokens() {
    let o = run(&["labels", "parse", "-"], Some(PUBLISHED));
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("line 1: 4 tokens"));
    assert!(out.contains("h->p greeting part 1"));
    assert!(out.contains("p->h greeting part 2"));

    let o = run(&["labels", "parse", "-", "--structured"], Some(PUBLISHED));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    let record: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(record["tokens"].as_array().unwrap().len(), 4);
}

#[test]
fn labels_lint_and_query() {
    let o = run(&["labels", "lint", "-"], Some("hgreeting1p, silence\n"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("unpaired greeting1"));
    assert_eq!(run(&["labels", "lint", "-"], Some(PUBLISHED)).status.code(), Some(0));

    let o = run(&["labels", "query", "h*p silence", "-"], Some(PUBLISHED));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("line 1 [0, 2]"));
    assert_eq!(run(&["labels", "parse", "-"], Some("Hello!\n")).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    let o = run(&["labels", "parse", "--bogus", "-"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(run(&["labels", "parse", "/no/such/file"], None).status.code(), Some(2));
}

#[test]
fn seq_replay_of_sample_one() {
    let f = fixture("sample1.jsonl");
    let o = run(&["seq", "replay", path(&f)], None);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("A          #0   Pep greeting1 at 0 ms"));
    assert!(out.contains("abandoned at 10700 ms (superseded)"));
    assert!(out.contains("delayed by events [3, 4]"));
    assert!(out.contains("silence 8700-10700 ms: response gap over A, B, C"));

    let o = run(&["seq", "stacking", path(&f)], None);
    assert_eq!(stdout(&o), "[P1+P2->H1->H3+H2->H5->P4]\n");
    // the reissued offer is still open at the end of the clip
    assert_eq!(run(&["seq", "lint", path(&f)], None).status.code(), Some(1));
}

#[test]
fn structured_output_is_stable() {
    let f = fixture("sample1.jsonl");
    let a = run(&["seq", "replay", "--structured", path(&f)], None);
    let b = run(&["seq", "replay", "--structured", path(&f)], None);
    assert_eq!(a.stdout, b.stdout);
    for line in stdout(&a).lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn transcript_gap_is_a_lower_bound() {
    let o = run(&["transcript", "gap", path(&fixture("sample2.txt")), "1", "12", "--structured"], None);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["duration_ms"], 4400);
    assert_eq!(v["complete"], false);
}

#[test]
fn annotation_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let eaf = dir.path().join("s1.eaf");
    let o = run(&["annot", "export", path(&fixture("sample1.jsonl")), "--out", path(&eaf)], None);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["annot", "import", path(&eaf)], None);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), std::fs::read_to_string(fixture("sample1.jsonl")).unwrap());
    assert_eq!(run(&["annot", "validate", path(&eaf)], None).status.code(), Some(0));

    let o = run(&["annot", "map", path(&eaf), "100", "900"], None);
    assert_eq!(stdout(&o), "sample1_cam\t100\t900\n");
}

#[test]
fn invalid_documents_exit_one() {
    let bad = "{\"record\":\"document\",\"session_id\":\"x\",\"timeline_duration_ms\":10}\n\
               {\"record\":\"tier\",\"name\":\"notes\",\"kind\":\"other\",\"participant\":null}\n\
               {\"record\":\"segment\",\"start_ms\":5,\"end_ms\":50,\"value\":\"late\"}\n";
    let o = run(&["annot", "validate", "-"], Some(bad));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("past the timeline"));
}

#[test]
fn corpus_commands() {
    let root = fixture("corpus");
    let o = run(&["corpus", "index", path(&root)], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("1 sessions, 3 clips, 0 diagnostics"));

    let o = run(&["corpus", "query", path(&root), "h*p h*p"], None);
    assert!(stdout(&o).starts_with("s1-02\t"));

    let o = run(&["corpus", "stats", path(&root), "--structured"], None);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["latency"]["greeting2"]["min_ms"], 1000);

    let o = run(&["corpus", "cutlist", path(&root), "s1-01", "missing", "--template", "cut {source} {start_ms} {duration_ms}"], None);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("cut sample1_cam 0 3200"));
    assert!(out.contains("missing"));
}

#[test]
fn sim_gen_builds_a_usable_corpus() {
    let machine = fixture("service.machine");
    let script = fixture("service.script");
    let o = run(&["sim", "check", path(&machine), "--script", path(&script)], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sim", "gen", path(&machine), path(&script), "--out", path(dir.path())], None);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["corpus", "index", path(dir.path())], None);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["seq", "lint", path(&dir.path().join("sessions/sim/annotations.jsonl"))], None);
    assert_eq!(o.status.code(), Some(0));

    let bad = dir.path().join("bad.machine");
    std::fs::write(&bad, "initial a\n[state a]\nrule hi -> a : x @answer\nrule hi -> a : y @answer\n").unwrap();
    let o = run(&["sim", "check", path(&bad)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ambiguous trigger"));
}
