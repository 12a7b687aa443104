use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

const LISTING: &str = "{\"values\": [ \"0.0 1.1 1.1\",\"2.0 3.1 2.0\",\n\t     \"1.0 1.0 2.0\", \"1.0 3.0 2.0\",\n\t     \"1.0 0.0 1.0\",\"0.5 1.0 1.0\" ]}";
const LISTING_COMPACT: &str =
    r#"{"values":["0.0 1.1 1.1","2.0 3.1 2.0","1.0 1.0 2.0","1.0 3.0 2.0","1.0 0.0 1.0","0.5 1.0 1.0"]}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twinwall"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Service(Child);

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts a service and waits for its ready line; returns the line.
fn start(args: &[&str]) -> (Service, String) {
    let mut child = bin().args(args).stderr(Stdio::piped()).stdout(Stdio::null()).spawn().unwrap();
    let err = child.stderr.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(err).lines().map_while(Result::ok) {
            if line.contains("ready") {
                let _ = tx.send(line);
            }
        }
    });
    let line = rx.recv_timeout(Duration::from_secs(10)).expect("ready line");
    (Service(child), line)
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    let pat = format!("{key}=");
    out.split_whitespace().find_map(|w| w.strip_prefix(pat.as_str())).unwrap_or_else(|| panic!("{key} in {out}"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn missing_config_is_a_config_error() {
    let o = run(&["--config", "/nonexistent/twinwall.toml", "hub"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn hub_reaches_ready_and_port_conflict_fails() {
    let dir = tempfile::tempdir().unwrap();
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = probe.local_addr().unwrap().to_string();
    drop(probe);
    let cfg = write(dir.path(), "hub.toml", &format!("[hub]\nlisten = \"{addr}\"\n"));
    let cfg = cfg.to_str().unwrap();
    let (_hub, line) = start(&["--config", cfg, "hub"]);
    assert!(line.contains(&addr), "{line}");
    let second = run(&["--config", cfg, "hub"]);
    assert_eq!(second.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&second.stderr).contains("port in use"));
}

#[test]
fn broker_reaches_ready() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", "[broker]\nlisten = \"127.0.0.1:0\"\n");
    let (_b, line) = start(&["--config", cfg.to_str().unwrap(), "broker"]);
    assert!(line.contains("broker"));
}

#[test]
fn demo_failure_free_exits_zero() {
    let s = configs().join("scenario-clean.toml");
    let o = run(&["demo", "--scenario", s.to_str().unwrap(), "--time-scale", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(field(&out, "faults_raised"), "0");
    assert_eq!(field(&out, "failures_injected"), "0");
}

#[test]
fn demo_scripted_failure_reports_one_fault_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.toml", "cycles = 10\n[failures]\nmode = \"scripted\"\ncycles = [3]\n");
    let args = ["--seed", "5", "demo", "--scenario", s.to_str().unwrap(), "--time-scale", "0"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.status.code(), Some(0));
    let (a, b) = (stdout(&a), stdout(&b));
    assert_eq!(field(&a, "faults_raised"), "1");
    assert_eq!(field(&a, "failures_injected"), "1");
    for key in ["cycles", "failures_injected", "faults_raised", "events", "readings_published"] {
        assert_eq!(field(&a, key), field(&b, key));
    }
}

#[test]
fn demo_rejects_rules_on_unbound_sensor() {
    let dir = tempfile::tempdir().unwrap();
    let model = std::fs::read_to_string(configs().join("model.toml")).unwrap()
        + "\n[[rules]]\nid = \"ghost\"\nkind = \"threshold-sustained\"\nwhen = { sensor = \"ghost\", at_least = 1.0 }\n\
           sustain_ms = 0\nseverity = \"info\"\ncomponent = \"cap_stack\"\nmessage = \"x\"\n";
    let m = write(dir.path(), "m.toml", &model);
    let s = configs().join("scenario-clean.toml");
    let o = run(&["demo", "--scenario", s.to_str().unwrap(), "--model", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost"));
}

#[test]
fn convert_round_trips_the_six_point_listing() {
    let dir = tempfile::tempdir().unwrap();
    let json = write(dir.path(), "in.json", LISTING);
    let bin_path = dir.path().join("f.epc1");
    let back = dir.path().join("back.json");
    let copy = dir.path().join("copy.epc1");
    let o = run(&["convert", json.to_str().unwrap(), bin_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(field(&stdout(&o), "points"), "6");
    assert_eq!(std::fs::metadata(&bin_path).unwrap().len(), 25 + 6 * 12);
    assert!(run(&["convert", bin_path.to_str().unwrap(), back.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(&back).unwrap();
    assert_eq!(text, LISTING_COMPACT);
    assert!(run(&["convert", bin_path.to_str().unwrap(), copy.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(&bin_path).unwrap(), std::fs::read(&copy).unwrap());
}

#[test]
fn convert_empty_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "e.json", "");
    let o = run(&["convert", empty.to_str().unwrap(), dir.path().join("o.epc1").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("format error"));
}

#[test]
fn bench_codec_with_no_points_reports_header_sizes() {
    let o = run(&["bench-codec", "--points", "0", "--reps", "2"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(field(lines[0], "bytes"), "13");
    assert_eq!(field(lines[1], "bytes"), "25");
}

#[test]
fn bench_hub_one_client_keeps_up() {
    let o = run(&["bench-hub", "--clients", "1", "--fps", "10", "--seconds", "1", "--points", "1000"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let fps: f64 = field(out.lines().last().unwrap(), "min_fps").parse().unwrap();
    assert!(fps >= 9.5, "{out}");
}
