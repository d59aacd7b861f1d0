use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dpaudit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpaudit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Looks up `key: value` in the command output.
fn field(o: &Output, key: &str) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in {}", stdout(o)))
}

const CLASSIFICATION: &str = r#"
output_dir = "out"

[audit]
task = "classification"
threat_model = "white_box"
n_llm = 100
n_sample = 5000
seed = 3

[audit.mechanism]
eps_theory = 4.0
delta = 1e-5
num_partitions = 4
sensitivity_mode = "paper_voting"

[oracle]
kind = "detector"
flip_probability = 0.1
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn collect_writes_one_record_per_call() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.toml", CLASSIFICATION);
    let o = dpaudit(&["collect", "run.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("with: 100 rows"));
    assert!(stdout(&o).contains("without: 100 rows"));
    let text = std::fs::read_to_string(dir.path().join("out/clean_records.jsonl")).unwrap();
    // 100 trials per hypothesis, T = 4 partitions each.
    assert_eq!(text.lines().count(), 800);
    assert!(dir.path().join("out/collect.config.toml").exists());
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpaudit(&["audit", "nope.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn invalid_config_never_starts_work() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.toml", CLASSIFICATION);
    let o = dpaudit(&["audit", "run.toml", "--set", "audit.n_sample=0"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("n_sample"));
    let o = dpaudit(&["audit", "run.toml", "--set", "audit.bogus=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn replaying_a_collection_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.toml", CLASSIFICATION);
    assert!(dpaudit(&["collect", "run.toml"], dir.path()).status.success());
    let o = dpaudit(
        &[
            "collect",
            "run.toml",
            "--set",
            "oracle={kind=\"replay\", path=\"out/clean_records.jsonl\"}",
            "--set",
            "paths.records=replayed.jsonl",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(dir.path().join("out/clean_records.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("replayed.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn audit_is_reproducible_and_appends_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.toml", CLASSIFICATION);
    let first = dpaudit(&["audit", "run.toml", "--set", "workers=1"], dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let a = std::fs::read(dir.path().join("out/report.json")).unwrap();
    let second = dpaudit(&["audit", "run.toml", "--set", "workers=4"], dir.path());
    assert!(second.status.success());
    let b = std::fs::read(dir.path().join("out/report.json")).unwrap();
    assert_eq!(a, b);

    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["config"]["n_sample"], 5000);
    let counts = &report["counts"];
    let per_arm = |x: &str, y: &str| counts[x].as_u64().unwrap() + counts[y].as_u64().unwrap();
    assert_eq!(per_arm("true_positives", "false_negatives"), 5000);
    assert_eq!(per_arm("false_positives", "true_negatives"), 5000);

    let csv = std::fs::read_to_string(dir.path().join("out/reports.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("task,threat,T,"));
    // Identical apart from the wall time.
    let strip = |l: &str| l.rsplit_once(',').unwrap().0.to_string();
    assert_eq!(strip(lines[1]), strip(lines[2]));
}

#[test]
fn generation_audit_runs_with_a_preset_signal() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[audit]
task = "generation"
threat_model = "black_box"
n_llm = 20
n_sample = 2000
seed = 5

[audit.mechanism]
eps_theory = 8.0
delta = 1e-5
num_partitions = 8
sensitivity_mode = "esa_tight"

[signal]
preset = "car_vs_boat"

[oracle]
kind = "embedding_detector"
"#;
    write_config(dir.path(), "gen.toml", text);
    let o = dpaudit(&["audit", "gen.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let eps: f64 = field(&o, "eps_emp").parse().unwrap();
    assert!(eps > 0.0 && eps < 8.0, "{eps}");

    // A detector cannot answer generation queries.
    let o = dpaudit(&["audit", "gen.toml", "--set", "oracle.kind=detector"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_the_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[simulate]
t_values = [2, 4, 6, 8]
k_rule = "extreme"
b = 1.0
sigma = 2.0
"#;
    write_config(dir.path(), "sim.toml", text);
    let o = dpaudit(&["simulate", "sim.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "T,k,b,sigma,tpr,fpr,mu_gauss,eps_analytic,eps_gdp");
    assert_eq!(lines.len(), 5);
    // μ and its ε do not depend on T.
    let tail = |l: &str| l.split(',').skip(6).take(1).chain(l.split(',').skip(8)).collect::<Vec<_>>().join(",");
    assert!(lines[1..].iter().all(|l| tail(l) == tail(lines[1])));

    let o = dpaudit(&["simulate", "sim.toml", "--set", "simulate.eps_theory=1.0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convert_modes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpaudit(&["convert", "--mu", "0", "--delta", "1e-5"], dir.path());
    assert!(o.status.success());
    assert_eq!(field(&o, "epsilon"), "0");

    let o = dpaudit(&["convert", "--tp", "50", "--fp", "50", "--fn", "50", "--tn", "50"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&o, "mu_lower"), "0");
    assert_eq!(field(&o, "epsilon"), "0");

    let o = dpaudit(&["convert", "--eps", "3", "--delta", "1e-5"], dir.path());
    let mu = field(&o, "mu");
    let back = dpaudit(&["convert", "--mu", &mu, "--delta", "1e-5"], dir.path());
    let eps: f64 = field(&back, "epsilon").parse().unwrap();
    assert!((eps - 3.0).abs() < 1e-6, "{eps}");
    let round: f64 = field(&o, "epsilon_round_trip").parse().unwrap();
    assert!((round - 3.0).abs() < 1e-6);

    let o = dpaudit(&["convert", "--eps", "-1", "--delta", "1e-5"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = dpaudit(&["convert"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = dpaudit(&["convert", "--mu", "1", "--eps", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpaudit(&["schema"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["properties"]["audit"].is_object());
}

/// The exemplar block of a rendered classification prompt.
fn context_of(prompt: &str) -> &str {
    let start = prompt.find("<context>").unwrap();
    let end = prompt.find("</context>").unwrap();
    &prompt[start..end]
}

/// Answers a request file the way a perfect detector would.
fn answer(requests: &Path, responses: &Path, canary: &str) {
    let mut out = String::new();
    for line in BufReader::new(std::fs::File::open(requests).unwrap()).lines() {
        let req: serde_json::Value = serde_json::from_str(&line.unwrap()).unwrap();
        let prompt = req["rendered_prompt"].as_str().unwrap();
        let text = if context_of(prompt).contains(canary) { "Yes" } else { "No" };
        out.push_str(&serde_json::json!({ "text": text }).to_string());
        out.push('\n');
    }
    std::fs::write(responses, out).unwrap();
}

const EXTERNAL: &str = r#"
[audit]
task = "classification"
threat_model = "black_box"
n_llm = 6
n_sample = 4000
seed = 9

[audit.mechanism]
eps_theory = 8.0
delta = 1e-5
num_partitions = 2
sensitivity_mode = "paper_voting"

[context]
canary = { input = "purple walrus anthem" }
exemplars = [{ input = "first note" }, { input = "second note" }]
"#;

#[test]
fn file_batch_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{EXTERNAL}\n[oracle]\nkind = \"file_batch\"\nrequests = \"req.jsonl\"\nresponses = \"resp.jsonl\"\n"
    );
    write_config(dir.path(), "batch.toml", &text);
    let o = dpaudit(&["audit", "batch.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("pending"));
    let requests = dir.path().join("req.jsonl");
    // 2 hypotheses × 6 trials × 2 partitions.
    assert_eq!(std::fs::read_to_string(&requests).unwrap().lines().count(), 24);

    answer(&requests, &dir.path().join("resp.jsonl"), "purple walrus anthem");
    let o = dpaudit(&["audit", "batch.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["oracle_failures"], 0);
    assert!(report["estimate"]["mu_lower"].as_f64().unwrap() > 0.0);
}

/// Serves `n` HTTP requests, one per connection, answering like a perfect
/// detector, and returns the auth header values it saw.
fn serve(listener: TcpListener, n: usize, canary: &'static str) -> std::thread::JoinHandle<Vec<String>> {
    std::thread::spawn(move || {
        let mut auth = Vec::new();
        for _ in 0..n {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("x-api-key:") {
                    auth.push(line["x-api-key:".len()..].trim().to_string());
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let prompt = req["rendered_prompt"].as_str().unwrap();
            let yes = context_of(prompt).contains(canary);
            let reply = serde_json::json!({ "text": if yes { "Yes" } else { "No" } }).to_string();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
        }
        auth
    })
}

#[test]
fn http_oracle_collects_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/respond", listener.local_addr().unwrap());
    let server = serve(listener, 24, "purple walrus anthem");
    let text = format!(
        "{EXTERNAL}\nworkers = 1\n[oracle]\nkind = \"http\"\nurl = \"{url}\"\nauth_header = \"X-Api-Key\"\nauth_env = \"DPAUDIT_TEST_KEY\"\n"
    );
    // Top-level keys must precede the tables.
    let text = text.replacen("\nworkers = 1\n", "\n", 1);
    let text = format!("workers = 1\n{text}");
    write_config(dir.path(), "http.toml", &text);
    let o = Command::new(env!("CARGO_BIN_EXE_dpaudit"))
        .args(["collect", "http.toml"])
        .current_dir(dir.path())
        .env("DPAUDIT_TEST_KEY", "s3cret")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let auth = server.join().unwrap();
    assert_eq!(auth.len(), 24);
    assert!(auth.iter().all(|a| a == "s3cret"));
    let records = std::fs::read_to_string(dir.path().join("out/clean_records.jsonl")).unwrap();
    let with_yes = records
        .lines()
        .filter(|l| l.contains("\"with\"") && l.contains("\"vote\":0"))
        .count();
    // The canary replaces exemplar 0, which lands in partition 0 of every trial.
    assert_eq!(with_yes, 6);
}
