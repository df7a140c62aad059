use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use mexkit::gateway::GatewayClient;

const CONFIG: &str = r#"
schema_version = 1
name = "cli-basic"
seeds = [1, 2]

[victim]
kind = "trained"
architecture = "mlp-32"
epochs = 10
data = { kind = "glyphs", samples = 300, seed = 1 }

[data]
source = { kind = "glyphs", samples = 200, seed = 2 }

[budget]
batches = 2
batch_size = 16

[trainer]
architecture = "mlp-8"
epochs = 2
batch_size = 16

[evaluation]
adversarial_samples = 10
"#;

fn mexkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mexkit")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_replay_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "attack.toml", CONFIG);
    let out = dir.path().join("out");
    let cache = dir.path().join("cache.jsonl");
    let (out_s, cache_s) = (out.to_string_lossy(), cache.to_string_lossy());

    let run = mexkit(&["run", &cfg, "--out", &out_s, "--cache", &cache_s, "--format", "json"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let first: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(first[0]["seeds"][0]["spent"], 32);
    assert!(out.join("victim-00.json").exists());

    let replay = mexkit(&["replay", &cfg, "--cache", &cache_s, "--format", "json"]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    let second: serde_json::Value = serde_json::from_str(&stdout(&replay)).unwrap();
    assert_eq!(second[0]["seeds"][0]["spent"], 0);
    assert_eq!(first[0]["aggregate"], second[0]["aggregate"]);

    let result = out.join("result.json");
    let table = mexkit(&["report", &result.to_string_lossy(), "--format", "table"]);
    assert!(table.status.success());
    assert!(stdout(&table).contains("cli-basic") && stdout(&table).contains(" ± "));

    let csv = mexkit(&["report", &result.to_string_lossy(), "--format", "csv"]);
    let csv_path = write(dir.path(), "r.csv", &stdout(&csv));
    let back = mexkit(&["report", &csv_path, "--format", "json"]);
    let json = std::fs::read_to_string(&result).unwrap();
    assert_eq!(stdout(&back), json);

    let unknown = mexkit(&["report", &result.to_string_lossy(), "--format", "xml"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &format!("{CONFIG}\nsurprise = true\n"));
    assert_eq!(mexkit(&["run", &bad]).status.code(), Some(2));
    let version = write(dir.path(), "v.toml", &CONFIG.replace("schema_version = 1", "schema_version = 9"));
    assert_eq!(mexkit(&["run", &version]).status.code(), Some(2));
    assert_eq!(mexkit(&["run", "/nonexistent/attack.toml"]).status.code(), Some(4));
    assert_eq!(mexkit(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn replay_with_missing_responses_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "attack.toml", CONFIG);
    let cache = write(dir.path(), "empty.jsonl", "");
    let o = mexkit(&["replay", &cfg, "--cache", &cache]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("round 0"));
}

#[test]
fn retro_diff_reports_the_four_columns() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(
        dir.path(),
        "2020.csv",
        "# mexkit-snapshot v1\ninput_id,year,class,confidence,label\nx,2020,1,0.5,1\ny,2020,0,0.9,1\n",
    );
    let b = write(
        dir.path(),
        "2021.csv",
        "# mexkit-snapshot v1\ninput_id,year,class,confidence,label\nx,2021,1,0.4,1\ny,2021,1,0.9,1\n",
    );
    let o = mexkit(&["retro-diff", &a, &b]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["predicted_class_overlap"], 0.5);
    assert_eq!(v["accuracy_delta"], 0.5);
    assert!(v["fidelity_delta"].is_null());
    assert!((v["avg_confidence_delta"].as_f64().unwrap() - 0.05).abs() < 1e-12);

    let broken = write(dir.path(), "bad.csv", "# mexkit-snapshot v1\ninput_id,year,class,confidence\nx,2020,1,1.3\n");
    let o = mexkit(&["retro-diff", &a, &broken]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.csv:3:"));
}

#[test]
fn serve_answers_queries() {
    let dir = tempfile::tempdir().unwrap();
    let gw = write(
        dir.path(),
        "gateway.toml",
        r#"
schema_version = 1
bind = "127.0.0.1:0"
victim = { kind = "trained", architecture = "mlp-8", epochs = 2, data = { kind = "glyphs", samples = 100 } }
budget = { batches = 1, batch_size = 4 }
log = "served.jsonl"

[[accounts]]
key = "alice"
policy = { kind = "top1" }
"#,
    );
    let mut child = Command::new(env!("CARGO_BIN_EXE_mexkit"))
        .args(["serve", &gw])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let endpoint = line.trim().strip_prefix("listening on ").expect(&line).to_string();
    let client = GatewayClient::new(&endpoint, "alice").unwrap();
    let inputs: Vec<f64> = (0..144 * 3).map(|i| (i % 7) as f64 / 7.0).collect();
    let reply = client.remote_query(&inputs, 144, None);
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.unwrap();
    assert_eq!(reply.records.len(), 3);
    assert_eq!(reply.billing.remaining, 4 - 3);
    assert_eq!(reply.policy, mexkit_core::ResponsePolicy::Top1);
    assert!(dir.path().join("served.jsonl").exists());
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut attacks = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "gateway.toml" {
            mexkit::harness::serve_config::GatewayConfig::load(&path).unwrap();
        } else {
            let cfg = mexkit::harness::AttackConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(cfg.budget.batch_size, 64);
            attacks += 1;
        }
    }
    assert_eq!(attacks, 4);
}
