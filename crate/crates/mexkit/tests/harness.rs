use std::path::Path;
use std::sync::{Arc, OnceLock};

use mexkit::gateway::{serve, AccountConfig};
use mexkit::harness::report::Stat;
use mexkit::harness::{streams, AttackConfig, Checkpoint, Harness, RunOptions};
use mexkit::oracle::{Budget, Meter, NetworkVictim, Oracle, OracleConfig, QueryRecord, VictimBackend};
use mexkit::MexError;
use mexkit_core::data::GlyphConfig;
use mexkit_core::metrics::fidelity;
use mexkit_core::nn::{ModelSpec, Network};
use mexkit_core::rng::derive;
use mexkit_core::trainer::{kd_train, Pairs};
use mexkit_core::ResponsePolicy;

const BASE: &str = r#"
schema_version = 1
seeds = [3]

[victim]
kind = "trained"
architecture = "mlp-32"
epochs = 30
seed = 1
data = { kind = "glyphs", samples = 600, seed = 1 }

[data]
source = { kind = "glyphs", samples = 400, seed = 2 }

[budget]
batches = 2
batch_size = 32

[trainer]
architecture = "mlp-16"
epochs = 4
round_epochs = 1
batch_size = 32

[evaluation]
adversarial_samples = 20
trace_every = 2
"#;

fn victim() -> Arc<NetworkVictim> {
    static V: OnceLock<Arc<NetworkVictim>> = OnceLock::new();
    V.get_or_init(|| {
        let data = GlyphConfig::default().generate(600, 1);
        Arc::new(NetworkVictim::new(mexkit::harness::train_victim("mlp-32", &data, 30, 1, None).unwrap()))
    })
    .clone()
}

/// `BASE` with `key = value` edits applied inside `[section]`.
fn config(edits: &[(&str, &str, &str)]) -> AttackConfig {
    let mut doc: toml::Table = toml::from_str(BASE).unwrap();
    for (section, key, value) in edits {
        let v: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}")).unwrap()["v"].clone();
        let table = if section.is_empty() {
            &mut doc
        } else {
            doc.entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .unwrap()
        };
        table.insert(key.to_string(), v);
    }
    AttackConfig::from_toml(&toml::to_string(&doc).unwrap()).unwrap()
}

fn harness(edits: &[(&str, &str, &str)]) -> Harness {
    Harness::with_victim(config(edits), victim()).unwrap()
}

fn read_log(path: &Path) -> Vec<QueryRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| QueryRecord::from_json_line(l).unwrap())
        .collect()
}

#[test]
fn two_seeds_give_two_reports_and_their_aggregate() {
    let h = harness(&[("", "seeds", "[3, 4]")]);
    let r = h.run(&RunOptions::default()).unwrap();
    assert_eq!(r.seeds.len(), 2);
    let fids: Vec<f64> = r.seeds.iter().map(|s| s.metrics.fidelity).collect();
    assert_eq!(r.aggregate.fidelity, Stat::of(&fids).unwrap());
    for s in &r.seeds {
        assert_eq!((s.queries, s.spent, s.rounds), (64, 64, 2));
        assert_eq!(s.metrics.samples, 80);
        assert_eq!(s.metrics.adversarial_samples, 20);
        assert!(s.metrics.accuracy.is_some() && s.metrics.adversarial_fidelity.is_some());
    }
    assert_eq!(r.budget_queries, 64);
}

#[test]
fn zero_budget_reports_the_untrained_model() {
    let h = harness(&[("budget", "batches", "0")]);
    let r = h.run(&RunOptions::default()).unwrap();
    let s = &r.seeds[0];
    assert_eq!((s.queries, s.spent, s.rounds), (0, 0, 0));
    let spec = ModelSpec::new("mlp-16", h.test().shape, 10);
    let untrained = Network::new(&spec, derive(3, streams::MODEL)).unwrap();
    let want = fidelity(
        &untrained.predict(&h.test().features),
        &victim().network().predict(&h.test().features),
    )
    .unwrap();
    assert_eq!(s.metrics.fidelity, want);
}

#[test]
fn full_budget_equals_the_manual_pipeline() {
    let h = harness(&[
        ("budget", "batches", "\"full\""),
        ("trainer", "round_epochs", "0"),
        ("trainer", "epochs", "3"),
        ("trainer", "batch_size", "64"),
    ]);
    let oracle = h.oracle(None, false).unwrap();
    let run = h.run_seed(3, oracle).unwrap();
    assert_eq!(run.report.queries, h.reference().len());

    // Same pairs built straight from the victim, trained with the one-shot
    // distillation entry point.
    let v = victim();
    let mut pairs = Pairs::new(h.reference().dim(), 10);
    for &i in &run.consumed {
        let x = h.reference().row(i);
        pairs.push(x, v.network().probabilities(x)[0].scores()).unwrap();
    }
    assert_eq!(pairs.targets(), run.pairs.targets());
    let cfg = h.config();
    let opt = cfg.trainer.optimizer.resolve(cfg.trainer.task).unwrap();
    let init = Network::new(&ModelSpec::new("mlp-16", h.reference().shape, 10), derive(3, streams::MODEL)).unwrap();
    let (manual, _) = kd_train(&pairs, init, &opt, 3, &cfg.trainer.augment, derive(3, streams::FINAL_FIT)).unwrap();
    assert_eq!(manual.params(), run.model.params());
    let want = fidelity(
        &manual.predict(&h.test().features),
        &v.network().predict(&h.test().features),
    )
    .unwrap();
    assert_eq!(run.report.metrics.fidelity, want);
}

#[test]
fn warm_cache_reruns_and_replays_are_identical_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let h = harness(&[("", "seeds", "[3, 4]")]);
    let opts = RunOptions { cache: Some(cache.clone()), ..RunOptions::default() };
    let cold = h.run(&opts).unwrap();
    assert!(cold.seeds.iter().all(|s| s.spent == 64));
    let warm_a = h.run(&opts).unwrap();
    let warm_b = h.run(&opts).unwrap();
    assert!(warm_a.same_report(&warm_b));
    assert!(warm_a.seeds.iter().all(|s| s.spent == 0 && s.cost == 0.0));
    let replay = h.run(&RunOptions { cache: Some(cache), replay: true, out_dir: None }).unwrap();
    assert!(replay.same_report(&warm_a));
    for (c, w) in cold.seeds.iter().zip(&warm_a.seeds) {
        assert_eq!(c.metrics, w.metrics);
    }

    let again = h.run(&RunOptions::default()).unwrap();
    assert!(again.same_report(&cold));
}

#[test]
fn replay_without_the_responses_fails_with_budget_exhausted() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    std::fs::write(&cache, "").unwrap();
    let h = harness(&[]);
    let err = h.run(&RunOptions { cache: Some(cache), replay: true, out_dir: None }).unwrap_err();
    assert!(matches!(err, MexError::Round { round: 0, .. }), "{err}");
    assert!(matches!(err.root(), MexError::BudgetExhausted { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn budget_accounting_closes_in_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(&[]);
    let r = h.run(&RunOptions { out_dir: Some(dir.path().to_path_buf()), ..RunOptions::default() }).unwrap();
    let log = read_log(&dir.path().join("seed-3/queries.jsonl"));
    let attack: Vec<_> = log.iter().filter(|r| r.meter == Meter::Attack).collect();
    let cost: f64 = attack.iter().map(|r| r.cost).sum();
    assert_eq!(cost, 64.0);
    assert_eq!(r.seeds[0].spent, 64);
    assert_eq!(r.seeds[0].cost, 64.0);
    assert_eq!(log.iter().filter(|r| r.meter == Meter::Evaluation).count(), 100);

    for name in ["result.json", "manifest.json", "seed-3/piracy.json", "seed-3/trace.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let trace = std::fs::read_to_string(dir.path().join("seed-3/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);
    assert!(trace.starts_with("epoch,loss,fidelity"));
    let ckpt = Checkpoint::load(&dir.path().join("seed-3/piracy.json")).unwrap();
    assert_eq!(ckpt.metadata.seed, 3);
    assert_eq!(ckpt.network().unwrap().spec().architecture, "mlp-16");
}

#[test]
fn every_strategy_bills_one_batch_per_round() {
    for strategy in ["basic", "active_kcenter", "adversarial_pgd", "adversarial_cw", "mixed(1:1)"] {
        let dir = tempfile::tempdir().unwrap();
        let h = harness(&[
            ("strategy", "name", &format!("\"{strategy}\"")),
            ("trainer", "epochs", "1"),
            ("budget", "batches", "3"),
        ]);
        let r = h.run(&RunOptions { out_dir: Some(dir.path().to_path_buf()), ..RunOptions::default() }).unwrap();
        assert_eq!(r.seeds[0].spent, 96, "{strategy}");
        let log = read_log(&dir.path().join("seed-3/queries.jsonl"));
        for round in 0..3 {
            let n = log.iter().filter(|q| q.meter == Meter::Attack && q.round == round).count();
            assert_eq!(n, 32, "{strategy} round {round}");
        }
    }
}

#[test]
fn module_errors_carry_the_round() {
    let h = harness(&[("oracle", "gate", "{ variance_floor = 10.0 }")]);
    let err = h.run(&RunOptions::default()).unwrap_err();
    assert!(matches!(err, MexError::Round { round: 0, .. }), "{err}");
    assert!(matches!(err.root(), MexError::InvalidInput { .. }));
}

#[test]
fn mixmatch_and_degraded_policies_run() {
    let h = harness(&[("trainer", "mixmatch", "{}"), ("trainer", "epochs", "1")]);
    let r = h.run(&RunOptions::default()).unwrap();
    assert!(r.name.contains("mixmatch"));
    assert!((0.0..=1.0).contains(&r.aggregate.fidelity.mean));

    for policy in [r#"{ kind = "top1" }"#, r#"{ kind = "label_only" }"#] {
        let h = harness(&[("", "policy", policy)]);
        let r = h.run(&RunOptions::default()).unwrap();
        assert_eq!(r.seeds[0].spent, 64);
    }
}

#[test]
fn pretrained_init_starts_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(&[]);
    h.run(&RunOptions { out_dir: Some(dir.path().to_path_buf()), ..RunOptions::default() }).unwrap();
    let source = dir.path().join("seed-3/piracy.json");
    let init = format!("{{ kind = \"pretrained\", source = \"{}\" }}", source.display());
    let warm = harness(&[("trainer", "init", &init), ("budget", "batches", "0")]);
    let r = warm.run(&RunOptions::default()).unwrap();
    let net = Checkpoint::load(&source).unwrap().network().unwrap();
    let want = fidelity(&net.predict(&warm.test().features), &victim().network().predict(&warm.test().features)).unwrap();
    assert_eq!(r.seeds[0].metrics.fidelity, want);
}

#[test]
fn remote_victim_gives_the_same_result_as_a_local_one() {
    let served = Arc::new(Oracle::new(
        victim(),
        OracleConfig {
            attack: Budget::new(10, 64),
            ..OracleConfig::default()
        },
    ));
    let mut account = AccountConfig::new("attacker", ResponsePolicy::Full);
    account.rate_limit = 1e6;
    let server = serve(served.clone(), "127.0.0.1:0", vec![account]).unwrap();
    let remote = format!(
        "{{ kind = \"remote\", endpoint = \"{}\", key = \"attacker\", classes = 10 }}",
        server.endpoint()
    );
    let via_gateway = Harness::new(config(&[("", "victim", &remote)])).unwrap();
    let r = via_gateway.run(&RunOptions::default()).unwrap();
    let local = harness(&[]).run(&RunOptions::default()).unwrap();
    let (mut a, b) = (r.seeds[0].metrics.clone(), &local.seeds[0].metrics);
    a.config_fingerprint = b.config_fingerprint.clone();
    assert_eq!(a, *b);
    assert_eq!(r.seeds[0].spent, 64);
    assert_eq!(served.spent(Meter::Attack), 64 + 100);
    assert!(victim().num_classes() == 10);
}
