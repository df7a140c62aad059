//! Experiment orchestration: rounds of query generation, oracle queries and
//! piracy-model updates, followed by evaluation on the held-out split.

pub mod config;
pub mod data;
pub mod report;
pub mod serve_config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use mexkit_core::data::{split_dataset, Dataset, FeatureKind};
use mexkit_core::metrics::{self, MetricsReport};
use mexkit_core::nn::{Init, ModelSpec, Network};
use mexkit_core::rng::derive;
use mexkit_core::strategies::{gen_adversarial, kcenter_greedy, mix_batch, random_select, MixedItem};
use mexkit_core::trainer::{Pairs, TrainSettings, Trainer};
use mexkit_core::ResponsePolicy;
use serde::Serialize;

pub use config::{AttackConfig, Batches, StrategyName, VictimSpec};
pub use data::{load_dataset, train_victim, Checkpoint, CheckpointMeta, TracePoint};
pub use report::{emit_report, Aggregate, Artifacts, ExperimentResult, ReportFormat, SeedReport, Stat};

use crate::error::{MexError, Result};
use crate::gateway::GatewayClient;
use crate::oracle::{Budget, Meter, NetworkVictim, Oracle, OracleConfig, QueryRecord, VictimBackend};

/// Seed streams derived from each configured seed.
pub mod streams {
    pub const MODEL: u64 = 1;
    pub const SELECT: u64 = 2;
    pub const ROUND_FIT: u64 = 3;
    pub const FINAL_FIT: u64 = 4;
    pub const GENERATE: u64 = 5;
    pub const EVAL_ADVERSARIAL: u64 = 6;
    pub const MIX: u64 = 7;
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Response cache read before the run and updated after it.
    pub cache: Option<PathBuf>,
    /// Serve every query from `cache` with zero budget; any miss fails.
    pub replay: bool,
    /// Directory for the result, manifest, checkpoints, traces and logs.
    pub out_dir: Option<PathBuf>,
}

/// Everything one seed produced, including the trained model.
pub struct SeedRun {
    pub report: SeedReport,
    pub model: Network,
    pub pairs: Pairs,
    pub trace: Vec<TracePoint>,
    /// Reference-set rows consumed, in query order.
    pub consumed: Vec<usize>,
    pub oracle: Option<Arc<Oracle>>,
}

enum Victim {
    Local(Arc<dyn VictimBackend>),
    Remote {
        attack: GatewayClient,
        evaluation: GatewayClient,
        classes: usize,
    },
}

/// The query surface of one seed.
enum Api<'a> {
    Local(Arc<Oracle>),
    Remote {
        attack: &'a GatewayClient,
        evaluation: &'a GatewayClient,
        classes: usize,
        input_len: usize,
        tag: String,
        counter: Mutex<u64>,
    },
}

impl Api<'_> {
    fn classes(&self) -> Result<usize> {
        match self {
            Api::Local(o) => o.classes(),
            Api::Remote { classes, .. } => Ok(*classes),
        }
    }

    /// Returns the records and the policy they were produced under.
    fn query(&self, inputs: &[f64], policy: &ResponsePolicy, meter: Meter, round: usize) -> Result<(ResponsePolicy, Vec<QueryRecord>)> {
        match self {
            Api::Local(o) => {
                o.set_round(round as u64);
                Ok((policy.clone(), o.query(inputs, policy, meter)?))
            }
            Api::Remote { attack, evaluation, input_len, tag, counter, .. } => {
                let client = match meter {
                    Meter::Attack => attack,
                    Meter::Evaluation => evaluation,
                };
                let token = {
                    let mut c = counter.lock().unwrap_or_else(|e| e.into_inner());
                    *c += 1;
                    format!("{tag}-{}", *c)
                };
                let reply = client.remote_query(inputs, *input_len, Some(&token))?;
                Ok((reply.policy, reply.records))
            }
        }
    }

    fn labels(&self, inputs: &[f64], policy: &ResponsePolicy) -> Result<Vec<usize>> {
        let (policy, records) = self.query(inputs, policy, Meter::Evaluation, 0)?;
        Ok(records.iter().map(|r| r.response.top_class(&policy)).collect())
    }

    fn spent(&self, records: &[(f64, bool)]) -> usize {
        match self {
            Api::Local(o) => o.spent(Meter::Attack),
            Api::Remote { .. } => records.iter().filter(|(_, miss)| *miss).count(),
        }
    }
}

pub struct Harness {
    config: AttackConfig,
    victim: Victim,
    victim_net: Option<Network>,
    reference: Dataset,
    test: Dataset,
}

impl Harness {
    /// Loads data and builds (or loads, or connects to) the victim.
    pub fn new(config: AttackConfig) -> Result<Self> {
        config.validate()?;
        let net = build_victim(&config.victim)?;
        let victim = match (&config.victim, &net) {
            (VictimSpec::Remote { endpoint, key, evaluation_key, classes }, _) => Victim::Remote {
                attack: GatewayClient::new(endpoint, key)?,
                evaluation: GatewayClient::new(endpoint, evaluation_key.as_deref().unwrap_or(key))?,
                classes: *classes,
            },
            (_, net) => Victim::Local(Arc::new(NetworkVictim::new(net.clone().expect("local victim built")))),
        };
        let mut h = Self::assemble(config, victim)?;
        h.victim_net = net;
        Ok(h)
    }

    /// Uses an already constructed victim; the config's victim section is
    /// ignored.
    pub fn with_victim(config: AttackConfig, victim: Arc<dyn VictimBackend>) -> Result<Self> {
        config.validate()?;
        Self::assemble(config, Victim::Local(victim))
    }

    fn assemble(config: AttackConfig, victim: Victim) -> Result<Self> {
        let data = load_dataset(&config.data.source)?;
        if let Victim::Local(v) = &victim {
            if v.input_len() != data.dim() {
                return Err(MexError::Config(format!(
                    "victim takes {} features, attack data has {}",
                    v.input_len(),
                    data.dim()
                )));
            }
        }
        let split = split_dataset(&data, config.data.split, config.data.split_seed)?;
        Ok(Self {
            config,
            victim,
            victim_net: None,
            reference: split.reference,
            test: split.test,
        })
    }

    pub fn config(&self) -> &AttackConfig {
        &self.config
    }

    pub fn reference(&self) -> &Dataset {
        &self.reference
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    /// Queries the run will bill: the configured budget capped by the pool.
    pub fn planned_queries(&self) -> usize {
        self.config.budget.queries(self.reference.len()).min(self.reference.len())
    }

    fn evaluation_queries(&self) -> usize {
        self.test.len() + self.adversarial_count()
    }

    fn adversarial_count(&self) -> usize {
        match (&self.config.evaluation.adversarial, self.test.kind) {
            (Some(_), FeatureKind::Continuous) => {
                self.config.evaluation.adversarial_samples.unwrap_or(self.test.len()).min(self.test.len())
            }
            _ => 0,
        }
    }

    /// A fresh oracle for one seed, warmed from `cache`.
    pub fn oracle(&self, cache: Option<&Oracle>, replay: bool) -> Result<Option<Arc<Oracle>>> {
        let Victim::Local(backend) = &self.victim else {
            return Ok(None);
        };
        let b = self.config.budget.batch_size;
        let (attack, evaluation) = if replay {
            (Budget::new(0, b), Budget::new(0, b))
        } else {
            let attack = match self.config.budget.batches {
                Batches::Count(n) => Budget::new(n, b),
                Batches::Full => Budget::new(self.reference.len().div_ceil(b), b),
            };
            (attack, Budget::queries(self.evaluation_queries()))
        };
        let spec = &self.config.oracle;
        let gate = spec.gate.clone().map(|mut g| {
            g.shape = Some(self.reference.shape);
            Box::new(g) as Box<dyn crate::oracle::ValidityGate>
        });
        let oracle = Oracle::new(
            backend.clone(),
            OracleConfig {
                attack,
                evaluation,
                costs: spec.costs.clone(),
                gate,
                label_map: spec.label_map.clone(),
            },
        );
        if let Some(c) = cache {
            oracle.absorb_cache(c);
        }
        Ok(Some(Arc::new(oracle)))
    }

    fn init_model(&self, spec: &ModelSpec, seed: u64) -> Result<Network> {
        match &spec.init {
            Init::Scratch => Ok(Network::new(spec, derive(seed, streams::MODEL))?),
            Init::Pretrained { source } => {
                let net = Checkpoint::load(Path::new(source))?.network()?;
                let s = net.spec();
                if s.architecture != spec.architecture || s.input != spec.input || s.classes != spec.classes {
                    return Err(MexError::Config(format!(
                        "pretrained checkpoint {source} does not match {} with {} classes",
                        spec.architecture, spec.classes
                    )));
                }
                Ok(net)
            }
        }
    }

    fn unlabeled(&self, used: &BTreeSet<usize>) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.reference.len() - used.len()) * self.reference.dim());
        for i in (0..self.reference.len()).filter(|i| !used.contains(i)) {
            out.extend_from_slice(self.reference.row(i));
        }
        out
    }

    fn fit(
        &self,
        trainer: &mut Trainer,
        pairs: &Pairs,
        used: &BTreeSet<usize>,
        epochs: usize,
        seed: u64,
        observe: impl FnMut(usize, f64, &Network),
    ) -> Result<Vec<f64>> {
        if pairs.is_empty() || epochs == 0 {
            return Ok(Vec::new());
        }
        Ok(match &self.config.trainer.mixmatch {
            Some(mm) => trainer.fit_mixmatch_observed(pairs, &self.unlabeled(used), mm, epochs, seed, observe)?,
            None => trainer.fit_kd_observed(pairs, epochs, seed, observe)?,
        })
    }

    /// Picks `k` inputs for one round and marks the pool rows they consume.
    fn generate(&self, model: &Network, k: usize, seed: u64, round: usize, used: &mut BTreeSet<usize>, consumed: &mut Vec<usize>) -> Result<Vec<f64>> {
        let pool = self.reference.len();
        let d = self.reference.dim();
        let pick_random = |k: usize, used: &BTreeSet<usize>| {
            random_select(pool, k, derive(derive(seed, streams::SELECT), round as u64), used)
        };
        let rows = |idx: &[usize]| self.reference.gather(idx);
        let gen_seed = derive(derive(seed, streams::GENERATE), round as u64);
        let adv_cfg = self.config.strategy.adversarial_config();
        let (indices, inputs) = match self.config.strategy.name {
            StrategyName::Basic => {
                let idx = pick_random(k, used)?;
                let x = rows(&idx);
                (idx, x)
            }
            StrategyName::ActiveKCenter => {
                let idx = if used.is_empty() {
                    pick_random(k, used)?
                } else {
                    let free: Vec<usize> = (0..pool).filter(|i| !used.contains(i)).collect();
                    let centers: Vec<usize> = used.iter().copied().collect();
                    let e = model.embedding_len();
                    let picked = kcenter_greedy(&model.embed(&rows(&free)), &model.embed(&rows(&centers)), e, k)?;
                    picked.into_iter().map(|j| free[j]).collect()
                };
                let x = rows(&idx);
                (idx, x)
            }
            StrategyName::AdversarialPgd | StrategyName::AdversarialCw => {
                let idx = pick_random(k, used)?;
                let x = gen_adversarial(model, &rows(&idx), None, &adv_cfg, gen_seed)?;
                (idx, x)
            }
            StrategyName::Mixed(ratio) => {
                let (a, c) = if k == self.config.budget.batch_size {
                    ratio.split(k)?
                } else {
                    let a = k * ratio.adversarial / (ratio.adversarial + ratio.clean);
                    (a, k - a)
                };
                let idx = pick_random(a + c, used)?;
                let adv = gen_adversarial(model, &rows(&idx[..a]), None, &adv_cfg, gen_seed)?;
                let clean = rows(&idx[a..]);
                let order = mix_batch(a, c, derive(derive(seed, streams::MIX), round as u64));
                let mut x = Vec::with_capacity(k * d);
                let mut ordered = Vec::with_capacity(k);
                for item in order {
                    match item {
                        MixedItem::Adversarial(i) => {
                            x.extend_from_slice(&adv[i * d..(i + 1) * d]);
                            ordered.push(idx[i]);
                        }
                        MixedItem::Clean(i) => {
                            x.extend_from_slice(&clean[i * d..(i + 1) * d]);
                            ordered.push(idx[a + i]);
                        }
                    }
                }
                (ordered, x)
            }
        };
        used.extend(indices.iter().copied());
        consumed.extend(indices);
        Ok(inputs)
    }

    /// Runs one seed against `oracle` (or the remote victim when `None`).
    pub fn run_seed(&self, seed: u64, oracle: Option<Arc<Oracle>>) -> Result<SeedRun> {
        let cfg = &self.config;
        let api = match (&self.victim, oracle) {
            (_, Some(o)) => Api::Local(o),
            (Victim::Remote { attack, evaluation, classes }, None) => Api::Remote {
                attack,
                evaluation,
                classes: *classes,
                input_len: self.reference.dim(),
                tag: format!("{}-{seed}", &cfg.fingerprint()[..16]),
                counter: Mutex::new(0),
            },
            (Victim::Local(_), None) => return Err(MexError::ModelNotLoaded),
        };
        let d = self.reference.dim();
        let classes = api.classes()?;
        let mut spec = ModelSpec::new(&cfg.trainer.architecture, self.reference.shape, classes);
        spec.init = cfg.trainer.init.clone();
        let model = self.init_model(&spec, seed)?;
        let opt = cfg.trainer.optimizer.resolve(cfg.trainer.task)?;
        let settings = TrainSettings {
            batch_size: cfg.trainer.batch_size,
            augment: cfg.trainer.augment.clone(),
        };
        let mut trainer = Trainer::new(model, &opt, settings)?;

        let planned = self.planned_queries();
        let b = cfg.budget.batch_size;
        let mut pairs = Pairs::new(d, classes);
        let mut used = BTreeSet::new();
        let mut consumed = Vec::new();
        let mut billed: Vec<(f64, bool)> = Vec::new();
        let mut round = 0;
        while pairs.len() < planned {
            let k = b.min(planned - pairs.len());
            let mut step = || -> Result<()> {
                let inputs = self.generate(trainer.model(), k, seed, round, &mut used, &mut consumed)?;
                let (policy, records) = api.query(&inputs, &cfg.policy, Meter::Attack, round)?;
                for (rec, x) in records.iter().zip(inputs.chunks(d)) {
                    let target = policy.lift(&rec.response)?;
                    pairs.push(x, target.scores())?;
                    billed.push((rec.cost, rec.cost > 0.0));
                }
                let fit_seed = derive(derive(seed, streams::ROUND_FIT), round as u64);
                self.fit(&mut trainer, &pairs, &used, cfg.trainer.round_epochs, fit_seed, |_, _, _| {})?;
                Ok(())
            };
            step().map_err(|e| e.in_round(round))?;
            round += 1;
        }

        let victim_test = api.labels(&self.test.features, &cfg.evaluation.policy)?;
        let every = cfg.evaluation.trace_every;
        let mut trace = Vec::new();
        self.fit(
            &mut trainer,
            &pairs,
            &used,
            cfg.trainer.epochs,
            derive(seed, streams::FINAL_FIT),
            |epoch, loss, net| {
                let sampled = every > 0 && ((epoch + 1) % every == 0 || epoch + 1 == cfg.trainer.epochs);
                let fidelity = sampled
                    .then(|| metrics::fidelity(&net.predict(&self.test.features), &victim_test).ok())
                    .flatten();
                trace.push(TracePoint { epoch, loss, fidelity });
            },
        )?;
        let model = trainer.into_model();

        let ours = model.predict(&self.test.features);
        let fidelity = metrics::fidelity(&ours, &victim_test)?;
        let accuracy = match &self.test.labels {
            Some(labels) => Some(metrics::accuracy(&ours, labels)?),
            None => None,
        };
        let per_class = metrics::per_class_fidelity(&ours, &victim_test, classes)?;
        let n_adv = self.adversarial_count();
        let adversarial_fidelity = match &cfg.evaluation.adversarial {
            Some(adv) if n_adv > 0 => {
                let inputs = &self.test.features[..n_adv * d];
                let (score, _) = metrics::adversarial_fidelity(
                    &model,
                    inputs,
                    adv,
                    derive(seed, streams::EVAL_ADVERSARIAL),
                    |x: &[f64]| api.labels(x, &cfg.evaluation.policy),
                )?;
                Some(score)
            }
            _ => None,
        };
        let report = SeedReport {
            seed,
            queries: pairs.len(),
            spent: api.spent(&billed),
            cost: billed.iter().map(|(c, _)| c).sum(),
            rounds: round,
            metrics: MetricsReport {
                accuracy,
                fidelity,
                adversarial_fidelity,
                per_class,
                samples: self.test.len(),
                adversarial_samples: n_adv,
                config_fingerprint: cfg.fingerprint(),
            },
        };
        Ok(SeedRun {
            report,
            model,
            pairs,
            trace,
            consumed,
            oracle: match api {
                Api::Local(o) => Some(o),
                Api::Remote { .. } => None,
            },
        })
    }

    /// Runs every configured seed, then writes artifacts and updates the
    /// cache as requested.
    pub fn run(&self, opts: &RunOptions) -> Result<ExperimentResult> {
        let start = Instant::now();
        let remote = matches!(self.victim, Victim::Remote { .. });
        if remote && (opts.replay || opts.cache.is_some()) {
            return Err(MexError::Config("caching and replay need a local victim".into()));
        }
        let warm = Oracle::unloaded(OracleConfig::default());
        if let Some(path) = &opts.cache {
            if path.exists() {
                warm.load_cache(path)?;
            } else if opts.replay {
                return Err(MexError::Config(format!("replay cache {} does not exist", path.display())));
            }
        }
        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| MexError::io(dir, e))?;
        }
        let mut artifacts = Artifacts::default();
        let mut seeds = Vec::with_capacity(self.config.seeds.len());
        // Seeds see only the cache as loaded, so each bills its own queries.
        let merged = Oracle::unloaded(OracleConfig::default());
        merged.absorb_cache(&warm);
        for &seed in &self.config.seeds {
            let oracle = self.oracle(Some(&warm), opts.replay)?;
            let seed_dir = opts.out_dir.as_ref().map(|d| d.join(format!("seed-{seed}")));
            if let Some(dir) = &seed_dir {
                std::fs::create_dir_all(dir).map_err(|e| MexError::io(dir, e))?;
                if let Some(o) = &oracle {
                    let log = dir.join("queries.jsonl");
                    let _ = std::fs::remove_file(&log);
                    o.attach_log(&log)?;
                    artifacts.query_logs.push(log);
                }
            }
            let run = self.run_seed(seed, oracle)?;
            if let Some(o) = &run.oracle {
                merged.absorb_cache(o);
            }
            if let Some(dir) = &seed_dir {
                let ckpt = dir.join("piracy.json");
                let meta = CheckpointMeta {
                    role: "piracy".into(),
                    seed,
                    epochs: self.config.trainer.epochs,
                    optimizer: Some(self.config.trainer.optimizer.resolve(self.config.trainer.task)?),
                };
                Checkpoint::of(&run.model, meta).save(&ckpt)?;
                let trace = dir.join("trace.csv");
                data::write_trace(&trace, &run.trace)?;
                artifacts.checkpoints.push(ckpt);
                artifacts.traces.push(trace);
            }
            seeds.push(run.report);
        }
        if let (Some(path), false) = (&opts.cache, opts.replay) {
            save_cache_atomic(&merged, path)?;
            artifacts.cache = Some(path.clone());
        }
        let cfg = &self.config;
        let mut result = ExperimentResult {
            name: cfg.label(),
            strategy: cfg.strategy.name.to_string(),
            policy: cfg.policy.identifier(),
            budget: cfg.budget.batches.to_string(),
            budget_queries: self.planned_queries(),
            batch_size: cfg.budget.batch_size,
            config_fingerprint: cfg.fingerprint(),
            aggregate: Aggregate::from_seeds(&seeds)?,
            seeds,
            wall_clock_secs: 0.0,
            artifacts,
        };
        result.wall_clock_secs = start.elapsed().as_secs_f64();
        if let Some(dir) = &opts.out_dir {
            let path = dir.join("result.json");
            let text = emit_report(std::slice::from_ref(&result), ReportFormat::Json)?;
            std::fs::write(&path, text).map_err(|e| MexError::io(&path, e))?;
            result.artifacts.result = Some(path);
            write_manifest(dir, &result)?;
        }
        Ok(result)
    }

    /// The victim network when this harness built or loaded it.
    pub fn victim_network(&self) -> Option<&Network> {
        self.victim_net.as_ref()
    }
}

/// Trains or loads a local victim; `None` for remote victims.
pub fn build_victim(spec: &VictimSpec) -> Result<Option<Network>> {
    Ok(match spec {
        VictimSpec::Trained { architecture, data, epochs, seed, optimizer } => {
            let set = load_dataset(data)?;
            Some(train_victim(architecture, &set, *epochs, *seed, optimizer.as_ref())?)
        }
        VictimSpec::Checkpoint { path } => Some(Checkpoint::load(path)?.network()?),
        VictimSpec::Remote { .. } => None,
    })
}

static CACHE_WRITE: Mutex<()> = Mutex::new(());

/// Merges with whatever the file holds now, then replaces it by rename.
fn save_cache_atomic(cache: &Oracle, path: &Path) -> Result<()> {
    let _guard = CACHE_WRITE.lock().unwrap_or_else(|e| e.into_inner());
    if path.exists() {
        cache.load_cache(path)?;
    }
    let tmp = path.with_extension("tmp");
    cache.save_cache(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| MexError::io(path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    config_fingerprint: &'a str,
    wall_clock_secs: f64,
    artifacts: &'a Artifacts,
}

fn write_manifest(dir: &Path, r: &ExperimentResult) -> Result<()> {
    let m = Manifest {
        name: &r.name,
        config_fingerprint: &r.config_fingerprint,
        wall_clock_secs: r.wall_clock_secs,
        artifacts: &r.artifacts,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&m).map_err(|e| MexError::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| MexError::io(&path, e))
}

/// Runs several experiments on up to `jobs` threads, each with its own
/// oracle budget and models. Results keep the input order; each experiment
/// writes to `out_dir/<index>-<label>` when an output directory is given.
pub fn run_experiments(harnesses: &[Harness], opts: &RunOptions, jobs: usize) -> Vec<Result<ExperimentResult>> {
    let results: Mutex<Vec<Option<Result<ExperimentResult>>>> =
        Mutex::new((0..harnesses.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, harnesses.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap_or_else(|e| e.into_inner());
                    *n += 1;
                    *n - 1
                };
                let Some(h) = harnesses.get(i) else { break };
                let mut o = opts.clone();
                if let Some(dir) = &opts.out_dir {
                    let safe: String = h
                        .config
                        .label()
                        .chars()
                        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
                        .collect();
                    o.out_dir = Some(dir.join(format!("{i:02}-{safe}")));
                }
                let r = h.run(&o);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every experiment ran"))
        .collect()
}
