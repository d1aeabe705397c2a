//! Stage drivers. Each stage reads its inputs from and writes its outputs
//! under `out_dir`, so stages can be rerun individually.
//!
//! ```text
//! out_dir/
//!   config.json            resolved configuration
//!   traces/index.csv       trace id, scenario, ratio, seed
//!   traces/trace_NNN.txt   one file per corpus trace
//!   dataset.csv            sweep output
//!   surrogate.json         trained heads, encoder and target scalers
//!   surrogate_train.csv    per-epoch losses
//!   surrogate_mape.csv     held-out error per target
//!   policy.json            PPO checkpoint
//!   reward_curve.csv       step, mean_episode_reward
//!   report/                evaluation tables
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::MasterConfig;
use crate::env::WriteEnv;
use crate::error::{Error, Result};
use crate::ppo::{self, write_reward_curve, PolicyCheckpoint, TrainOutcome};
use crate::report::{compare, EvalReport};
use crate::surrogate::{self, evaluate_mape, MlpSurrogate, TrainReport};
use crate::sweep::{build_grid, encode, read_dataset_csv, run_sweep, split, write_dataset_csv, DatasetRow, FeatureEncoder, TARGET_NAMES};
use crate::trace::{generate_corpus, parse_trace, write_trace, CorpusEntry, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenTraces,
    Sweep,
    TrainSurrogate,
    EvalSurrogate,
    TrainAgent,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GenTraces,
        Stage::Sweep,
        Stage::TrainSurrogate,
        Stage::EvalSurrogate,
        Stage::TrainAgent,
        Stage::Evaluate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenTraces => "gen-traces",
            Stage::Sweep => "sweep",
            Stage::TrainSurrogate => "train-surrogate",
            Stage::EvalSurrogate => "eval-surrogate",
            Stage::TrainAgent => "train-agent",
            Stage::Evaluate => "evaluate",
        }
    }
}

pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const TRACES: &str = "traces";
    pub const TRACE_INDEX: &str = "traces/index.csv";
    pub const DATASET: &str = "dataset.csv";
    pub const SURROGATE: &str = "surrogate.json";
    pub const SURROGATE_TRAIN: &str = "surrogate_train.csv";
    pub const SURROGATE_MAPE: &str = "surrogate_mape.csv";
    pub const POLICY: &str = "policy.json";
    pub const REWARD_CURVE: &str = "reward_curve.csv";
    pub const REPORT: &str = "report";
}

pub fn trace_path(out_dir: &Path, id: usize) -> PathBuf {
    out_dir.join(files::TRACES).join(format!("trace_{id:03}.txt"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs stages against one resolved configuration.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: MasterConfig,
    /// Worker threads for parallel stages; outputs do not depend on it.
    pub jobs: usize,
}

impl Pipeline {
    pub fn new(cfg: MasterConfig, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, jobs: jobs.max(1) })
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.cfg.out_dir.join(file)
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(f)
    }

    fn write_config(&self) -> Result<()> {
        write_text(&self.out(files::CONFIG), &self.cfg.to_json()?)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::GenTraces => self.gen_traces().map(drop),
            Stage::Sweep => self.sweep().map(drop),
            Stage::TrainSurrogate => self.train_surrogate().map(drop),
            Stage::EvalSurrogate => self.eval_surrogate().map(drop),
            Stage::TrainAgent => self.train_agent().map(drop),
            Stage::Evaluate => self.evaluate().map(drop),
        }
    }

    pub fn run_all(&self) -> Result<()> {
        Stage::ALL.iter().try_for_each(|&s| self.run(s))
    }

    pub fn gen_traces(&self) -> Result<Vec<CorpusEntry>> {
        self.write_config()?;
        let corpus = self.in_pool(|| generate_corpus(&self.cfg.corpus, self.cfg.device.line_bytes))?;
        let index_path = self.out(files::TRACE_INDEX);
        let mut index = csv::Writer::from_writer(create(&index_path)?);
        index.write_record(["trace_id", "scenario", "reads", "writes", "seed"])?;
        for (id, entry) in corpus.iter().enumerate() {
            let path = trace_path(&self.cfg.out_dir, id);
            let mut sink = create(&path)?;
            write_trace(&entry.trace, &mut sink).map_err(|e| Error::io(&path, e))?;
            index.write_record([
                id.to_string(),
                entry.scenario.label().to_string(),
                entry.spec.ratio.reads.to_string(),
                entry.spec.ratio.writes.to_string(),
                entry.spec.seed.to_string(),
            ])?;
        }
        index.flush().map_err(|e| Error::io(&index_path, e))?;
        Ok(corpus)
    }

    pub fn load_traces(&self) -> Result<Vec<Trace>> {
        let n = 3 * self.cfg.corpus.traces_per_scenario;
        (0..n)
            .map(|id| parse_trace(open(&trace_path(&self.cfg.out_dir, id))?, self.cfg.device.line_bytes))
            .collect()
    }

    pub fn sweep(&self) -> Result<Vec<DatasetRow>> {
        self.write_config()?;
        let traces = self.load_traces()?;
        let refs: Vec<&Trace> = traces.iter().collect();
        let grid = build_grid(&self.cfg.device, refs.len());
        let rows = run_sweep(&grid, &refs, &self.cfg.device, &self.cfg.sweep, self.jobs)?;
        let path = self.out(files::DATASET);
        write_dataset_csv(&rows, create(&path)?)?;
        Ok(rows)
    }

    pub fn load_dataset(&self) -> Result<Vec<DatasetRow>> {
        read_dataset_csv(open(&self.out(files::DATASET))?)
    }

    pub fn train_surrogate(&self) -> Result<(MlpSurrogate, TrainReport)> {
        self.write_config()?;
        let rows = self.load_dataset()?;
        let d = &self.cfg.dataset;
        let sp = split(rows.len(), d.fractions(), d.split_seed)?;
        let data = encode(&rows, &FeatureEncoder::new(&self.cfg.device), sp, d.transforms)?;
        let mut model = MlpSurrogate::init(data.encoder.clone(), data.scalers, self.cfg.surrogate.seed)?;
        let report = self.in_pool(|| surrogate::train(&mut model, &data, &self.cfg.surrogate))?;
        write_text(&self.out(files::SURROGATE), &model.to_json()?)?;
        report.write_csv(create(&self.out(files::SURROGATE_TRAIN))?)?;
        Ok((model, report))
    }

    pub fn load_surrogate(&self) -> Result<MlpSurrogate> {
        MlpSurrogate::from_json(&read_text(&self.out(files::SURROGATE))?)
    }

    /// Held-out MAPE (percent) for energy, latency, endurance.
    pub fn eval_surrogate(&self) -> Result<[f64; 3]> {
        self.write_config()?;
        let model = self.load_surrogate()?;
        let rows = self.load_dataset()?;
        let d = &self.cfg.dataset;
        let sp = split(rows.len(), d.fractions(), d.split_seed)?;
        let m = evaluate_mape(&model, &rows, &sp.test)?;
        let path = self.out(files::SURROGATE_MAPE);
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["target", "mape_percent", "n"])?;
        for (name, v) in TARGET_NAMES.iter().zip(m) {
            w.write_record([name.to_string(), v.to_string(), sp.test.len().to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }

    fn env(&self, surrogate: Arc<MlpSurrogate>) -> Result<WriteEnv> {
        WriteEnv::new(self.cfg.device.clone(), self.cfg.env.clone(), surrogate)
    }

    pub fn train_agent(&self) -> Result<TrainOutcome> {
        self.write_config()?;
        let model = Arc::new(self.load_surrogate()?);
        let mut env = self.env(model)?;
        let outcome = ppo::train(&mut env, &self.cfg.ppo)?;
        let ckpt = PolicyCheckpoint {
            policy: outcome.policy.clone(),
            config: self.cfg.ppo.clone(),
            seed: self.cfg.ppo.seed,
        };
        write_text(&self.out(files::POLICY), &ckpt.to_json()?)?;
        write_reward_curve(&outcome.curve, create(&self.out(files::REWARD_CURVE))?)?;
        Ok(outcome)
    }

    pub fn load_policy(&self) -> Result<PolicyCheckpoint> {
        PolicyCheckpoint::from_json(&read_text(&self.out(files::POLICY))?)
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        self.write_config()?;
        let model = Arc::new(self.load_surrogate()?);
        let ckpt = self.load_policy()?;
        let report = self.in_pool(|| compare(&ckpt.policy, model, &self.cfg.device, &self.cfg.env, &self.cfg.eval))?;
        report.emit(&self.out(files::REPORT))?;
        Ok(report)
    }
}
