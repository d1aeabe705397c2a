//! Step-wise write-parameter environment.
//!
//! Every step replays one memory operation under the parameters chosen by
//! the action. On writes the device model records ground truth, the
//! surrogate scores the action over the whole episode horizon, and the
//! reward compares that score against the previous write's score and the
//! fixed baseline's.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceConfig, WriteCost, WriteOutcome, WriteParams, N_ACTIONS};
use crate::error::{Error, Result};
use crate::rng::{child_seed, seeded};
use crate::surrogate::{MlpSurrogate, Prediction};
use crate::sweep::{RawFeatures, Replay, Totals};
use crate::trace::{generate_trace, Op, Ratio, Scenario, ScenarioPools, Trace, TraceSpec};

pub const OBS_WIDTH: usize = 15;
pub const ACTION_DIMS: usize = 4;
pub const ACTION_CHOICES: usize = 3;

pub const MINOR_REWARD: f64 = 0.25;
pub const MAJOR_REWARD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_len: u64,
    /// Drawn uniformly per episode when unset.
    pub scenario: Option<Scenario>,
    /// Drawn uniformly from the temperature grid per episode when unset.
    pub temperature: Option<f64>,
    pub baseline_params: WriteParams,
    pub address_lines: u64,
    pub pools: ScenarioPools,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_len: 100_000,
            scenario: None,
            temperature: None,
            baseline_params: WriteParams::mid(),
            address_lines: 4096,
            pools: ScenarioPools::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, device: &DeviceConfig) -> Result<()> {
        if self.episode_len == 0 {
            return Err(Error::config("env.episode_len", "must be positive"));
        }
        if self.address_lines == 0 {
            return Err(Error::config("env.address_lines", "must be at least 1"));
        }
        if let Some(t) = self.temperature {
            if !device.temperature_grid.contains(&t) {
                return Err(Error::NotInGrid {
                    value: t,
                    grid: device.temperature_grid.clone(),
                });
            }
        }
        self.baseline_params.validate(device)?;
        self.pools.validate()
    }
}

/// Anything PPO can train against.
pub trait Environment {
    fn observation_width(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: [usize; ACTION_DIMS]) -> Result<Step>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub op: Option<Op>,
    /// Surrogate score of the action; set on writes.
    pub predicted: Option<Prediction>,
    /// Device-model outcome; set on writes.
    pub outcome: Option<WriteOutcome>,
}

/// Minor plus major reward.
///
/// The minor term compares against the previous prediction: +0.25 when
/// energy drops with latency and endurance no worse, −0.25 when energy
/// rises with latency and endurance no better. The major term pays +10
/// when the action strictly beats the baseline on energy and latency with
/// endurance no worse.
pub fn reward(prev: &Prediction, cur: &Prediction, baseline: &Prediction) -> Result<f64> {
    if !(prev.is_finite() && cur.is_finite() && baseline.is_finite()) {
        return Err(Error::NonFinite("reward prediction"));
    }
    let minor = if cur.energy < prev.energy && cur.latency <= prev.latency && cur.endurance >= prev.endurance {
        MINOR_REWARD
    } else if cur.energy > prev.energy && cur.latency >= prev.latency && cur.endurance <= prev.endurance {
        -MINOR_REWARD
    } else {
        0.0
    };
    let major = if cur.energy < baseline.energy && cur.latency < baseline.latency && cur.endurance >= baseline.endurance {
        MAJOR_REWARD
    } else {
        0.0
    };
    Ok(minor + major)
}

/// Per-episode draw: what the op stream looks like and where it runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSetup {
    pub scenario: Scenario,
    pub ratio: Ratio,
    pub temperature: f64,
    pub trace_seed: u64,
}

pub struct WriteEnv {
    device: DeviceConfig,
    cfg: EnvConfig,
    surrogate: Arc<MlpSurrogate>,
    setup: Option<EpisodeSetup>,
    trace: Trace,
    replay: Replay,
    costs: Vec<WriteCost>,
    predictions: Vec<Prediction>,
    baseline_pred: Prediction,
    prev_pred: Prediction,
    params: WriteParams,
    t: u64,
    reads: u64,
    writes: u64,
}

impl WriteEnv {
    pub fn new(device: DeviceConfig, cfg: EnvConfig, surrogate: Arc<MlpSurrogate>) -> Result<Self> {
        device.validate()?;
        device.validate_action_space()?;
        cfg.validate(&device)?;
        let replay = Replay::new(cfg.address_lines, device.line_bytes);
        let line_bytes = device.line_bytes;
        let nan = Prediction {
            energy: f64::NAN,
            latency: f64::NAN,
            endurance: f64::NAN,
        };
        Ok(Self {
            device,
            params: cfg.baseline_params,
            cfg,
            surrogate,
            setup: None,
            trace: Trace {
                line_bytes,
                records: Vec::new(),
            },
            replay,
            costs: Vec::new(),
            predictions: Vec::new(),
            baseline_pred: nan,
            prev_pred: nan,
            t: 0,
            reads: 0,
            writes: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn device(&self) -> &DeviceConfig {
        &self.device
    }

    /// Scenario, ratio, temperature and trace seed implied by an episode seed.
    pub fn episode_setup(&self, seed: u64) -> EpisodeSetup {
        let mut rng = seeded(seed);
        let scenario = self
            .cfg
            .scenario
            .unwrap_or_else(|| Scenario::ALL[rng.gen_range(0..Scenario::ALL.len())]);
        let grid = &self.device.temperature_grid;
        let temperature = self.cfg.temperature.unwrap_or_else(|| grid[rng.gen_range(0..grid.len())]);
        let pool = self.cfg.pools.pool(scenario);
        let ratio = pool[rng.gen_range(0..pool.len())];
        EpisodeSetup {
            scenario,
            ratio,
            temperature,
            trace_seed: child_seed(seed, 1),
        }
    }

    /// The op stream an episode with this seed replays. It depends only on
    /// the seed, never on actions.
    pub fn episode_trace(&self, seed: u64) -> Result<Trace> {
        let setup = self.episode_setup(seed);
        self.trace_for(&setup)
    }

    fn trace_for(&self, setup: &EpisodeSetup) -> Result<Trace> {
        generate_trace(&TraceSpec {
            n_ops: self.cfg.episode_len,
            ratio: setup.ratio,
            address_lines: self.cfg.address_lines,
            seed: setup.trace_seed,
            line_bytes: self.device.line_bytes,
        })
    }

    pub fn setup(&self) -> Option<&EpisodeSetup> {
        self.setup.as_ref()
    }

    /// Full-episode (reads, writes) implied by the scenario ratio.
    pub fn project_counts(&self) -> Result<(u64, u64)> {
        let setup = self.setup.as_ref().ok_or(Error::EpisodeDone)?;
        Ok(setup.ratio.split(self.cfg.episode_len))
    }

    /// Surrogate prediction for `params` over this episode's horizon.
    pub fn predict(&self, params: WriteParams) -> Result<Prediction> {
        self.predictions
            .get(params.index())
            .copied()
            .ok_or(Error::EpisodeDone)
    }

    pub fn baseline_prediction(&self) -> Prediction {
        self.baseline_pred
    }

    pub fn params(&self) -> WriteParams {
        self.params
    }

    pub fn is_done(&self) -> bool {
        self.setup.is_none() || self.t >= self.cfg.episode_len
    }

    /// Device-model totals for the steps taken so far.
    pub fn totals(&self) -> Result<Totals> {
        let setup = self.setup.as_ref().ok_or(Error::EpisodeDone)?;
        Ok(self.replay.totals(setup.temperature, &self.device))
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(OBS_WIDTH);
        for idx in self.params.as_array() {
            let mut triple = [0.0; ACTION_CHOICES];
            triple[idx] = 1.0;
            obs.extend_from_slice(&triple);
        }
        let (lo, hi) = self.device.temperature_range();
        let t = self.setup.map_or(lo, |s| s.temperature);
        obs.push(if hi > lo { (t - lo) / (hi - lo) } else { 0.0 });
        let n = self.cfg.episode_len as f64;
        obs.push(self.reads as f64 / n);
        obs.push(self.writes as f64 / n);
        obs
    }

    /// Starts an episode with an explicit setup (evaluation cells use this to
    /// pin scenario and temperature).
    pub fn reset_with(&mut self, setup: EpisodeSetup) -> Result<Vec<f64>> {
        self.device.check_temperature(setup.temperature)?;
        if !self.device.temperature_grid.contains(&setup.temperature) {
            return Err(Error::NotInGrid {
                value: setup.temperature,
                grid: self.device.temperature_grid.clone(),
            });
        }
        let (n_reads, n_writes) = setup.ratio.split(self.cfg.episode_len);
        self.predictions = WriteParams::all()
            .map(|p| {
                let raw = RawFeatures::from_params(p, setup.temperature, n_reads, n_writes, &self.device);
                let pred = self.surrogate.predict(&raw)?;
                if !pred.is_finite() {
                    return Err(Error::NonFinite("surrogate prediction"));
                }
                Ok(pred)
            })
            .collect::<Result<Vec<_>>>()?;
        self.costs = WriteParams::all()
            .map(|p| WriteCost::new(p, setup.temperature, &self.device))
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(self.predictions.len(), N_ACTIONS);
        self.trace = self.trace_for(&setup)?;
        self.replay = Replay::new(self.cfg.address_lines, self.device.line_bytes);
        self.params = self.cfg.baseline_params;
        self.baseline_pred = self.predictions[self.params.index()];
        self.prev_pred = self.baseline_pred;
        self.t = 0;
        self.reads = 0;
        self.writes = 0;
        self.setup = Some(setup);
        Ok(self.observation())
    }
}

impl Environment for WriteEnv {
    fn observation_width(&self) -> usize {
        OBS_WIDTH
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let setup = self.episode_setup(seed);
        self.reset_with(setup)
    }

    fn step(&mut self, action: [usize; ACTION_DIMS]) -> Result<Step> {
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        let params = WriteParams::from_array(action);
        params.validate(&self.device)?;
        self.params = params;
        let rec = &self.trace.records[self.t as usize];
        let mut info = StepInfo {
            op: Some(rec.op),
            ..StepInfo::default()
        };
        let mut r = 0.0;
        match rec.op {
            Op::Read => {
                self.replay.read(rec.address)?;
                self.reads += 1;
            }
            Op::Write => {
                let data = rec.data.as_deref().ok_or(Error::LineLength {
                    expected: self.device.line_bytes,
                    actual: 0,
                })?;
                let outcome = self.replay.write(rec.address, data, &self.costs[params.index()])?;
                let cur = self.predictions[params.index()];
                r = reward(&self.prev_pred, &cur, &self.baseline_pred)?;
                self.prev_pred = cur;
                self.writes += 1;
                info.predicted = Some(cur);
                info.outcome = Some(outcome);
            }
        }
        self.t += 1;
        Ok(Step {
            observation: self.observation(),
            reward: r,
            done: self.t >= self.cfg.episode_len,
            info,
        })
    }
}
