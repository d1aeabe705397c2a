//! Baseline-versus-adaptive evaluation on ground truth.
//!
//! Every comparison cell is a (temperature, scenario) pair. Within a cell
//! the greedy policy, the fixed baseline and the brute-force optimum replay
//! the same op streams, and all metrics come from the device model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceConfig, WriteCost, WriteParams};
use crate::env::{Environment, EpisodeSetup, EnvConfig, WriteEnv};
use crate::error::{Error, Result};
use crate::ppo::{mean_sd, PolicyNet};
use crate::rng::child_seed;
use crate::surrogate::{MlpSurrogate, Prediction};
use crate::sweep::{Replay, Totals};
use crate::trace::{Op, Scenario, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyKind {
    Adaptive,
    Baseline,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Adaptive, PolicyKind::Baseline, PolicyKind::Oracle];

    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Adaptive => "ADAPTIVE",
            PolicyKind::Baseline => "BASELINE",
            PolicyKind::Oracle => "ORACLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Defaults to the device temperature grid when empty.
    pub temperatures: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub episodes_per_cell: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperatures: Vec::new(),
            scenarios: Scenario::ALL.to_vec(),
            episodes_per_cell: 5,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, device: &DeviceConfig) -> Result<()> {
        if self.episodes_per_cell < 2 {
            return Err(Error::config("eval.episodes_per_cell", "at least two episodes are needed for a deviation"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("eval.scenarios", "must not be empty"));
        }
        for &t in &self.temperatures {
            if !device.temperature_grid.contains(&t) {
                return Err(Error::config("eval.temperatures", format!("{t} is not in the temperature grid")));
            }
        }
        Ok(())
    }

    pub fn temperatures(&self, device: &DeviceConfig) -> Vec<f64> {
        if self.temperatures.is_empty() {
            device.temperature_grid.clone()
        } else {
            self.temperatures.clone()
        }
    }
}

/// Ground-truth metrics of one replay.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub write_energy: f64,
    pub total_energy: f64,
    pub write_latency: f64,
    pub endurance: f64,
}

impl From<&Totals> for Metrics {
    fn from(t: &Totals) -> Self {
        Self {
            write_energy: t.write_energy,
            total_energy: t.total_energy,
            write_latency: t.write_latency,
            endurance: t.endurance,
        }
    }
}

impl Metrics {
    fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        let mut m = Metrics::default();
        for x in items {
            m.write_energy += x.write_energy / n;
            m.total_energy += x.total_energy / n;
            m.write_latency += x.write_latency / n;
            m.endurance += x.endurance / n;
        }
        m
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::WriteEnergy => self.write_energy,
            Metric::TotalEnergy => self.total_energy,
            Metric::WriteLatency => self.write_latency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    WriteEnergy,
    TotalEnergy,
    WriteLatency,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::WriteEnergy, Metric::TotalEnergy, Metric::WriteLatency];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::WriteEnergy => "write_energy",
            Metric::TotalEnergy => "total_energy",
            Metric::WriteLatency => "write_latency",
        }
    }
}

/// Replays `trace` with one fixed parameter setting.
pub fn replay_fixed(trace: &Trace, params: WriteParams, temperature: f64, device: &DeviceConfig, address_lines: u64) -> Result<Totals> {
    let cost = WriteCost::new(params, temperature, device)?;
    let mut replay = Replay::new(address_lines, device.line_bytes);
    for rec in &trace.records {
        match rec.op {
            Op::Read => replay.read(rec.address)?,
            Op::Write => {
                let data = rec.data.as_deref().ok_or(Error::LineLength {
                    expected: device.line_bytes,
                    actual: 0,
                })?;
                replay.write(rec.address, data, &cost)?;
            }
        }
    }
    Ok(replay.totals(temperature, device))
}

/// Outcome of a greedy episode.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyEpisode {
    pub totals: Totals,
    pub reward: f64,
    /// Most frequent action, ties to the lowest index.
    pub modal_action: WriteParams,
}

pub fn greedy_episode(policy: &PolicyNet, env: &mut WriteEnv, setup: EpisodeSetup) -> Result<GreedyEpisode> {
    let mut obs = env.reset_with(setup)?;
    let mut counts = [0u64; crate::device::N_ACTIONS];
    let mut reward = 0.0;
    loop {
        let action = policy.greedy_action(&obs)?;
        counts[WriteParams::from_array(action).index()] += 1;
        let s = env.step(action)?;
        reward += s.reward;
        if s.done {
            break;
        }
        obs = s.observation;
    }
    let modal = (0..counts.len()).fold(0, |best, i| if counts[i] > counts[best] { i } else { best });
    Ok(GreedyEpisode {
        totals: env.totals()?,
        reward,
        modal_action: WriteParams::from_index(modal),
    })
}

/// Constrained minimum over the 81 actions: lowest write energy among
/// actions whose latency is no worse and endurance no lower than baseline.
pub fn constrained_argmin(energy: &[f64], latency: &[f64], endurance: &[f64], baseline: WriteParams) -> WriteParams {
    let b = baseline.index();
    let mut best = b;
    for i in 0..energy.len() {
        let feasible = latency[i] <= latency[b] && endurance[i] >= endurance[b];
        if feasible && energy[i] < energy[best] {
            best = i;
        }
    }
    WriteParams::from_index(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub predicted_best: WriteParams,
    pub predicted_best_energy: f64,
    pub ground_truth_best: WriteParams,
    pub ground_truth_best_energy: f64,
}

/// Brute force over all actions, on the surrogate (for `predictions`) and on
/// the device model (replaying `trace`).
pub fn brute_force_oracle(
    predictions: &[Prediction],
    trace: &Trace,
    temperature: f64,
    baseline: WriteParams,
    device: &DeviceConfig,
    address_lines: u64,
) -> Result<OracleResult> {
    let pe: Vec<f64> = predictions.iter().map(|p| p.energy).collect();
    let pl: Vec<f64> = predictions.iter().map(|p| p.latency).collect();
    let pn: Vec<f64> = predictions.iter().map(|p| p.endurance).collect();
    let predicted_best = constrained_argmin(&pe, &pl, &pn, baseline);
    let gt = WriteParams::all()
        .map(|p| replay_fixed(trace, p, temperature, device, address_lines))
        .collect::<Result<Vec<_>>>()?;
    let ge: Vec<f64> = gt.iter().map(|t| t.write_energy).collect();
    let gl: Vec<f64> = gt.iter().map(|t| t.write_latency).collect();
    let gn: Vec<f64> = gt.iter().map(|t| t.endurance).collect();
    let ground_truth_best = constrained_argmin(&ge, &gl, &gn, baseline);
    Ok(OracleResult {
        predicted_best,
        predicted_best_energy: pe[predicted_best.index()],
        ground_truth_best,
        ground_truth_best_energy: ge[ground_truth_best.index()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub temperature: f64,
    pub scenario: Scenario,
    pub policy: PolicyKind,
    pub write_energy: f64,
    pub total_energy: f64,
    pub write_latency: f64,
    pub endurance: f64,
}

/// Per-cell audit against the brute-force optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub temperature: f64,
    pub scenario: Scenario,
    pub greedy_action: WriteParams,
    pub greedy_predicted_energy: f64,
    pub oracle_action: WriteParams,
    pub oracle_predicted_energy: f64,
    pub ground_truth_oracle_action: WriteParams,
    /// Mean ground-truth write energy of the greedy episodes.
    pub agent_write_energy: f64,
    /// Mean ground-truth write energy of the best fixed action's episodes.
    pub oracle_write_energy: f64,
}

impl OracleCheck {
    pub fn predicted_gap(&self) -> f64 {
        self.greedy_predicted_energy / self.oracle_predicted_energy
    }

    pub fn ground_truth_gap(&self) -> f64 {
        self.agent_write_energy / self.oracle_write_energy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub temperature: f64,
    pub metric: Metric,
    /// Percent, adaptive policy against baseline, summed over scenarios.
    pub agent: f64,
    /// Percent, best fixed action against baseline.
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub scenario: Scenario,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub rows: Vec<ComparisonRow>,
    pub reductions: Vec<Reduction>,
    pub reward_stats: Vec<RewardStats>,
    pub oracle_checks: Vec<OracleCheck>,
}

/// `(baseline - other) / baseline * 100`; zero when the baseline is zero.
pub fn reduction_percent(baseline: f64, other: f64) -> f64 {
    if baseline > 0.0 {
        (baseline - other) / baseline * 100.0
    } else {
        0.0
    }
}

struct CellResult {
    temperature: f64,
    scenario: Scenario,
    means: BTreeMap<PolicyKind, Metrics>,
    rewards: Vec<f64>,
    check: OracleCheck,
}

fn run_cell(
    policy: &PolicyNet,
    surrogate: &Arc<MlpSurrogate>,
    device: &DeviceConfig,
    env_cfg: &EnvConfig,
    temperature: f64,
    scenario: Scenario,
    seeds: &[u64],
) -> Result<CellResult> {
    let cfg = EnvConfig {
        temperature: Some(temperature),
        scenario: Some(scenario),
        ..env_cfg.clone()
    };
    let mut env = WriteEnv::new(device.clone(), cfg, Arc::clone(surrogate))?;
    let baseline = env_cfg.baseline_params;
    let mut per: BTreeMap<PolicyKind, Vec<Metrics>> = BTreeMap::new();
    let mut rewards = Vec::with_capacity(seeds.len());
    let mut modal = vec![0usize; crate::device::N_ACTIONS];
    let mut oracle = None;
    for &seed in seeds {
        let setup = env.episode_setup(seed);
        let trace = env.episode_trace(seed)?;
        let greedy = greedy_episode(policy, &mut env, setup)?;
        modal[greedy.modal_action.index()] += 1;
        rewards.push(greedy.reward);
        per.entry(PolicyKind::Adaptive).or_default().push(Metrics::from(&greedy.totals));
        let base = replay_fixed(&trace, baseline, temperature, device, env_cfg.address_lines)?;
        per.entry(PolicyKind::Baseline).or_default().push(Metrics::from(&base));
        // the optimum is fixed per cell; it is found on the first episode's stream
        if oracle.is_none() {
            let preds: Vec<Prediction> = WriteParams::all().map(|p| env.predict(p)).collect::<Result<_>>()?;
            oracle = Some((brute_force_oracle(&preds, &trace, temperature, baseline, device, env_cfg.address_lines)?, preds));
        }
        let (o, _) = oracle.as_ref().expect("set above");
        let best = replay_fixed(&trace, o.ground_truth_best, temperature, device, env_cfg.address_lines)?;
        per.entry(PolicyKind::Oracle).or_default().push(Metrics::from(&best));
    }
    let (o, preds) = oracle.ok_or_else(|| Error::InvalidArgument("no evaluation episodes".into()))?;
    let modal_idx = (0..modal.len()).fold(0, |best, i| if modal[i] > modal[best] { i } else { best });
    let greedy_action = WriteParams::from_index(modal_idx);
    let means: BTreeMap<PolicyKind, Metrics> = per.iter().map(|(k, v)| (*k, Metrics::mean(v))).collect();
    let check = OracleCheck {
        temperature,
        scenario,
        greedy_action,
        greedy_predicted_energy: preds[greedy_action.index()].energy,
        oracle_action: o.predicted_best,
        oracle_predicted_energy: o.predicted_best_energy,
        ground_truth_oracle_action: o.ground_truth_best,
        agent_write_energy: means[&PolicyKind::Adaptive].write_energy,
        oracle_write_energy: means[&PolicyKind::Oracle].write_energy,
    };
    Ok(CellResult {
        temperature,
        scenario,
        means,
        rewards,
        check,
    })
}

/// Paired-seed comparison over every (temperature, scenario) cell.
pub fn compare(
    policy: &PolicyNet,
    surrogate: Arc<MlpSurrogate>,
    device: &DeviceConfig,
    env_cfg: &EnvConfig,
    eval: &EvalConfig,
) -> Result<EvalReport> {
    eval.validate(device)?;
    let temps = eval.temperatures(device);
    let mut cells = Vec::new();
    for (ti, &t) in temps.iter().enumerate() {
        for (si, &s) in eval.scenarios.iter().enumerate() {
            let cell_seed = child_seed(eval.seed, (ti * eval.scenarios.len() + si) as u64);
            let seeds: Vec<u64> = (0..eval.episodes_per_cell as u64).map(|e| child_seed(cell_seed, e)).collect();
            cells.push((t, s, seeds));
        }
    }
    let results = cells
        .par_iter()
        .map(|(t, s, seeds)| run_cell(policy, &surrogate, device, env_cfg, *t, *s, seeds))
        .collect::<Result<Vec<_>>>()?;

    let mut report = EvalReport::default();
    for c in &results {
        for (&kind, m) in &c.means {
            report.rows.push(ComparisonRow {
                temperature: c.temperature,
                scenario: c.scenario,
                policy: kind,
                write_energy: m.write_energy,
                total_energy: m.total_energy,
                write_latency: m.write_latency,
                endurance: m.endurance,
            });
        }
        report.oracle_checks.push(c.check.clone());
    }
    for &t in &temps {
        for metric in Metric::ALL {
            let sum = |kind: PolicyKind| -> f64 {
                results
                    .iter()
                    .filter(|c| c.temperature == t)
                    .map(|c| c.means[&kind].get(metric))
                    .sum()
            };
            let base = sum(PolicyKind::Baseline);
            report.reductions.push(Reduction {
                temperature: t,
                metric,
                agent: reduction_percent(base, sum(PolicyKind::Adaptive)),
                oracle: reduction_percent(base, sum(PolicyKind::Oracle)),
            });
        }
    }
    for &s in &eval.scenarios {
        let rewards: Vec<f64> = results
            .iter()
            .filter(|c| c.scenario == s)
            .flat_map(|c| c.rewards.iter().copied())
            .collect();
        let (mean, sd) = mean_sd(&rewards)?;
        report.reward_stats.push(RewardStats {
            scenario: s,
            mean,
            sd,
            n: rewards.len(),
        });
    }
    Ok(report)
}

impl EvalReport {
    pub fn reduction(&self, temperature: f64, metric: Metric) -> Option<&Reduction> {
        self.reductions
            .iter()
            .find(|r| r.temperature == temperature && r.metric == metric)
    }

    pub fn reward_stats_for(&self, scenario: Scenario) -> Option<&RewardStats> {
        self.reward_stats.iter().find(|r| r.scenario == scenario)
    }

    fn scenarios(&self) -> Vec<Scenario> {
        let mut s: Vec<Scenario> = self.rows.iter().map(|r| r.scenario).collect();
        s.sort();
        s.dedup();
        s
    }

    fn temperatures(&self) -> Vec<f64> {
        let mut t: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !t.contains(&r.temperature) {
                t.push(r.temperature);
            }
        }
        t
    }

    /// One row per temperature × policy, one column per scenario.
    pub fn write_metric_csv<W: Write>(&self, metric: Metric, sink: W) -> Result<()> {
        let scenarios = self.scenarios();
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["temperature".to_string(), "policy".to_string()];
        header.extend(scenarios.iter().map(|s| s.label().to_string()));
        w.write_record(&header)?;
        for t in self.temperatures() {
            for kind in PolicyKind::ALL {
                let cells: Vec<Option<f64>> = scenarios
                    .iter()
                    .map(|s| {
                        self.rows
                            .iter()
                            .find(|r| r.temperature == t && r.scenario == *s && r.policy == kind)
                            .map(|r| Metrics {
                                write_energy: r.write_energy,
                                total_energy: r.total_energy,
                                write_latency: r.write_latency,
                                endurance: r.endurance,
                            }
                            .get(metric))
                    })
                    .collect();
                if cells.iter().all(Option::is_none) {
                    continue;
                }
                let mut rec = vec![t.to_string(), kind.label().to_string()];
                rec.extend(cells.iter().map(|c| c.map_or_else(String::new, |v| v.to_string())));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<metric csv>", e))?;
        Ok(())
    }

    pub fn write_reward_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["scenario", "mean", "sd", "n"])?;
        for r in &self.reward_stats {
            w.write_record([r.scenario.label().to_string(), r.mean.to_string(), r.sd.to_string(), r.n.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<reward csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `report.json` and the four CSV tables into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        for metric in Metric::ALL {
            let path = dir.join(format!("{}.csv", metric.name()));
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.write_metric_csv(metric, f)?;
        }
        let path = dir.join("reward_stats.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_reward_csv(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, s: Scenario, p: PolicyKind, e: f64) -> ComparisonRow {
        ComparisonRow {
            temperature: t,
            scenario: s,
            policy: p,
            write_energy: e,
            total_energy: e + 10.0,
            write_latency: 5.0,
            endurance: 0.99,
        }
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(reduction_percent(100.0, 37.0), 63.0);
        assert_eq!(reduction_percent(100.0, 100.0), 0.0);
        assert_eq!(reduction_percent(0.0, 5.0), 0.0);
        let k = 7.5;
        assert!((reduction_percent(100.0 * k, 37.0 * k) - 63.0).abs() < 1e-12);
    }

    #[test]
    fn constrained_argmin_respects_latency() {
        let energy = vec![5.0, 1.0, 3.0];
        let latency = vec![2.0, 9.0, 2.0];
        let endurance = vec![1.0; 3];
        assert_eq!(constrained_argmin(&energy, &latency, &endurance, WriteParams::from_index(0)).index(), 2);
        let latency = vec![2.0, 9.0, 3.0];
        assert_eq!(constrained_argmin(&energy, &latency, &endurance, WriteParams::from_index(0)).index(), 0);
    }

    #[test]
    fn metric_csv_layout() {
        let mut rep = EvalReport::default();
        for t in [25.0, 75.0] {
            for s in Scenario::ALL {
                for p in PolicyKind::ALL {
                    rep.rows.push(row(t, s, p, 100.0));
                }
            }
        }
        let mut buf = Vec::new();
        rep.write_metric_csv(Metric::WriteEnergy, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "temperature,policy,R>W,R=W,R<W");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[1], "25,ADAPTIVE,100,100,100");
    }

    #[test]
    fn empty_report_has_headers_only() {
        let rep = EvalReport::default();
        let mut buf = Vec::new();
        rep.write_metric_csv(Metric::TotalEnergy, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "temperature,policy\n");
        let mut buf = Vec::new();
        rep.write_reward_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "scenario,mean,sd,n\n");
    }

    #[test]
    fn json_roundtrip() {
        let rep = EvalReport {
            rows: vec![row(50.0, Scenario::Balanced, PolicyKind::Oracle, 1.0 / 3.0)],
            reductions: vec![Reduction {
                temperature: 50.0,
                metric: Metric::WriteEnergy,
                agent: 12.5,
                oracle: 13.0,
            }],
            reward_stats: vec![RewardStats {
                scenario: Scenario::Balanced,
                mean: 15.0,
                sd: 7.0710678118654755,
                n: 2,
            }],
            oracle_checks: Vec::new(),
        };
        assert_eq!(EvalReport::from_json(&rep.to_json().unwrap()).unwrap(), rep);
    }
}
