//! Parameter sweep: cartesian grid × trace corpus → dataset → encoded features.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{endurance_metric, DeviceConfig, WriteCost, WriteOutcome, WriteParams};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::trace::{Op, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: WriteParams,
    pub temperature_idx: usize,
    pub trace_id: usize,
}

impl GridPoint {
    pub fn temperature(&self, cfg: &DeviceConfig) -> f64 {
        cfg.temperature_grid[self.temperature_idx]
    }
}

/// Full cartesian product in lexicographic order of
/// (set V, set pulse, reset V, reset pulse, temperature, trace).
pub fn build_grid(cfg: &DeviceConfig, n_traces: usize) -> Vec<GridPoint> {
    let mut out = Vec::with_capacity(
        cfg.set_voltage_grid.len()
            * cfg.set_pulse_grid.len()
            * cfg.reset_voltage_grid.len()
            * cfg.reset_pulse_grid.len()
            * cfg.temperature_grid.len()
            * n_traces,
    );
    for sv in 0..cfg.set_voltage_grid.len() {
        for st in 0..cfg.set_pulse_grid.len() {
            for rv in 0..cfg.reset_voltage_grid.len() {
                for rt in 0..cfg.reset_pulse_grid.len() {
                    for ti in 0..cfg.temperature_grid.len() {
                        for trace_id in 0..n_traces {
                            out.push(GridPoint {
                                params: WriteParams::new(sv, st, rv, rt),
                                temperature_idx: ti,
                                trace_id,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Longest trace a single simulation accepts.
    pub op_cap: usize,
    pub address_lines: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            op_cap: 100_000,
            address_lines: 4096,
        }
    }
}

/// Aggregated replay metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub n_reads: u64,
    pub n_writes: u64,
    pub write_energy: f64,
    pub write_latency: f64,
    pub total_energy: f64,
    pub total_latency: f64,
    pub endurance: f64,
    pub bit_programs: u64,
    pub distinct_lines: u64,
}

/// Memory line store plus running accounting. Lines start all-zero.
#[derive(Debug, Clone)]
pub struct Replay {
    store: Vec<u8>,
    written: Vec<bool>,
    line_bytes: usize,
    lines: u64,
    distinct: u64,
    n_reads: u64,
    n_writes: u64,
    write_energy: f64,
    write_latency: f64,
    bit_programs: u64,
}

impl Replay {
    pub fn new(address_lines: u64, line_bytes: usize) -> Self {
        Self {
            store: vec![0; address_lines as usize * line_bytes],
            written: vec![false; address_lines as usize],
            line_bytes,
            lines: address_lines,
            distinct: 0,
            n_reads: 0,
            n_writes: 0,
            write_energy: 0.0,
            write_latency: 0.0,
            bit_programs: 0,
        }
    }

    fn line_index(&self, address: u64) -> Result<usize> {
        let idx = address / self.line_bytes as u64;
        if idx >= self.lines || address % self.line_bytes as u64 != 0 {
            return Err(Error::AddressOutOfRange {
                address,
                lines: self.lines,
            });
        }
        Ok(idx as usize)
    }

    pub fn read(&mut self, address: u64) -> Result<()> {
        self.line_index(address)?;
        self.n_reads += 1;
        Ok(())
    }

    pub fn write(&mut self, address: u64, data: &[u8], cost: &WriteCost) -> Result<WriteOutcome> {
        let idx = self.line_index(address)?;
        let line = &mut self.store[idx * self.line_bytes..(idx + 1) * self.line_bytes];
        let out = cost.apply(line, data)?;
        line.copy_from_slice(data);
        if !self.written[idx] {
            self.written[idx] = true;
            self.distinct += 1;
        }
        self.n_writes += 1;
        self.write_energy += out.energy;
        self.write_latency += out.latency;
        self.bit_programs += out.bit_programs();
        Ok(out)
    }

    pub fn totals(&self, t: f64, cfg: &DeviceConfig) -> Totals {
        let reads = self.n_reads as f64;
        Totals {
            n_reads: self.n_reads,
            n_writes: self.n_writes,
            write_energy: self.write_energy,
            write_latency: self.write_latency,
            total_energy: self.write_energy + reads * cfg.read_energy,
            total_latency: self.write_latency + reads * cfg.read_latency,
            endurance: endurance_metric(self.bit_programs, self.distinct, t, cfg),
            bit_programs: self.bit_programs,
            distinct_lines: self.distinct,
        }
    }
}

/// One sweep outcome. Column order here is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub set_v: f64,
    pub set_pulse: f64,
    pub reset_v: f64,
    pub reset_pulse: f64,
    pub temperature: f64,
    pub n_reads: u64,
    pub n_writes: u64,
    pub total_write_energy: f64,
    pub total_write_latency: f64,
    pub endurance: f64,
    pub total_energy: f64,
    pub total_latency: f64,
}

impl DatasetRow {
    pub fn raw(&self) -> RawFeatures {
        RawFeatures {
            set_v: self.set_v,
            set_pulse: self.set_pulse,
            reset_v: self.reset_v,
            reset_pulse: self.reset_pulse,
            temperature: self.temperature,
            n_reads: self.n_reads,
            n_writes: self.n_writes,
        }
    }

    /// The three surrogate targets: write energy, write latency, endurance.
    pub fn targets(&self) -> [f64; 3] {
        [self.total_write_energy, self.total_write_latency, self.endurance]
    }
}

pub fn simulate(point: &GridPoint, trace: &Trace, cfg: &DeviceConfig, sweep: &SweepConfig) -> Result<DatasetRow> {
    if trace.len() > sweep.op_cap {
        return Err(Error::TraceTooLong {
            len: trace.len(),
            cap: sweep.op_cap,
        });
    }
    if trace.line_bytes != cfg.line_bytes {
        return Err(Error::LineLength {
            expected: cfg.line_bytes,
            actual: trace.line_bytes,
        });
    }
    let t = point.temperature(cfg);
    let cost = WriteCost::new(point.params, t, cfg)?;
    let mut replay = Replay::new(sweep.address_lines, cfg.line_bytes);
    for rec in &trace.records {
        match rec.op {
            Op::Read => replay.read(rec.address)?,
            Op::Write => {
                let data = rec.data.as_deref().ok_or(Error::LineLength {
                    expected: cfg.line_bytes,
                    actual: 0,
                })?;
                replay.write(rec.address, data, &cost)?;
            }
        }
    }
    let totals = replay.totals(t, cfg);
    let p = point.params;
    Ok(DatasetRow {
        set_v: p.set_voltage(cfg),
        set_pulse: p.set_pulse(cfg),
        reset_v: p.reset_voltage(cfg),
        reset_pulse: p.reset_pulse(cfg),
        temperature: t,
        n_reads: totals.n_reads,
        n_writes: totals.n_writes,
        total_write_energy: totals.write_energy,
        total_write_latency: totals.write_latency,
        endurance: totals.endurance,
        total_energy: totals.total_energy,
        total_latency: totals.total_latency,
    })
}

/// Simulates every grid point. Output order equals grid order for any
/// thread count; `jobs = 1` runs serially on the calling thread.
pub fn run_sweep(
    grid: &[GridPoint],
    traces: &[&Trace],
    cfg: &DeviceConfig,
    sweep: &SweepConfig,
    jobs: usize,
) -> Result<Vec<DatasetRow>> {
    cfg.validate()?;
    let one = |(index, point): (usize, &GridPoint)| -> Result<DatasetRow> {
        let trace = traces.get(point.trace_id).ok_or_else(|| Error::GridPoint {
            index,
            source: Box::new(Error::InvalidArgument(format!("trace {} not in corpus", point.trace_id))),
        })?;
        simulate(point, trace, cfg, sweep).map_err(|e| Error::GridPoint {
            index,
            source: Box::new(e),
        })
    };
    if jobs <= 1 {
        return grid.iter().enumerate().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| grid.par_iter().enumerate().map(one).collect())
}

pub fn write_dataset_csv<W: Write>(rows: &[DatasetRow], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(DATASET_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(())
}

pub const DATASET_HEADER: [&str; 12] = [
    "set_v",
    "set_pulse",
    "reset_v",
    "reset_pulse",
    "temperature",
    "n_reads",
    "n_writes",
    "total_write_energy",
    "total_write_latency",
    "endurance",
    "total_energy",
    "total_latency",
];

pub fn read_dataset_csv<R: Read>(source: R) -> Result<Vec<DatasetRow>> {
    let mut r = csv::Reader::from_reader(source);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != DATASET_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected dataset header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn grid_index(value: f64, grid: &[f64]) -> Result<usize> {
    grid.iter()
        .position(|&g| (g - value).abs() <= 1e-9 * g.abs().max(1.0))
        .ok_or_else(|| Error::NotInGrid {
            value,
            grid: grid.to_vec(),
        })
}

/// Unit vector with a 1 at `value`'s position in `grid`.
pub fn one_hot(value: f64, grid: &[f64]) -> Result<Vec<f64>> {
    let idx = grid_index(value, grid)?;
    let mut v = vec![0.0; grid.len()];
    v[idx] = 1.0;
    Ok(v)
}

/// Raw (unencoded) surrogate inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    pub set_v: f64,
    pub set_pulse: f64,
    pub reset_v: f64,
    pub reset_pulse: f64,
    pub temperature: f64,
    pub n_reads: u64,
    pub n_writes: u64,
}

impl RawFeatures {
    pub fn from_params(p: WriteParams, temperature: f64, n_reads: u64, n_writes: u64, cfg: &DeviceConfig) -> Self {
        Self {
            set_v: p.set_voltage(cfg),
            set_pulse: p.set_pulse(cfg),
            reset_v: p.reset_voltage(cfg),
            reset_pulse: p.reset_pulse(cfg),
            temperature,
            n_reads,
            n_writes,
        }
    }
}

/// Per-head feature routing: which raw inputs feed which output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub set_voltage_grid: Vec<f64>,
    pub set_pulse_grid: Vec<f64>,
    pub reset_voltage_grid: Vec<f64>,
    pub reset_pulse_grid: Vec<f64>,
    pub temperature_grid: Vec<f64>,
}

impl FeatureEncoder {
    pub fn new(cfg: &DeviceConfig) -> Self {
        Self {
            set_voltage_grid: cfg.set_voltage_grid.clone(),
            set_pulse_grid: cfg.set_pulse_grid.clone(),
            reset_voltage_grid: cfg.reset_voltage_grid.clone(),
            reset_pulse_grid: cfg.reset_pulse_grid.clone(),
            temperature_grid: cfg.temperature_grid.clone(),
        }
    }

    /// Reads and writes as fractions of the trace length.
    fn counts(raw: &RawFeatures) -> Result<[f64; 2]> {
        let n = raw.n_reads + raw.n_writes;
        if n == 0 {
            return Err(Error::InvalidArgument("read and write counts are both zero".into()));
        }
        Ok([raw.n_reads as f64 / n as f64, raw.n_writes as f64 / n as f64])
    }

    pub fn energy_width(&self) -> usize {
        self.set_voltage_grid.len()
            + self.set_pulse_grid.len()
            + self.reset_voltage_grid.len()
            + self.reset_pulse_grid.len()
            + self.temperature_grid.len()
            + 2
    }

    pub fn latency_width(&self) -> usize {
        self.set_pulse_grid.len() + self.reset_pulse_grid.len() + self.temperature_grid.len() + 2
    }

    pub fn endurance_width(&self) -> usize {
        self.temperature_grid.len() + 2
    }

    /// Voltages, pulses, temperature, counts.
    pub fn energy(&self, raw: &RawFeatures) -> Result<Vec<f64>> {
        let mut v = one_hot(raw.set_v, &self.set_voltage_grid)?;
        v.extend(one_hot(raw.set_pulse, &self.set_pulse_grid)?);
        v.extend(one_hot(raw.reset_v, &self.reset_voltage_grid)?);
        v.extend(one_hot(raw.reset_pulse, &self.reset_pulse_grid)?);
        v.extend(one_hot(raw.temperature, &self.temperature_grid)?);
        v.extend(Self::counts(raw)?);
        Ok(v)
    }

    /// Pulses, temperature, counts.
    pub fn latency(&self, raw: &RawFeatures) -> Result<Vec<f64>> {
        let mut v = one_hot(raw.set_pulse, &self.set_pulse_grid)?;
        v.extend(one_hot(raw.reset_pulse, &self.reset_pulse_grid)?);
        v.extend(one_hot(raw.temperature, &self.temperature_grid)?);
        v.extend(Self::counts(raw)?);
        Ok(v)
    }

    /// Temperature, counts.
    pub fn endurance(&self, raw: &RawFeatures) -> Result<Vec<f64>> {
        let mut v = one_hot(raw.temperature, &self.temperature_grid)?;
        v.extend(Self::counts(raw)?);
        Ok(v)
    }
}

/// How a target is mapped before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    /// `(y - mean) / std`
    Identity,
    /// `(ln y - mean) / std`
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub transform: TargetTransform,
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(name: &'static str, values: &[f64], transform: TargetTransform) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateTarget { target: name });
        }
        let mapped: Vec<f64> = values.iter().map(|&v| Self::map(transform, v)).collect();
        if mapped.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let n = mapped.len() as f64;
        let mean = mapped.iter().sum::<f64>() / n;
        let std = (mapped.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > f64::EPSILON * mean.abs().max(1.0)) {
            return Err(Error::DegenerateTarget { target: name });
        }
        Ok(Self { transform, mean, std })
    }

    fn map(transform: TargetTransform, v: f64) -> f64 {
        match transform {
            TargetTransform::Identity => v,
            TargetTransform::Log => v.ln(),
        }
    }

    pub fn scale(&self, v: f64) -> f64 {
        (Self::map(self.transform, v) - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        let m = z * self.std + self.mean;
        match self.transform {
            TargetTransform::Identity => m,
            TargetTransform::Log => m.exp(),
        }
    }
}

pub const TARGET_NAMES: [&str; 3] = ["write_energy", "write_latency", "endurance"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedRow {
    pub energy_features: Vec<f64>,
    pub latency_features: Vec<f64>,
    pub endurance_features: Vec<f64>,
    /// Standardized (energy, latency, endurance).
    pub targets: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded shuffle then contiguous partition into (train, test, validation).
/// Test and validation sizes are floored; the remainder goes to train.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (ftr, fte, fva) = fractions;
    if [ftr, fte, fva].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ftr + fte + fva) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let n_test = (n as f64 * fte + 1e-9).floor() as usize;
    let n_val = (n as f64 * fva + 1e-9).floor() as usize;
    let n_train = n - n_test - n_val;
    let validation = idx.split_off(n_train + n_test);
    let test = idx.split_off(n_train);
    Ok(SplitIndices {
        train: idx,
        test,
        validation,
    })
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub encoder: FeatureEncoder,
    pub scalers: [TargetScaler; 3],
    pub split: SplitIndices,
    /// In dataset order.
    pub rows: Vec<EncodedRow>,
}

impl EncodedDataset {
    pub fn subset(&self, idx: &[usize]) -> Vec<&EncodedRow> {
        idx.iter().map(|&i| &self.rows[i]).collect()
    }
}

/// Encodes features per head and standardizes targets with statistics
/// fitted on the training split only.
pub fn encode(
    rows: &[DatasetRow],
    encoder: &FeatureEncoder,
    split: SplitIndices,
    transforms: [TargetTransform; 3],
) -> Result<EncodedDataset> {
    let mut scalers = Vec::with_capacity(3);
    for (k, name) in TARGET_NAMES.iter().enumerate() {
        let train: Vec<f64> = split.train.iter().map(|&i| rows[i].targets()[k]).collect();
        scalers.push(TargetScaler::fit(name, &train, transforms[k])?);
    }
    let scalers: [TargetScaler; 3] = [scalers[0], scalers[1], scalers[2]];
    let encoded = rows
        .iter()
        .map(|row| {
            let raw = row.raw();
            let t = row.targets();
            Ok(EncodedRow {
                energy_features: encoder.energy(&raw)?,
                latency_features: encoder.latency(&raw)?,
                endurance_features: encoder.endurance(&raw)?,
                targets: [scalers[0].scale(t[0]), scalers[1].scale(t[1]), scalers[2].scale(t[2])],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedDataset {
        encoder: encoder.clone(),
        scalers,
        split,
        rows: encoded,
    })
}
