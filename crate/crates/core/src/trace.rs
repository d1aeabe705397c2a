//! Synthetic read/write traces and their text format.
//!
//! One record per line: `<cycle> <R|W> <0x-hex address> [<hex payload>]`,
//! where the payload is present iff the op is `W` and has exactly
//! `line_bytes * 2` hex digits.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_seed, seeded};

/// Cycle increment between consecutive generated records.
pub const CYCLE_STRIDE: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub op: Op,
    pub address: u64,
    /// Present only for writes.
    pub data: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub line_bytes: usize,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_reads(&self) -> u64 {
        self.records.iter().filter(|r| r.op == Op::Read).count() as u64
    }

    pub fn n_writes(&self) -> u64 {
        self.records.iter().filter(|r| r.op == Op::Write).count() as u64
    }
}

/// Read:write mix as a pair of small integers, e.g. `9:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub reads: u32,
    pub writes: u32,
}

impl Ratio {
    pub const fn new(reads: u32, writes: u32) -> Self {
        Self { reads, writes }
    }

    /// Exact split of `n_ops` into (reads, writes); reads are floored.
    pub fn split(&self, n_ops: u64) -> (u64, u64) {
        let total = u64::from(self.reads) + u64::from(self.writes);
        let reads = (u128::from(n_ops) * u128::from(self.reads) / u128::from(total)) as u64;
        (reads, n_ops - reads)
    }

    pub fn read_probability(&self) -> f64 {
        f64::from(self.reads) / f64::from(self.reads + self.writes)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.reads, self.writes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub n_ops: u64,
    pub ratio: Ratio,
    pub address_lines: u64,
    pub seed: u64,
    pub line_bytes: usize,
}

impl TraceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratio.reads + self.ratio.writes == 0 {
            return Err(Error::config("ratio", "reads + writes must be positive"));
        }
        if self.n_ops == 0 {
            return Err(Error::config("n_ops", "must be positive"));
        }
        if self.address_lines == 0 {
            return Err(Error::config("address_lines", "must be at least 1"));
        }
        if self.line_bytes == 0 {
            return Err(Error::config("line_bytes", "must be positive"));
        }
        Ok(())
    }
}

/// Generates a trace with exact read/write counts in seeded random order.
pub fn generate_trace(spec: &TraceSpec) -> Result<Trace> {
    spec.validate()?;
    let (n_reads, n_writes) = spec.ratio.split(spec.n_ops);
    let mut ops: Vec<Op> = std::iter::repeat(Op::Read)
        .take(n_reads as usize)
        .chain(std::iter::repeat(Op::Write).take(n_writes as usize))
        .collect();
    let mut rng = seeded(spec.seed);
    ops.shuffle(&mut rng);

    let line = spec.line_bytes as u64;
    let records = ops
        .into_iter()
        .enumerate()
        .map(|(i, op)| {
            let address = rng.gen_range(0..spec.address_lines) * line;
            let data = (op == Op::Write).then(|| {
                let mut buf = vec![0u8; spec.line_bytes];
                rng.fill_bytes(&mut buf);
                buf
            });
            TraceRecord {
                cycle: i as u64 * CYCLE_STRIDE,
                op,
                address,
                data,
            }
        })
        .collect();
    Ok(Trace {
        line_bytes: spec.line_bytes,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "R>W")]
    ReadHeavy,
    #[serde(rename = "R=W")]
    Balanced,
    #[serde(rename = "R<W")]
    WriteHeavy,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::ReadHeavy, Scenario::Balanced, Scenario::WriteHeavy];

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::ReadHeavy => "R>W",
            Scenario::Balanced => "R=W",
            Scenario::WriteHeavy => "R<W",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Read:write ratios available to each scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioPools {
    pub read_heavy: Vec<Ratio>,
    pub balanced: Vec<Ratio>,
    pub write_heavy: Vec<Ratio>,
}

impl Default for ScenarioPools {
    fn default() -> Self {
        Self {
            read_heavy: vec![Ratio::new(9, 1), Ratio::new(8, 2), Ratio::new(7, 3), Ratio::new(6, 4)],
            balanced: vec![Ratio::new(5, 5)],
            write_heavy: vec![Ratio::new(4, 6), Ratio::new(3, 7), Ratio::new(2, 8), Ratio::new(1, 9)],
        }
    }
}

impl ScenarioPools {
    pub fn pool(&self, scenario: Scenario) -> &[Ratio] {
        match scenario {
            Scenario::ReadHeavy => &self.read_heavy,
            Scenario::Balanced => &self.balanced,
            Scenario::WriteHeavy => &self.write_heavy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in Scenario::ALL {
            let pool = self.pool(s);
            if pool.is_empty() {
                return Err(Error::config(format!("pools.{s}"), "pool is empty"));
            }
            for r in pool {
                let ok = match s {
                    Scenario::ReadHeavy => r.reads > r.writes,
                    Scenario::Balanced => r.reads == r.writes && r.reads > 0,
                    Scenario::WriteHeavy => r.reads < r.writes,
                };
                if !ok {
                    return Err(Error::config(format!("pools.{s}"), format!("ratio {r} does not fit the scenario")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub traces_per_scenario: usize,
    pub n_ops: u64,
    pub address_lines: u64,
    pub pools: ScenarioPools,
    /// Trace `i` is generated from `child_seed(seed, i)`.
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            traces_per_scenario: 20,
            n_ops: 100_000,
            address_lines: 4096,
            pools: ScenarioPools::default(),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.traces_per_scenario == 0 {
            return Err(Error::config("corpus.traces_per_scenario", "must be positive"));
        }
        if self.n_ops == 0 {
            return Err(Error::config("corpus.n_ops", "must be positive"));
        }
        if self.address_lines == 0 {
            return Err(Error::config("corpus.address_lines", "must be at least 1"));
        }
        self.pools.validate()
    }

    /// Trace specs in corpus order: scenarios R>W, R=W, R<W, each drawing
    /// ratios cyclically from its pool.
    pub fn specs(&self, line_bytes: usize) -> Vec<(Scenario, TraceSpec)> {
        let mut out = Vec::with_capacity(3 * self.traces_per_scenario);
        for scenario in Scenario::ALL {
            let pool = self.pools.pool(scenario);
            for i in 0..self.traces_per_scenario {
                let id = out.len() as u64;
                out.push((
                    scenario,
                    TraceSpec {
                        n_ops: self.n_ops,
                        ratio: pool[i % pool.len()],
                        address_lines: self.address_lines,
                        seed: child_seed(self.seed, id),
                        line_bytes,
                    },
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub scenario: Scenario,
    pub spec: TraceSpec,
    pub trace: Trace,
}

pub fn generate_corpus(cfg: &CorpusConfig, line_bytes: usize) -> Result<Vec<CorpusEntry>> {
    cfg.validate()?;
    cfg.specs(line_bytes)
        .into_par_iter()
        .map(|(scenario, spec)| {
            let trace = generate_trace(&spec)?;
            Ok(CorpusEntry { scenario, spec, trace })
        })
        .collect()
}

fn hex_encode(bytes: &[u8], out: &mut String) {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    for &b in bytes {
        out.push(DIGITS[(b >> 4) as usize] as char);
        out.push(DIGITS[(b & 0xf) as usize] as char);
    }
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> std::io::Result<()> {
    let mut line = String::new();
    for r in &trace.records {
        line.clear();
        match r.op {
            Op::Read => line.push_str(&format!("{} R {:#x}", r.cycle, r.address)),
            Op::Write => {
                line.push_str(&format!("{} W {:#x} ", r.cycle, r.address));
                hex_encode(r.data.as_deref().unwrap_or(&[]), &mut line);
            }
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
    }
    sink.flush()
}

pub fn parse_trace<R: BufRead>(source: R, line_bytes: usize) -> Result<Trace> {
    let mut records = Vec::new();
    let mut last_cycle = 0u64;
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::TraceParse {
            line: lineno,
            field: "line",
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |field: &'static str, reason: String| Error::TraceParse {
            line: lineno,
            field,
            reason,
        };
        let mut fields = line.split_whitespace();
        let cycle_s = fields.next().ok_or_else(|| err("cycle", "missing".into()))?;
        let cycle: u64 = cycle_s.parse().map_err(|e| err("cycle", format!("{cycle_s:?}: {e}")))?;
        if cycle < last_cycle {
            return Err(err("cycle", format!("{cycle} decreases from {last_cycle}")));
        }
        last_cycle = cycle;
        let op = match fields.next() {
            Some("R") => Op::Read,
            Some("W") => Op::Write,
            Some(other) => return Err(err("op", format!("expected R or W, got {other:?}"))),
            None => return Err(err("op", "missing".into())),
        };
        let addr_s = fields.next().ok_or_else(|| err("address", "missing".into()))?;
        let hex = addr_s
            .strip_prefix("0x")
            .or_else(|| addr_s.strip_prefix("0X"))
            .ok_or_else(|| err("address", format!("{addr_s:?} lacks 0x prefix")))?;
        let address = u64::from_str_radix(hex, 16).map_err(|e| err("address", format!("{addr_s:?}: {e}")))?;
        if address % line_bytes as u64 != 0 {
            return Err(err("address", format!("{address:#x} not aligned to {line_bytes} bytes")));
        }
        let data = match (op, fields.next()) {
            (Op::Read, None) => None,
            (Op::Read, Some(_)) => return Err(err("payload", "reads carry no payload".into())),
            (Op::Write, None) => return Err(err("payload", "missing for write".into())),
            (Op::Write, Some(p)) => {
                if p.len() != line_bytes * 2 {
                    return Err(err(
                        "payload",
                        format!("expected {} hex digits, got {}", line_bytes * 2, p.len()),
                    ));
                }
                Some(hex_decode(p).ok_or_else(|| err("payload", "invalid hex".into()))?)
            }
        };
        if fields.next().is_some() {
            return Err(err("line", "trailing fields".into()));
        }
        records.push(TraceRecord {
            cycle,
            op,
            address,
            data,
        });
    }
    Ok(Trace { line_bytes, records })
}
