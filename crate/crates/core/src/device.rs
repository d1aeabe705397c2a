//! Physics-lite PCM cell model.
//!
//! Programming voltage follows a linear temperature law,
//! `V(T) = max(v_min, V(T0) - alpha * (T - T0))`, and a pulse of width `t`
//! dissipates `V(T)^2 * t / R` through the programming path. Writes are
//! differential: only bits that change are programmed, SET for 0→1 and RESET
//! for 1→0, all in parallel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Device constants and the discrete write-parameter grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    /// Volts.
    pub set_voltage_grid: Vec<f64>,
    /// Nanoseconds.
    pub set_pulse_grid: Vec<f64>,
    /// Volts.
    pub reset_voltage_grid: Vec<f64>,
    /// Nanoseconds.
    pub reset_pulse_grid: Vec<f64>,
    /// Ambient temperatures in °C.
    pub temperature_grid: Vec<f64>,
    /// Volts per °C.
    pub alpha_set: f64,
    /// Volts per °C.
    pub alpha_reset: f64,
    /// Reference (room) temperature, °C.
    pub t0: f64,
    /// Lower clamp on the temperature-adjusted voltage.
    pub v_min: f64,
    /// Effective programming-path resistance, ohms.
    pub prog_resistance: f64,
    /// Fixed per-write latency, ns.
    pub controller_overhead: f64,
    /// pJ per line read.
    pub read_energy: f64,
    /// ns per line read.
    pub read_latency: f64,
    /// Fractional pulse shortening per °C above `t0`.
    pub latency_temp_coeff: f64,
    /// Fractional wear acceleration per °C above `t0`.
    pub wear_temp_coeff: f64,
    /// Mean write endurance per bit.
    pub endurance_mean: f64,
    /// Kept for a future stochastic endurance mode; unused by the deterministic metric.
    pub endurance_spread: f64,
    pub line_bytes: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            set_voltage_grid: vec![1.5, 2.0, 2.5],
            set_pulse_grid: vec![150.0, 155.0, 160.0],
            reset_voltage_grid: vec![2.5, 3.0, 3.5],
            reset_pulse_grid: vec![100.0, 105.0, 110.0],
            temperature_grid: vec![25.0, 50.0, 75.0],
            alpha_set: 0.025,
            alpha_reset: 0.015,
            t0: 25.0,
            v_min: 0.1,
            prog_resistance: 1000.0,
            controller_overhead: 60.0,
            read_energy: 50.0,
            read_latency: 50.0,
            latency_temp_coeff: 0.001,
            wear_temp_coeff: 0.004,
            endurance_mean: 1_000_000.0,
            endurance_spread: 100_000.0,
            line_bytes: 64,
        }
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config(name, "grid is empty"));
    }
    if grid.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::config(name, "grid entries must be finite and positive"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(name, "grid must be strictly increasing"));
    }
    Ok(())
}

impl DeviceConfig {
    /// Checks every invariant except the grid length, so degenerate sweeps
    /// over smaller grids remain possible.
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in self.grids() {
            check_grid(name, grid)?;
        }
        let non_negative = [
            ("alpha_set", self.alpha_set),
            ("alpha_reset", self.alpha_reset),
            ("controller_overhead", self.controller_overhead),
            ("read_energy", self.read_energy),
            ("read_latency", self.read_latency),
            ("latency_temp_coeff", self.latency_temp_coeff),
            ("wear_temp_coeff", self.wear_temp_coeff),
            ("endurance_spread", self.endurance_spread),
        ];
        for (name, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        let positive = [
            ("v_min", self.v_min),
            ("prog_resistance", self.prog_resistance),
            ("endurance_mean", self.endurance_mean),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(name, "must be finite and positive"));
            }
        }
        if !self.t0.is_finite() {
            return Err(Error::config("t0", "must be finite"));
        }
        if self.line_bytes == 0 {
            return Err(Error::config("line_bytes", "must be positive"));
        }
        let (lo, hi) = self.temperature_range();
        if self.latency_temp_coeff * (hi.max(self.t0) - lo.min(self.t0)) >= 1.0 {
            return Err(Error::config(
                "latency_temp_coeff",
                "pulse acceleration must keep pulses positive over the temperature range",
            ));
        }
        Ok(())
    }

    /// Full validation for the agent: every grid must have exactly three entries.
    pub fn validate_action_space(&self) -> Result<()> {
        self.validate()?;
        for (name, grid) in self.grids() {
            if grid.len() != 3 {
                return Err(Error::config(name, "action grids must have exactly 3 entries"));
            }
        }
        Ok(())
    }

    fn grids(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("set_voltage_grid", &self.set_voltage_grid),
            ("set_pulse_grid", &self.set_pulse_grid),
            ("reset_voltage_grid", &self.reset_voltage_grid),
            ("reset_pulse_grid", &self.reset_pulse_grid),
            ("temperature_grid", &self.temperature_grid),
        ]
    }

    pub fn temperature_range(&self) -> (f64, f64) {
        let lo = self.temperature_grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.temperature_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn check_temperature(&self, t: f64) -> Result<()> {
        let (min, max) = self.temperature_range();
        if !(t >= min && t <= max) {
            return Err(Error::TemperatureOutOfRange {
                temperature: t,
                min,
                max,
            });
        }
        Ok(())
    }

    pub fn line_bits(&self) -> u64 {
        self.line_bytes as u64 * 8
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PulseKind {
    Set,
    Reset,
}

/// Grid indices for the four write parameters. This is also the agent's action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WriteParams {
    pub set_v_idx: usize,
    pub set_t_idx: usize,
    pub reset_v_idx: usize,
    pub reset_t_idx: usize,
}

/// Number of distinct actions on a 3×3×3×3 grid.
pub const N_ACTIONS: usize = 81;

impl WriteParams {
    pub const fn new(set_v_idx: usize, set_t_idx: usize, reset_v_idx: usize, reset_t_idx: usize) -> Self {
        Self {
            set_v_idx,
            set_t_idx,
            reset_v_idx,
            reset_t_idx,
        }
    }

    /// The mid-grid setting used as the non-adaptive baseline.
    pub const fn mid() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.set_v_idx, self.set_t_idx, self.reset_v_idx, self.reset_t_idx]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Base-3 index with the SET voltage as the most significant digit.
    pub fn index(&self) -> usize {
        self.as_array().iter().fold(0, |acc, &d| acc * 3 + d)
    }

    pub fn from_index(mut i: usize) -> Self {
        let mut digits = [0usize; 4];
        for d in digits.iter_mut().rev() {
            *d = i % 3;
            i /= 3;
        }
        Self::from_array(digits)
    }

    /// All 81 actions in index order.
    pub fn all() -> impl Iterator<Item = WriteParams> {
        (0..N_ACTIONS).map(Self::from_index)
    }

    pub fn validate(&self, cfg: &DeviceConfig) -> Result<()> {
        let sizes = [
            cfg.set_voltage_grid.len(),
            cfg.set_pulse_grid.len(),
            cfg.reset_voltage_grid.len(),
            cfg.reset_pulse_grid.len(),
        ];
        for (dim, (&idx, &n)) in self.as_array().iter().zip(sizes.iter()).enumerate() {
            if idx >= n {
                return Err(Error::InvalidAction { dim, index: idx });
            }
        }
        Ok(())
    }

    pub fn set_voltage(&self, cfg: &DeviceConfig) -> f64 {
        cfg.set_voltage_grid[self.set_v_idx]
    }
    pub fn set_pulse(&self, cfg: &DeviceConfig) -> f64 {
        cfg.set_pulse_grid[self.set_t_idx]
    }
    pub fn reset_voltage(&self, cfg: &DeviceConfig) -> f64 {
        cfg.reset_voltage_grid[self.reset_v_idx]
    }
    pub fn reset_pulse(&self, cfg: &DeviceConfig) -> f64 {
        cfg.reset_pulse_grid[self.reset_t_idx]
    }

    fn voltage_and_pulse(&self, kind: PulseKind, cfg: &DeviceConfig) -> (f64, f64, f64) {
        match kind {
            PulseKind::Set => (self.set_voltage(cfg), cfg.alpha_set, self.set_pulse(cfg)),
            PulseKind::Reset => (self.reset_voltage(cfg), cfg.alpha_reset, self.reset_pulse(cfg)),
        }
    }
}

impl From<[usize; 4]> for WriteParams {
    fn from(a: [usize; 4]) -> Self {
        Self::from_array(a)
    }
}

/// Per-write accounting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WriteOutcome {
    /// pJ.
    pub energy: f64,
    /// ns.
    pub latency: f64,
    pub bits_set: u32,
    pub bits_reset: u32,
}

impl WriteOutcome {
    pub fn bit_programs(&self) -> u64 {
        u64::from(self.bits_set) + u64::from(self.bits_reset)
    }
}

/// Temperature-adjusted programming voltage, clamped below at `v_min`.
pub fn adjusted_voltage(v0: f64, alpha: f64, t: f64, cfg: &DeviceConfig) -> Result<f64> {
    if !(v0 > 0.0) {
        return Err(Error::InvalidArgument(format!("voltage must be positive, got {v0}")));
    }
    cfg.check_temperature(t)?;
    Ok((v0 - alpha * (t - cfg.t0)).max(cfg.v_min))
}

/// Energy of one programming pulse in pJ.
pub fn pulse_energy(kind: PulseKind, params: WriteParams, t: f64, cfg: &DeviceConfig) -> Result<f64> {
    params.validate(cfg)?;
    let (v0, alpha, pulse_ns) = params.voltage_and_pulse(kind, cfg);
    let v = adjusted_voltage(v0, alpha, t, cfg)?;
    // V^2 [V^2] * t [ns] * 1e-9 / R [ohm] = J; * 1e12 = pJ.
    Ok(v * v * pulse_ns * 1e3 / cfg.prog_resistance)
}

/// Pulse width after temperature acceleration, ns.
pub fn effective_pulse(kind: PulseKind, params: WriteParams, t: f64, cfg: &DeviceConfig) -> f64 {
    let (_, _, pulse_ns) = params.voltage_and_pulse(kind, cfg);
    pulse_ns * (1.0 - cfg.latency_temp_coeff * (t - cfg.t0))
}

/// Precomputed per-bit costs for one (params, temperature) pair.
///
/// `write_line` builds one of these per call; replay loops build it once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriteCost {
    pub set_energy: f64,
    pub reset_energy: f64,
    pub set_pulse: f64,
    pub reset_pulse: f64,
    pub overhead: f64,
    pub line_bytes: usize,
}

impl WriteCost {
    pub fn new(params: WriteParams, t: f64, cfg: &DeviceConfig) -> Result<Self> {
        Ok(Self {
            set_energy: pulse_energy(PulseKind::Set, params, t, cfg)?,
            reset_energy: pulse_energy(PulseKind::Reset, params, t, cfg)?,
            set_pulse: effective_pulse(PulseKind::Set, params, t, cfg),
            reset_pulse: effective_pulse(PulseKind::Reset, params, t, cfg),
            overhead: cfg.controller_overhead,
            line_bytes: cfg.line_bytes,
        })
    }

    pub fn apply(&self, old: &[u8], new: &[u8]) -> Result<WriteOutcome> {
        for buf in [old, new] {
            if buf.len() != self.line_bytes {
                return Err(Error::LineLength {
                    expected: self.line_bytes,
                    actual: buf.len(),
                });
            }
        }
        let (mut bits_set, mut bits_reset) = (0u32, 0u32);
        for (&o, &n) in old.iter().zip(new) {
            bits_set += (!o & n).count_ones();
            bits_reset += (o & !n).count_ones();
        }
        Ok(self.outcome(bits_set, bits_reset))
    }

    pub fn outcome(&self, bits_set: u32, bits_reset: u32) -> WriteOutcome {
        let mut pulse: f64 = 0.0;
        if bits_set > 0 {
            pulse = pulse.max(self.set_pulse);
        }
        if bits_reset > 0 {
            pulse = pulse.max(self.reset_pulse);
        }
        WriteOutcome {
            energy: f64::from(bits_set) * self.set_energy + f64::from(bits_reset) * self.reset_energy,
            latency: self.overhead + pulse,
            bits_set,
            bits_reset,
        }
    }
}

/// Differential write of one line.
pub fn write_line(
    old_data: &[u8],
    new_data: &[u8],
    params: WriteParams,
    t: f64,
    cfg: &DeviceConfig,
) -> Result<WriteOutcome> {
    WriteCost::new(params, t, cfg)?.apply(old_data, new_data)
}

/// Reads cost a fixed (pJ, ns) pair regardless of parameters and temperature.
pub fn read_line(t: f64, cfg: &DeviceConfig) -> Result<(f64, f64)> {
    cfg.check_temperature(t)?;
    Ok((cfg.read_energy, cfg.read_latency))
}

/// Remaining-lifetime fraction after `bit_programs` programs spread over
/// `distinct_lines` lines.
pub fn endurance_metric(bit_programs: u64, distinct_lines: u64, t: f64, cfg: &DeviceConfig) -> f64 {
    if distinct_lines == 0 {
        return 1.0;
    }
    let wear = bit_programs as f64 * (1.0 + cfg.wear_temp_coeff * (t - cfg.t0));
    let budget = distinct_lines as f64 * cfg.line_bits() as f64 * cfg.endurance_mean;
    (1.0 - wear / budget).clamp(0.0, 1.0)
}
