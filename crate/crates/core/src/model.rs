//! System model: configuration and sensor types plus the closed-form physical
//! functions every solver is built on.
//!
//! Everything is in SI units (s, W, J, bit, Hz). The rate/energy functions are
//! written in terms of `exp`/`expm1` of `x ln2 / B` so they stay accurate both
//! near zero rate and when the exponential overflows to infinity.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{domain, invalid, Result, WpcsError};

/// AP-side and global constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// AP transmit power budget (W).
    #[serde(rename = "P0")]
    pub p0: f64,
    /// Wireless power transfer duration (s).
    #[serde(rename = "T0")]
    pub t0: f64,
    /// Crowd-sensing duration (s).
    #[serde(rename = "T")]
    pub t: f64,
    /// Per-sensor bandwidth (Hz).
    #[serde(rename = "B")]
    pub bandwidth: f64,
    /// Noise variance (W).
    #[serde(rename = "N0")]
    pub noise: f64,
    /// Energy conversion efficiency, in (0, 1).
    pub eta: f64,
    /// Price of unit energy relative to unit utility (1/J).
    #[serde(rename = "c")]
    pub price: f64,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("system.P0", self.p0),
            ("system.T0", self.t0),
            ("system.T", self.t),
            ("system.B", self.bandwidth),
            ("system.N0", self.noise),
            ("system.eta", self.eta),
            ("system.c", self.price),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.eta >= 1.0 {
            return Err(invalid(
                "system.eta",
                format!("must be < 1, got {}", self.eta),
            ));
        }
        Ok(())
    }

    /// Energy budget of the AP over the transfer phase, `P0 * T0` (J).
    pub fn energy_budget(&self) -> f64 {
        self.p0 * self.t0
    }
}

fn default_b() -> f64 {
    1.0
}

/// Per-sensor physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    /// Effective channel power gain.
    pub h: f64,
    /// Utility weight.
    pub a: f64,
    /// Sensing output rate (bit/s).
    pub s: f64,
    /// CPU-cycle frequency (cycles/s).
    pub f_cpu: f64,
    /// Energy kept as reward per raw bit (J/bit).
    pub q_r: f64,
    /// Sensing energy per bit (J/bit).
    pub q_s: f64,
    /// Compression energy per CPU cycle (J/cycle).
    pub q_c: f64,
    /// Compression-method constant.
    pub epsilon: f64,
    /// Maximum compression ratio (>= 1).
    #[serde(rename = "R_max")]
    pub r_max: f64,
    /// Utility scale inside the logarithm, `a log(1 + b l)`.
    #[serde(default = "default_b")]
    pub b: f64,
}

impl SensorProfile {
    /// Checks the profile invariants; `index` is used in the field path of the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let nonneg = [("a", self.a)];
        let positive = [
            ("h", self.h),
            ("s", self.s),
            ("f_cpu", self.f_cpu),
            ("q_r", self.q_r),
            ("q_s", self.q_s),
            ("q_c", self.q_c),
            ("epsilon", self.epsilon),
            ("R_max", self.r_max),
            ("b", self.b),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(
                    format!("sensors[{index}].{name}"),
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(
                    format!("sensors[{index}].{name}"),
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if self.r_max < 1.0 {
            return Err(invalid(
                format!("sensors[{index}].R_max"),
                format!("must be >= 1, got {}", self.r_max),
            ));
        }
        Ok(())
    }

    /// Data utility `a log(1 + b l)` of `raw_bits` sensed bits.
    pub fn utility(&self, raw_bits: f64) -> f64 {
        self.a * (self.b * raw_bits).ln_1p()
    }

    pub(crate) fn check_ratio(&self, ratio: f64, func: &'static str) -> Result<()> {
        if !(ratio >= 1.0 && ratio <= self.r_max) {
            return Err(domain(
                func,
                format!("ratio {ratio} outside [1, {}]", self.r_max),
            ));
        }
        Ok(())
    }
}

/// Per-raw-bit energy and time coefficients at a fixed compression ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedCoeffs {
    /// Energy per raw bit (J/bit): reward + sensing + compression.
    pub alpha: f64,
    /// Time per raw bit (s/bit): sensing + compression.
    pub beta: f64,
}

/// Per-sensor decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Beam power allocated by the AP (W).
    pub power: f64,
    /// Raw sensing-data size (bit).
    pub raw_bits: f64,
    /// Compression ratio.
    pub ratio: f64,
    /// Sensing duration (s).
    pub t_sense: f64,
    /// Compression duration (s).
    pub t_comp: f64,
    /// Transmission duration (s).
    pub t_tx: f64,
    pub selected: bool,
}

impl Allocation {
    /// The allocation of a sensor that does not participate.
    pub fn idle(ratio: f64, t: f64) -> Self {
        Self {
            power: 0.0,
            raw_bits: 0.0,
            ratio,
            t_sense: 0.0,
            t_comp: 0.0,
            t_tx: t,
            selected: false,
        }
    }

    /// Builds an allocation, deriving the sensing and compression durations from the data size.
    pub fn new(profile: &SensorProfile, raw_bits: f64, ratio: f64, t_tx: f64, power: f64) -> Self {
        if raw_bits <= 0.0 {
            return Self {
                power,
                ..Self::idle(ratio, t_tx)
            };
        }
        let cycles = compression_cycles_unchecked(ratio, profile.epsilon);
        Self {
            power,
            raw_bits,
            ratio,
            t_sense: raw_bits / profile.s,
            t_comp: raw_bits * cycles / profile.f_cpu,
            t_tx,
            selected: true,
        }
    }
}

/// Outcome of a solve: objective, its decomposition and the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub reward: f64,
    pub utility: f64,
    pub energy_cost: f64,
    /// Dual variable of the AP power constraint.
    pub lambda: f64,
    /// Largest stationarity residual among selected sensors.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Reward after each iteration.
    pub trace: Vec<f64>,
}

impl SolveReport {
    /// Assembles a report, computing utility and cost from the allocations.
    pub fn from_allocations(
        profiles: &[SensorProfile],
        allocs: &[Allocation],
        cfg: &SystemConfig,
    ) -> Self {
        let utility: f64 = profiles
            .iter()
            .zip(allocs)
            .map(|(p, a)| p.utility(a.raw_bits))
            .sum();
        let energy_cost = cfg.price * cfg.t0 * allocs.iter().map(|a| a.power).sum::<f64>();
        Self {
            reward: utility - energy_cost,
            utility,
            energy_cost,
            lambda: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
            trace: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Closed-form functions
// ---------------------------------------------------------------------------

pub(crate) fn compression_cycles_unchecked(ratio: f64, epsilon: f64) -> f64 {
    epsilon.exp() * (epsilon * (ratio - 1.0)).exp_m1()
}

/// CPU cycles needed per raw bit at compression ratio `ratio`: `e^{εR} - e^ε`.
pub fn compression_cycles(ratio: f64, epsilon: f64) -> Result<f64> {
    if !(ratio >= 1.0) {
        return Err(domain("compression_cycles", format!("ratio {ratio} < 1")));
    }
    if !(epsilon > 0.0) {
        return Err(domain(
            "compression_cycles",
            format!("epsilon {epsilon} <= 0"),
        ));
    }
    Ok(compression_cycles_unchecked(ratio, epsilon))
}

/// Derivative of the cycle count in the ratio, `ε e^{εR}`.
pub fn compression_cycles_slope(ratio: f64, epsilon: f64) -> f64 {
    epsilon * (epsilon * ratio).exp()
}

#[inline]
pub(crate) fn f_raw(x: f64, bandwidth: f64, noise: f64) -> f64 {
    noise * (x * LN_2 / bandwidth).exp_m1()
}

#[inline]
pub(crate) fn f_prime_raw(x: f64, bandwidth: f64, noise: f64) -> f64 {
    noise * LN_2 / bandwidth * (x * LN_2 / bandwidth).exp()
}

#[inline]
pub(crate) fn g_raw(x: f64, bandwidth: f64, noise: f64) -> f64 {
    let v = x * LN_2 / bandwidth;
    // Two algebraically identical forms; the first avoids cancellation near
    // zero, the second avoids inf - inf once e^v overflows.
    if v < 1.0 {
        noise * (v.exp_m1() - v * v.exp())
    } else {
        noise * (v.exp() * (1.0 - v) - 1.0)
    }
}

/// Transmit power needed to sustain rate `x` bit/s: `N0 (2^{x/B} - 1)`.
pub fn rate_energy_f(x: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain("rate_energy_f", format!("rate {x} < 0")));
    }
    Ok(f_raw(x, bandwidth, noise))
}

/// `f'(x) = N0 ln2 / B * 2^{x/B}`.
pub fn rate_energy_derivative(x: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain("rate_energy_derivative", format!("rate {x} < 0")));
    }
    Ok(f_prime_raw(x, bandwidth, noise))
}

/// `g(x) = f(x) - x f'(x)`; zero at the origin, negative and decreasing after.
pub fn g_func(x: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain("g_func", format!("rate {x} < 0")));
    }
    Ok(g_raw(x, bandwidth, noise))
}

/// `y(x) = f(x) - (x + 1/(Rβ)) f'(x) = g(x) - f'(x)/(Rβ)`.
pub fn y_func(x: f64, ratio: f64, beta: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(domain("y_func", format!("beta {beta} <= 0")));
    }
    if !(ratio >= 1.0) {
        return Err(domain("y_func", format!("ratio {ratio} < 1")));
    }
    if !(x >= 0.0) {
        return Err(domain("y_func", format!("rate {x} < 0")));
    }
    Ok(y_raw(x, ratio * beta, bandwidth, noise))
}

#[inline]
pub(crate) fn y_raw(x: f64, ratio_beta: f64, bandwidth: f64, noise: f64) -> f64 {
    g_raw(x, bandwidth, noise) - f_prime_raw(x, bandwidth, noise) / ratio_beta
}

/// Per-raw-bit energy and time coefficients for `profile` at ratio `ratio`.
pub fn derived_coeffs(profile: &SensorProfile, ratio: f64) -> Result<DerivedCoeffs> {
    profile.check_ratio(ratio, "derived_coeffs")?;
    let cycles = compression_cycles_unchecked(ratio, profile.epsilon);
    Ok(DerivedCoeffs {
        alpha: profile.q_r + profile.q_s + profile.q_c * cycles,
        beta: 1.0 / profile.s + cycles / profile.f_cpu,
    })
}

/// Sensor-side energy breakdown (J).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorEnergies {
    pub reward: f64,
    pub sensing: f64,
    pub compression: f64,
    pub transmission: f64,
}

impl SensorEnergies {
    pub fn total(&self) -> f64 {
        self.reward + self.sensing + self.compression + self.transmission
    }
}

/// Transmission energy `(t/h) f(l / t)` for `compressed_bits` sent in `t_tx` seconds.
pub fn transmission_energy(
    compressed_bits: f64,
    t_tx: f64,
    h: f64,
    cfg: &SystemConfig,
) -> Result<f64> {
    if compressed_bits <= 0.0 {
        return Ok(0.0);
    }
    if !(t_tx > 0.0) {
        return Err(WpcsError::Degenerate(format!(
            "{compressed_bits} bits with transmission time {t_tx}"
        )));
    }
    Ok(t_tx / h * f_raw(compressed_bits / t_tx, cfg.bandwidth, cfg.noise))
}

/// Reward, sensing, compression and transmission energy consumed by one sensor.
pub fn sensor_energies(
    profile: &SensorProfile,
    alloc: &Allocation,
    cfg: &SystemConfig,
) -> Result<SensorEnergies> {
    let bits = alloc.raw_bits;
    if bits <= 0.0 {
        return Ok(SensorEnergies::default());
    }
    let cycles = compression_cycles(alloc.ratio, profile.epsilon)?;
    Ok(SensorEnergies {
        reward: profile.q_r * bits,
        sensing: profile.q_s * bits,
        compression: profile.q_c * bits * cycles,
        transmission: transmission_energy(bits / alloc.ratio, alloc.t_tx, profile.h, cfg)?,
    })
}

/// Sum data utility with unit scale `b`: `Σ a ln(1 + l)` over `(a, raw_bits)` pairs.
pub fn utility(sensors: &[(f64, f64)]) -> f64 {
    sensors.iter().map(|&(a, bits)| a * bits.ln_1p()).sum()
}

/// Operator's reward: utility minus `c T0 Σ P`.
pub fn operator_reward(utility: f64, powers: &[f64], cfg: &SystemConfig) -> f64 {
    utility - cfg.price * cfg.t0 * powers.iter().sum::<f64>()
}

/// Constraint slacks (RHS - LHS) of a full allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSlack {
    /// `T - (l/s + l C/f + t)` per sensor (s).
    pub time: Vec<f64>,
    /// `η P h T0 - sensor energy` per sensor (J).
    pub energy: Vec<f64>,
    /// `η P h T0` per sensor, the scale of the energy slack (J).
    pub energy_scale: Vec<f64>,
    /// `P0 - Σ P` (W).
    pub power: f64,
}

/// Which constraint a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Time,
    Energy,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    /// Sensor index; `None` for the shared power constraint.
    pub sensor: Option<usize>,
    /// Slack divided by its scale.
    pub relative_slack: f64,
}

impl ConstraintSlack {
    /// Every constraint whose relative slack is below `-rel_tol`.
    pub fn violations(&self, cfg: &SystemConfig, rel_tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, &s) in self.time.iter().enumerate() {
            let rel = s / cfg.t;
            if !(rel >= -rel_tol) {
                out.push(Violation {
                    kind: ConstraintKind::Time,
                    sensor: Some(i),
                    relative_slack: rel,
                });
            }
        }
        for (i, (&s, &scale)) in self.energy.iter().zip(&self.energy_scale).enumerate() {
            let rel = if scale > 0.0 { s / scale } else { s };
            if !(rel >= -rel_tol) {
                out.push(Violation {
                    kind: ConstraintKind::Energy,
                    sensor: Some(i),
                    relative_slack: rel,
                });
            }
        }
        let rel = self.power / cfg.p0;
        if !(rel >= -rel_tol) {
            out.push(Violation {
                kind: ConstraintKind::Power,
                sensor: None,
                relative_slack: rel,
            });
        }
        out
    }
}

/// Evaluates the time, energy and power constraints. Infeasible inputs still
/// produce residuals; an energy residual of `-inf` marks bits sent in zero time.
pub fn constraint_residuals(
    allocs: &[Allocation],
    profiles: &[SensorProfile],
    cfg: &SystemConfig,
) -> ConstraintSlack {
    let mut time = Vec::with_capacity(allocs.len());
    let mut energy = Vec::with_capacity(allocs.len());
    let mut energy_scale = Vec::with_capacity(allocs.len());
    for (alloc, p) in allocs.iter().zip(profiles) {
        let bits = alloc.raw_bits;
        let cycles = compression_cycles_unchecked(alloc.ratio.max(1.0), p.epsilon);
        let busy = bits / p.s + bits * cycles / p.f_cpu + alloc.t_tx;
        time.push(cfg.t - busy);

        let harvested = cfg.eta * alloc.power * p.h * cfg.t0;
        let used = sensor_energies(p, alloc, cfg)
            .map(|e| e.total())
            .unwrap_or(f64::INFINITY);
        energy.push(harvested - used);
        energy_scale.push(harvested.abs().max(used.abs()));
    }
    ConstraintSlack {
        time,
        energy,
        energy_scale,
        power: cfg.p0 - allocs.iter().map(|a| a.power).sum::<f64>(),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn system() -> SystemConfig {
        SystemConfig {
            p0: 0.01,
            t0: 1.0,
            t: 1.0,
            bandwidth: 1e4,
            noise: 1e-9,
            eta: 0.5,
            price: 0.6,
        }
    }

    pub fn sensor() -> SensorProfile {
        SensorProfile {
            h: 1e-3,
            a: 0.04,
            s: 1e4,
            f_cpu: 1e9,
            q_r: 1e-12,
            q_s: 1e-12,
            q_c: 1e-14,
            epsilon: 4.0,
            r_max: 3.0,
            b: 1.0,
        }
    }
}
