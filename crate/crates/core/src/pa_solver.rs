//! Power allocation, sensing-data sizing and transmission durations for fixed
//! compression ratios.
//!
//! With the ratios frozen, every selected sensor uses its whole harvested
//! energy and the whole sensing round, so the problem collapses onto the
//! transmission durations `t_n` alone. That reduced problem is convex: for a
//! given price `λ` of the AP power budget each `t_n` is the unique zero of a
//! stationarity residual that increases in `t_n`, and the total energy is
//! decreasing in `λ`. The solver therefore nests two bisections, an outer one
//! on `λ` and an inner one per sensor on `t_n`.
//!
//! A sensor participates only when its crowd-sensing priority exceeds `λ`;
//! below the threshold the residual is negative on all of `(0, T]` and the
//! sensor idles with `t_n = T`.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{domain, Result, WpcsError};
use crate::model::{
    compression_cycles_unchecked, derived_coeffs, f_raw, y_raw, Allocation, DerivedCoeffs,
    SensorProfile, SystemConfig,
};

/// A sensor together with its frozen compression ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedRatioSensor {
    pub profile: SensorProfile,
    pub ratio: f64,
    pub coeffs: DerivedCoeffs,
}

impl FixedRatioSensor {
    pub fn new(profile: SensorProfile, ratio: f64) -> Result<Self> {
        let coeffs = derived_coeffs(&profile, ratio)?;
        Ok(Self {
            profile,
            ratio,
            coeffs,
        })
    }

    /// Raw bits that fill the round when transmission takes `t` seconds.
    pub fn raw_bits_for(&self, t: f64, cfg: &SystemConfig) -> f64 {
        ((cfg.t - t) / self.coeffs.beta).max(0.0)
    }
}

/// Tolerances and caps for [`solve_lambda`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaOptions {
    /// Width of the final `t` bracket, relative to `T`.
    pub t_tol: f64,
    /// Accepted gap `|E - P0 T0| / (P0 T0)` when the budget binds.
    pub energy_tol: f64,
    /// Lower end of the `t` search, relative to `T`.
    pub t_min_frac: f64,
    pub max_iters: usize,
}

impl Default for PaOptions {
    fn default() -> Self {
        Self {
            t_tol: 1e-15,
            energy_tol: 1e-12,
            t_min_frac: 1e-9,
            max_iters: 200,
        }
    }
}

/// Optimal fixed-ratio policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaSolution {
    pub t_tx: Vec<f64>,
    pub lambda: f64,
    pub powers: Vec<f64>,
    pub raw_bits: Vec<f64>,
    pub priorities: Vec<f64>,
    pub selected: Vec<bool>,
    /// Total AP energy `Σ P_n T0` at the returned durations (J).
    pub total_energy: f64,
    pub lambda_iterations: usize,
}

impl PaSolution {
    /// Per-sensor allocations at the solved durations.
    pub fn allocations(&self, sensors: &[FixedRatioSensor]) -> Vec<Allocation> {
        sensors
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if self.selected[i] {
                    Allocation::new(
                        &s.profile,
                        self.raw_bits[i],
                        s.ratio,
                        self.t_tx[i],
                        self.powers[i],
                    )
                } else {
                    Allocation::idle(s.ratio, self.t_tx[i])
                }
            })
            .collect()
    }
}

fn check_time(t: f64, cfg: &SystemConfig, func: &'static str) -> Result<()> {
    if !(t > 0.0 && t <= cfg.t) {
        return Err(domain(func, format!("t = {t} outside (0, {}]", cfg.t)));
    }
    Ok(())
}

/// Rate at which the compressed data leaves the sensor when transmission takes `t`.
#[inline]
fn tx_rate(t: f64, sensor: &FixedRatioSensor, cfg: &SystemConfig) -> f64 {
    (cfg.t - t) / (sensor.ratio * sensor.coeffs.beta * t)
}

/// Derivative of the Lagrangian in `t`: marginal utility of sensing time plus
/// `(λ + c)` times the marginal AP energy. Increasing in `t`; its zero is the
/// optimal transmission duration.
pub fn stationarity_residual(
    t: f64,
    lambda: f64,
    sensor: &FixedRatioSensor,
    cfg: &SystemConfig,
) -> Result<f64> {
    check_time(t, cfg, "stationarity_residual")?;
    if !(lambda >= 0.0) {
        return Err(domain(
            "stationarity_residual",
            format!("lambda {lambda} < 0"),
        ));
    }
    Ok(residual_raw(t, lambda, sensor, cfg))
}

#[inline]
fn residual_raw(t: f64, lambda: f64, sensor: &FixedRatioSensor, cfg: &SystemConfig) -> f64 {
    let p = &sensor.profile;
    let DerivedCoeffs { alpha, beta } = sensor.coeffs;
    let x = tx_rate(t, sensor, cfg);
    let y = y_raw(x, sensor.ratio * beta, cfg.bandwidth, cfg.noise);
    let marginal_utility = p.a * p.b / (beta + p.b * (cfg.t - t));
    marginal_utility + (lambda + cfg.price) / (cfg.eta * p.h) * (y / p.h - alpha / beta)
}

/// Crowd-sensing priority `φ = a b η h / (α + N0 ln2 / (h B R)) - c`.
pub fn priority(profile: &SensorProfile, ratio: f64, cfg: &SystemConfig) -> f64 {
    let cycles = compression_cycles_unchecked(ratio, profile.epsilon);
    let alpha = profile.q_r + profile.q_s + profile.q_c * cycles;
    priority_with_alpha(profile, ratio, alpha, cfg)
}

/// Priority with the compression term written as `q_c e^{εR}` instead of
/// `q_c C(R, ε)`. Kept only so the threshold audit can show it is not the
/// quantity that decides selection.
pub fn priority_exp_variant(profile: &SensorProfile, ratio: f64, cfg: &SystemConfig) -> f64 {
    let alpha = profile.q_r + profile.q_s + profile.q_c * (profile.epsilon * ratio).exp();
    priority_with_alpha(profile, ratio, alpha, cfg)
}

fn priority_with_alpha(profile: &SensorProfile, ratio: f64, alpha: f64, cfg: &SystemConfig) -> f64 {
    let tx = cfg.noise * LN_2 / (profile.h * cfg.bandwidth * ratio);
    profile.a * profile.b * cfg.eta * profile.h / (alpha + tx) - cfg.price
}

/// Optimal transmission duration of one sensor at dual price `lambda`.
pub fn t_given_lambda(
    lambda: f64,
    sensor: &FixedRatioSensor,
    cfg: &SystemConfig,
    opts: &PaOptions,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(domain("t_given_lambda", format!("lambda {lambda} < 0")));
    }
    // sign of the residual at t = T is the sign of φ - λ
    if priority(&sensor.profile, sensor.ratio, cfg) <= lambda {
        return Ok(cfg.t);
    }
    let mut lo = opts.t_min_frac * cfg.t;
    let mut hi = cfg.t;
    if residual_raw(lo, lambda, sensor, cfg) >= 0.0 {
        return Ok(lo);
    }
    for _ in 0..opts.max_iters {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= opts.t_tol * cfg.t || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if residual_raw(mid, lambda, sensor, cfg) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(WpcsError::Convergence {
        solver: "t_given_lambda",
        iterations: opts.max_iters,
    })
}

/// AP energy `P T0` a sensor needs when transmission takes `t`.
pub fn sensor_energy(t: f64, sensor: &FixedRatioSensor, cfg: &SystemConfig) -> Result<f64> {
    check_time(t, cfg, "sensor_energy")?;
    Ok(energy_raw(t, sensor, cfg))
}

#[inline]
fn energy_raw(t: f64, sensor: &FixedRatioSensor, cfg: &SystemConfig) -> f64 {
    if t >= cfg.t {
        return 0.0;
    }
    let p = &sensor.profile;
    let DerivedCoeffs { alpha, beta } = sensor.coeffs;
    let sensing = alpha * (cfg.t - t) / beta;
    let transmission = t / p.h * f_raw(tx_rate(t, sensor, cfg), cfg.bandwidth, cfg.noise);
    (sensing + transmission) / (cfg.eta * p.h)
}

/// Total AP energy `Σ E(t_n)` for the given durations.
pub fn total_energy(ts: &[f64], sensors: &[FixedRatioSensor], cfg: &SystemConfig) -> Result<f64> {
    ts.iter()
        .zip(sensors)
        .map(|(&t, s)| sensor_energy(t, s, cfg))
        .sum()
}

/// Beam power that exactly funds a sensor transmitting for `t` seconds.
pub fn power_from_time(t: f64, sensor: &FixedRatioSensor, cfg: &SystemConfig) -> Result<f64> {
    Ok(sensor_energy(t, sensor, cfg)? / cfg.t0)
}

fn durations_at(
    lambda: f64,
    sensors: &[FixedRatioSensor],
    cfg: &SystemConfig,
    opts: &PaOptions,
) -> Result<(Vec<f64>, f64)> {
    let mut ts = Vec::with_capacity(sensors.len());
    let mut energy = 0.0;
    for s in sensors {
        let t = t_given_lambda(lambda, s, cfg, opts)?;
        energy += energy_raw(t, s, cfg);
        ts.push(t);
    }
    Ok((ts, energy))
}

/// Solves the fixed-ratio problem by bisection on the dual price of the AP
/// power budget.
///
/// If the budget is slack at `λ = 0` that point is optimal. Otherwise the
/// bracket `[0, max φ]` is halved until the total energy meets `P0 T0`; the
/// returned point is always on the feasible side of the budget.
pub fn solve_lambda(
    sensors: &[FixedRatioSensor],
    cfg: &SystemConfig,
    opts: &PaOptions,
) -> Result<PaSolution> {
    if sensors.is_empty() {
        return Err(WpcsError::Infeasible("no sensors".into()));
    }
    let budget = cfg.energy_budget();
    let priorities: Vec<f64> = sensors
        .iter()
        .map(|s| priority(&s.profile, s.ratio, cfg))
        .collect();

    let (mut ts, mut energy) = durations_at(0.0, sensors, cfg, opts)?;
    let mut lambda = 0.0;
    let mut iterations = 0;
    if energy > budget {
        let mut lo = 0.0;
        let mut hi = priorities.iter().cloned().fold(0.0, f64::max);
        let (mut ts_hi, mut energy_hi) = durations_at(hi, sensors, cfg, opts)?;
        let mut done = false;
        while iterations < opts.max_iters {
            if budget - energy_hi <= opts.energy_tol * budget || hi - lo <= 1e-15 * hi {
                done = true;
                break;
            }
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let (ts_mid, energy_mid) = durations_at(mid, sensors, cfg, opts)?;
            if energy_mid <= budget {
                hi = mid;
                ts_hi = ts_mid;
                energy_hi = energy_mid;
            } else {
                lo = mid;
            }
        }
        if !done {
            return Err(WpcsError::Convergence {
                solver: "solve_lambda",
                iterations,
            });
        }
        lambda = hi;
        ts = ts_hi;
        energy = energy_hi;
    }

    let mut powers = Vec::with_capacity(sensors.len());
    let mut raw_bits = Vec::with_capacity(sensors.len());
    let mut selected = Vec::with_capacity(sensors.len());
    for (s, &t) in sensors.iter().zip(&ts) {
        let on = t < cfg.t;
        selected.push(on);
        if on {
            powers.push(energy_raw(t, s, cfg) / cfg.t0);
            raw_bits.push(s.raw_bits_for(t, cfg));
        } else {
            powers.push(0.0);
            raw_bits.push(0.0);
        }
    }
    Ok(PaSolution {
        t_tx: ts,
        lambda,
        powers,
        raw_bits,
        priorities,
        selected,
        total_energy: energy,
        lambda_iterations: iterations,
    })
}

/// Builds the fixed-ratio sensors for `profiles` at `ratios`.
pub fn fixed_ratio_sensors(
    profiles: &[SensorProfile],
    ratios: &[f64],
) -> Result<Vec<FixedRatioSensor>> {
    profiles
        .iter()
        .zip(ratios)
        .map(|(p, &r)| FixedRatioSensor::new(*p, r))
        .collect()
}
