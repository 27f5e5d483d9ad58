//! KKT residuals of solved subproblems, evaluated from textbook closed forms.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::comp_solver::{CompSolution, RatioBound};
use crate::model::{
    compression_cycles, constraint_residuals, sensor_energies, Allocation, SensorProfile,
    SystemConfig,
};
use crate::pa_solver::{priority, FixedRatioSensor, PaSolution};

/// Terms of the fixed-ratio stationarity condition at `(t, λ)`.
struct StationarityTerms {
    utility: f64,
    transmission: f64,
    linear: f64,
}

impl StationarityTerms {
    fn residual(&self) -> f64 {
        self.utility + self.transmission - self.linear
    }

    fn scale(&self) -> f64 {
        self.utility
            .abs()
            .max(self.transmission.abs())
            .max(self.linear.abs())
    }
}

fn stationarity_terms(
    t: f64,
    lambda: f64,
    sensor: &FixedRatioSensor,
    cfg: &SystemConfig,
) -> StationarityTerms {
    let p = &sensor.profile;
    let r = sensor.ratio;
    let alpha = p.q_r + p.q_s + p.q_c * compression_cycles(r, p.epsilon).unwrap_or(f64::NAN);
    let beta = 1.0 / p.s + compression_cycles(r, p.epsilon).unwrap_or(f64::NAN) / p.f_cpu;
    let w = cfg.bandwidth;
    let x = (cfg.t - t) / (r * beta * t);
    let e = (x * LN_2 / w).exp();
    let f = cfg.noise * (e - 1.0);
    let fp = cfg.noise * LN_2 / w * e;
    let y = f - x * fp - fp / (r * beta);
    let k = (lambda + cfg.price) / (cfg.eta * p.h);
    StationarityTerms {
        utility: p.a * p.b / (beta + p.b * (cfg.t - t)),
        transmission: k * y / p.h,
        linear: k * alpha / beta,
    }
}

/// Negated `t`-derivative of the fixed-ratio Lagrangian, written out directly
/// (`f(x) = N0 (2^{x/B} - 1)` and its derivative, no cancellation-safe
/// rewrites). Zero at an interior optimum, negative at `t = T` for idle sensors.
pub fn residual_closed_form(
    t: f64,
    lambda: f64,
    sensor: &FixedRatioSensor,
    cfg: &SystemConfig,
) -> f64 {
    stationarity_terms(t, lambda, sensor, cfg).residual()
}

/// Per-raw-bit derivative of the full-utilization energy in the ratio,
/// `q_c C'(R) - (1/h) [C'(R) g(x) / f + f'(x) / R^2]` with `x = 1 / (d(R) R)`.
pub fn z_closed_form(
    ratio: f64,
    raw_bits: f64,
    profile: &SensorProfile,
    cfg: &SystemConfig,
) -> f64 {
    z_terms(ratio, raw_bits, profile, cfg).0
}

/// `(z, scale)` where scale is the largest term of the sum.
fn z_terms(ratio: f64, raw_bits: f64, p: &SensorProfile, cfg: &SystemConfig) -> (f64, f64) {
    let eps = p.epsilon;
    let cycles = (eps * ratio).exp() - eps.exp();
    let slope = eps * (eps * ratio).exp();
    let d = cfg.t / raw_bits - 1.0 / p.s - cycles / p.f_cpu;
    if !(d > 0.0) {
        return (f64::NAN, f64::NAN);
    }
    let w = cfg.bandwidth;
    let x = 1.0 / (d * ratio);
    let e = (x * LN_2 / w).exp();
    let f = cfg.noise * (e - 1.0);
    let fp = cfg.noise * LN_2 / w * e;
    let g = f - x * fp;
    let terms = [
        p.q_c * slope,
        -slope * g / (p.h * p.f_cpu),
        -fp / (p.h * ratio * ratio),
    ];
    let scale = terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (terms.iter().sum(), scale)
}

/// Residuals of a fixed-ratio solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaKktReport {
    /// Largest `|residual|` over interior sensors.
    pub stationarity_abs: f64,
    /// Largest `|residual|` divided by the largest term of its sum.
    pub stationarity_rel: f64,
    /// Idle sensors whose residual at `t = T` is positive.
    pub boundary_violations: usize,
    /// Sensors where `φ ≥ λ` disagrees with `P > 0`.
    pub threshold_mismatches: usize,
    /// `|P0 T0 - Σ E| / (P0 T0)` when `λ > 0`; zero otherwise.
    pub slackness: f64,
    /// `(Σ E - P0 T0) / (P0 T0)`, positive when the budget is broken.
    pub budget_excess: f64,
    /// Worst relative time slack over selected sensors.
    pub time_tightness: f64,
    /// Worst relative energy slack over selected sensors.
    pub energy_tightness: f64,
    pub lambda_negative: bool,
}

impl PaKktReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.stationarity_rel <= tol
            && self.boundary_violations == 0
            && self.threshold_mismatches == 0
            && self.slackness <= tol
            && self.budget_excess <= tol
            && self.time_tightness <= tol
            && self.energy_tightness <= tol
            && !self.lambda_negative
    }
}

/// Audits a fixed-ratio solution against its own inputs.
pub fn kkt_audit_pa(
    sol: &PaSolution,
    sensors: &[FixedRatioSensor],
    cfg: &SystemConfig,
) -> PaKktReport {
    let lambda = sol.lambda;
    let mut stationarity_abs: f64 = 0.0;
    let mut stationarity_rel: f64 = 0.0;
    let mut boundary_violations = 0;
    let mut threshold_mismatches = 0;
    let mut energy = 0.0;
    let mut allocs = Vec::with_capacity(sensors.len());

    for (i, s) in sensors.iter().enumerate() {
        let p = &s.profile;
        let t = sol.t_tx[i];
        let phi = priority(p, s.ratio, cfg);
        let powered = sol.powers[i] > 0.0;
        if (phi >= lambda) != powered {
            threshold_mismatches += 1;
        }
        let cycles = compression_cycles(s.ratio, p.epsilon).unwrap_or(f64::NAN);
        let bits = if t < cfg.t {
            (cfg.t - t) / (1.0 / p.s + cycles / p.f_cpu)
        } else {
            0.0
        };
        let alloc = Allocation::new(p, bits, s.ratio, t, sol.powers[i]);
        let used = sensor_energies(p, &alloc, cfg)
            .map(|e| e.total())
            .unwrap_or(f64::INFINITY);
        energy += used / (cfg.eta * p.h);
        allocs.push(if bits > 0.0 {
            alloc
        } else {
            Allocation::idle(s.ratio, t)
        });

        if t >= cfg.t {
            if residual_closed_form(cfg.t, lambda, s, cfg) > 0.0 {
                boundary_violations += 1;
            }
        } else {
            let terms = stationarity_terms(t, lambda, s, cfg);
            let r = terms.residual().abs();
            stationarity_abs = stationarity_abs.max(r);
            let scale = terms.scale();
            stationarity_rel = stationarity_rel.max(if scale > 0.0 { r / scale } else { r });
        }
    }

    let budget = cfg.energy_budget();
    let slackness = if lambda > 0.0 {
        (budget - energy).abs() / budget
    } else {
        0.0
    };
    let profiles: Vec<SensorProfile> = sensors.iter().map(|s| s.profile).collect();
    let (time_tightness, energy_tightness) = tightness(&allocs, &profiles, cfg);
    PaKktReport {
        stationarity_abs,
        stationarity_rel,
        boundary_violations,
        threshold_mismatches,
        slackness,
        budget_excess: (energy - budget) / budget,
        time_tightness,
        energy_tightness,
        lambda_negative: lambda < 0.0,
    }
}

/// Worst `|relative slack|` of the time and energy constraints over sensors
/// that collect data.
pub(crate) fn tightness(
    allocs: &[Allocation],
    profiles: &[SensorProfile],
    cfg: &SystemConfig,
) -> (f64, f64) {
    let slack = constraint_residuals(allocs, profiles, cfg);
    let mut time: f64 = 0.0;
    let mut energy: f64 = 0.0;
    for (i, a) in allocs.iter().enumerate() {
        if a.raw_bits <= 0.0 {
            continue;
        }
        time = time.max((slack.time[i] / cfg.t).abs());
        let scale = slack.energy_scale[i];
        energy = energy.max(if scale > 0.0 {
            (slack.energy[i] / scale).abs()
        } else {
            f64::INFINITY
        });
    }
    (time, energy)
}

/// Residuals of a compression-ratio solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompKktReport {
    /// `|t - (T - l/s - l C/f)| / T`.
    pub full_utilization: f64,
    /// Time left per raw bit at the chosen ratio; must be positive.
    pub d: f64,
    /// `z` at the chosen ratio.
    pub z: f64,
    /// `|z|` over the largest term of its sum.
    pub z_rel: f64,
    /// Whether the sign of `z` agrees with the reported bound.
    pub branch_ok: bool,
    /// Multiplier of the round-length constraint, `-g(x) / h`.
    pub time_multiplier: f64,
    /// `|energy - recomputed energy| / energy`.
    pub energy_gap: f64,
}

impl CompKktReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.full_utilization <= tol
            && self.d > 0.0
            && self.branch_ok
            && self.time_multiplier >= 0.0
            && self.energy_gap <= tol
    }
}

/// Audits a compression-ratio solution for `raw_bits`.
pub fn kkt_audit_comp(
    sol: &CompSolution,
    raw_bits: f64,
    profile: &SensorProfile,
    cfg: &SystemConfig,
    tol: f64,
) -> CompKktReport {
    if sol.bound == RatioBound::Idle || raw_bits <= 0.0 {
        return CompKktReport {
            full_utilization: 0.0,
            d: f64::INFINITY,
            z: 0.0,
            z_rel: 0.0,
            branch_ok: raw_bits <= 0.0 && sol.min_energy == 0.0,
            time_multiplier: 0.0,
            energy_gap: 0.0,
        };
    }
    let p = profile;
    let r = sol.ratio;
    let cycles = (p.epsilon * r).exp() - p.epsilon.exp();
    let d = cfg.t / raw_bits - 1.0 / p.s - cycles / p.f_cpu;
    let t_full = cfg.t - raw_bits / p.s - raw_bits * cycles / p.f_cpu;
    let (z, scale) = z_terms(r, raw_bits, p, cfg);
    let z_rel = if scale > 0.0 {
        z.abs() / scale
    } else {
        z.abs()
    };
    let branch_ok = match sol.bound {
        RatioBound::Interior => z_rel <= tol,
        RatioBound::Lower => r == 1.0 && (z >= -tol * scale || !z.is_finite()),
        RatioBound::Upper => z <= tol * scale,
        RatioBound::Idle => unreachable!(),
    };

    let x = 1.0 / (d * r);
    let e = (x * LN_2 / cfg.bandwidth).exp();
    let g = cfg.noise * (e - 1.0) - x * cfg.noise * LN_2 / cfg.bandwidth * e;
    let alloc = Allocation::new(p, raw_bits, r, sol.t_tx, 0.0);
    let energy = sensor_energies(p, &alloc, cfg)
        .map(|e| e.total())
        .unwrap_or(f64::INFINITY);
    CompKktReport {
        full_utilization: (sol.t_tx - t_full).abs() / cfg.t,
        d,
        z,
        z_rel,
        branch_ok,
        time_multiplier: -g / p.h,
        energy_gap: (sol.min_energy - energy).abs() / energy,
    }
}
