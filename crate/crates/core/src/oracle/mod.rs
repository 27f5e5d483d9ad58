//! Independent checks of solver output: exhaustive grid search on small
//! instances, finite-difference audits of curve shape, and KKT residuals.
//!
//! Nothing here calls into the solvers' own evaluation paths. Objectives are
//! rebuilt from the primitive functions in [`crate::model`] so that a bug in a
//! solver cannot hide itself in its own check.

mod battery;
mod kkt;

pub use battery::{
    analytic_checks, audit_allocations, audit_instance_report, run_battery, AuditCheck,
    AuditReport, BatteryConfig,
};
pub use kkt::{
    kkt_audit_comp, kkt_audit_pa, residual_closed_form, z_closed_form, CompKktReport, PaKktReport,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, WpcsError};
use crate::model::{compression_cycles, sensor_energies, Allocation, SensorProfile, SystemConfig};
use crate::pa_solver::FixedRatioSensor;

/// Relative tolerance for the finite-difference curve audits.
pub const CURVE_TOL: f64 = 1e-12;

/// Largest instance the P2 grid oracle accepts.
pub const MAX_GRID_SENSORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// Regular grid with the same number of points on every axis (ends included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(points_per_axis: usize, axes: &[(&str, f64, f64)]) -> Self {
        Self {
            points_per_axis,
            axes: axes
                .iter()
                .map(|&(name, lower, upper)| GridAxis {
                    name: name.to_string(),
                    lower,
                    upper,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_axis < 2 {
            return Err(invalid("grid.points_per_axis", "must be >= 2"));
        }
        for a in &self.axes {
            if !(a.lower < a.upper) {
                return Err(invalid(
                    format!("grid.axes.{}", a.name),
                    format!("lower {} must be < upper {}", a.lower, a.upper),
                ));
            }
        }
        Ok(())
    }

    pub fn axis_values(&self, axis: usize) -> Vec<f64> {
        let a = &self.axes[axis];
        let n = self.points_per_axis;
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    a.upper
                } else {
                    a.lower + (a.upper - a.lower) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Spacing between neighbouring points on `axis`.
    pub fn cell(&self, axis: usize) -> f64 {
        let a = &self.axes[axis];
        (a.upper - a.lower) / (self.points_per_axis - 1) as f64
    }
}

/// AP energy and utility of one fixed-ratio sensor transmitting for `t`,
/// with the round and the harvested energy fully used.
fn fixed_ratio_point(s: &FixedRatioSensor, t: f64, cfg: &SystemConfig) -> (f64, f64) {
    let p = &s.profile;
    let cycles = compression_cycles(s.ratio, p.epsilon).unwrap_or(f64::NAN);
    let beta = 1.0 / p.s + cycles / p.f_cpu;
    let bits = ((cfg.t - t) / beta).max(0.0);
    let alloc = Allocation::new(p, bits, s.ratio, t, 0.0);
    let used = sensor_energies(p, &alloc, cfg)
        .map(|e| e.total())
        .unwrap_or(f64::INFINITY);
    (used / (cfg.eta * p.h), p.utility(bits))
}

/// Scores one assignment of durations; `None` when it breaks the AP budget.
fn p2_reward(sensors: &[FixedRatioSensor], ts: &[f64], cfg: &SystemConfig) -> Option<f64> {
    let mut energy = 0.0;
    let mut utility = 0.0;
    for (s, &t) in sensors.iter().zip(ts) {
        let (e, u) = fixed_ratio_point(s, t, cfg);
        energy += e;
        utility += u;
    }
    (energy <= cfg.energy_budget()).then_some(utility - cfg.price * energy)
}

/// Best feasible point of the fixed-ratio problem on a grid over the
/// transmission durations (one axis per sensor).
pub fn grid_best_p2(
    sensors: &[FixedRatioSensor],
    cfg: &SystemConfig,
    grid: &GridSpec,
) -> Result<(Vec<f64>, f64)> {
    if sensors.len() > MAX_GRID_SENSORS {
        return Err(WpcsError::Size(format!(
            "{} sensors (max {MAX_GRID_SENSORS})",
            sensors.len()
        )));
    }
    grid.validate()?;
    if grid.axes.len() != sensors.len() {
        return Err(invalid(
            "grid.axes",
            format!("{} axes for {} sensors", grid.axes.len(), sensors.len()),
        ));
    }
    let n = grid.points_per_axis;
    let values: Vec<Vec<f64>> = (0..sensors.len()).map(|a| grid.axis_values(a)).collect();
    let total = n.pow(sensors.len() as u32);

    let best = (0..total)
        .into_par_iter()
        .filter_map(|flat| {
            let mut idx = flat;
            let ts: Vec<f64> = values
                .iter()
                .map(|v| {
                    let t = v[idx % n];
                    idx /= n;
                    t
                })
                .collect();
            p2_reward(sensors, &ts, cfg).map(|r| (r, flat))
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        });

    let (reward, flat) =
        best.ok_or_else(|| WpcsError::Infeasible("no feasible grid point".into()))?;
    let mut idx = flat;
    let ts = values
        .iter()
        .map(|v| {
            let t = v[idx % n];
            idx /= n;
            t
        })
        .collect();
    Ok((ts, reward))
}

/// Best point of the compression subproblem on a grid.
///
/// With one axis (`R`), the transmission time is the remainder of the round
/// at each ratio. With two axes (`R`, `t`) both are searched and points that
/// overrun the round are skipped. Returns `(R, t, energy)`.
pub fn grid_best_p1b(
    raw_bits: f64,
    profile: &SensorProfile,
    cfg: &SystemConfig,
    grid: &GridSpec,
) -> Result<(f64, f64, f64)> {
    grid.validate()?;
    if !(raw_bits > 0.0) {
        return Err(invalid("raw_bits", "must be > 0"));
    }
    let remaining = |r: f64| {
        let cycles = compression_cycles(r, profile.epsilon).unwrap_or(f64::INFINITY);
        cfg.t - raw_bits / profile.s - raw_bits * cycles / profile.f_cpu
    };
    if !(remaining(1.0) > 0.0) {
        return Err(WpcsError::Infeasible(format!(
            "{raw_bits} bits cannot be sensed within T"
        )));
    }
    let energy = |r: f64, t: f64| {
        let alloc = Allocation::new(profile, raw_bits, r, t, 0.0);
        sensor_energies(profile, &alloc, cfg)
            .map(|e| e.total())
            .unwrap_or(f64::INFINITY)
    };
    let ratios = grid.axis_values(0);
    let candidates: Vec<(f64, f64, f64)> = match grid.axes.len() {
        1 => ratios
            .par_iter()
            .filter_map(|&r| {
                let t = remaining(r);
                (t > 0.0).then(|| (r, t, energy(r, t)))
            })
            .collect(),
        2 => {
            let times = grid.axis_values(1);
            ratios
                .par_iter()
                .flat_map_iter(|&r| {
                    let limit = remaining(r);
                    times
                        .iter()
                        .filter(move |&&t| t > 0.0 && t <= limit)
                        .map(move |&t| (r, t, energy(r, t)))
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        k => {
            return Err(invalid(
                "grid.axes",
                format!("expected 1 or 2 axes, got {k}"),
            ))
        }
    };
    candidates
        .into_iter()
        .fold(None, |best: Option<(f64, f64, f64)>, c| match best {
            Some(b) if b.2 <= c.2 => Some(b),
            _ => Some(c),
        })
        .ok_or_else(|| WpcsError::Infeasible("no feasible grid point".into()))
}

/// Outcome of a finite-difference scan of a scalar curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveAudit {
    /// Most adverse difference found (second difference for convexity,
    /// signed step for monotonicity); positive means no adverse step.
    pub worst: f64,
    /// Largest finite `|f|` on the scan.
    pub scale: f64,
    pub violations: usize,
    /// Neighbouring finite samples that are exactly equal (monotonicity only).
    pub flat: usize,
    pub samples: usize,
    pub passed: bool,
}

fn sample(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|i| f(lo + (hi - lo) * i as f64 / (samples - 1) as f64))
        .collect()
}

fn curve_scale(vals: &[f64]) -> f64 {
    vals.iter()
        .filter(|v| v.is_finite())
        .fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Checks that second differences of `f` on an even grid over `[lo, hi]` are
/// nonnegative up to `CURVE_TOL` times the largest `|f|` in each triple.
/// Triples with a non-finite value are skipped.
pub fn convexity_audit(f: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> CurveAudit {
    assert!(samples >= 3, "convexity audit needs at least 3 samples");
    let vals = sample(&f, lo, hi, samples);
    let scale = curve_scale(&vals);
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for w in vals.windows(3) {
        if !w.iter().all(|v| v.is_finite()) {
            continue;
        }
        let d2 = w[2] - 2.0 * w[1] + w[0];
        let local = w[0].abs().max(w[1].abs()).max(w[2].abs());
        worst = worst.min(d2);
        if d2 < -CURVE_TOL * local {
            violations += 1;
        }
    }
    CurveAudit {
        worst,
        scale,
        violations,
        flat: 0,
        samples,
        passed: violations == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Checks that consecutive samples of `f` move in `direction`, allowing
/// adverse steps up to `CURVE_TOL` times the larger `|f|` of the pair. Equal
/// infinite neighbours count as flat.
pub fn monotonicity_audit(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    samples: usize,
    direction: Direction,
) -> CurveAudit {
    assert!(samples >= 2, "monotonicity audit needs at least 2 samples");
    let vals = sample(&f, lo, hi, samples);
    let scale = curve_scale(&vals);
    let sign = match direction {
        Direction::Increasing => 1.0,
        Direction::Decreasing => -1.0,
    };
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    let mut flat = 0;
    for w in vals.windows(2) {
        if w[0] == w[1] && w[0].is_finite() {
            flat += 1;
        }
        let step = if w[0] == w[1] {
            0.0
        } else {
            sign * (w[1] - w[0])
        };
        if step.is_nan() {
            violations += 1;
            continue;
        }
        worst = worst.min(step);
        if step < -CURVE_TOL * w[0].abs().max(w[1].abs()) {
            violations += 1;
        }
    }
    CurveAudit {
        worst,
        scale,
        violations,
        flat,
        samples,
        passed: violations == 0,
    }
}
