//! Per-sensor compression ratio and transmission duration for a fixed
//! sensing-data size.
//!
//! Holding the data size fixed leaves utility unchanged, so the sensor only
//! minimizes its own energy. The optimum always fills the sensing round, which
//! ties the transmission time to the ratio through `t = l d(R)`; what remains
//! is the one-dimensional root of the increasing function `z(R)`, clamped to
//! `[1, R_max]` and to the region where some transmission time is left.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{domain, Result, WpcsError};
use crate::model::{
    compression_cycles_slope, compression_cycles_unchecked, transmission_energy, SensorProfile,
    SystemConfig,
};

/// Result of the compression subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompSolution {
    pub ratio: f64,
    pub t_tx: f64,
    /// Sensor-side energy at `(ratio, t_tx)` (J).
    pub min_energy: f64,
    /// `z(ratio)`; close to zero for an interior root.
    pub root_residual: f64,
    pub bound: RatioBound,
}

/// Which branch of the clamp produced the ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioBound {
    Interior,
    /// `z(1) >= 0` or `R_max = 1`.
    Lower,
    /// Clamped at `R_max` or at the edge of the feasible region.
    Upper,
    /// No data to compress.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompOptions {
    /// Absolute width of the final ratio bracket.
    pub ratio_tol: f64,
    /// Relative back-off from the feasibility edge.
    pub edge_backoff: f64,
    pub max_iters: usize,
}

impl Default for CompOptions {
    fn default() -> Self {
        Self {
            ratio_tol: 1e-10,
            edge_backoff: 1e-9,
            max_iters: 200,
        }
    }
}

/// Time per raw bit left over for transmission,
/// `d(R) = T/l - 1/s - C(R, ε)/f`. Non-positive values mark infeasible ratios.
pub fn d_func(ratio: f64, raw_bits: f64, profile: &SensorProfile, cfg: &SystemConfig) -> f64 {
    cfg.t / raw_bits
        - 1.0 / profile.s
        - compression_cycles_unchecked(ratio, profile.epsilon) / profile.f_cpu
}

/// Ratio at which `d(R) = 0`, i.e. sensing plus compression use the whole round.
/// `None` when even `R = 1` does not fit.
pub fn feasibility_edge(raw_bits: f64, profile: &SensorProfile, cfg: &SystemConfig) -> Option<f64> {
    let slack_cycles = profile.f_cpu * (cfg.t / raw_bits - 1.0 / profile.s);
    if !(slack_cycles > 0.0) {
        return None;
    }
    // e^{εR} - e^ε = slack_cycles
    let eps = profile.epsilon;
    Some(1.0 + (slack_cycles * (-eps).exp()).ln_1p() / eps)
}

/// Derivative (per raw bit) of the full-utilization energy in the ratio.
///
/// Evaluated in a rearranged form
/// `q_c ε e^{εR} + (N0/h) [ε e^{εR}/f + 2^{x/B} (ε e^{εR} (x ln2/B - 1)/f - ln2/(B R^2))]`
/// with `x = 1/(d R)`, which equals the textbook expression but stays free of
/// `inf - inf` as the ratio approaches the feasibility edge.
pub fn z_func(
    ratio: f64,
    raw_bits: f64,
    profile: &SensorProfile,
    cfg: &SystemConfig,
) -> Result<f64> {
    let d = d_func(ratio, raw_bits, profile, cfg);
    if !(d > 0.0) {
        return Err(domain("z_func", format!("d({ratio}) = {d} <= 0")));
    }
    Ok(z_raw(ratio, d, profile, cfg))
}

fn z_raw(ratio: f64, d: f64, profile: &SensorProfile, cfg: &SystemConfig) -> f64 {
    let slope = compression_cycles_slope(ratio, profile.epsilon);
    let x = 1.0 / (d * ratio);
    let v = x * LN_2 / cfg.bandwidth;
    let coef = slope * (v - 1.0) / profile.f_cpu - LN_2 / (cfg.bandwidth * ratio * ratio);
    let growth = if coef == 0.0 { 0.0 } else { coef * v.exp() };
    profile.q_c * slope + cfg.noise / profile.h * (slope / profile.f_cpu + growth)
}

/// Sensor energy `(q_r + q_s + q_c C(R)) l + (t/h) f(l / (t R))` at `(R, t)`.
pub fn p1b_objective(
    ratio: f64,
    t: f64,
    raw_bits: f64,
    profile: &SensorProfile,
    cfg: &SystemConfig,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(domain("p1b_objective", format!("t = {t} <= 0")));
    }
    if !(ratio >= 1.0) {
        return Err(domain("p1b_objective", format!("ratio {ratio} < 1")));
    }
    let cycles = compression_cycles_unchecked(ratio, profile.epsilon);
    let linear = (profile.q_r + profile.q_s + profile.q_c * cycles) * raw_bits;
    Ok(linear + transmission_energy(raw_bits / ratio, t, profile.h, cfg)?)
}

/// Transmission time left when the round is fully used at `ratio`.
pub fn full_utilization_time(
    ratio: f64,
    raw_bits: f64,
    profile: &SensorProfile,
    cfg: &SystemConfig,
) -> f64 {
    cfg.t
        - raw_bits * compression_cycles_unchecked(ratio, profile.epsilon) / profile.f_cpu
        - raw_bits / profile.s
}

/// Optimal compression ratio for `raw_bits` by bisection on `z`.
pub fn optimal_ratio(
    raw_bits: f64,
    profile: &SensorProfile,
    cfg: &SystemConfig,
    opts: &CompOptions,
) -> Result<CompSolution> {
    if !(raw_bits >= 0.0) {
        return Err(domain("optimal_ratio", format!("raw_bits {raw_bits} < 0")));
    }
    if raw_bits == 0.0 {
        return Ok(CompSolution {
            ratio: 1.0,
            t_tx: cfg.t,
            min_energy: 0.0,
            root_residual: 0.0,
            bound: RatioBound::Idle,
        });
    }
    let edge = feasibility_edge(raw_bits, profile, cfg).ok_or_else(|| {
        WpcsError::Infeasible(format!(
            "{raw_bits} bits cannot be sensed within T = {}",
            cfg.t
        ))
    })?;
    let z = |r: f64| z_raw(r, d_func(r, raw_bits, profile, cfg), profile, cfg);

    let upper = profile.r_max.min(edge * (1.0 - opts.edge_backoff));
    let (ratio, bound) = if upper <= 1.0 || z(1.0) >= 0.0 {
        (1.0, RatioBound::Lower)
    } else if z(upper) <= 0.0 {
        (upper, RatioBound::Upper)
    } else {
        let (mut lo, mut hi) = (1.0, upper);
        let mut iters = 0;
        while hi - lo >= opts.ratio_tol {
            if iters == opts.max_iters {
                return Err(WpcsError::Convergence {
                    solver: "optimal_ratio",
                    iterations: iters,
                });
            }
            iters += 1;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if z(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (0.5 * (lo + hi), RatioBound::Interior)
    };

    let t_tx = full_utilization_time(ratio, raw_bits, profile, cfg);
    let min_energy = p1b_objective(ratio, t_tx, raw_bits, profile, cfg)?;
    Ok(CompSolution {
        ratio,
        t_tx,
        min_energy,
        root_residual: z(ratio),
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{sensor, system};
    use crate::model::{compression_cycles, g_func, rate_energy_derivative};

    /// z written term by term, as the derivative of the energy over the ratio.
    fn z_textbook(r: f64, bits: f64, p: &SensorProfile, cfg: &SystemConfig) -> f64 {
        let d = d_func(r, bits, p, cfg);
        let x = 1.0 / (d * r);
        let g = g_func(x, cfg.bandwidth, cfg.noise).unwrap();
        let fp = rate_energy_derivative(x, cfg.bandwidth, cfg.noise).unwrap();
        (p.q_c - g / (p.h * p.f_cpu)) * p.epsilon * (p.epsilon * r).exp() - fp / (p.h * r * r)
    }

    fn slow_cpu() -> SensorProfile {
        let mut p = sensor();
        p.f_cpu = 2e8;
        p
    }

    #[test]
    fn d_examples() {
        let cfg = system();
        let p = sensor();
        assert_eq!(d_func(1.0, 5000.0, &p, &cfg), cfg.t / 5000.0 - 1.0 / p.s);
        let mut prev = f64::INFINITY;
        for i in 0..=300 {
            let d = d_func(1.0 + i as f64 / 150.0, 5000.0, &p, &cfg);
            assert!(d < prev);
            prev = d;
        }
        let edge = feasibility_edge(5000.0, &p, &cfg).unwrap();
        assert!(d_func(edge, 5000.0, &p, &cfg).abs() <= 1e-15);
        assert!(feasibility_edge(2.0 * p.s * cfg.t, &p, &cfg).is_none());
    }

    #[test]
    fn edge_agrees_with_bisection_of_d() {
        let cfg = system();
        let p = slow_cpu();
        let bits = 8000.0;
        let (mut lo, mut hi) = (1.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d_func(mid, bits, &p, &cfg) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let edge = feasibility_edge(bits, &p, &cfg).unwrap();
        assert!((edge - lo).abs() <= 1e-12);
        assert!(full_utilization_time(edge, bits, &p, &cfg).abs() <= 1e-12);
    }

    #[test]
    fn z_matches_textbook_form() {
        let cfg = system();
        let p = slow_cpu();
        for &bits in &[500.0, 3000.0, 8000.0] {
            let edge = feasibility_edge(bits, &p, &cfg).unwrap().min(p.r_max);
            for i in 0..100 {
                let r = 1.0 + (edge - 1.0) * i as f64 / 100.0;
                let a = z_func(r, bits, &p, &cfg).unwrap();
                let b = z_textbook(r, bits, &p, &cfg);
                if b.is_finite() {
                    assert!(
                        (a - b).abs() <= 1e-8 * a.abs().max(b.abs()),
                        "{r}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn z_first_bracket_is_positive() {
        let cfg = system();
        let p = sensor();
        for i in 0..50 {
            let r = 1.0 + i as f64 / 25.0;
            let d = d_func(r, 4000.0, &p, &cfg);
            let g = g_func(1.0 / (d * r), cfg.bandwidth, cfg.noise).unwrap();
            assert!(p.q_c - g / (p.h * p.f_cpu) >= p.q_c);
        }
    }

    #[test]
    fn z_strictly_increasing_and_finite_near_edge() {
        let cfg = system();
        let p = slow_cpu();
        let bits = 8000.0;
        let edge = feasibility_edge(bits, &p, &cfg).unwrap();
        let top = edge * (1.0 - 1e-9);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=5000 {
            let r = 1.0 + (top - 1.0) * i as f64 / 5000.0;
            let z = z_func(r, bits, &p, &cfg).unwrap();
            assert!(!z.is_nan());
            assert!(z > prev || (z == prev && z.is_infinite()), "{r}");
            prev = z;
        }
        assert!(z_func(edge * 1.01, bits, &p, &cfg).is_err());
    }

    #[test]
    fn idle_sensor() {
        let sol = optimal_ratio(0.0, &sensor(), &system(), &CompOptions::default()).unwrap();
        assert_eq!((sol.ratio, sol.t_tx, sol.min_energy), (1.0, 1.0, 0.0));
    }

    #[test]
    fn infeasible_size_is_an_error() {
        let p = sensor();
        let r = optimal_ratio(p.s * 1.5, &p, &system(), &CompOptions::default());
        assert!(matches!(r, Err(WpcsError::Infeasible(_))));
    }

    #[test]
    fn positive_z_at_one_keeps_raw_data() {
        // expensive compression: z(1) > 0
        let cfg = system();
        let mut p = sensor();
        p.q_c = 1e-9;
        let bits = 2000.0;
        assert!(z_func(1.0, bits, &p, &cfg).unwrap() > 0.0);
        let sol = optimal_ratio(bits, &p, &cfg, &CompOptions::default()).unwrap();
        assert_eq!(sol.ratio, 1.0);
        assert_eq!(sol.bound, RatioBound::Lower);
    }

    #[test]
    fn cheap_compression_hits_r_max() {
        let cfg = system();
        let mut p = sensor();
        p.q_c = 1e-22;
        p.f_cpu = 1e12;
        p.r_max = 1.4;
        let sol = optimal_ratio(6000.0, &p, &cfg, &CompOptions::default()).unwrap();
        assert_eq!(sol.ratio, 1.4);
        assert_eq!(sol.bound, RatioBound::Upper);
    }

    #[test]
    fn interior_root_matches_grid_scan() {
        let cfg = system();
        let p = slow_cpu();
        let bits = 6000.0;
        let sol = optimal_ratio(bits, &p, &cfg, &CompOptions::default()).unwrap();
        assert_eq!(sol.bound, RatioBound::Interior);
        assert!(
            sol.root_residual.abs() <= 1e-6 * p.q_c * p.epsilon * (p.epsilon * sol.ratio).exp()
        );

        let top = feasibility_edge(bits, &p, &cfg).unwrap().min(p.r_max);
        let n = 100_000;
        let mut best = (f64::INFINITY, 1.0);
        for i in 0..n {
            let r = 1.0 + (top - 1.0) * i as f64 / n as f64;
            let t = cfg.t - bits / p.s - bits * compression_cycles(r, p.epsilon).unwrap() / p.f_cpu;
            if t <= 0.0 {
                continue;
            }
            let e = p1b_objective(r, t, bits, &p, &cfg).unwrap();
            if e < best.0 {
                best = (e, r);
            }
        }
        assert!((sol.ratio - best.1).abs() <= 1e-3);
        assert!(sol.min_energy <= best.0 * (1.0 + 1e-6));
        // full utilization of the round
        let used = sol.t_tx
            + bits * compression_cycles(sol.ratio, p.epsilon).unwrap() / p.f_cpu
            + bits / p.s;
        assert!((used - cfg.t).abs() <= 1e-9 * cfg.t);
    }

    #[test]
    fn objective_examples() {
        let cfg = system();
        let p = sensor();
        assert_eq!(p1b_objective(1.7, 0.3, 0.0, &p, &cfg).unwrap(), 0.0);
        // R = 1 and l = B t: the rate is exactly B and f(B) = N0
        let t = 0.4;
        let bits = cfg.bandwidth * t;
        let e = p1b_objective(1.0, t, bits, &p, &cfg).unwrap();
        let expect = (p.q_r + p.q_s) * bits + t / p.h * cfg.noise;
        assert!((e - expect).abs() <= 1e-14 * expect);
        assert!(p1b_objective(1.0, 0.0, bits, &p, &cfg).is_err());
    }

    #[test]
    fn objective_convex_along_full_utilization() {
        let cfg = system();
        let p = slow_cpu();
        let bits = 6000.0;
        let top = feasibility_edge(bits, &p, &cfg).unwrap().min(p.r_max);
        let vals: Vec<f64> = (0..2000)
            .map(|i| {
                let r = 1.0 + (top - 1.0) * i as f64 / 2000.0;
                p1b_objective(r, full_utilization_time(r, bits, &p, &cfg), bits, &p, &cfg).unwrap()
            })
            .collect();
        for w in vals.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-12 * w[1]);
        }
    }
}
