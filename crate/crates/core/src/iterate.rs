//! Block-coordinate ascent over the full problem: alternate the fixed-ratio
//! power allocation with the fixed-size compression update until the
//! operator's reward stops improving.
//!
//! Each half step solves its block exactly and the previous point is feasible
//! for it, so the reward sequence can only go up.

use serde::{Deserialize, Serialize};

use crate::comp_solver::{optimal_ratio, CompOptions};
use crate::error::{invalid, Result, WpcsError};
use crate::model::{Allocation, SensorProfile, SolveReport, SystemConfig};
use crate::pa_solver::{
    fixed_ratio_sensors, solve_lambda, stationarity_residual, PaOptions, PaSolution,
};

/// Relative slack allowed before a reward decrease counts as an invariant breach.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterateConfig {
    /// Starting ratio of every sensor; clamped to each sensor's `R_max`.
    pub init_ratio: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub pa: PaOptions,
    pub comp: CompOptions,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self {
            init_ratio: 1.5,
            rel_tol: 1e-6,
            max_iters: 50,
            pa: PaOptions::default(),
            comp: CompOptions::default(),
        }
    }
}

impl IterateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_ratio >= 1.0 && self.init_ratio.is_finite()) {
            return Err(invalid(
                "iterate.init_ratio",
                format!("must be >= 1, got {}", self.init_ratio),
            ));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid(
                "iterate.rel_tol",
                format!("must be > 0, got {}", self.rel_tol),
            ));
        }
        if self.max_iters == 0 {
            return Err(invalid("iterate.max_iters", "must be >= 1"));
        }
        Ok(())
    }
}

/// Current point of the ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub ratios: Vec<f64>,
    pub allocs: Vec<Allocation>,
    pub reward: f64,
    pub lambda: f64,
    pub kkt_residual: f64,
}

impl State {
    /// Everything idle at the given starting ratios.
    pub fn initial(profiles: &[SensorProfile], cfg: &SystemConfig, init_ratio: f64) -> Self {
        let ratios: Vec<f64> = profiles.iter().map(|p| init_ratio.min(p.r_max)).collect();
        let allocs = ratios.iter().map(|&r| Allocation::idle(r, cfg.t)).collect();
        Self {
            ratios,
            allocs,
            reward: 0.0,
            lambda: 0.0,
            kkt_residual: 0.0,
        }
    }
}

fn reward_of(profiles: &[SensorProfile], allocs: &[Allocation], cfg: &SystemConfig) -> f64 {
    SolveReport::from_allocations(profiles, allocs, cfg).reward
}

/// Largest `|stationarity residual|` over the selected sensors of a fixed-ratio solution.
pub fn max_stationarity(
    sol: &PaSolution,
    profiles: &[SensorProfile],
    ratios: &[f64],
    cfg: &SystemConfig,
) -> Result<f64> {
    let sensors = fixed_ratio_sensors(profiles, ratios)?;
    let mut worst: f64 = 0.0;
    for (i, s) in sensors.iter().enumerate() {
        if sol.selected[i] {
            worst = worst.max(stationarity_residual(sol.t_tx[i], sol.lambda, s, cfg)?.abs());
        }
    }
    Ok(worst)
}

/// Re-optimizes power, data sizes and durations at the current ratios.
pub fn step_pa(
    state: &State,
    profiles: &[SensorProfile],
    cfg: &SystemConfig,
    icfg: &IterateConfig,
) -> Result<State> {
    let sensors = fixed_ratio_sensors(profiles, &state.ratios)?;
    let sol = solve_lambda(&sensors, cfg, &icfg.pa)?;
    let allocs = sol.allocations(&sensors);
    Ok(State {
        ratios: state.ratios.clone(),
        reward: reward_of(profiles, &allocs, cfg),
        lambda: sol.lambda,
        kkt_residual: max_stationarity(&sol, profiles, &state.ratios, cfg)?,
        allocs,
    })
}

/// Re-optimizes ratios and durations at the current data sizes; powers shrink
/// to the new minimum energies. Idle sensors fall back to `R = 1`.
pub fn step_comp(
    state: &State,
    profiles: &[SensorProfile],
    cfg: &SystemConfig,
    icfg: &IterateConfig,
) -> Result<State> {
    let mut ratios = Vec::with_capacity(profiles.len());
    let mut allocs = Vec::with_capacity(profiles.len());
    for (p, a) in profiles.iter().zip(&state.allocs) {
        if a.raw_bits <= 0.0 {
            ratios.push(1.0);
            allocs.push(Allocation::idle(1.0, cfg.t));
            continue;
        }
        let sol = optimal_ratio(a.raw_bits, p, cfg, &icfg.comp)?;
        let power = sol.min_energy / (cfg.eta * p.h * cfg.t0);
        ratios.push(sol.ratio);
        allocs.push(Allocation::new(p, a.raw_bits, sol.ratio, sol.t_tx, power));
    }
    Ok(State {
        reward: reward_of(profiles, &allocs, cfg),
        ratios,
        allocs,
        lambda: state.lambda,
        kkt_residual: state.kkt_residual,
    })
}

fn check_ascent(iteration: usize, before: f64, after: f64) -> Result<()> {
    if after < before - MONOTONE_TOL * before.abs().max(after.abs()) {
        return Err(WpcsError::NonMonotone {
            iteration,
            before,
            after,
        });
    }
    Ok(())
}

/// Alternates [`step_pa`] and [`step_comp`] from `init_ratio` until the reward
/// changes by at most `rel_tol` relative, or `max_iters` iterations ran.
///
/// The trace records the reward after every full iteration.
pub fn solve_p1(
    profiles: &[SensorProfile],
    cfg: &SystemConfig,
    icfg: &IterateConfig,
) -> Result<(Vec<Allocation>, SolveReport)> {
    if profiles.is_empty() {
        return Err(WpcsError::Infeasible("no sensors".into()));
    }
    let mut state = State::initial(profiles, cfg, icfg.init_ratio);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for iteration in 1..=icfg.max_iters {
        let after_pa = step_pa(&state, profiles, cfg, icfg)?;
        if let Some(&last) = trace.last() {
            check_ascent(iteration, last, after_pa.reward)?;
        }
        let after_comp = step_comp(&after_pa, profiles, cfg, icfg)?;
        check_ascent(iteration, after_pa.reward, after_comp.reward)?;
        state = after_comp;
        let reward = state.reward;
        let prev = trace.last().copied();
        trace.push(reward);
        if let Some(prev) = prev {
            if (reward - prev).abs() <= icfg.rel_tol * reward.abs() {
                converged = true;
                break;
            }
        }
    }
    let mut report = SolveReport::from_allocations(profiles, &state.allocs, cfg);
    report.lambda = state.lambda;
    report.kkt_residual = state.kkt_residual;
    report.iterations = trace.len();
    report.converged = converged;
    report.trace = trace;
    Ok((state.allocs, report))
}

/// One fixed-ratio solve at `ratios`, reported in the same shape as [`solve_p1`].
pub fn solve_fixed_ratio(
    profiles: &[SensorProfile],
    ratios: &[f64],
    cfg: &SystemConfig,
    pa: &PaOptions,
) -> Result<(Vec<Allocation>, SolveReport)> {
    let sensors = fixed_ratio_sensors(profiles, ratios)?;
    let sol = solve_lambda(&sensors, cfg, pa)?;
    let allocs = sol.allocations(&sensors);
    let mut report = SolveReport::from_allocations(profiles, &allocs, cfg);
    report.lambda = sol.lambda;
    report.kkt_residual = max_stationarity(&sol, profiles, ratios, cfg)?;
    report.iterations = 1;
    report.trace = vec![report.reward];
    Ok((allocs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::constraint_residuals;
    use crate::model::fixtures::{sensor, system};

    fn mixed() -> Vec<SensorProfile> {
        let mut out = Vec::new();
        for (i, &h) in [1.2e-3, 0.6e-3, 2.5e-3, 0.9e-3].iter().enumerate() {
            let mut p = sensor();
            p.h = h;
            p.f_cpu = 2e8 + 2e8 * i as f64;
            p.q_c = (1.0 + i as f64) * 1e-14;
            out.push(p);
        }
        out
    }

    #[test]
    fn zero_weight_sensor_earns_nothing() {
        let mut p = sensor();
        p.a = 0.0;
        let (allocs, report) = solve_p1(&[p], &system(), &IterateConfig::default()).unwrap();
        assert_eq!(report.reward, 0.0);
        assert_eq!(allocs[0].power, 0.0);
        assert_eq!(allocs[0].raw_bits, 0.0);
    }

    #[test]
    fn no_compression_space_reproduces_single_solve() {
        let cfg = system();
        let profiles: Vec<_> = mixed()
            .into_iter()
            .map(|mut p| {
                p.r_max = 1.0;
                p
            })
            .collect();
        let (_, report) = solve_p1(&profiles, &cfg, &IterateConfig::default()).unwrap();
        let (_, base) =
            solve_fixed_ratio(&profiles, &[1.0; 4], &cfg, &PaOptions::default()).unwrap();
        assert!((report.reward - base.reward).abs() <= 1e-12 * base.reward.abs());
    }

    #[test]
    fn ascent_is_monotone_and_feasible() {
        let cfg = system();
        let profiles = mixed();
        let icfg = IterateConfig::default();
        let mut state = State::initial(&profiles, &cfg, icfg.init_ratio);
        let mut last = f64::NEG_INFINITY;
        for _ in 0..6 {
            for step in [step_pa, step_comp] {
                state = step(&state, &profiles, &cfg, &icfg).unwrap();
                assert!(state.reward >= last - 1e-9 * state.reward.abs());
                last = state.reward;
                let slack = constraint_residuals(&state.allocs, &profiles, &cfg);
                assert!(slack.violations(&cfg, 1e-6).is_empty());
            }
        }
    }

    #[test]
    fn steps_are_fixed_points_when_repeated() {
        let cfg = system();
        let profiles = mixed();
        let icfg = IterateConfig::default();
        let s0 = State::initial(&profiles, &cfg, 1.5);
        let a = step_pa(&s0, &profiles, &cfg, &icfg).unwrap();
        let b = step_pa(&a, &profiles, &cfg, &icfg).unwrap();
        assert_eq!(a, b);

        let c = step_comp(&a, &profiles, &cfg, &icfg).unwrap();
        let d = step_comp(&c, &profiles, &cfg, &icfg).unwrap();
        for (x, y) in c.ratios.iter().zip(&d.ratios) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn converged_solution_beats_fixed_ratio_start() {
        let cfg = system();
        let profiles = mixed();
        let (allocs, report) = solve_p1(&profiles, &cfg, &IterateConfig::default()).unwrap();
        assert!(report.converged);
        let (_, fcr) =
            solve_fixed_ratio(&profiles, &[1.5; 4], &cfg, &PaOptions::default()).unwrap();
        assert!(report.reward >= fcr.reward - 1e-9);
        assert!(report
            .trace
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
        let id = report.utility - report.energy_cost;
        assert!((report.reward - id).abs() <= 1e-9 * report.reward.abs());
        let slack = constraint_residuals(&allocs, &profiles, &cfg);
        assert!(slack.violations(&cfg, 1e-6).is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        let bad = IterateConfig {
            init_ratio: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = IterateConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
