//! Audit battery over seeded random instances, and a constraint audit for a
//! single given allocation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kkt::{kkt_audit_comp, kkt_audit_pa, tightness};
use super::{
    convexity_audit, fixed_ratio_point, grid_best_p2, monotonicity_audit, Direction, GridSpec,
    MAX_GRID_SENSORS,
};
use crate::comp_solver::{feasibility_edge, optimal_ratio, z_func};
use crate::error::Result;
use crate::iterate::{solve_p1, IterateConfig, MONOTONE_TOL};
use crate::model::{
    constraint_residuals, g_func, Allocation, ConstraintKind, SensorProfile, SystemConfig,
};
use crate::pa_solver::{fixed_ratio_sensors, solve_lambda, FixedRatioSensor};
use crate::sim::{run_policy, sample_trial, Policy, ScenarioSpec};

/// One named check with the measured value and the bound it was held to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

impl AuditCheck {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: value <= threshold,
            value,
            threshold,
            detail: String::new(),
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            passed: value >= threshold,
            ..Self::at_most(name, value, threshold)
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {} value={:.6e} threshold={:.6e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold
            ));
            if !c.detail.is_empty() {
                out.push_str(" (");
                out.push_str(&c.detail);
                out.push(')');
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryConfig {
    pub instances: usize,
    pub scenario: ScenarioSpec,
    pub iterate: IterateConfig,
    /// Relative tolerance for tightness, stationarity and slackness.
    pub tol: f64,
    /// Points per axis of the fixed-ratio grid comparison (small instances only).
    pub grid_points: usize,
    /// Scan density of the analytic curve audits.
    pub curve_samples: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            scenario: ScenarioSpec::default(),
            iterate: IterateConfig::default(),
            tol: 1e-6,
            grid_points: 500,
            curve_samples: 10_000,
        }
    }
}

#[derive(Debug, Default)]
struct InstanceStats {
    time_tightness: f64,
    energy_tightness: f64,
    stationarity: f64,
    slackness: f64,
    budget_excess: f64,
    boundary_violations: usize,
    threshold_mismatches: usize,
    comp_failures: usize,
    trace_drop: f64,
    converged: bool,
    fcr_gap: f64,
    grid_gap: Option<f64>,
}

fn audit_instance(
    cfg: &SystemConfig,
    profiles: &[SensorProfile],
    bc: &BatteryConfig,
) -> Result<InstanceStats> {
    let (allocs, report) = solve_p1(profiles, cfg, &bc.iterate)?;
    let (time_tightness, energy_tightness) = tightness(&allocs, profiles, cfg);

    // the fixed-ratio subproblem at the final ratios
    let ratios: Vec<f64> = allocs.iter().map(|a| a.ratio).collect();
    let sensors = fixed_ratio_sensors(profiles, &ratios)?;
    let sol = solve_lambda(&sensors, cfg, &bc.iterate.pa)?;
    let pa = kkt_audit_pa(&sol, &sensors, cfg);

    let mut comp_failures = 0;
    for (i, a) in allocs.iter().enumerate() {
        if a.raw_bits > 0.0 {
            let c = optimal_ratio(a.raw_bits, &profiles[i], cfg, &bc.iterate.comp)?;
            if !kkt_audit_comp(&c, a.raw_bits, &profiles[i], cfg, bc.tol).passes(bc.tol) {
                comp_failures += 1;
            }
        }
    }

    let trace_drop = report
        .trace
        .windows(2)
        .map(|w| (w[0] - w[1]) / w[0].abs().max(w[1].abs()).max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max);

    let fcr = run_policy(
        Policy::Fcr(bc.iterate.init_ratio),
        cfg,
        profiles,
        &bc.iterate,
    )?;
    let fcr_gap = (fcr.reward - report.reward) / fcr.reward.abs().max(f64::MIN_POSITIVE);

    let grid_gap = if profiles.len() <= MAX_GRID_SENSORS.min(2) {
        let axes: Vec<(&str, f64, f64)> = (0..sensors.len())
            .map(|_| ("t", cfg.t * 1e-4, cfg.t))
            .collect();
        let grid = GridSpec::new(bc.grid_points, &axes);
        let (_, best) = grid_best_p2(&sensors, cfg, &grid)?;
        let solver = super::p2_reward(&sensors, &sol.t_tx, cfg)
            .unwrap_or_else(|| reward_ignoring_budget(&sensors, &sol.t_tx, cfg));
        Some((best - solver) / best.abs().max(f64::MIN_POSITIVE))
    } else {
        None
    };

    Ok(InstanceStats {
        time_tightness,
        energy_tightness,
        stationarity: pa.stationarity_rel,
        slackness: pa.slackness,
        budget_excess: pa.budget_excess,
        boundary_violations: pa.boundary_violations,
        threshold_mismatches: pa.threshold_mismatches,
        comp_failures,
        trace_drop,
        converged: report.converged,
        fcr_gap,
        grid_gap,
    })
}

fn reward_ignoring_budget(sensors: &[FixedRatioSensor], ts: &[f64], cfg: &SystemConfig) -> f64 {
    sensors
        .iter()
        .zip(ts)
        .map(|(s, &t)| {
            let (e, u) = fixed_ratio_point(s, t, cfg);
            u - cfg.price * e
        })
        .sum()
}

/// Shape audits of the analytic building blocks for one sensor.
pub fn analytic_checks(
    profile: &SensorProfile,
    cfg: &SystemConfig,
    ratio: f64,
    samples: usize,
) -> Result<Vec<AuditCheck>> {
    let s = FixedRatioSensor::new(*profile, ratio)?;
    let t_lo = cfg.t * 1e-3;
    let mut out = Vec::new();

    let energy = convexity_audit(|t| fixed_ratio_point(&s, t, cfg).0, t_lo, cfg.t, samples);
    out.push(AuditCheck::at_most(
        "energy_convex_in_t",
        energy.violations as f64,
        0.0,
    ));

    let x_hi = 10.0 * cfg.bandwidth;
    let g = monotonicity_audit(
        |x| g_func(x, cfg.bandwidth, cfg.noise).unwrap_or(f64::NAN),
        0.0,
        x_hi,
        samples,
        Direction::Decreasing,
    );
    let g0 = g_func(0.0, cfg.bandwidth, cfg.noise)?;
    out.push(AuditCheck::at_most(
        "g_strictly_decreasing",
        (g.violations + g.flat) as f64,
        0.0,
    ));
    out.push(AuditCheck::at_most("g_at_zero", g0.abs(), 0.0));

    let bits = 0.5 * cfg.t * profile.s;
    if let Some(edge) = feasibility_edge(bits, profile, cfg) {
        let r_hi = profile.r_max.min(edge * (1.0 - 1e-6));
        if r_hi > 1.0 {
            let z = monotonicity_audit(
                |r| z_func(r, bits, profile, cfg).unwrap_or(f64::NAN),
                1.0,
                r_hi,
                samples,
                Direction::Increasing,
            );
            out.push(AuditCheck::at_most(
                "z_strictly_increasing",
                (z.violations + z.flat) as f64,
                0.0,
            ));
        }
    }

    let power = monotonicity_audit(
        |t| fixed_ratio_point(&s, t, cfg).0 / cfg.t0,
        t_lo,
        cfg.t,
        samples,
        Direction::Decreasing,
    );
    let p_end = fixed_ratio_point(&s, cfg.t, cfg).0;
    out.push(AuditCheck::at_most(
        "power_strictly_decreasing_in_t",
        (power.violations + power.flat) as f64,
        0.0,
    ));
    out.push(AuditCheck::at_most("power_at_round_end", p_end.abs(), 0.0));
    Ok(out)
}

/// Runs every audit over `instances` seeded scenarios.
pub fn run_battery(bc: &BatteryConfig) -> Result<AuditReport> {
    bc.scenario.validate()?;
    bc.iterate.validate()?;
    let stats: Vec<InstanceStats> = (0..bc.instances as u64)
        .into_par_iter()
        .map(|trial| {
            let (cfg, profiles) = sample_trial(&bc.scenario, trial);
            audit_instance(&cfg, &profiles, bc)
        })
        .collect::<Result<_>>()?;
    let mut checks = summarize(&stats, bc);
    if bc.instances > 0 {
        let (cfg, profiles) = sample_trial(&bc.scenario, 0);
        checks.extend(analytic_checks(
            &profiles[0],
            &cfg,
            bc.iterate.init_ratio.min(profiles[0].r_max),
            bc.curve_samples,
        )?);
    }
    Ok(AuditReport { checks })
}

/// Solves one given instance and runs the same audits as the battery.
pub fn audit_instance_report(
    profiles: &[SensorProfile],
    cfg: &SystemConfig,
    bc: &BatteryConfig,
) -> Result<AuditReport> {
    let stats = audit_instance(cfg, profiles, bc)?;
    Ok(AuditReport {
        checks: summarize(std::slice::from_ref(&stats), bc),
    })
}

fn summarize(stats: &[InstanceStats], bc: &BatteryConfig) -> Vec<AuditCheck> {
    let worst = |f: fn(&InstanceStats) -> f64| stats.iter().map(f).fold(0.0, f64::max);
    let count = |f: fn(&InstanceStats) -> usize| stats.iter().map(f).sum::<usize>() as f64;
    let tol = bc.tol;
    let mut checks = vec![
        AuditCheck::at_most("time_constraint_tight", worst(|s| s.time_tightness), tol),
        AuditCheck::at_most(
            "energy_constraint_tight",
            worst(|s| s.energy_tightness),
            tol,
        ),
        AuditCheck::at_most("stationarity", worst(|s| s.stationarity), tol),
        AuditCheck::at_most("complementary_slackness", worst(|s| s.slackness), tol),
        AuditCheck::at_most("power_budget", worst(|s| s.budget_excess), tol),
        AuditCheck::at_most("idle_boundary_sign", count(|s| s.boundary_violations), 0.0),
        AuditCheck::at_most(
            "threshold_structure",
            count(|s| s.threshold_mismatches),
            0.0,
        ),
        AuditCheck::at_most("compression_kkt", count(|s| s.comp_failures), 0.0),
        AuditCheck::at_most(
            "reward_trace_monotone",
            worst(|s| s.trace_drop),
            MONOTONE_TOL,
        ),
        AuditCheck::at_least(
            "converged_fraction",
            stats.iter().filter(|s| s.converged).count() as f64 / stats.len().max(1) as f64,
            0.99,
        ),
        AuditCheck::at_most("beats_fixed_ratio", worst(|s| s.fcr_gap), MONOTONE_TOL),
    ];
    let grid: Vec<f64> = stats.iter().filter_map(|s| s.grid_gap).collect();
    if !grid.is_empty() {
        checks.push(
            AuditCheck::at_most(
                "grid_oracle_gap",
                grid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                1e-3,
            )
            .with_detail(format!(
                "{} instances, {}^N grid",
                grid.len(),
                bc.grid_points
            )),
        );
    }
    checks
}

/// Feasibility and tightness of a given allocation. Failed checks name the
/// offending constraint and sensor.
pub fn audit_allocations(
    profiles: &[SensorProfile],
    allocs: &[Allocation],
    cfg: &SystemConfig,
    tol: f64,
) -> AuditReport {
    let slack = constraint_residuals(allocs, profiles, cfg);
    let mut checks = Vec::new();
    let violations = slack.violations(cfg, tol);
    for v in &violations {
        let name = match v.kind {
            ConstraintKind::Time => "time_constraint",
            ConstraintKind::Energy => "energy_constraint",
            ConstraintKind::Power => "power_constraint",
        };
        let who = v
            .sensor
            .map_or("shared AP budget".to_string(), |i| format!("sensor {i}"));
        checks.push(
            AuditCheck::at_least(name, v.relative_slack, -tol)
                .with_detail(format!("{name} violated by {who}")),
        );
    }
    if violations.is_empty() {
        checks.push(AuditCheck::at_most("constraints_feasible", 0.0, 0.0));
        let (time, energy) = tightness(allocs, profiles, cfg);
        checks.push(AuditCheck::at_most("time_constraint_tight", time, tol));
        checks.push(AuditCheck::at_most("energy_constraint_tight", energy, tol));
    }
    AuditReport { checks }
}
