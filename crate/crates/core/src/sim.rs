//! Scenario sampling, baseline policies and Monte-Carlo parameter sweeps.
//!
//! Every trial draws its scenario from its own ChaCha stream (`seed`, stream =
//! trial index), so adding trials never reshuffles earlier ones and every
//! policy and sweep point of a trial sees the same sensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::iterate::{solve_fixed_ratio, solve_p1, IterateConfig};
use crate::model::{SensorProfile, SolveReport, SystemConfig};

/// Distribution of random scenarios. Intervals are `[lo, hi]`, sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub n_sensors: usize,
    pub seed: u64,
    /// Mean of the exponentially distributed channel power gain.
    pub attenuation_mean: f64,
    pub s: [f64; 2],
    pub q_s: [f64; 2],
    pub q_c: [f64; 2],
    pub q_r: [f64; 2],
    pub f_cpu: [f64; 2],
    pub a: f64,
    pub c: f64,
    #[serde(rename = "B")]
    pub bandwidth: f64,
    #[serde(rename = "N0")]
    pub noise: f64,
    pub epsilon: f64,
    #[serde(rename = "R_max")]
    pub r_max: f64,
    pub eta: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    #[serde(rename = "P0")]
    pub p0: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_sensors: 10,
            seed: 0,
            attenuation_mean: 1e-3,
            s: [1e4, 1e5],
            q_s: [1e-12, 1e-11],
            q_c: [1e-14, 1e-13],
            q_r: [1e-12, 1e-11],
            f_cpu: [1e8, 1e9],
            a: 0.04,
            c: 0.6,
            bandwidth: 1e4,
            noise: 1e-9,
            epsilon: 4.0,
            r_max: 3.0,
            eta: 0.5,
            t0: 1.0,
            p0: 0.01,
            t: 1.0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 {
            return Err(invalid("scenario.n_sensors", "must be >= 1"));
        }
        let intervals = [
            ("scenario.s", self.s),
            ("scenario.q_s", self.q_s),
            ("scenario.q_c", self.q_c),
            ("scenario.q_r", self.q_r),
            ("scenario.f_cpu", self.f_cpu),
        ];
        for (name, [lo, hi]) in intervals {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(invalid(
                    name,
                    format!("need 0 < lo <= hi, got [{lo}, {hi}]"),
                ));
            }
        }
        if !(self.attenuation_mean > 0.0) {
            return Err(invalid("scenario.attenuation_mean", "must be > 0"));
        }
        self.system()
            .validate()
            .map_err(|e| rename_section(e, "system.", "scenario."))?;
        self.profile_template()
            .validate(0)
            .map_err(|e| rename_section(e, "sensors[0].", "scenario."))
    }

    /// The deterministic part of the scenario.
    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            p0: self.p0,
            t0: self.t0,
            t: self.t,
            bandwidth: self.bandwidth,
            noise: self.noise,
            eta: self.eta,
            price: self.c,
        }
    }

    fn profile_template(&self) -> SensorProfile {
        SensorProfile {
            h: self.attenuation_mean,
            a: self.a,
            s: self.s[0],
            f_cpu: self.f_cpu[0],
            q_r: self.q_r[0],
            q_s: self.q_s[0],
            q_c: self.q_c[0],
            epsilon: self.epsilon,
            r_max: self.r_max,
            b: 1.0,
        }
    }
}

fn rename_section(e: crate::WpcsError, from: &str, to: &str) -> crate::WpcsError {
    match e {
        crate::WpcsError::Validation { field, detail } => crate::WpcsError::Validation {
            field: field.replacen(from, to, 1),
            detail,
        },
        other => other,
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws the scenario of trial `trial`.
pub fn sample_trial(spec: &ScenarioSpec, trial: u64) -> (SystemConfig, Vec<SensorProfile>) {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(trial);
    let profiles = (0..spec.n_sensors)
        .map(|_| {
            let fading: f64 = rng.sample(Exp1);
            SensorProfile {
                h: spec.attenuation_mean * fading,
                s: uniform(&mut rng, spec.s),
                q_s: uniform(&mut rng, spec.q_s),
                q_c: uniform(&mut rng, spec.q_c),
                q_r: uniform(&mut rng, spec.q_r),
                f_cpu: uniform(&mut rng, spec.f_cpu),
                ..spec.profile_template()
            }
        })
        .collect();
    (spec.system(), profiles)
}

/// Draws the scenario of trial 0.
pub fn sample_scenario(spec: &ScenarioSpec) -> (SystemConfig, Vec<SensorProfile>) {
    sample_trial(spec, 0)
}

/// Operating policies compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Block-coordinate ascent over power, data size and compression ratio.
    Optimal,
    /// Power allocation at one fixed compression ratio for every sensor.
    Fcr(f64),
    /// Power allocation without compression (`R = 1`).
    NoCompression,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Optimal => "optimal",
            Policy::Fcr(_) => "fcr",
            Policy::NoCompression => "no_compression",
        }
    }

    /// The three policies of the standard comparison.
    pub fn standard() -> [Policy; 3] {
        [Policy::Optimal, Policy::Fcr(1.5), Policy::NoCompression]
    }
}

/// Runs `policy` on one scenario. A fixed ratio above a sensor's `R_max` is clamped to it.
pub fn run_policy(
    policy: Policy,
    cfg: &SystemConfig,
    profiles: &[SensorProfile],
    icfg: &IterateConfig,
) -> Result<SolveReport> {
    match policy {
        Policy::Optimal => solve_p1(profiles, cfg, icfg).map(|(_, r)| r),
        Policy::Fcr(ratio) => {
            let ratios: Vec<f64> = profiles.iter().map(|p| ratio.min(p.r_max)).collect();
            solve_fixed_ratio(profiles, &ratios, cfg, &icfg.pa).map(|(_, r)| r)
        }
        Policy::NoCompression => {
            solve_fixed_ratio(profiles, &vec![1.0; profiles.len()], cfg, &icfg.pa).map(|(_, r)| r)
        }
    }
}

/// Swept system parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// AP power budget `P0` (with `T0 = 1 s` this is the transferable energy).
    P0,
    /// Crowd-sensing duration `T`.
    T,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::P0 => "p0",
            Axis::T => "t",
        }
    }

    pub fn apply(&self, cfg: &SystemConfig, value: f64) -> SystemConfig {
        let mut out = *cfg;
        match self {
            Axis::P0 => out.p0 = value,
            Axis::T => out.t = value,
        }
        out
    }
}

/// Aggregate of one policy at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub policy: String,
    pub mean_reward: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub policies: Vec<String>,
    /// Row-major over (value, policy).
    pub points: Vec<SweepPoint>,
    /// `rewards[trial][value][policy]`, kept for paired comparisons.
    pub rewards: Vec<Vec<Vec<f64>>>,
}

impl SweepResult {
    pub fn point(&self, value_index: usize, policy: &str) -> Option<&SweepPoint> {
        let p = self.policies.iter().position(|n| n == policy)?;
        self.points.get(value_index * self.policies.len() + p)
    }

    /// Mean rewards of `policy` along the axis.
    pub fn means(&self, policy: &str) -> Vec<f64> {
        (0..self.values.len())
            .filter_map(|i| self.point(i, policy).map(|p| p.mean_reward))
            .collect()
    }

    pub fn stderrs(&self, policy: &str) -> Vec<f64> {
        (0..self.values.len())
            .filter_map(|i| self.point(i, policy).map(|p| p.stderr))
            .collect()
    }

    /// CSV with header `axis_value,policy,mean_reward,stderr,trials`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis_value,policy,mean_reward,stderr,trials\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.axis_value, p.policy, p.mean_reward, p.stderr, p.trials
            );
        }
        out
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Paired Monte-Carlo sweep of `axis` over `values`.
pub fn sweep(
    axis: Axis,
    values: &[f64],
    spec: &ScenarioSpec,
    trials: usize,
    policies: &[Policy],
    icfg: &IterateConfig,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(invalid("run.values", "no sweep values"));
    }
    if trials == 0 {
        return Err(invalid("run.trials", "must be >= 1"));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("run.values", "must be strictly ascending"));
    }
    spec.validate()?;

    let rewards: Vec<Vec<Vec<f64>>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let (cfg, profiles) = sample_trial(spec, trial);
            values
                .iter()
                .map(|&v| {
                    let point_cfg = axis.apply(&cfg, v);
                    policies
                        .iter()
                        .map(|&pol| run_policy(pol, &point_cfg, &profiles, icfg).map(|r| r.reward))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(values.len() * policies.len());
    for (vi, &v) in values.iter().enumerate() {
        for (pi, pol) in policies.iter().enumerate() {
            let xs: Vec<f64> = rewards.iter().map(|t| t[vi][pi]).collect();
            let (mean, se) = mean_stderr(&xs);
            points.push(SweepPoint {
                axis_value: v,
                policy: pol.name().to_string(),
                mean_reward: mean,
                stderr: se,
                trials,
            });
        }
    }
    Ok(SweepResult {
        axis,
        values: values.to_vec(),
        policies: policies.iter().map(|p| p.name().to_string()).collect(),
        points,
        rewards,
    })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
