use proptest::prelude::*;

use wpcs::comp_solver::{feasibility_edge, optimal_ratio, z_func, CompOptions, RatioBound};
use wpcs::iterate::{solve_p1, IterateConfig};
use wpcs::model::{compression_cycles, g_func, SensorProfile, SystemConfig};
use wpcs::oracle::{kkt_audit_pa, residual_closed_form};
use wpcs::pa_solver::{priority, solve_lambda, stationarity_residual, FixedRatioSensor, PaOptions};

fn system() -> impl Strategy<Value = SystemConfig> {
    (1e-3f64..0.1, 0.5f64..2.0, 0.2f64..0.8).prop_map(|(p0, t, eta)| SystemConfig {
        p0,
        t0: 1.0,
        t,
        bandwidth: 1e4,
        noise: 1e-9,
        eta,
        price: 0.6,
    })
}

fn profile() -> impl Strategy<Value = SensorProfile> {
    (
        1e-4f64..5e-3,
        1e4f64..1e5,
        1e-12f64..1e-11,
        1e-14f64..1e-13,
        1e8f64..1e9,
        1.0f64..3.0,
    )
        .prop_map(|(h, s, q, q_c, f_cpu, r_max)| SensorProfile {
            h,
            a: 0.04,
            s,
            f_cpu,
            q_r: q,
            q_s: q,
            q_c,
            epsilon: 4.0,
            r_max,
            b: 1.0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cycles_vanish_at_one_and_grow(eps in 0.5f64..6.0, r in 1.0f64..3.0, dr in 1e-3f64..0.5) {
        prop_assert_eq!(compression_cycles(1.0, eps).unwrap(), 0.0);
        prop_assert!(compression_cycles(r + dr, eps).unwrap() > compression_cycles(r, eps).unwrap());
    }

    #[test]
    fn g_is_nonpositive(x in 0.0f64..1e5) {
        prop_assert!(g_func(x, 1e4, 1e-9).unwrap() <= 0.0);
    }

    #[test]
    fn residual_sign_at_round_end_follows_priority(
        cfg in system(), p in profile(), ratio in 1.0f64..3.0, lambda in 0.0f64..50.0,
    ) {
        let ratio = ratio.min(p.r_max);
        let s = FixedRatioSensor::new(p, ratio).unwrap();
        let r = residual_closed_form(cfg.t, lambda, &s, &cfg);
        let phi = priority(&p, ratio, &cfg);
        prop_assert_eq!(r > 0.0, phi > lambda, "r {} phi {} lambda {}", r, phi, lambda);
    }

    #[test]
    fn residual_increases_in_t(cfg in system(), p in profile(), u in 0.01f64..0.98, lambda in 0.0f64..10.0) {
        let ratio = p.r_max.min(1.5);
        let s = FixedRatioSensor::new(p, ratio).unwrap();
        let t = u * cfg.t;
        let a = stationarity_residual(t, lambda, &s, &cfg).unwrap();
        let b = stationarity_residual(t + 0.01 * cfg.t, lambda, &s, &cfg).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn fixed_ratio_solution_is_kkt(cfg in system(), ps in prop::collection::vec(profile(), 1..6), ratio in 1.0f64..2.0) {
        let sensors: Vec<FixedRatioSensor> = ps
            .into_iter()
            .map(|p| { let r = ratio.min(p.r_max); FixedRatioSensor::new(p, r).unwrap() })
            .collect();
        let sol = solve_lambda(&sensors, &cfg, &PaOptions::default()).unwrap();
        let rep = kkt_audit_pa(&sol, &sensors, &cfg);
        prop_assert!(rep.passes(1e-6), "{:?}", rep);
        prop_assert!(sol.powers.iter().sum::<f64>() <= cfg.p0 * (1.0 + 1e-12));
    }

    #[test]
    fn z_increases_on_feasible_ratios(cfg in system(), p in profile(), u in 0.05f64..0.95, v in 0.0f64..0.99) {
        let bits = u * cfg.t * p.s;
        let edge = feasibility_edge(bits, &p, &cfg).unwrap();
        let hi = (edge * (1.0 - 1e-6)).min(4.0);
        let r = 1.0 + v * (hi - 1.0);
        let r2 = r + 0.5 * (hi - r);
        prop_assume!(r2 > r);
        prop_assert!(z_func(r2, bits, &p, &cfg).unwrap() >= z_func(r, bits, &p, &cfg).unwrap());
    }

    #[test]
    fn optimal_ratio_stays_in_range(cfg in system(), p in profile(), u in 0.05f64..0.95) {
        let bits = u * cfg.t * p.s;
        let sol = optimal_ratio(bits, &p, &cfg, &CompOptions::default()).unwrap();
        prop_assert!(sol.ratio >= 1.0 && sol.ratio <= p.r_max);
        prop_assert!(sol.t_tx > 0.0);
        if sol.bound == RatioBound::Interior {
            prop_assert!(sol.ratio > 1.0);
        }
    }

    #[test]
    fn reward_is_utility_minus_cost(cfg in system(), ps in prop::collection::vec(profile(), 1..5)) {
        let (allocs, report) = solve_p1(&ps, &cfg, &IterateConfig::default()).unwrap();
        let utility: f64 = ps.iter().zip(&allocs).map(|(p, a)| p.utility(a.raw_bits)).sum();
        let cost = cfg.price * cfg.t0 * allocs.iter().map(|a| a.power).sum::<f64>();
        prop_assert!((report.reward - (utility - cost)).abs() <= 1e-12 * utility.abs().max(1.0));
        prop_assert!(report.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }

    #[test]
    fn config_round_trips(cfg in system(), p in profile()) {
        let back: SystemConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
        let back: SensorProfile = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        prop_assert_eq!(back, p);
    }
}
