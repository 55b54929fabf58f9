use hqm_core::calibration;
use hqm_core::chainplan::{self, ChainOperation, ChainRequest, ChainTiming, PlanError};
use hqm_core::estimators::{cauchy_schwarz, correlation_estimate};
use hqm_core::ford_node::{feedback_enhancement, feedback_success_probability};
use hqm_core::loop_node::{
    chop_emission_probability, chop_out, map_in, q_of_voltage, validate_sequence, voltage_for_q, LoopState, PhotonTag,
};
use hqm_core::phys_model::{
    analytic_click_probs, click_probs_pgf, g2_analytic, joint_click_sum, loop_retrieval_efficiency, thermal_pmf,
    CorrelationEstimate, LoopParams,
};
use hqm_core::TimeNs;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn time_text_round_trips(ps in -10_000_000_000i64..10_000_000_000) {
        let t = TimeNs::from_ps(ps);
        let text = t.to_string();
        prop_assert_eq!(text.split_once('.').map(|(_, f)| f.len()), Some(3));
        prop_assert_eq!(TimeNs::from_ns(text.parse::<f64>().unwrap()), t);
    }

    #[test]
    fn loop_efficiency_is_a_power(k in 0u32..200, t in 0.0f64..=1.0) {
        let e = loop_retrieval_efficiency(k, t);
        prop_assert_eq!(e, t.powi(k as i32));
        prop_assert!(loop_retrieval_efficiency(k + 1, t) <= e);
    }

    #[test]
    fn thermal_distribution_sums_to_one(chi in 0.0f64..0.5) {
        let s: f64 = (0..400).map(|n| thermal_pmf(chi, n)).sum();
        prop_assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn click_sums_agree_with_generating_function(
        chi in 0.0f64..0.4,
        es in 0.0f64..=1.0,
        ea in 0.0f64..=1.0,
        bs in 0.0f64..0.1,
        ba in 0.0f64..0.1,
    ) {
        let a = joint_click_sum(chi, es, bs, ea, ba).unwrap();
        let b = click_probs_pgf(chi, es, bs, ea, ba);
        prop_assert!((a.p_stokes - b.p_stokes).abs() < 1e-10);
        prop_assert!((a.p_as - b.p_as).abs() < 1e-10);
        prop_assert!((a.p_coinc - b.p_coinc).abs() < 1e-10);
        prop_assert!(a.p_coinc <= a.p_stokes.min(a.p_as));
    }

    #[test]
    fn correlation_is_at_least_one_for_thermal_pairs(
        chi in 0.001f64..0.4,
        es in 0.05f64..=1.0,
        ea in 0.05f64..=1.0,
        bs in 0.0f64..0.1,
        ba in 0.0f64..0.1,
    ) {
        let g = g2_analytic(&click_probs_pgf(chi, es, bs, ea, ba)).unwrap();
        prop_assert!(g >= 1.0 - 1e-9);
    }

    #[test]
    fn path_efficiency_composes(k in 0u32..10, tau in 0.0f64..3000.0) {
        let ford = calibration::fig3a_ford();
        let lp = calibration::desk_loop();
        let ch = calibration::desk_channel();
        let t = TimeNs::from_ns(tau.round());
        let a = analytic_click_probs(&ford, t, k, &lp, &ch).unwrap();
        let eta = ford.eta_as * ford.retrieval_efficiency(t) * 0.9f64.powi(k as i32);
        let b = click_probs_pgf(ford.chi, ford.eta_stokes, ford.bg_stokes, eta, ford.bg_as);
        prop_assert!((a.p_as - b.p_as).abs() < 1e-10);
        prop_assert!((a.p_coinc - b.p_coinc).abs() < 1e-10);
    }

    #[test]
    fn chop_probabilities_are_a_sub_distribution(t in 0.5f64..=1.0, q in 0.01f64..=1.0) {
        let total: f64 = (1..5000).map(|m| chop_emission_probability(t, q, m)).sum();
        prop_assert!(total <= 1.0 + 1e-12);
        let closed = t * q / (1.0 - t * (1.0 - q));
        prop_assert!((total - closed).abs() < 1e-9);
    }

    #[test]
    fn voltage_inverts(q in 0.0f64..=1.0) {
        prop_assert!((q_of_voltage(voltage_for_q(q)) - q).abs() < 1e-12);
    }

    #[test]
    fn enhancement_is_bounded_by_attempts(p in 1e-6f64..1.0, m in 1u32..30) {
        let e = feedback_enhancement(p, m);
        prop_assert!(e >= 1.0 - 1e-12 && e <= m as f64 + 1e-9);
        let direct = feedback_success_probability(p, m) / p;
        prop_assert!((e - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn estimate_is_scale_free(nc in 1u64..1000, na in 1u64..10_000, nb in 1u64..10_000, n in 10_000u64..1_000_000, k in 1u64..5) {
        let a = correlation_estimate(nc, na, nb, n).unwrap();
        let b = correlation_estimate(nc * k, na * k, nb * k, n * k).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-9 * a.value);
        prop_assert!(b.std_err <= a.std_err * (1.0 + 1e-12));
    }

    #[test]
    fn cauchy_schwarz_ratio(gsa in 1.0f64..50.0, gss in 1.0f64..3.0, gaa in 1.0f64..3.0) {
        let e = |v| CorrelationEstimate::from_value(v, 0.1);
        let r = cauchy_schwarz(&e(gsa), &e(gss), &e(gaa));
        prop_assert!((r.ratio - gsa * gsa / (gss * gaa)).abs() < 1e-9 * r.ratio);
        prop_assert_eq!(r.violated, r.ratio > 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plans_are_valid_or_rejected(t3 in 0i32..200, t4 in -150i32..150, op in 0usize..4) {
        let operation = [ChainOperation::Fifo, ChainOperation::Filo, ChainOperation::Combine, ChainOperation::Split][op];
        let lp = calibration::chain_loop();
        let ford = calibration::chain_ford(0.01);
        let ch = calibration::chain_channel();
        let timing = ChainTiming::default();
        let (t3, t4) = (t3 as f64, t4 as f64);
        match chainplan::plan(&ChainRequest::new(operation, t3, t4), &lp, &ford, &ch, &timing) {
            Ok(p) => {
                prop_assert_eq!(p.achieved_t3, TimeNs::from_ns(t3));
                prop_assert!(validate_sequence(&p.events, &lp).is_ok());
                let dk = (p.achieved_t4 - p.achieved_t3).round_div(lp.period_tau);
                prop_assert_eq!(p.achieved_t4, p.achieved_t3 + lp.period_tau * dk);
                prop_assert!(p.residual.abs().as_ns() <= lp.period_tau.as_ns() / 2.0 + 1e-9);
            }
            Err(PlanError::Model(e)) => prop_assert!(false, "model error {e}"),
            Err(_) => {}
        }
    }

    #[test]
    fn chop_simulation_follows_geometric_law(t in 0.8f64..=1.0, q in 0.2f64..0.8, seed in any::<u64>()) {
        let lp = LoopParams { transmission_per_cycle: t, ..calibration::chain_loop() };
        let v = voltage_for_q(q);
        let mut state = LoopState::new(lp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20_000u64;
        let mut hist = [0u64; 6];
        for id in 0..n {
            state.clear();
            map_in(&mut state, PhotonTag { id, slot: 0, pulse_fwhm: TimeNs::from_ns(1.6) }, TimeNs::ZERO).unwrap();
            if let Some(e) = chop_out(&mut state, id, v, &mut rng).unwrap() {
                if (e.cycles as usize) < hist.len() {
                    hist[e.cycles as usize] += 1;
                }
            }
        }
        for m in 1..6u32 {
            let p = chop_emission_probability(t, q, m);
            let z = (hist[m as usize] as f64 - n as f64 * p) / (n as f64 * p * (1.0 - p)).sqrt();
            prop_assert!(z.abs() < 4.5, "m = {} z = {}", m, z);
        }
    }
}
