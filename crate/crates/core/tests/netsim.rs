use hqm_core::calibration;
use hqm_core::estimators::{correlation_estimate, WindowCounts};
use hqm_core::ford_node::FeedbackConfig;
use hqm_core::netsim::{
    self, route_path_selection, CorrelationScenario, DetectionParams, DetectorId, LoopStage, RunConfig, Scenario,
};
use hqm_core::phys_model::{feedback_click_probs, thermal_pgf, ChannelParams, FordParams};
use hqm_core::TimeNs;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ford() -> FordParams {
    FordParams {
        chi: 0.1,
        eta_stokes: 0.7,
        eta_as: 0.6,
        eta_ret0: 0.8,
        bg_stokes: 2e-3,
        bg_as: 3e-3,
        ..calibration::fig3a_ford()
    }
}

fn scenario(tau1: f64) -> CorrelationScenario {
    CorrelationScenario {
        tau1: TimeNs::from_ns(tau1),
        feedback: FeedbackConfig::single(),
        channel: calibration::desk_channel(),
        delay_fiber: None,
        loop_stage: None,
    }
}

fn cfg(ford: FordParams, sc: CorrelationScenario, n: u64, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        n_trials: n,
        ford,
        detection: DetectionParams::default(),
        scenario: Scenario::Correlation(sc),
    }
}

fn z(k: u64, n: u64, p: f64) -> f64 {
    (k as f64 - n as f64 * p) / (n as f64 * p * (1.0 - p)).sqrt()
}

#[test]
fn no_light_no_records() {
    let f = FordParams {
        chi: 0.0,
        bg_stokes: 0.0,
        bg_as: 0.0,
        ..ford()
    };
    assert!(netsim::run(&cfg(f, scenario(100.0), 20_000, 1)).unwrap().is_empty());
}

#[test]
fn blind_anti_stokes_path_gives_no_anti_stokes_records() {
    let f = FordParams {
        eta_as: 0.0,
        bg_as: 0.0,
        ..ford()
    };
    let recs = netsim::run(&cfg(f, scenario(100.0), 20_000, 2)).unwrap();
    assert!(!recs.is_empty());
    assert!(recs.iter().all(|r| r.detector == DetectorId::S));
}

#[test]
fn anti_stokes_follows_its_herald() {
    let c = cfg(ford(), scenario(300.0), 50_000, 3);
    let recs = netsim::run(&c).unwrap();
    let last_s = recs
        .iter()
        .filter(|r| r.detector == DetectorId::S)
        .map(|r| r.time)
        .max()
        .unwrap();
    let first_as = recs
        .iter()
        .filter(|r| r.detector != DetectorId::S)
        .map(|r| r.time)
        .min()
        .unwrap();
    assert!(first_as - last_s >= TimeNs::from_ns(290.0));
}

#[test]
fn records_are_grouped_by_trial_and_time_ordered() {
    let recs = netsim::run(&cfg(ford(), scenario(100.0), 40_000, 4)).unwrap();
    for w in recs.windows(2) {
        assert!(w[0].trial_id < w[1].trial_id || (w[0].trial_id == w[1].trial_id && w[0].time <= w[1].time));
    }
}

#[test]
fn counts_do_not_depend_on_thread_pool() {
    let c = cfg(ford(), scenario(100.0), 100_000, 5);
    let w = netsim::standard_windows(&c).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = one.install(|| netsim::run(&c).unwrap());
    let b = netsim::run(&c).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        netsim::run_counts(&c, &w).unwrap(),
        WindowCounts::tally(&b, &w, c.n_trials).unwrap()
    );
}

#[test]
fn fiber_delay_shifts_arrivals_by_exactly_its_delay() {
    let fiber = ChannelParams {
        length_m: 500.0,
        group_velocity: 2.0e8,
        transmission: 1.0,
    };
    assert_eq!(fiber.delay(), TimeNs::from_us(2.5));
    let f = FordParams { bg_as: 0.0, ..ford() };
    let base = cfg(f.clone(), scenario(100.0), 20_000, 6);
    let mut sc = scenario(100.0);
    sc.delay_fiber = Some(fiber);
    let delayed = cfg(f, sc, 20_000, 6);
    let a: Vec<_> = netsim::run(&base)
        .unwrap()
        .into_iter()
        .filter(|r| r.detector == DetectorId::AsA)
        .collect();
    let b: Vec<_> = netsim::run(&delayed)
        .unwrap()
        .into_iter()
        .filter(|r| r.detector == DetectorId::AsA)
        .collect();
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.trial_id, y.trial_id);
        assert_eq!(y.time - x.time, TimeNs::from_us(2.5));
    }
}

#[test]
fn path_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fiber = ChannelParams {
        length_m: 500.0,
        group_velocity: 2.0e8,
        transmission: 0.5,
    };
    let t = TimeNs::from_ns(100.0);
    assert_eq!(route_path_selection(t, 3, &fiber, false, &mut rng), (t, 3));
    let n = 200_000;
    let (arrive, kept) = route_path_selection(t, n, &fiber, true, &mut rng);
    assert_eq!(arrive, TimeNs::from_ns(2600.0));
    assert!(z(kept, n, 0.5).abs() < 4.0);
}

#[test]
fn hbt_arms_share_light_equally() {
    let mut c = cfg(ford(), scenario(30.0), 200_000, 8);
    c.detection.hbt = true;
    let w = netsim::standard_windows(&c).unwrap();
    let counts = netsim::run_counts(&c, &w).unwrap();
    let a = counts.singles[counts.index("AS_A").unwrap()];
    let b = counts.singles[counts.index("AS_B").unwrap()];
    assert!(z(a, a + b, 0.5).abs() < 4.0, "{a} {b}");
}

/// Repeat-until-success writing against the generating-function oracle:
/// every attempt slot's excitations age from its own write time.
#[test]
fn feedback_run_matches_closed_form() {
    let f = FordParams { chi: 0.02, ..ford() };
    let fb = FeedbackConfig::default();
    let tau1 = 200.0;
    let mut sc = scenario(tau1);
    sc.feedback = fb.clone();
    let n = 1_000_000;
    let c = cfg(f.clone(), sc, n, 9);
    let w = netsim::standard_windows(&c).unwrap();
    let counts = netsim::run_counts(&c, &w).unwrap();
    let m = fb.max_attempts as usize;
    let eff: Vec<f64> = (0..m)
        .map(|i| {
            let age = TimeNs::from_ns(tau1) + fb.attempt_spacing * (m - 1 - i) as i64;
            f.eta_as * f.retrieval_efficiency(age)
        })
        .collect();
    let p = feedback_click_probs(f.chi, f.eta_stokes, f.bg_stokes, &eff, f.bg_as).unwrap();
    let (s, a) = (counts.index("S").unwrap(), counts.index("AS").unwrap());
    assert!(z(counts.singles[s], n, p.p_stokes).abs() < 4.0);
    assert!(z(counts.singles[a], n, p.p_as).abs() < 4.0);
    assert!(z(counts.coincidences(s, a), n, p.p_coinc).abs() < 4.0);
}

/// Single attempt against the thermal generating function directly.
#[test]
fn single_attempt_matches_generating_function() {
    let f = ford();
    let lp = calibration::desk_loop();
    let tau1 = TimeNs::from_ns(500.0);
    let cycles = 4;
    let mut sc = scenario(500.0);
    sc.loop_stage = Some(LoopStage { params: lp, cycles });
    let n = 1_000_000;
    let c = cfg(f.clone(), sc, n, 10);
    let w = netsim::standard_windows(&c).unwrap();
    let counts = netsim::run_counts(&c, &w).unwrap();

    let eta_a = f.eta_as * f.retrieval_efficiency(tau1) * 0.9f64.powi(cycles as i32);
    let ns = (-f.bg_stokes).exp() * thermal_pgf(f.chi, 1.0 - f.eta_stokes);
    let na = (-f.bg_as).exp() * thermal_pgf(f.chi, 1.0 - eta_a);
    let nb = (-f.bg_stokes - f.bg_as).exp() * thermal_pgf(f.chi, (1.0 - f.eta_stokes) * (1.0 - eta_a));
    let (ps, pa, pc) = (1.0 - ns, 1.0 - na, 1.0 - ns - na + nb);

    let (s, a) = (counts.index("S").unwrap(), counts.index("AS").unwrap());
    assert!(z(counts.singles[s], n, ps).abs() < 4.0);
    assert!(z(counts.singles[a], n, pa).abs() < 4.0);
    assert!(z(counts.coincidences(s, a), n, pc).abs() < 4.0);
    let g = correlation_estimate(counts.coincidences(s, a), counts.singles[s], counts.singles[a], n).unwrap();
    assert!(((g.value - pc / (ps * pa)) / g.std_err).abs() < 4.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn same_seed_same_records(seed in any::<u64>(), tau in 0.0f64..2000.0, chi in 0.0f64..0.3) {
        let f = FordParams { chi, ..ford() };
        let c = cfg(f, scenario(tau.round()), 3_000, seed);
        prop_assert_eq!(netsim::run(&c).unwrap(), netsim::run(&c).unwrap());
    }

    #[test]
    fn every_record_lies_in_a_standard_window(
        seed in any::<u64>(),
        tau in 0.0f64..2000.0,
        cycles in 0u32..8,
        hbt in any::<bool>(),
    ) {
        let mut sc = scenario(tau.round());
        sc.loop_stage = Some(LoopStage { params: calibration::desk_loop(), cycles });
        let mut c = cfg(ford(), sc, 3_000, seed);
        c.detection.hbt = hbt;
        let w = netsim::standard_windows(&c).unwrap();
        for r in netsim::run(&c).unwrap() {
            prop_assert!(r.trial_id < 3_000);
            prop_assert!(w.iter().any(|w| w.contains(r.detector, r.time)), "{:?}", r);
            prop_assert!(hbt || r.detector != DetectorId::AsB);
        }
    }

    #[test]
    fn at_most_one_click_per_detector_per_trial(seed in any::<u64>(), chi in 0.0f64..0.5) {
        let f = FordParams { chi, bg_as: 0.5, bg_stokes: 0.5, ..ford() };
        let recs = netsim::run(&cfg(f, scenario(50.0), 2_000, seed)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for r in &recs {
            prop_assert!(seen.insert((r.trial_id, r.detector)));
        }
    }
}
