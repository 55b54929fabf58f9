use hqm_core::calibration;
use hqm_core::chainplan::{self, ChainOperation, ChainRequest, ChainTiming};
use hqm_core::loop_node::validate_sequence;
use hqm_core::netsim::{self, ChainScenario, DetectionParams, RunConfig, Scenario};
use hqm_core::TimeNs;

fn setup() -> (
    hqm_core::phys_model::FordParams,
    hqm_core::phys_model::LoopParams,
    hqm_core::phys_model::ChannelParams,
    ChainTiming,
) {
    let chi = calibration::calibrate_chain_chi().unwrap();
    (
        calibration::chain_ford(chi),
        calibration::chain_loop(),
        calibration::chain_channel(),
        ChainTiming::default(),
    )
}

#[test]
fn reference_rows_plan_within_a_nanosecond() {
    let (ford, lp, ch, timing) = setup();
    for r in calibration::reference_rows() {
        let p = chainplan::plan(&r.request(), &lp, &ford, &ch, &timing).unwrap_or_else(|e| panic!("{}: {e}", r.name));
        assert!((p.achieved_t3.as_ns() - r.t3).abs() <= 1.0, "{}", r.name);
        assert!((p.achieved_t4.as_ns() - r.t4).abs() <= 1.0, "{}", r.name);
        if let Some(t5) = r.t5 {
            assert!((p.achieved_t5.unwrap().as_ns() - t5).abs() <= 1.0, "{}", r.name);
        }
        assert_eq!(
            p.achieved_t4 - p.achieved_t3 + p.residual,
            TimeNs::from_ns(r.t4 - r.t3),
            "{}",
            r.name
        );
        assert!(validate_sequence(&p.events, &lp).is_ok(), "{}", r.name);
        assert!(p.residual.abs().as_ns() <= lp.period_tau.as_ns() / 2.0, "{}", r.name);
    }
}

/// Runs a planned operation and compares every mode's click rate and every
/// herald-mode correlation with the planner's closed-form prediction.
fn check_against_prediction(req: ChainRequest, n: u64, seed: u64) {
    let (ford, lp, ch, timing) = setup();
    let plan = chainplan::plan(&req, &lp, &ford, &ch, &timing).unwrap();
    let pred = chainplan::predict_outcomes(&plan, &ford, &lp, &ch, &timing).unwrap();
    let cfg = RunConfig {
        seed,
        n_trials: n,
        ford,
        detection: DetectionParams::default(),
        scenario: Scenario::Chain(ChainScenario {
            plan,
            timing,
            loop_params: lp,
            channel: ch,
        }),
    };
    let w = netsim::standard_windows(&cfg).unwrap();
    let counts = netsim::run_counts(&cfg, &w).unwrap();
    for m in &pred.modes {
        let k = counts.singles[counts.index(&m.label).unwrap()];
        let z = (k as f64 - n as f64 * m.p_click) / (n as f64 * m.p_click * (1.0 - m.p_click)).sqrt();
        assert!(
            z.abs() < 4.0,
            "{:?} mode {}: {k} clicks, z = {z}",
            req.operation,
            m.label
        );
    }
    for p in &pred.g2 {
        let g = counts.g2_by_label(&p.herald, &p.mode).unwrap();
        let z = (g.value - p.g2) / g.std_err;
        assert!(
            z.abs() < 4.0,
            "{:?} g2({},{}) = {} vs {}",
            req.operation,
            p.herald,
            p.mode,
            g.value,
            p.g2
        );
    }
}

#[test]
fn fifo_run_matches_prediction() {
    check_against_prediction(ChainRequest::new(ChainOperation::Fifo, 10.0, 10.0), 2_000_000, 21);
}

#[test]
fn filo_run_matches_prediction() {
    check_against_prediction(ChainRequest::new(ChainOperation::Filo, 10.0, -10.0), 2_000_000, 22);
}

#[test]
fn combine_run_matches_prediction() {
    check_against_prediction(ChainRequest::new(ChainOperation::Combine, 70.0, 10.0), 2_000_000, 23);
}

#[test]
fn chop_run_matches_prediction() {
    check_against_prediction(
        ChainRequest::new(ChainOperation::Chop, 10.0, 10.0)
            .with_t5(20.0)
            .with_ratio(1.0, 3.0),
        2_000_000,
        24,
    );
}

#[test]
fn fifo_signal_pairs_stand_above_cross_pairs() {
    let (ford, lp, ch, timing) = setup();
    let plan = chainplan::plan(
        &ChainRequest::new(ChainOperation::Fifo, 10.0, 10.0),
        &lp,
        &ford,
        &ch,
        &timing,
    )
    .unwrap();
    let pred = chainplan::predict_outcomes(&plan, &ford, &lp, &ch, &timing).unwrap();
    assert!((pred.g2("S1", "AS1").unwrap() - calibration::CHAIN_TARGET_G2).abs() < 1e-6);
    assert!(pred.g2("S2", "AS2").unwrap() > 7.0);
    assert!((pred.g2("S1", "AS2").unwrap() - 1.0).abs() < 0.05);
    assert!((pred.g2("S2", "AS1").unwrap() - 1.0).abs() < 0.05);
}
