use relayplace_core::asyougo::{average_cost_limit, default_theta_schedule, HeuAsYouGo, DEFAULT_LIMIT_TOL};
use relayplace_core::channel::*;
use relayplace_core::explore::*;
use relayplace_core::learning::LearnerState;
use relayplace_core::policy::*;
use relayplace_core::simulator::*;

fn scenario(shadowing: ShadowingModel) -> Scenario {
    Scenario {
        window: Window::new(0, 5).unwrap(),
        xi_out: 100.0,
        xi_relay: 1.0,
        powers: PowerSet::reference(),
        params: ChannelParams::default(),
        shadowing,
    }
}

fn opt_el(sc: &Scenario, lambda: f64) -> PolicyHandle {
    PolicyHandle::opt_el(
        sc.window,
        IndexPolicy {
            lambda,
            xi_out: sc.xi_out,
            xi_relay: sc.xi_relay,
        },
    )
}

#[test]
fn same_seed_same_trace() {
    let sc = scenario(ShadowingModel::log_normal(7.7).unwrap());
    let run = |seed| {
        let mut h = PolicyHandle::learner(sc.window, LearnerState::ratio(0.5, 100.0, 1.0).unwrap());
        run_deployment(&mut h, 2000, seed, &sc).unwrap()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7).records, run(8).records);

    let initial = LearnerState::ratio(0.5, 100.0, 1.0).unwrap();
    let a = convergence_curve(&initial, 200, 50, 3, &sc).unwrap();
    let b = convergence_curve(&initial, 200, 50, 3, &sc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn deterministic_channel_repeats_one_decision() {
    let sc = scenario(ShadowingModel::Finite(FiniteShadowing::unit()));
    let mut h = opt_el(&sc, 0.8);
    let t = run_deployment(&mut h, 100, 1, &sc).unwrap();
    let first = t.records[0];
    assert!(t
        .records
        .iter()
        .all(|r| (r.u_steps, r.gamma_mw, r.q_out) == (first.u_steps, first.gamma_mw, first.q_out)));
    let s = summarize(&[t]).unwrap();
    assert_eq!(s.mean_distance_steps.se, 0.0);
    let expect = (first.gamma_mw + 100.0 * first.q_out + 1.0) / f64::from(first.u_steps);
    assert!((s.mean_cost_per_step.value - expect).abs() < 1e-12 * expect);
}

#[test]
fn summary_ratios_are_consistent() {
    let sc = scenario(ShadowingModel::log_normal(7.7).unwrap());
    let t = run_deployment(&mut opt_el(&sc, 0.83), 20_000, 2, &sc).unwrap();
    let s = summarize(&[t]).unwrap();
    let d = s.mean_distance_steps.value;
    assert!((s.relays_per_step.value * d - 1.0).abs() < 1e-12);
    assert!((s.mean_outage_per_step.value * d - s.mean_outage_per_link.value).abs() < 1e-12);
    let per_link = s.mean_power_per_link_mw.value + 100.0 * s.mean_outage_per_link.value + 1.0;
    assert!((s.mean_cost_per_step.value * d - per_link).abs() < 1e-12 * per_link);
    assert!((s.measurements_per_step.value * d - 5.0).abs() < 1e-12);
}

#[test]
fn simulation_agrees_with_exact_evaluation() {
    let s = discretize_lognormal(7.7, 31).unwrap();
    let sc = scenario(s.clone());
    let cfg = ExploreConfig::new(0, 5, 100.0, 1.0).unwrap();
    let ev = policy_eval_reduced(0.83, &cfg, &s, &sc.powers, &sc.params).unwrap();
    let t = run_deployment(&mut opt_el(&sc, 0.83), 200_000, 4, &sc).unwrap();
    let m = summarize(&[t]).unwrap();
    let close = |e: Estimate, want: f64| (e.value - want).abs() < 4.0 * e.se;
    assert!(close(m.mean_distance_steps, ev.mean_distance_steps));
    assert!(close(m.mean_power_per_link_mw, ev.mean_power_per_link_mw));
    assert!(close(m.mean_outage_per_link, ev.mean_outage_per_link));
    assert!(close(m.mean_cost_per_step, ev.lambda_next));
}

#[test]
fn sequential_policies_pay_only_for_visited_locations() {
    let sc = scenario(ShadowingModel::log_normal(7.7).unwrap());
    let heu = HeuAsYouGo::new(1.0, 0.01, 0, 5).unwrap();
    let t = run_deployment(&mut PolicyHandle::heu_ayg(heu).unwrap(), 5000, 5, &sc).unwrap();
    for r in &t.records {
        // Stops at u, or one step past it when backing off.
        assert!(r.measured_locations == r.u_steps || r.measured_locations == r.u_steps + 1);
        assert_eq!(r.gamma_mw, 1.0);
    }
    let s = summarize(&[t]).unwrap();
    assert!(s.measurements_per_step.value < 5.0 / s.mean_distance_steps.value);
}

#[test]
fn successive_hops_are_uncorrelated() {
    let sc = scenario(ShadowingModel::log_normal(7.7).unwrap());
    let t = run_deployment(&mut opt_el(&sc, 0.83), 100_000, 6, &sc).unwrap();
    let u: Vec<f64> = t.records.iter().map(|r| f64::from(r.u_steps)).collect();
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let cov = u.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
    assert!((cov / var).abs() < 4.0 / n.sqrt());
}

#[test]
fn trace_csv_round_trip() {
    let sc = scenario(ShadowingModel::log_normal(7.7).unwrap());
    let mut h = PolicyHandle::learner(sc.window, LearnerState::ratio(0.5, 100.0, 1.0).unwrap());
    let t = run_deployment(&mut h, 50, 9, &sc).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&t.records, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("k,u_steps,gamma_dbm,q_out,lambda_hat,xi_out_hat,xi_relay_hat\n"));
    let back = read_trace_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), t.records.len());
    for (a, b) in back.iter().zip(&t.records) {
        assert_eq!(
            (a.k, a.u_steps, a.q_out, a.lambda_hat),
            (b.k, b.u_steps, b.q_out, b.lambda_hat)
        );
        assert!((a.gamma_mw - b.gamma_mw).abs() < 1e-12 * b.gamma_mw);
    }

    let t = run_deployment(&mut opt_el(&sc, 0.8), 3, 9, &sc).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&t.records, &mut buf).unwrap();
    let back = read_trace_csv(buf.as_slice()).unwrap();
    assert!(back
        .iter()
        .all(|r| r.lambda_hat.is_none() && r.xi_out_hat.is_none()));
    assert!(read_trace_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn single_run_curve_is_the_trajectory() {
    let sc = scenario(ShadowingModel::log_normal(7.7).unwrap());
    let initial = LearnerState::ratio(0.5, 100.0, 1.0).unwrap();
    let curve = convergence_curve(&initial, 1, 40, 11, &sc).unwrap();
    let mut h = PolicyHandle::learner(sc.window, initial);
    let t = run_deployment(&mut h, 40, 11, &sc).unwrap();
    let mut su = 0.0;
    for (row, rec) in curve.rows.iter().zip(&t.records) {
        su += f64::from(rec.u_steps);
        assert_eq!(row.lambda_hat_mean, rec.lambda_hat.unwrap());
        assert_eq!(row.lambda_hat_se, 0.0);
        assert!((row.mean_distance_steps - su / row.k as f64).abs() < 1e-12);
    }
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 41);
    assert!(convergence_curve(&initial, 0, 40, 11, &sc).is_err());
}

#[test]
fn heuristic_power_calibration() {
    let stats = |p: f64| MetricsSummary {
        links: 10,
        mean_cost_per_step: Estimate { value: 1.0, se: 0.0 },
        mean_power_per_link_mw: Estimate { value: p, se: 0.0 },
        mean_outage_per_link: Estimate {
            value: 0.004,
            se: 0.0,
        },
        mean_outage_per_step: Estimate {
            value: 0.002,
            se: 0.0,
        },
        mean_distance_steps: Estimate { value: 2.0, se: 0.0 },
        relays_per_step: Estimate { value: 0.5, se: 0.0 },
        measurements_per_step: Estimate { value: 1.0, se: 0.0 },
    };
    let s = PowerSet::reference();
    let snap = calibrate_heu_asyougo(&stats(2.5), &s, PowerCalibration::SnapNearest).unwrap();
    assert!((snap.fixed_power_mw - dbm_to_mw(5.0)).abs() < 1e-12);
    let exact = calibrate_heu_asyougo(&stats(2.5), &s, PowerCalibration::Exact).unwrap();
    assert_eq!(exact.fixed_power_mw, 2.5);
    assert_eq!(exact.target_outage, 0.004);
    let none = MetricsSummary {
        links: 0,
        ..stats(1.0)
    };
    assert!(calibrate_heu_asyougo(&none, &s, PowerCalibration::Exact).is_err());
}

#[test]
fn optimal_as_you_go_runs_end_to_end() {
    let s = discretize_lognormal(7.7, 31).unwrap();
    let sc = scenario(s.clone());
    let cfg = ExploreConfig::new(0, 5, 100.0, 1.0).unwrap();
    let lim = average_cost_limit(
        &cfg,
        &s,
        &sc.powers,
        &sc.params,
        &default_theta_schedule(),
        DEFAULT_LIMIT_TOL,
    )
    .unwrap();
    let t = run_deployment(&mut PolicyHandle::opt_ayg(lim.policy), 100_000, 12, &sc).unwrap();
    assert_eq!(t.mode, Mode::Sequential);
    let m = summarize(&[t]).unwrap();
    let c = m.mean_cost_per_step;
    assert!(
        (c.value - lim.lambda).abs() < 4.0 * c.se + 1e-4 * lim.lambda,
        "{c:?} vs {}",
        lim.lambda
    );
}

#[test]
fn mismatched_window_is_rejected() {
    let sc = scenario(ShadowingModel::log_normal(7.7).unwrap());
    let mut h = PolicyHandle::heu_el(Window::new(1, 4).unwrap(), 100.0, 1.0);
    assert!(run_deployment(&mut h, 10, 1, &sc).is_err());
    assert!(run_deployment(&mut opt_el(&sc, 1.0), 0, 1, &sc).is_err());
}
