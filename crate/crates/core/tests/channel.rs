use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use relayplace_core::channel::*;
use relayplace_core::explore::{policy_iteration, ExploreConfig, PolicyIterationOptions};

#[test]
fn reference_outage_matches_high_precision_value() {
    // 40-digit evaluation of the closed form at r=5, γ=5 dBm, w=1.
    const REFERENCE: f64 = 0.101_610_830_116_047_47;
    let q = outage_probability(5, dbm_to_mw(5.0), 1.0, &ChannelParams::default()).unwrap();
    assert!((q - REFERENCE).abs() < 1e-15, "{q}");
    assert!((q - 0.102).abs() < 5e-4);
}

/// Fraction of `n` exponential fading draws that fall below the outage threshold.
fn empirical_outage<R: Rng>(rng: &mut R, r: u32, gamma: f64, w: f64, p: &ChannelParams, n: usize) -> f64 {
    let mean_rx = gamma * p.c * (f64::from(r) * p.delta / p.r0).powf(-p.eta) * w;
    let hits = (0..n)
        .filter(|_| {
            let h: f64 = Exp1.sample(rng);
            mean_rx * h < p.p_rcv_min
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn closed_form_agrees_with_fading_simulation() {
    let p = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let q = outage_probability(5, dbm_to_mw(5.0), 1.0, &p).unwrap();
    let emp = empirical_outage(&mut rng, 5, dbm_to_mw(5.0), 1.0, &p, n);
    assert!((emp - q).abs() < 3.0 * (q * (1.0 - q) / n as f64).sqrt());

    for _ in 0..20 {
        let r = rng.random_range(1..=6);
        let gamma = dbm_to_mw(rng.random_range(-18.0..5.0));
        let w = 10f64.powf(rng.random_range(-1.0..1.0));
        let q = outage_probability(r, gamma, w, &p).unwrap();
        let emp = empirical_outage(&mut rng, r, gamma, w, &p, n);
        let tol = 4.0 * (q * (1.0 - q) / n as f64).sqrt();
        assert!(
            (emp - q).abs() < tol.max(1e-12),
            "r={r} γ={gamma} w={w}: {emp} vs {q}"
        );
    }
}

#[test]
fn outage_limits() {
    let p = ChannelParams::default();
    let tiny = ChannelParams {
        p_rcv_min: 1e-300,
        ..p
    };
    assert!(outage_probability(3, 1.0, 1.0, &tiny).unwrap() < 1e-250);
    assert!(outage_probability(3, 1.0, 1e300, &p).unwrap() < 1e-250);
}

proptest! {
    #[test]
    fn outage_in_unit_interval_and_monotone(
        r in 1u32..8,
        gamma_dbm in -20.0f64..10.0,
        w_db in -20.0f64..20.0,
        eta in 2.0f64..6.0,
    ) {
        let p = ChannelParams { eta, ..ChannelParams::default() };
        let gamma = dbm_to_mw(gamma_dbm);
        let w = 10f64.powf(w_db / 10.0);
        // Stay where f64 resolves the closed form (no saturation at 0 or 1).
        let x = p.link_constant(r + 1) / (gamma * w);
        prop_assume!(x > 1e-12 && x < 30.0);
        let q = outage_probability(r, gamma, w, &p).unwrap();
        prop_assert!(q > 0.0 && q < 1.0);
        let q_far = outage_probability(r + 1, gamma, w, &p).unwrap();
        let q_louder = outage_probability(r, gamma * 1.5, w, &p).unwrap();
        let q_better = outage_probability(r, gamma, w * 1.5, &p).unwrap();
        prop_assert!(q_far > q);
        prop_assert!(q_louder < q);
        prop_assert!(q_better < q);
    }

    #[test]
    fn dbm_round_trip(x in -60.0f64..40.0) {
        let back = mw_to_dbm(dbm_to_mw(x)).unwrap();
        prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        let mw = dbm_to_mw(x);
        prop_assert!((dbm_to_mw(mw_to_dbm(mw).unwrap()) - mw).abs() <= 1e-12 * mw);
    }
}

#[test]
fn sampling_finite_and_lognormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let one = ShadowingModel::Finite(FiniteShadowing::unit());
    assert!((0..1000).all(|_| sample_shadowing(&one, &mut rng) == 1.0));

    let two = ShadowingModel::Finite(FiniteShadowing::new(vec![0.5, 2.0], vec![0.5, 0.5]).unwrap());
    let n = 100_000;
    let low = (0..n).filter(|_| sample_shadowing(&two, &mut rng) == 0.5).count();
    assert!((low as f64 / n as f64 - 0.5).abs() < 0.005);

    let ln = ShadowingModel::log_normal(7.7).unwrap();
    let n = 1_000_000;
    let ys: Vec<f64> = (0..n)
        .map(|_| 10.0 * sample_shadowing(&ln, &mut rng).log10())
        .collect();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * 7.7 / (n as f64).sqrt(), "{mean}");
    assert!((sd - 7.7).abs() < 0.03, "{sd}");
}

fn db_moments(s: &FiniteShadowing) -> (f64, f64, f64) {
    let ys: Vec<f64> = s.values().iter().map(|w| 10.0 * w.log10()).collect();
    let mean: f64 = ys.iter().zip(s.probs()).map(|(y, p)| y * p).sum();
    let var: f64 = ys
        .iter()
        .zip(s.probs())
        .map(|(y, p)| p * (y - mean).powi(2))
        .sum();
    (mean, var.sqrt(), s.probs().iter().sum())
}

#[test]
fn discretizer_moments() {
    for n in [15, 31, 101, 201] {
        let m = discretize_lognormal(7.7, n).unwrap();
        let (mean, sd, mass) = db_moments(m.as_finite().unwrap());
        assert!(mean.abs() < 0.08, "n={n} mean {mean}");
        assert!((sd / 7.7 - 1.0).abs() < 0.01, "n={n} sd {sd}");
        assert!((mass - 1.0).abs() < 1e-12);
    }
    let m = discretize_lognormal(7.7, 2).unwrap();
    assert_eq!(m.as_finite().unwrap().len(), 2);
    assert!(discretize_lognormal(7.7, 1).is_err());
}

#[test]
fn discretizer_small_sigma_limit() {
    let m = discretize_lognormal(0.0, 15).unwrap();
    assert_eq!(m.as_finite().unwrap().values(), &[1.0]);
    let m = discretize_lognormal(1e-9, 15).unwrap();
    assert!(m
        .as_finite()
        .unwrap()
        .values()
        .iter()
        .all(|w| (w - 1.0).abs() < 1e-9));
}

#[test]
fn discretization_resolution_barely_moves_lambda_star() {
    let cfg = ExploreConfig::new(0, 5, 100.0, 1.0).unwrap();
    let s = PowerSet::reference();
    let p = ChannelParams::default();
    let solve = |n| {
        let m = discretize_lognormal(7.7, n).unwrap();
        policy_iteration(&cfg, &m, &s, &p, None, PolicyIterationOptions::discretized())
            .unwrap()
            .lambda_star
    };
    let (a, b) = (solve(15), solve(31));
    assert!((a - b).abs() / b < 0.01, "{a} vs {b}");
}

#[test]
fn config_file_formats() {
    let dir = std::env::temp_dir().join(format!("relayplace-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let toml_path = dir.join("c.toml");
    std::fs::write(
        &toml_path,
        "eta = 4.0\npower_levels_dbm = [-3.0, 0.0]\n[shadowing]\nfinite = { values = [0.5, 2.0], probs = [0.5, 0.5] }\n",
    )
    .unwrap();
    let cfg = ChannelConfig::load(&toml_path).unwrap();
    assert_eq!(cfg.eta, 4.0);
    assert_eq!(cfg.powers().unwrap().len(), 2);
    assert!(matches!(
        cfg.shadowing_model().unwrap(),
        ShadowingModel::Finite(_)
    ));

    let json_path = dir.join("c.json");
    std::fs::write(&json_path, r#"{"shadowing": {"sigma_db": 9.0, "points": 31}}"#).unwrap();
    let cfg = ChannelConfig::load(&json_path).unwrap();
    assert_eq!(
        cfg.shadowing_model().unwrap(),
        ShadowingModel::LogNormal { sigma_db: 9.0 }
    );
    assert_eq!(cfg.solver_shadowing().unwrap().as_finite().unwrap().len(), 31);

    std::fs::write(&json_path, r#"{"etaa": 1.0}"#).unwrap();
    assert!(ChannelConfig::load(&json_path).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
