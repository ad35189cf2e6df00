//! Units, the Rayleigh-fading outage model, and shadowing distributions.
//!
//! Received power of a packet over a link of `r` steps is
//! `γ c (r δ / r0)^-η H W` with fading `H ~ Exp(1)` and shadowing `W`.
//! All power arithmetic is in linear milliwatts; dBm appears only at I/O edges.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a finite shadowing alphabet.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Default number of atoms used when a log-normal model must be made finite.
pub const DEFAULT_DISCRETIZATION_POINTS: usize = 201;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> Result<f64> {
    if !(mw > 0.0) || !mw.is_finite() {
        return Err(Error::domain(format!(
            "power must be positive and finite, got {mw} mW"
        )));
    }
    Ok(10.0 * mw.log10())
}

/// Radio propagation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Path-loss exponent.
    pub eta: f64,
    /// Linear path-loss gain at the reference distance.
    pub c: f64,
    /// Reference distance, meters.
    pub r0: f64,
    /// Received-power outage threshold, mW.
    pub p_rcv_min: f64,
    /// Step length, meters.
    pub delta: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            eta: 4.7,
            c: dbm_to_mw(1.7),
            r0: 1.0,
            p_rcv_min: dbm_to_mw(-97.0),
            delta: 20.0,
        }
    }
}

impl ChannelParams {
    pub fn new(eta: f64, c: f64, r0: f64, p_rcv_min: f64, delta: f64) -> Result<Self> {
        let p = ChannelParams {
            eta,
            c,
            r0,
            p_rcv_min,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("c", self.c),
            ("r0", self.r0),
            ("p_rcv_min", self.p_rcv_min),
            ("delta", self.delta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `P_rcv-min (r δ / r0)^η / c`: outage is `1 - exp(-k / (γ w))`.
    pub fn link_constant(&self, r_steps: u32) -> f64 {
        let r = f64::from(r_steps) * self.delta / self.r0;
        self.p_rcv_min * r.powf(self.eta) / self.c
    }

    /// Link constants for `r = 1..=max_steps`, indexed by `r - 1`.
    pub fn link_constants(&self, max_steps: u32) -> Vec<f64> {
        (1..=max_steps).map(|r| self.link_constant(r)).collect()
    }
}

/// Outage for a precomputed link constant; see [`ChannelParams::link_constant`].
#[inline]
pub fn outage_from_constant(k: f64, gamma: f64, w: f64) -> f64 {
    -(-k / (gamma * w)).exp_m1()
}

pub fn outage_probability(r_steps: u32, gamma: f64, w: f64, params: &ChannelParams) -> Result<f64> {
    if r_steps == 0 {
        return Err(Error::domain("link length must be at least one step"));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!(
            "transmit power must be positive, got {gamma}"
        )));
    }
    if !(w > 0.0) || w.is_nan() {
        return Err(Error::domain(format!("shadowing must be positive, got {w}")));
    }
    params.validate()?;
    Ok(outage_from_constant(params.link_constant(r_steps), gamma, w))
}

/// Available transmit power levels, ascending, in mW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PowerSet {
    levels: Vec<f64>,
}

impl PowerSet {
    pub fn new(levels_mw: Vec<f64>) -> Result<Self> {
        if levels_mw.is_empty() {
            return Err(Error::domain("power set is empty"));
        }
        if let Some(p) = levels_mw.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::domain(format!(
                "power levels must be positive and finite, got {p}"
            )));
        }
        if levels_mw.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("power levels must be sorted ascending"));
        }
        Ok(PowerSet { levels: levels_mw })
    }

    pub fn from_dbm(levels_dbm: &[f64]) -> Result<Self> {
        Self::new(levels_dbm.iter().map(|d| dbm_to_mw(*d)).collect())
    }

    /// The five-level set {-18, -7, -4, 0, 5} dBm.
    pub fn reference() -> Self {
        Self::from_dbm(&[-18.0, -7.0, -4.0, 0.0, 5.0]).expect("static levels are valid")
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.levels[0]
    }

    pub fn max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    /// Index of the level nearest to `mw` in the linear domain; ties go to the lower level.
    pub fn nearest(&self, mw: f64) -> usize {
        let mut best = 0;
        for (i, p) in self.levels.iter().enumerate() {
            if (p - mw).abs() < (self.levels[best] - mw).abs() {
                best = i;
            }
        }
        best
    }

    /// Index of a level equal to `mw` within 1e-9 relative.
    pub fn position(&self, mw: f64) -> Option<usize> {
        self.levels
            .iter()
            .position(|p| (p - mw).abs() <= 1e-9 * p.abs().max(mw.abs()))
    }
}

impl TryFrom<Vec<f64>> for PowerSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PowerSet::new(v)
    }
}

impl From<PowerSet> for Vec<f64> {
    fn from(p: PowerSet) -> Self {
        p.levels
    }
}

/// Shadowing factor over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteShadowing {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl FiniteShadowing {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::domain(
                "shadowing alphabet needs matching nonempty values and probabilities",
            ));
        }
        if let Some(w) = values.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::domain(format!(
                "shadowing values must be positive, got {w}"
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain(format!(
                "probabilities must be nonnegative, got {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(FiniteShadowing { values, probs })
    }

    /// Deterministic channel: `W = 1`.
    pub fn unit() -> Self {
        FiniteShadowing {
            values: vec![1.0],
            probs: vec![1.0],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for (w, p) in self.values.iter().zip(&self.probs) {
            acc += p;
            if x < acc {
                return *w;
            }
        }
        self.values[self.values.len() - 1]
    }
}

/// Distribution of the multiplicative shadowing factor `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowingModel {
    Finite(FiniteShadowing),
    /// `W = 10^(Y/10)`, `Y ~ N(0, sigma_db^2)`.
    LogNormal {
        sigma_db: f64,
    },
}

impl ShadowingModel {
    pub fn log_normal(sigma_db: f64) -> Result<Self> {
        if !(sigma_db > 0.0) || !sigma_db.is_finite() {
            return Err(Error::domain(format!(
                "sigma must be positive, got {sigma_db} dB"
            )));
        }
        Ok(ShadowingModel::LogNormal { sigma_db })
    }

    pub fn as_finite(&self) -> Result<&FiniteShadowing> {
        match self {
            ShadowingModel::Finite(f) => Ok(f),
            ShadowingModel::LogNormal { .. } => Err(Error::domain(
                "solver needs a finite shadowing alphabet; discretize the log-normal model first",
            )),
        }
    }

    /// Finite version of this model, discretizing a log-normal one with `points` atoms.
    pub fn to_finite(&self, points: usize) -> Result<FiniteShadowing> {
        match self {
            ShadowingModel::Finite(f) => Ok(f.clone()),
            ShadowingModel::LogNormal { sigma_db } => match discretize_lognormal(*sigma_db, points)? {
                ShadowingModel::Finite(f) => Ok(f),
                ShadowingModel::LogNormal { .. } => unreachable!(),
            },
        }
    }
}

pub fn sample_shadowing<R: Rng + ?Sized>(model: &ShadowingModel, rng: &mut R) -> f64 {
    match model {
        ShadowingModel::Finite(f) => f.sample(rng),
        ShadowingModel::LogNormal { sigma_db } => {
            let z: f64 = rng.sample(StandardNormal);
            10f64.powf(sigma_db * z / 10.0)
        }
    }
}

/// Equal-probability quantile grid in the dB domain.
///
/// Each of the `n` bins gets mass `1/n` and an atom at the bin's conditional
/// mean; the atoms are then symmetrized and rescaled so the dB-domain mean is 0
/// and the standard deviation is exactly `sigma_db`.
pub fn discretize_lognormal(sigma_db: f64, n_points: usize) -> Result<ShadowingModel> {
    if n_points < 2 {
        return Err(Error::domain(format!("need at least 2 points, got {n_points}")));
    }
    if !(sigma_db >= 0.0) || !sigma_db.is_finite() {
        return Err(Error::domain(format!(
            "sigma must be nonnegative, got {sigma_db} dB"
        )));
    }
    if sigma_db == 0.0 {
        return Ok(ShadowingModel::Finite(FiniteShadowing::unit()));
    }
    let std_normal = Normal::standard();
    let n = n_points as f64;
    let pdf_at_edge = |i: usize| -> f64 {
        if i == 0 || i == n_points {
            0.0
        } else {
            std_normal.pdf(std_normal.inverse_cdf(i as f64 / n))
        }
    };
    let raw: Vec<f64> = (0..n_points)
        .map(|i| n * (pdf_at_edge(i) - pdf_at_edge(i + 1)))
        .collect();
    let sym: Vec<f64> = (0..n_points)
        .map(|i| 0.5 * (raw[i] - raw[n_points - 1 - i]))
        .collect();
    let second_moment = sym.iter().map(|m| m * m).sum::<f64>() / n;
    let scale = sigma_db / second_moment.sqrt();
    let values = sym.iter().map(|m| 10f64.powf(scale * m / 10.0)).collect();
    Ok(ShadowingModel::Finite(FiniteShadowing {
        values,
        probs: vec![1.0 / n; n_points],
    }))
}

/// Channel block of a configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::c_db")]
    pub c_db: f64,
    #[serde(default = "defaults::r0_m")]
    pub r0_m: f64,
    #[serde(default = "defaults::p_rcv_min_dbm")]
    pub p_rcv_min_dbm: f64,
    #[serde(default = "defaults::delta_m")]
    pub delta_m: f64,
    #[serde(default = "defaults::power_levels_dbm")]
    pub power_levels_dbm: Vec<f64>,
    #[serde(default)]
    pub shadowing: ShadowingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finite: Option<FiniteShadowingConfig>,
    /// Atoms used when the log-normal model is discretized for solvers.
    #[serde(default = "defaults::points")]
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteShadowingConfig {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

mod defaults {
    pub fn eta() -> f64 {
        4.7
    }
    pub fn c_db() -> f64 {
        1.7
    }
    pub fn r0_m() -> f64 {
        1.0
    }
    pub fn p_rcv_min_dbm() -> f64 {
        -97.0
    }
    pub fn delta_m() -> f64 {
        20.0
    }
    pub fn power_levels_dbm() -> Vec<f64> {
        vec![-18.0, -7.0, -4.0, 0.0, 5.0]
    }
    pub fn points() -> usize {
        super::DEFAULT_DISCRETIZATION_POINTS
    }
}

impl Default for ShadowingConfig {
    fn default() -> Self {
        ShadowingConfig {
            sigma_db: Some(7.7),
            finite: None,
            points: DEFAULT_DISCRETIZATION_POINTS,
        }
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            eta: defaults::eta(),
            c_db: defaults::c_db(),
            r0_m: defaults::r0_m(),
            p_rcv_min_dbm: defaults::p_rcv_min_dbm(),
            delta_m: defaults::delta_m(),
            power_levels_dbm: defaults::power_levels_dbm(),
            shadowing: ShadowingConfig::default(),
        }
    }
}

impl ChannelConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ChannelConfig = toml::from_str(s).map_err(|e| Error::config("channel", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ChannelConfig =
            serde_json::from_str(s).map_err(|e| Error::config("channel", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` or `.json` file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("r0_m", self.r0_m), ("delta_m", self.delta_m)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [("c_db", self.c_db), ("p_rcv_min_dbm", self.p_rcv_min_dbm)] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if self.power_levels_dbm.is_empty() {
            return Err(Error::config("power_levels_dbm", "must not be empty"));
        }
        for (i, p) in self.power_levels_dbm.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::config(format!("power_levels_dbm[{i}]"), "must be finite"));
            }
            if i > 0 && *p < self.power_levels_dbm[i - 1] {
                return Err(Error::config(
                    format!("power_levels_dbm[{i}]"),
                    "levels must be ascending",
                ));
            }
        }
        match (&self.shadowing.sigma_db, &self.shadowing.finite) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "shadowing",
                    "give either sigma_db or finite, not both",
                ))
            }
            (None, None) => return Err(Error::config("shadowing", "give sigma_db or finite")),
            (Some(s), None) if !(*s > 0.0) || !s.is_finite() => {
                return Err(Error::config(
                    "shadowing.sigma_db",
                    format!("must be positive, got {s}"),
                ))
            }
            (None, Some(f)) => {
                FiniteShadowing::new(f.values.clone(), f.probs.clone())
                    .map_err(|e| Error::config("shadowing.finite", e.to_string()))?;
            }
            _ => {}
        }
        if self.shadowing.points < 2 {
            return Err(Error::config("shadowing.points", "must be at least 2"));
        }
        Ok(())
    }

    pub fn params(&self) -> ChannelParams {
        ChannelParams {
            eta: self.eta,
            c: dbm_to_mw(self.c_db),
            r0: self.r0_m,
            p_rcv_min: dbm_to_mw(self.p_rcv_min_dbm),
            delta: self.delta_m,
        }
    }

    pub fn powers(&self) -> Result<PowerSet> {
        PowerSet::from_dbm(&self.power_levels_dbm)
    }

    /// The model as configured (possibly log-normal); used for sampling.
    pub fn shadowing_model(&self) -> Result<ShadowingModel> {
        match (&self.shadowing.sigma_db, &self.shadowing.finite) {
            (_, Some(f)) => Ok(ShadowingModel::Finite(FiniteShadowing::new(
                f.values.clone(),
                f.probs.clone(),
            )?)),
            (Some(s), None) => ShadowingModel::log_normal(*s),
            (None, None) => Err(Error::config("shadowing", "give sigma_db or finite")),
        }
    }

    /// Finite model for the solvers.
    pub fn solver_shadowing(&self) -> Result<ShadowingModel> {
        Ok(ShadowingModel::Finite(
            self.shadowing_model()?.to_finite(self.shadowing.points)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_examples() {
        assert_eq!(dbm_to_mw(0.0), 1.0);
        assert!((dbm_to_mw(-18.0) - 0.015849).abs() < 1e-6);
        assert!((dbm_to_mw(5.0) - 3.16228).abs() < 1e-5);
        assert!(mw_to_dbm(0.0).is_err());
        assert!(mw_to_dbm(-1.0).is_err());
    }

    #[test]
    fn outage_rejects_bad_inputs() {
        let p = ChannelParams::default();
        assert!(outage_probability(0, 1.0, 1.0, &p).is_err());
        assert!(outage_probability(1, 0.0, 1.0, &p).is_err());
        assert!(outage_probability(1, 1.0, -2.0, &p).is_err());
    }

    #[test]
    fn nearest_level_is_linear() {
        let s = PowerSet::new(vec![1.0, 3.16]).unwrap();
        assert_eq!(s.nearest(2.5), 1);
        assert_eq!(s.nearest(2.0), 0);
    }

    #[test]
    fn config_defaults_round_trip() {
        let cfg = ChannelConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ChannelConfig::default());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ChannelConfig::from_json_str(&json).unwrap(), cfg);
    }

    #[test]
    fn config_reports_field() {
        let err = ChannelConfig::from_toml_str("power_levels_dbm = [0.0, -3.0]").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "power_levels_dbm[1]"),
            e => panic!("unexpected {e}"),
        }
        let err = ChannelConfig::from_toml_str(
            "[shadowing]\nsigma_db = 7.0\nfinite = { values = [1.0], probs = [1.0] }",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "shadowing"));
    }
}
