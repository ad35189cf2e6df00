#![allow(dead_code)]

use rand_chacha::ChaCha8Rng;
use relayplace_core::channel::{outage_probability, sample_shadowing, ChannelConfig, ShadowingConfig};
use relayplace_core::policy::{PolicyKind, PolicySpec};
use relayplace_core::simulator::run_rng;
use relayplace_service::{CreateSession, Measurement};

pub fn channel() -> ChannelConfig {
    ChannelConfig {
        shadowing: ShadowingConfig {
            points: 31,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn request(kind: PolicyKind) -> CreateSession {
    CreateSession {
        channel: channel(),
        policy: PolicySpec::new(kind),
    }
}

pub struct Walker {
    rng: ChaCha8Rng,
    channel: ChannelConfig,
}

impl Walker {
    pub fn new(seed: u64) -> Self {
        Walker {
            rng: run_rng(seed, 0),
            channel: channel(),
        }
    }

    /// Outages at location `r` for the given levels under one shadowing draw.
    pub fn readings(&mut self, r: u32, levels_mw: &[f64]) -> Vec<f64> {
        let model = self.channel.shadowing_model().unwrap();
        let w = sample_shadowing(&model, &mut self.rng);
        let params = self.channel.params();
        levels_mw
            .iter()
            .map(|&g| outage_probability(r, g, w, &params).unwrap())
            .collect()
    }

    pub fn window(&mut self, a: u32, b: u32, levels_mw: &[f64]) -> Vec<Vec<f64>> {
        (a + 1..=a + b).map(|r| self.readings(r, levels_mw)).collect()
    }
}

pub fn measurement(r: u32, readings: Vec<f64>) -> Measurement {
    Measurement {
        r,
        readings,
        expected_version: None,
    }
}
