//! Flat TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scattrack::forward::{unit, WaveContext};
use scattrack::geometry::Vec2;
use scattrack::tracker::{TrackConfig, View};
use scattrack::trajectory::{CovarianceModel, MotionParams};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub k: f64,
    pub incident_angle_deg: f64,
    pub eta: Option<f64>,
    pub receivers: usize,
    pub view: String,
    pub noise: f64,
    pub budget: usize,
    pub phi_deg: f64,
    pub library_grid: usize,
    pub delta: f64,
    pub sigma_v: f64,
    pub sigma_theta: f64,
    pub v0_x: f64,
    pub v0_y: f64,
    pub steps: usize,
    pub literal_covariance: bool,
    pub shape_count: usize,
    pub samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub probe_thetas: Vec<f64>,
    pub landscape_points: usize,
    pub planted_theta_deg: f64,
    pub planted_tau_x: f64,
    pub planted_tau_y: f64,
    pub shape_seed: Option<u64>,
    pub motion_seed: Option<u64>,
    pub noise_seed: Option<u64>,
    pub dataset_seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub train_seed: Option<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            k: 1.0,
            incident_angle_deg: 0.0,
            eta: None,
            receivers: 24,
            view: "full".into(),
            noise: 0.0,
            budget: 9,
            phi_deg: 50.0,
            library_grid: 256,
            delta: 0.05,
            sigma_v: 1.5,
            sigma_theta: 1.2,
            v0_x: 1.0,
            v0_y: 1.0,
            steps: 20,
            literal_covariance: false,
            shape_count: 10,
            samples: 4000,
            epochs: 200,
            learning_rate: 1e-4,
            batch_size: 128,
            train_fraction: 0.8,
            probe_thetas: vec![0.1, 0.01, 0.001, 0.0001],
            landscape_points: 181,
            planted_theta_deg: 20.0,
            planted_tau_x: 0.0,
            planted_tau_y: 0.0,
            shape_seed: None,
            motion_seed: None,
            noise_seed: None,
            dataset_seed: None,
            init_seed: None,
            train_seed: None,
        }
    }
}

impl Config {
    /// Reads `path` (defaults when absent), applies the seed override and
    /// fills unset named seeds from the master seed.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => Config::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let base = cfg.seed;
        for (i, slot) in [
            &mut cfg.shape_seed,
            &mut cfg.motion_seed,
            &mut cfg.noise_seed,
            &mut cfg.dataset_seed,
            &mut cfg.init_seed,
            &mut cfg.train_seed,
        ]
        .into_iter()
        .enumerate()
        {
            slot.get_or_insert(base.wrapping_mul(1_000).wrapping_add(i as u64 + 1));
        }
        cfg.eta.get_or_insert(cfg.k);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(format!("config: {m}")));
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if !(self.phi_deg > 0.0 && self.phi_deg <= 180.0) {
            return bad(format!("phi_deg must be in (0, 180], got {}", self.phi_deg));
        }
        if self.budget < 4 {
            return bad(format!("budget must be at least 4, got {}", self.budget));
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.landscape_points < 2 {
            return bad("landscape_points must be at least 2".into());
        }
        self.view()?;
        self.wave_context()?;
        self.motion()?;
        Ok(())
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn header(&self) -> String {
        format!("config-hash {}", self.hash())
    }

    pub fn wave_context(&self) -> Result<WaveContext, CliError> {
        let d: Vec2 = unit(self.incident_angle_deg.to_radians());
        WaveContext::new(self.k, d, self.eta.unwrap_or(self.k)).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn view(&self) -> Result<View, CliError> {
        self.view.parse().map_err(|e: scattrack::tracker::TrackError| CliError::Usage(format!("config: {e}")))
    }

    pub fn motion(&self) -> Result<MotionParams, CliError> {
        let p = MotionParams::new(
            self.delta,
            self.sigma_v,
            self.sigma_theta,
            Vec2::new(self.v0_x, self.v0_y),
            0.0,
        )
        .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(if self.literal_covariance { p.with_covariance(CovarianceModel::Literal) } else { p })
    }

    pub fn track(&self) -> TrackConfig {
        TrackConfig {
            budget: self.budget,
            phi: self.phi_deg.to_radians(),
            sigma_v: self.sigma_v,
            delta: self.delta,
            library_grid: self.library_grid,
            radius: None,
        }
    }

    pub fn seed_of(slot: Option<u64>) -> u64 {
        slot.expect("seeds resolved at load")
    }
}
