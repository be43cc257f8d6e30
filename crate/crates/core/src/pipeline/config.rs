//! Flat TOML run configuration. Unknown keys are rejected so that typos in a
//! config file fail loudly instead of silently falling back to defaults.

use crate::estimator::{EstimatorConfig, MatcherConfig};
use crate::uncertainty::SensorNoise;
use crate::voxelmap::MapConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

/// All tunables of a run, flat so the TOML stays greppable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Sensor noise model.
    /// Ranging standard deviation (m).
    pub sigma_d: f64,
    /// Bearing standard deviation (degrees).
    pub sigma_omega_deg: f64,

    // Voxel map.
    /// Root voxel edge length (m).
    pub voxel_size: f64,
    /// Octree depth including the root layer.
    pub max_layer: u32,
    /// Planarity threshold on λ₃ (m²).
    pub plane_threshold: f64,
    /// Minimum points before a node decides plane vs subdivide.
    pub min_points: usize,
    /// Point count at which a plane's parameters freeze.
    pub converge_points: usize,
    /// Rolling buffer length for converged-plane consistency checks.
    pub recent_points: usize,
    /// Refit-vs-stored normal angle (degrees) that counts as a mismatch.
    pub rebuild_angle_deg: f64,
    /// Consecutive mismatches that trigger a rebuild.
    pub rebuild_streak: u32,
    /// Hard cap on buffered points per node.
    pub max_buffer: usize,
    /// Also query the six face-adjacent root voxels.
    pub query_adjacent: bool,

    // Estimator.
    /// Per-axis rotational process noise per frame (rad²).
    pub process_noise_rot: f64,
    /// Per-axis translational process noise per frame (m²).
    pub process_noise_trans: f64,
    pub max_iterations: usize,
    pub iteration_epsilon: f64,
    pub rematch_each_iteration: bool,
    /// Process-noise multiplier while no velocity estimate exists yet.
    pub bootstrap_scale: f64,
    /// Fewest matches a frame may have before it is flagged and skipped.
    pub min_matches: usize,
    /// Floor (meters, 1-sigma) on per-observation residual noise.
    pub noise_floor: f64,

    // Matching.
    /// Downsample leaf (m); 0 disables, negative derives it from the map.
    pub downsample_leaf: f64,

    /// Seed for every randomized stage.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let noise = SensorNoise::default_lidar();
        let map = MapConfig::default();
        let est = EstimatorConfig::default();
        Self {
            sigma_d: noise.sigma_d,
            sigma_omega_deg: noise.sigma_omega.to_degrees(),
            voxel_size: map.voxel_size,
            max_layer: map.max_layer,
            plane_threshold: map.plane_threshold,
            min_points: map.min_points,
            converge_points: map.converge_points,
            recent_points: map.recent_points,
            rebuild_angle_deg: map.rebuild_angle.to_degrees(),
            rebuild_streak: map.rebuild_streak,
            max_buffer: map.max_buffer,
            query_adjacent: map.query_adjacent,
            process_noise_rot: est.process_noise_rot,
            process_noise_trans: est.process_noise_trans,
            max_iterations: est.max_iterations,
            iteration_epsilon: est.iteration_epsilon,
            rematch_each_iteration: est.rematch_each_iteration,
            bootstrap_scale: est.bootstrap_scale,
            min_matches: est.min_matches,
            noise_floor: est.noise_floor,
            downsample_leaf: -1.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("RunConfig serializes")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.sigma_d <= 0.0 || self.sigma_omega_deg <= 0.0 {
            return Err(ConfigError::Invalid(
                "sigma_d and sigma_omega_deg must be positive".into(),
            ));
        }
        if self.voxel_size <= 0.0 {
            return Err(ConfigError::Invalid("voxel_size must be positive".into()));
        }
        if self.max_layer == 0 {
            return Err(ConfigError::Invalid("max_layer must be at least 1".into()));
        }
        if self.min_points < 3 {
            return Err(ConfigError::Invalid(
                "min_points must be at least 3 for plane fits".into(),
            ));
        }
        if self.converge_points < self.min_points {
            return Err(ConfigError::Invalid(
                "converge_points must not be below min_points".into(),
            ));
        }
        Ok(())
    }

    pub fn sensor_noise(&self) -> SensorNoise {
        SensorNoise {
            sigma_d: self.sigma_d,
            sigma_omega: self.sigma_omega_deg.to_radians(),
        }
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            voxel_size: self.voxel_size,
            max_layer: self.max_layer,
            plane_threshold: self.plane_threshold,
            min_points: self.min_points,
            converge_points: self.converge_points,
            recent_points: self.recent_points,
            rebuild_angle: self.rebuild_angle_deg.to_radians(),
            rebuild_streak: self.rebuild_streak,
            max_buffer: self.max_buffer,
            query_adjacent: self.query_adjacent,
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            process_noise_rot: self.process_noise_rot,
            process_noise_trans: self.process_noise_trans,
            max_iterations: self.max_iterations,
            iteration_epsilon: self.iteration_epsilon,
            rematch_each_iteration: self.rematch_each_iteration,
            bootstrap_scale: self.bootstrap_scale,
            min_matches: self.min_matches,
            noise_floor: self.noise_floor,
        }
    }

    pub fn matcher_config(&self) -> MatcherConfig {
        if self.downsample_leaf < 0.0 {
            MatcherConfig::from_map(&self.map_config())
        } else {
            MatcherConfig {
                downsample_leaf: self.downsample_leaf,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_toml_str("vocsel_size = 2.0").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str("voxel_size = 4.0\nseed = 7\n").unwrap();
        assert_eq!(cfg.voxel_size, 4.0);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.max_layer, RunConfig::default().max_layer);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("voxel_size = -1.0").is_err());
        assert!(RunConfig::from_toml_str("min_points = 2").is_err());
        assert!(RunConfig::from_toml_str("converge_points = 5").is_err());
    }

    #[test]
    fn derived_configs_match_fields() {
        let cfg = RunConfig::from_toml_str("sigma_omega_deg = 0.1\nrebuild_angle_deg = 20.0")
            .unwrap();
        assert!((cfg.sensor_noise().sigma_omega - 0.1f64.to_radians()).abs() < 1e-15);
        assert!((cfg.map_config().rebuild_angle - 20f64.to_radians()).abs() < 1e-15);
        // Negative leaf derives from the map geometry.
        assert!(cfg.matcher_config().downsample_leaf > 0.0);
        let explicit = RunConfig::from_toml_str("downsample_leaf = 0.3").unwrap();
        assert_eq!(explicit.matcher_config().downsample_leaf, 0.3);
    }
}
