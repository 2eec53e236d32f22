//! The run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spinesurf::eval::BenchmarkSpec;
use spinesurf::features::FeatureParams;
use spinesurf::geometry::{ImageGeometry, ScanKinematics};
use spinesurf::labelgen::LabelParams;
use spinesurf::net::{TrainConfig, UNetSpec};
use spinesurf::phantom::{PhantomParams, PlacedShape, ScanPlan, ShapeSpec};
use spinesurf::volume::VolumeParams;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub params: PhantomParams,
    pub kinematics: ScanKinematics,
    pub plan: ScanPlan,
    pub scene: Vec<PlacedShape>,
}

impl Default for PhantomSection {
    /// A cylinder and a wedge end to end along the carriage axis. Each is
    /// long enough that every frame of the default plan cuts one of them;
    /// frames through empty space only teach the network false positives.
    fn default() -> Self {
        PhantomSection {
            params: PhantomParams::default(),
            kinematics: ScanKinematics::default(),
            plan: ScanPlan {
                carriage_range_m: [-0.014, 0.014],
                ..ScanPlan::default()
            },
            scene: vec![
                PlacedShape {
                    shape: ShapeSpec::Cylinder {
                        depth_m: 0.03,
                        radius_m: 0.008,
                        half_length_m: 0.02,
                    },
                    offset_m: [0.0, -0.02, 0.0],
                },
                PlacedShape {
                    shape: ShapeSpec::Wedge {
                        ridge_depth_m: 0.022,
                        half_width_m: 0.008,
                        height_m: 0.006,
                        half_length_m: 0.02,
                    },
                    offset_m: [0.0, 0.02, 0.0],
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Points sampled from the mesh to stand in for manual annotations.
    pub annotation_points: usize,
    /// Misregistration applied to the annotations before registration.
    pub annotation_rotation_deg: f64,
    pub annotation_shift_m: [f64; 3],
    /// Ablation settings for `eval --benchmark`; its network and optimiser
    /// settings are also used with `eval --data`.
    pub benchmark: BenchmarkSpec,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seed: 1,
            train_fraction: 0.7,
            split_seed: 3,
            annotation_points: 400,
            annotation_rotation_deg: 4.0,
            annotation_shift_m: [0.002, -0.001, 0.0015],
            benchmark: BenchmarkSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: ImageGeometry,
    pub phantom: PhantomSection,
    pub features: FeatureParams,
    pub labelgen: LabelParams,
    pub net: UNetSpec,
    pub train: TrainConfig,
    pub volume: VolumeParams,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: ImageGeometry::default(),
            phantom: PhantomSection::default(),
            features: FeatureParams::default(),
            labelgen: LabelParams::default(),
            net: UNetSpec {
                base_channels: 4,
                depth: 2,
                ..UNetSpec::default()
            },
            train: TrainConfig {
                epochs: 60,
                learning_rate: 0.2,
                ..TrainConfig::default()
            },
            volume: VolumeParams {
                spacing_m: 0.001,
                ..VolumeParams::default()
            },
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> spinesurf::Result<()> {
        self.geometry.validate()?;
        self.phantom.params.validate()?;
        self.phantom.kinematics.validate()?;
        self.phantom.plan.validate()?;
        for s in &self.phantom.scene {
            s.build()?;
        }
        self.features.validate()?;
        self.labelgen.validate()?;
        self.net.validate()?;
        self.net.check_input(self.geometry.n_samples, self.geometry.n_rays)?;
        self.train.validate()?;
        self.volume.validate()?;
        self.eval.benchmark.validate()?;
        if !(self.eval.train_fraction > 0.0 && self.eval.train_fraction < 1.0) {
            return Err(spinesurf::Error::Split(format!("train fraction {}", self.eval.train_fraction)));
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.into(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    /// `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Reads a TOML file into any deny-unknown-fields section type.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    toml::from_str(&fs::read_to_string(path)?).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml(), "mem").unwrap(), cfg);
    }

    #[test]
    fn bundled_demo_config_pins_the_defaults() {
        let text = include_str!("../demo.cfg");
        assert_eq!(RunConfig::parse(text, "demo.cfg").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(RunConfig::parse("[geometry]\nn_rayz = 3\n", "mem"), Err(CliError::Config { .. })));
        assert!(matches!(RunConfig::parse("bogus = 1\n", "mem"), Err(CliError::Config { .. })));
        assert!(matches!(RunConfig::parse("[geometry]\nn_rays = 0\n", "mem"), Err(CliError::Core(_))));
        assert!(RunConfig::parse("[train]\nepochs = 0\n", "mem").is_err());
    }

    #[test]
    fn partial_files_keep_other_defaults() {
        let cfg = RunConfig::parse("[train]\nepochs = 3\n", "mem").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.net, RunConfig::default().net);
    }
}
