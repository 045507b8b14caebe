//! Experiment configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//!
//! [optics]
//! na = 1.3
//! wavelength_nm = 510.0
//! pixel_pitch_nm = 65.0
//! psf_model = "gaussian"
//!
//! [camera]
//! gain = 2.0
//! offset = 100.0
//! read_sd = 2.0
//! ```
//!
//! Every other table is optional. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{uniform_camera, CameraMap, DEFAULT_READ_SD};
use crate::error::{check_shape, Error, Result};
use crate::grid::{ImageGrid, Role};
use crate::inference::SamplerConfig;
use crate::io;
use crate::optics::{airy_psf, default_airy_side, default_gaussian_side, gaussian_psf, Psf};
use crate::targets::{build_target, TargetKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfModelName {
    Gaussian,
    Airy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    pub na: f64,
    pub wavelength_nm: f64,
    pub pixel_pitch_nm: f64,
    #[serde(default = "default_psf_model")]
    pub psf_model: PsfModelName,
    /// Odd kernel side in pixels; derived from the optics when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf_side: Option<usize>,
}

fn default_psf_model() -> PsfModelName {
    PsfModelName::Gaussian
}

/// Uniform calibration, optionally replaced by per-pixel maps. The three
/// maps must be given together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub gain: f64,
    pub offset: f64,
    pub read_sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_map: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_map: Option<PathBuf>,
    /// Read-noise variance in ADU^2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_map: Option<PathBuf>,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            gain: 1.0,
            offset: 0.0,
            read_sd: DEFAULT_READ_SD,
            gain_map: None,
            offset_map: None,
            variance_map: None,
        }
    }
}

impl CameraConfig {
    fn maps(&self) -> Option<[&Path; 3]> {
        match (&self.gain_map, &self.offset_map, &self.variance_map) {
            (Some(g), Some(o), Some(v)) => Some([g, o, v]),
            _ => None,
        }
    }
}

/// Synthetic object used by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub rows: usize,
    pub cols: usize,
    /// Peak of the blurred object in photons.
    pub peak_photons: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            kind: TargetKind::SiemensStar,
            rows: 128,
            cols: 128,
            peak_photons: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub n_iters: usize,
    pub checkpoints: Vec<usize>,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            n_iters: 1000,
            checkpoints: vec![1, 10, 100, 1000],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Ground truth used for metrics, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for simulation and sampling.
    #[serde(default)]
    pub seed: u64,
    pub optics: OpticsConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub target: TargetConfig,
    /// The sampler seed is taken from the top-level `seed`.
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if cfg.sampler.seed != 0 && cfg.sampler.seed != cfg.seed {
            return Err(Error::Config(
                "set the seed at the top level, not under [sampler]".into(),
            ));
        }
        cfg.sampler.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse, resolve relative paths and check that referenced files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_config_tag(e))))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.camera.gain_map);
        resolve(base, &mut cfg.camera.offset_map);
        resolve(base, &mut cfg.camera.variance_map);
        resolve(base, &mut cfg.paths.input);
        resolve(base, &mut cfg.paths.output);
        resolve(base, &mut cfg.paths.reference);
        if let Some(maps) = cfg.camera.maps() {
            for m in maps {
                io::require_file(m)?;
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("optics.na", self.optics.na)?;
        positive("optics.wavelength_nm", self.optics.wavelength_nm)?;
        positive("optics.pixel_pitch_nm", self.optics.pixel_pitch_nm)?;
        if let Some(side) = self.optics.psf_side {
            if side == 0 || side % 2 == 0 {
                return Err(Error::Config(format!(
                    "optics.psf_side must be odd, got {side}"
                )));
            }
        }
        let c = &self.camera;
        let given = [&c.gain_map, &c.offset_map, &c.variance_map]
            .iter()
            .filter(|m| m.is_some())
            .count();
        if given != 0 && given != 3 {
            return Err(Error::Config(
                "camera maps need all of gain_map, offset_map and variance_map".into(),
            ));
        }
        if given == 0 {
            positive("camera.gain", c.gain)?;
            positive("camera.read_sd", c.read_sd)?;
            if !c.offset.is_finite() {
                return Err(Error::Config("camera.offset must be finite".into()));
            }
        }
        if self.target.rows == 0 || self.target.cols == 0 {
            return Err(Error::Config(
                "target.rows and target.cols must be positive".into(),
            ));
        }
        positive("target.peak_photons", self.target.peak_photons)?;
        if self.rl.n_iters == 0 {
            return Err(Error::Config("rl.n_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn psf_side(&self) -> usize {
        let o = &self.optics;
        self.optics.psf_side.unwrap_or_else(|| match o.psf_model {
            PsfModelName::Gaussian => {
                default_gaussian_side(o.na, o.wavelength_nm, o.pixel_pitch_nm)
            }
            PsfModelName::Airy => default_airy_side(o.na, o.wavelength_nm, o.pixel_pitch_nm),
        })
    }

    pub fn psf(&self) -> Result<Psf> {
        let o = &self.optics;
        let side = self.psf_side();
        match o.psf_model {
            PsfModelName::Gaussian => gaussian_psf(o.na, o.wavelength_nm, o.pixel_pitch_nm, side),
            PsfModelName::Airy => airy_psf(o.na, o.wavelength_nm, o.pixel_pitch_nm, side),
        }
    }

    /// Calibration for an image of `shape`, loading the maps if configured.
    pub fn camera(&self, shape: (usize, usize)) -> Result<CameraMap> {
        let c = &self.camera;
        match c.maps() {
            Some([g, o, v]) => {
                let gain = io::load_array(g)?;
                let offset = io::load_array(o)?;
                let variance = io::load_array(v)?;
                check_shape(shape, gain.dim())?;
                CameraMap::new(gain, offset, variance)
            }
            None => uniform_camera(shape, c.gain, c.offset, c.read_sd),
        }
    }

    pub fn target_shape(&self) -> (usize, usize) {
        (self.target.rows, self.target.cols)
    }

    /// The configured synthetic object.
    pub fn target_object(&self, psf: &Psf) -> Result<ImageGrid> {
        build_target(
            self.target.kind,
            self.target_shape(),
            psf,
            self.target.peak_photons,
        )
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let mut s = self.sampler.clone();
        s.seed = self.seed;
        s
    }

    /// Load an image at the configured pixel pitch.
    pub fn load_image(&self, path: &Path, role: Role) -> Result<ImageGrid> {
        io::load_image(path, self.optics.pixel_pitch_nm, role)
    }
}

fn strip_config_tag(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [optics]
        na = 1.3
        wavelength_nm = 510.0
        pixel_pitch_nm = 65.0
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.optics.psf_model, PsfModelName::Gaussian);
        assert_eq!(cfg.camera.read_sd, DEFAULT_READ_SD);
        assert_eq!(cfg.rl.checkpoints, vec![1, 10, 100, 1000]);
        assert_eq!(cfg.sampler, SamplerConfig::default());
        assert_eq!(cfg.psf().unwrap().side(), cfg.psf_side());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.seed = 11;
        cfg.sampler.seed = 11;
        cfg.optics.psf_model = PsfModelName::Airy;
        cfg.target.kind = TargetKind::Bars;
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            MINIMAL.replace("na = 1.3", "na = -1.3"),
            format!("{MINIMAL}\n[camera]\ngain = 0.0\n"),
            format!("{MINIMAL}\n[camera]\ngain_map = \"g.tif\"\n"),
            format!("{MINIMAL}\n[rl]\nn_iters = 0\n"),
            format!("{MINIMAL}\n[sampler]\nseed = 3\n"),
            format!("{MINIMAL}\nunknown = 1\n"),
            MINIMAL.replace(
                "pixel_pitch_nm = 65.0",
                "pixel_pitch_nm = 65.0\npsf_side = 8",
            ),
        ];
        for text in bad {
            let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
            assert_eq!(err.kind(), "config", "{text}");
        }
    }

    #[test]
    fn missing_map_file_is_an_io_error_naming_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let text = format!(
            "{MINIMAL}\n[camera]\ngain_map = \"gain.csv\"\noffset_map = \"offset.csv\"\nvariance_map = \"var.csv\"\n"
        );
        std::fs::write(&path, text).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert_eq!(err.kind(), "io");
        assert!(err.to_string().contains("gain.csv"));
    }
}
