//! Experiment configuration: one JSON document with unit-suffixed lengths.
//!
//! Lengths are strings such as `"633 nm"`, `"7.6 um"` (or `"7.6 µm"`), `"180 mm"`
//! or `"0.1 m"`. Angles are plain numbers in degrees. The value and unit are
//! kept as written, so a parsed document serializes back to an equivalent one.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::assembly::StitchOptions;
use crate::error::{Error, Result};
use crate::instrument::{mirror_position, AmplitudeProfile, MaskPattern, SourceModel, DEFAULT_EXPOSURE_PHOTONS};
use crate::linalg::serde_cmatrix;
use crate::linalg::CMatrix;
use crate::mle::MlConfig;
use crate::optics::{Aperture, CoherenceMatrix, SensorGeometry};
use crate::spot::SpotConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthUnit {
    Nanometre,
    Micrometre,
    Millimetre,
    Metre,
}

impl LengthUnit {
    pub fn metres(self) -> f64 {
        match self {
            LengthUnit::Nanometre => 1e-9,
            LengthUnit::Micrometre => 1e-6,
            LengthUnit::Millimetre => 1e-3,
            LengthUnit::Metre => 1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            LengthUnit::Nanometre => "nm",
            LengthUnit::Micrometre => "um",
            LengthUnit::Millimetre => "mm",
            LengthUnit::Metre => "m",
        }
    }
}

impl FromStr for LengthUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nm" => Ok(LengthUnit::Nanometre),
            "um" | "µm" | "μm" => Ok(LengthUnit::Micrometre),
            "mm" => Ok(LengthUnit::Millimetre),
            "m" => Ok(LengthUnit::Metre),
            other => Err(format!("unknown length unit '{other}' (expected nm, um, mm or m)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Length {
    pub value: f64,
    pub unit: LengthUnit,
}

impl Length {
    pub fn new(value: f64, unit: LengthUnit) -> Self {
        Length { value, unit }
    }

    pub fn metres(self) -> f64 {
        self.value * self.unit.metres()
    }
}

impl fmt::Display for Length {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit.symbol())
    }
}

impl FromStr for Length {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let split = s
            .find(|c: char| c.is_alphabetic() || c == 'µ' || c == 'μ')
            .ok_or_else(|| format!("length '{s}' has no unit"))?;
        let (number, unit) = s.split_at(split);
        let value: f64 = number
            .trim()
            .parse()
            .map_err(|_| format!("length '{s}' has an invalid number"))?;
        if !value.is_finite() {
            return Err(format!("length '{s}' is not finite"));
        }
        Ok(Length::new(value, unit.trim().parse()?))
    }
}

impl Serialize for Length {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Length {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

fn nm(v: f64) -> Length {
    Length::new(v, LengthUnit::Nanometre)
}
fn um(v: f64) -> Length {
    Length::new(v, LengthUnit::Micrometre)
}
fn mm(v: f64) -> Length {
    Length::new(v, LengthUnit::Millimetre)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub wavelength: Length,
    pub detector_distance: Length,
    pub mirror_width: Length,
    pub mirror_pitch: Length,
    pub incidence_angle_deg: f64,
    pub deflection_angle_deg: f64,
    pub detector_pixel_pitch: Length,
    pub detector_pixel_count: usize,
    /// Position of pixel 0; centered on the axis when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_origin: Option<Length>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            wavelength: nm(633.0),
            detector_distance: mm(180.0),
            mirror_width: um(7.4),
            mirror_pitch: um(7.6),
            incidence_angle_deg: 24.0,
            deflection_angle_deg: 0.0,
            detector_pixel_pitch: um(16.0),
            detector_pixel_count: 1024,
            detector_origin: None,
        }
    }
}

impl GeometryConfig {
    pub fn to_geometry(&self) -> Result<SensorGeometry> {
        let pitch = self.detector_pixel_pitch.metres();
        let count = self.detector_pixel_count;
        let g = SensorGeometry {
            wavelength: self.wavelength.metres(),
            detector_distance: self.detector_distance.metres(),
            mirror_width: self.mirror_width.metres(),
            mirror_pitch: self.mirror_pitch.metres(),
            incidence_angle: self.incidence_angle_deg.to_radians(),
            deflection_angle: self.deflection_angle_deg.to_radians(),
            detector_pixel_pitch: pitch,
            detector_pixel_count: count,
            detector_origin: match self.detector_origin {
                Some(o) => o.metres(),
                None => -0.5 * count.saturating_sub(1) as f64 * pitch,
            },
        };
        g.validate().map_err(|e| Error::Config(format!("geometry: {e}")))?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Uniform { level: f64 },
    Gaussian { peak: f64, center: Length, radius: Length },
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig::Uniform { level: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    VczCircular {
        core_diameter: Length,
        collimator_focal: Length,
        #[serde(default)]
        profile: ProfileConfig,
    },
    /// Mutual intensity over the plan points, in plan order.
    ExplicitRho {
        #[serde(with = "serde_cmatrix")]
        rho: CMatrix,
    },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::VczCircular {
            core_diameter: um(200.0),
            collimator_focal: mm(100.0),
            profile: ProfileConfig::default(),
        }
    }
}

/// Sampling points as runs of open mirrors on a row of `grid_size` mirrors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub grid_size: usize,
    /// First open mirror of each aperture, increasing.
    pub start_mirrors: Vec<usize>,
    pub aperture_mirrors: usize,
}

impl Default for PlanConfig {
    /// Four 10-mirror apertures 20 mirrors apart: centers at -228, -76, 76, 228 um.
    fn default() -> Self {
        PlanConfig {
            grid_size: 1024,
            start_mirrors: vec![477, 497, 517, 537],
            aperture_mirrors: 10,
        }
    }
}

impl PlanConfig {
    pub fn mask_for(&self, points: &[usize]) -> Result<MaskPattern> {
        let runs: Vec<(usize, usize)> = points
            .iter()
            .map(|&i| (self.start_mirrors[i], self.aperture_mirrors))
            .collect();
        MaskPattern::from_runs(self.grid_size, &runs).map_err(|e| Error::Config(format!("plan: {e}")))
    }

    pub fn apertures(&self, geometry: &SensorGeometry) -> Vec<Aperture> {
        self.start_mirrors
            .iter()
            .map(|&s| Aperture {
                center: mirror_position(
                    s as f64 + 0.5 * (self.aperture_mirrors as f64 - 1.0),
                    self.grid_size,
                    geometry,
                ),
                width: self.aperture_mirrors as f64 * geometry.mirror_pitch,
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.aperture_mirrors == 0 {
            return Err(Error::Config("plan.aperture_mirrors must be at least 1".into()));
        }
        if let Some(&s) = self
            .start_mirrors
            .iter()
            .find(|&&s| s + self.aperture_mirrors > self.grid_size)
        {
            return Err(Error::Config(format!(
                "plan.start_mirrors: aperture at mirror {s} runs past the grid of {}",
                self.grid_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default = "default_photons")]
    pub photons_per_frame: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ml: MlConfig,
    #[serde(default)]
    pub spot: SpotConfig,
    #[serde(default)]
    pub stitch: StitchOptions,
    /// Collimator focal length assumed by the core-diameter fit; defaults to the
    /// source's own when it is a circular source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_focal: Option<Length>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn default_photons() -> f64 {
    DEFAULT_EXPOSURE_PHOTONS
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: GeometryConfig::default(),
            source: SourceConfig::default(),
            plan: PlanConfig::default(),
            photons_per_frame: DEFAULT_EXPOSURE_PHOTONS,
            seed: 0,
            ml: MlConfig::default(),
            spot: SpotConfig::default(),
            stitch: StitchOptions::default(),
            fit_focal: None,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "config".into(),
            source: e,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                context: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let geometry = self.geometry.to_geometry()?;
        self.plan.validate()?;
        if !(self.photons_per_frame > 0.0 && self.photons_per_frame.is_finite()) {
            return Err(Error::Config("photons_per_frame must be positive".into()));
        }
        self.ml.validate()?;
        crate::assembly::plan_pairs(
            &self.plan.apertures(&geometry).iter().map(|a| a.center).collect::<Vec<_>>(),
            self.plan.aperture_mirrors as f64 * geometry.mirror_pitch,
        )
        .map_err(|e| Error::Config(format!("plan: {e}")))?;
        self.source_model(&geometry)?;
        Ok(())
    }

    pub fn source_model(&self, geometry: &SensorGeometry) -> Result<SourceModel> {
        let model = match &self.source {
            SourceConfig::VczCircular {
                core_diameter,
                collimator_focal,
                profile,
            } => SourceModel::VczCircular {
                core_diameter: core_diameter.metres(),
                collimator_focal: collimator_focal.metres(),
                profile: match profile {
                    ProfileConfig::Uniform { level } => AmplitudeProfile::Uniform { level: *level },
                    ProfileConfig::Gaussian { peak, center, radius } => AmplitudeProfile::Gaussian {
                        peak: *peak,
                        center: center.metres(),
                        radius: radius.metres(),
                    },
                },
            },
            SourceConfig::ExplicitRho { rho } => SourceModel::ExplicitRho {
                centers: self.plan.apertures(geometry).iter().map(|a| a.center).collect(),
                rho: CoherenceMatrix::new(rho.clone()).map_err(|e| Error::Config(format!("source.rho: {e}")))?,
            },
        };
        model.validate().map_err(|e| Error::Config(format!("source: {e}")))?;
        Ok(model)
    }

    /// Focal length used by the core-diameter fit, if one is known.
    pub fn fit_focal_length(&self) -> Option<f64> {
        match (&self.fit_focal, &self.source) {
            (Some(f), _) => Some(f.metres()),
            (None, SourceConfig::VczCircular { collimator_focal, .. }) => Some(collimator_focal.metres()),
            _ => None,
        }
    }
}
