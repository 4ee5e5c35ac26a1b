//! Detector frames and their on-disk text format.
//!
//! A frame file is one line of JSON header followed by one count per line in
//! pixel order:
//!
//! ```text
//! {"pixel_count":1024,"pixel_pitch_m":1.6e-5,"origin_m":-0.008184,"exposure_photons":1000000.0,"mask":{...},"seed":7}
//! 0
//! 3
//! ...
//! ```
//!
//! Counts are written with the shortest decimal form that parses back to the
//! same `f64`, so reading a written frame is lossless.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::MaskPattern;
use crate::optics::SensorGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorFrame {
    pub counts: Vec<f64>,
    /// Expected total photon count the frame was exposed for.
    pub exposure_photons: f64,
    pub mask_id: String,
    pub noise_seed: Option<u64>,
    pub pixel_pitch: f64,
    pub origin: f64,
    pub mask: Option<MaskPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameHeader {
    pixel_count: usize,
    pixel_pitch_m: f64,
    origin_m: f64,
    exposure_photons: f64,
    mask: MaskHeader,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MaskHeader {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_size: Option<usize>,
    /// `[first_mirror, length]` per open run.
    #[serde(default)]
    runs: Vec<[usize; 2]>,
}

impl DetectorFrame {
    pub fn new(counts: Vec<f64>, geometry: &SensorGeometry, exposure_photons: f64) -> Result<Self> {
        let frame = DetectorFrame {
            counts,
            exposure_photons,
            mask_id: String::new(),
            noise_seed: None,
            pixel_pitch: geometry.detector_pixel_pitch,
            origin: geometry.detector_origin,
            mask: None,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Data(format!("invalid count {bad}")));
        }
        if !(self.pixel_pitch > 0.0) {
            return Err(Error::Data("pixel pitch must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn pixel_position(&self, index: usize) -> f64 {
        self.origin + index as f64 * self.pixel_pitch
    }

    /// Checks that the frame was recorded on the geometry's detector grid.
    pub fn check_geometry(&self, geometry: &SensorGeometry) -> Result<()> {
        let same_pitch = (self.pixel_pitch - geometry.detector_pixel_pitch).abs()
            <= 1e-12 * geometry.detector_pixel_pitch;
        let same_origin = (self.origin - geometry.detector_origin).abs()
            <= 1e-9 * geometry.detector_pixel_pitch;
        if self.len() != geometry.detector_pixel_count || !same_pitch || !same_origin {
            return Err(Error::Shape(format!(
                "frame '{}' ({} px) does not match the detector geometry ({} px)",
                self.mask_id,
                self.len(),
                geometry.detector_pixel_count
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let header = FrameHeader {
            pixel_count: self.counts.len(),
            pixel_pitch_m: self.pixel_pitch,
            origin_m: self.origin,
            exposure_photons: self.exposure_photons,
            mask: MaskHeader {
                id: self.mask_id.clone(),
                grid_size: self.mask.as_ref().map(MaskPattern::grid_size),
                runs: self
                    .mask
                    .as_ref()
                    .map(|m| m.runs().into_iter().map(|(s, n)| [s, n]).collect())
                    .unwrap_or_default(),
            },
            seed: self.noise_seed,
        };
        let mut out = serde_json::to_string(&header).expect("frame header serializes");
        out.push('\n');
        for c in &self.counts {
            writeln!(out, "{c}").expect("write to string");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Data("empty frame file".into()))?;
        let header: FrameHeader = serde_json::from_str(header_line).map_err(|e| Error::Data(format!("frame header: {e}")))?;
        let counts = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("frame line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        if counts.len() != header.pixel_count {
            return Err(Error::Data(format!(
                "header announces {} pixels, found {}",
                header.pixel_count,
                counts.len()
            )));
        }
        let mask = match header.mask.grid_size {
            Some(grid) => Some(MaskPattern::from_runs(
                grid,
                &header.mask.runs.iter().map(|r| (r[0], r[1])).collect::<Vec<_>>(),
            )?),
            None => None,
        };
        let frame = DetectorFrame {
            counts,
            exposure_photons: header.exposure_photons,
            mask_id: header.mask.id,
            noise_seed: header.seed,
            pixel_pitch: header.pixel_pitch_m,
            origin: header.origin_m,
            mask,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_negative_counts() {
        let g = SensorGeometry::default();
        let mut counts = vec![0.0; g.detector_pixel_count];
        counts[3] = -1.0;
        assert!(matches!(DetectorFrame::new(counts, &g, 1.0), Err(Error::Data(_))));
    }

    #[test]
    fn header_count_mismatch_is_an_error() {
        let g = SensorGeometry::default();
        let frame = DetectorFrame::new(vec![1.0; g.detector_pixel_count], &g, 10.0).unwrap();
        let mut text = frame.to_text();
        text.push_str("5\n");
        assert!(DetectorFrame::from_text(&text).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_lossless(
            counts in prop::collection::vec(0.0f64..1e7, 2..64),
            seed in prop::option::of(any::<u64>()),
            start in 0usize..100,
            len in 1usize..20,
        ) {
            let frame = DetectorFrame {
                counts,
                exposure_photons: 1e6,
                mask_id: "pair_0_1".into(),
                noise_seed: seed,
                pixel_pitch: 16e-6,
                origin: -8.184e-3,
                mask: Some(MaskPattern::from_runs(128, &[(start, len)]).unwrap()),
            };
            let back = DetectorFrame::from_text(&frame.to_text()).unwrap();
            prop_assert_eq!(back, frame);
        }
    }
}
