//! Single-aperture spot localisation: center of gravity, RMSE model refinement,
//! and conversion of spot position to the aperture's deflection.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::DetectorFrame;
use crate::optics::{sinc, Aperture, SensorGeometry};
use crate::optimize::golden_section;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpotConfig {
    /// ROI half-width in units of the nominal spot scale `lambda z / a`.
    pub roi_half_width_scales: f64,
    /// Refinement bracket half-width, pixels.
    pub bracket_pixels: f64,
    pub tolerance_pixels: f64,
    pub max_iterations: usize,
}

impl Default for SpotConfig {
    fn default() -> Self {
        SpotConfig {
            roi_half_width_scales: 3.0,
            bracket_pixels: 2.0,
            tolerance_pixels: 1e-4,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotEstimate {
    /// Center-of-gravity position on the detector.
    pub centroid: f64,
    pub refined_position: f64,
    pub deflection_sin: f64,
    pub residual_rmse: f64,
    pub roi: Range<usize>,
    pub converged: bool,
}

/// `sum(xi c) / sum(c)` over the ROI.
pub fn cog_centroid(frame: &DetectorFrame, roi: Range<usize>) -> Result<f64> {
    check_roi(frame, &roi)?;
    let (mut weighted, mut total) = (0.0, 0.0);
    for p in roi {
        weighted += frame.pixel_position(p) * frame.counts[p];
        total += frame.counts[p];
    }
    if !(total > 0.0) {
        return Err(Error::EmptySpot("no counts inside the ROI".into()));
    }
    Ok(weighted / total)
}

fn check_roi(frame: &DetectorFrame, roi: &Range<usize>) -> Result<()> {
    if roi.is_empty() || roi.end > frame.len() {
        return Err(Error::Data(format!(
            "ROI {roi:?} invalid for a {}-pixel frame",
            frame.len()
        )));
    }
    Ok(())
}

/// Window of `half_width` pixels on each side of `center`, clipped to the frame.
pub fn roi_around(center: usize, half_width: usize, len: usize) -> Range<usize> {
    center.saturating_sub(half_width)..(center + half_width + 1).min(len)
}

/// ROI centered on the brightest pixel.
pub fn max_anchored_roi(frame: &DetectorFrame, half_width: usize) -> Result<Range<usize>> {
    let (argmax, max) = frame
        .counts
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, c)| if c > best.1 { (i, c) } else { best });
    if !(max > 0.0) {
        return Err(Error::EmptySpot("frame has no counts".into()));
    }
    Ok(roi_around(argmax, half_width, frame.len()))
}

/// Median of the pixels outside `roi`; zero when the ROI covers the frame.
pub fn background_level(frame: &DetectorFrame, roi: &Range<usize>) -> f64 {
    let mut outside: Vec<f64> = frame
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| !roi.contains(i))
        .map(|(_, &c)| c)
        .collect();
    if outside.is_empty() {
        return 0.0;
    }
    outside.sort_by(f64::total_cmp);
    let mid = outside.len() / 2;
    if outside.len().is_multiple_of(2) {
        0.5 * (outside[mid - 1] + outside[mid])
    } else {
        outside[mid]
    }
}

/// Copy of the frame with `level` subtracted and negative values clipped.
pub fn subtract_background(frame: &DetectorFrame, level: f64) -> DetectorFrame {
    let mut out = frame.clone();
    for c in &mut out.counts {
        *c = (*c - level).max(0.0);
    }
    out
}

/// `sin(alpha) = (x0 - peak) / z`.
pub fn deflection_from_position(
    peak_position: f64,
    aperture_center: f64,
    geometry: &SensorGeometry,
) -> Result<f64> {
    let z = geometry.detector_distance;
    let offset = aperture_center - peak_position;
    if !(z > 0.0) || !(offset.abs() < z) {
        return Err(Error::Domain(format!(
            "spot offset {offset} m is out of range for z = {z} m"
        )));
    }
    Ok(offset / z)
}

/// RMSE between the unit-sum normalized ROI counts and the unit-sum normalized
/// single-aperture profile peaking at `peak`.
pub fn spot_rmse(
    frame: &DetectorFrame,
    geometry: &SensorGeometry,
    width: f64,
    peak: f64,
    roi: &Range<usize>,
) -> f64 {
    let scale = width / (geometry.wavelength * geometry.detector_distance);
    let model: Vec<f64> = roi
        .clone()
        .map(|p| sinc(scale * (frame.pixel_position(p) - peak)).powi(2))
        .collect();
    let model_total: f64 = model.iter().sum();
    let data_total: f64 = roi.clone().map(|p| frame.counts[p]).sum();
    if !(model_total > 0.0 && data_total > 0.0) {
        return f64::INFINITY;
    }
    let sse: f64 = roi
        .clone()
        .zip(&model)
        .map(|(p, m)| (frame.counts[p] / data_total - m / model_total).powi(2))
        .sum();
    (sse / roi.len() as f64).sqrt()
}

/// Bounded golden-section refinement of the spot position around `initial`.
/// The returned RMSE is never above the RMSE at `initial`.
pub fn refine_spot(
    frame: &DetectorFrame,
    geometry: &SensorGeometry,
    aperture: Aperture,
    initial: f64,
    roi: Range<usize>,
    config: &SpotConfig,
) -> Result<SpotEstimate> {
    check_roi(frame, &roi)?;
    let (lo, hi) = (frame.pixel_position(0), frame.pixel_position(frame.len() - 1));
    if !(initial >= lo && initial <= hi) {
        return Err(Error::Domain(format!(
            "initial position {initial} outside the detector span"
        )));
    }
    let pitch = frame.pixel_pitch;
    let objective = |peak: f64| spot_rmse(frame, geometry, aperture.width, peak, &roi);
    let start_rmse = objective(initial);
    let found = golden_section(
        objective,
        initial - config.bracket_pixels * pitch,
        initial + config.bracket_pixels * pitch,
        config.tolerance_pixels * pitch,
        config.max_iterations,
    );
    let (position, rmse) = if found.value <= start_rmse {
        (found.x, found.value)
    } else {
        (initial, start_rmse)
    };
    Ok(SpotEstimate {
        centroid: initial,
        refined_position: position,
        deflection_sin: deflection_from_position(position, aperture.center, geometry)?,
        residual_rmse: rmse,
        roi,
        converged: found.converged,
    })
}

/// Full calibration of one single-aperture frame: max-anchored ROI,
/// background-subtracted COG, then RMSE refinement.
pub fn analyze_spot(
    frame: &DetectorFrame,
    geometry: &SensorGeometry,
    aperture: Aperture,
    config: &SpotConfig,
) -> Result<SpotEstimate> {
    frame.check_geometry(geometry)?;
    let half_width = (config.roi_half_width_scales * geometry.spot_scale(aperture.width)
        / geometry.detector_pixel_pitch)
        .round()
        .max(1.0) as usize;
    let roi = max_anchored_roi(frame, half_width)?;
    let cleaned = subtract_background(frame, background_level(frame, &roi));
    let centroid = cog_centroid(&cleaned, roi.clone())?;
    let mut estimate = refine_spot(frame, geometry, aperture, centroid, roi, config)?;
    estimate.centroid = centroid;
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{poisson_counts, AmplitudeProfile, SourceModel};
    use crate::optics::{build_mode_basis, propagate_mode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn frame_from(counts: Vec<f64>) -> DetectorFrame {
        DetectorFrame {
            counts,
            exposure_photons: 1.0,
            mask_id: String::new(),
            noise_seed: None,
            pixel_pitch: 1.0,
            origin: 0.0,
            mask: None,
        }
    }

    /// Noiseless single-aperture frame with its envelope peak at `peak`.
    fn spot_frame(g: &SensorGeometry, width: f64, peak: f64, photons: f64, seed: Option<u64>) -> DetectorFrame {
        let s = 1e-3;
        let center = peak + g.detector_distance * s;
        let basis = build_mode_basis(&[Aperture { center, width }], g, &[s]).unwrap();
        let amp = propagate_mode(&basis.modes()[0], g, &g.pixel_positions()).unwrap();
        let intensity: Vec<f64> = amp.iter().map(|z| z.norm_sqr()).collect();
        let total: f64 = intensity.iter().sum();
        let mean: Vec<f64> = intensity.iter().map(|v| photons * v / total).collect();
        let counts = match seed {
            Some(seed) => poisson_counts(&mean, seed),
            None => mean,
        };
        let mut f = DetectorFrame::new(counts, g, photons).unwrap();
        f.noise_seed = seed;
        f
    }

    #[test]
    fn symmetric_counts_center() {
        let f = frame_from(vec![0.0, 1.0, 2.0, 1.0, 0.0]);
        assert_eq!(cog_centroid(&f, 0..5).unwrap(), 2.0);
    }

    #[test]
    fn uniform_counts_midpoint() {
        let f = frame_from(vec![1.0; 4]);
        assert_eq!(cog_centroid(&f, 0..4).unwrap(), 1.5);
    }

    #[test]
    fn empty_roi_counts_error() {
        let f = frame_from(vec![0.0, 0.0, 5.0]);
        assert!(matches!(cog_centroid(&f, 0..2), Err(Error::EmptySpot(_))));
        assert!(cog_centroid(&f, 2..2).is_err());
    }

    #[test]
    fn noiseless_cog_near_truth() {
        let g = SensorGeometry::default();
        for &peak in &[0.0, 37.3e-6, -151.9e-6, 0.4e-3] {
            let f = spot_frame(&g, 76e-6, peak, 1e6, None);
            let est = analyze_spot(&f, &g, Aperture { center: peak + 0.18e-3, width: 76e-6 }, &SpotConfig::default()).unwrap();
            let err_px = (est.centroid - peak).abs() / g.detector_pixel_pitch;
            assert!(err_px < 0.1, "COG off by {err_px} px for peak {peak}");
        }
    }

    #[test]
    fn noiseless_refinement_within_hundredth_pixel() {
        let g = SensorGeometry::default();
        for &peak in &[0.0, 37.3e-6, -151.9e-6, 0.4e-3] {
            let f = spot_frame(&g, 76e-6, peak, 1e6, None);
            let center = peak + 0.18e-3;
            let est = analyze_spot(&f, &g, Aperture { center, width: 76e-6 }, &SpotConfig::default()).unwrap();
            let err_px = (est.refined_position - peak).abs() / g.detector_pixel_pitch;
            assert!(err_px < 0.01, "refined off by {err_px} px");
            assert!(est.converged);
            assert_relative_eq!(est.deflection_sin, 1e-3, epsilon = 1e-4);
        }
    }

    #[test]
    fn refinement_from_truth_stays_put() {
        let g = SensorGeometry::default();
        let peak = 25e-6;
        let f = spot_frame(&g, 76e-6, peak, 1e6, None);
        let roi = roi_around(512, 280, f.len());
        let ap = Aperture { center: peak, width: 76e-6 };
        let est = refine_spot(&f, &g, ap, peak, roi.clone(), &SpotConfig::default()).unwrap();
        assert!(est.residual_rmse <= spot_rmse(&f, &g, 76e-6, peak, &roi));
        assert!((est.refined_position - peak).abs() < 1e-4 * g.detector_pixel_pitch);
        assert!(est.residual_rmse < 1e-12);
    }

    #[test]
    fn noisy_frames_stay_near_the_cramer_rao_bound() {
        // Poisson Cramer-Rao bound for the sinc^2 peak position at 1e6 photons on this
        // detector, 0.0879 px (Fisher information summed over pixels, computed offline).
        // Both estimators already sit near it, so neither can dominate the other.
        let crb_px = 0.0879;
        let g = SensorGeometry::default();
        let peak = 5.3e-6;
        let ap = Aperture { center: peak + 0.18e-3, width: 76e-6 };
        let (mut cog_sq, mut fit_sq) = (0.0, 0.0);
        for seed in 0..100u64 {
            let f = spot_frame(&g, 76e-6, peak, 1e6, Some(seed));
            let est = analyze_spot(&f, &g, ap, &SpotConfig::default()).unwrap();
            cog_sq += ((est.centroid - peak) / g.detector_pixel_pitch).powi(2);
            fit_sq += ((est.refined_position - peak) / g.detector_pixel_pitch).powi(2);
        }
        let (cog_rms, fit_rms) = ((cog_sq / 100.0).sqrt(), (fit_sq / 100.0).sqrt());
        assert!(cog_rms < 1.5 * crb_px, "COG rms {cog_rms}");
        assert!(fit_rms < 1.5 * crb_px, "refined rms {fit_rms}");
    }

    #[test]
    fn deflection_examples() {
        let g = SensorGeometry::default();
        assert_eq!(deflection_from_position(1e-4, 1e-4, &g).unwrap(), 0.0);
        assert_relative_eq!(deflection_from_position(-1.8e-3, 0.0, &g).unwrap(), 0.01, max_relative = 1e-12);
        assert!(matches!(
            deflection_from_position(0.5, 0.0, &g),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn deflection_round_trip_through_propagation() {
        let g = SensorGeometry::default();
        let s = 0.005;
        let ap = Aperture { center: 1e-4, width: 76e-6 };
        let basis = build_mode_basis(&[ap], &g, &[s]).unwrap();
        let amp = propagate_mode(&basis.modes()[0], &g, &g.pixel_positions()).unwrap();
        let counts: Vec<f64> = amp.iter().map(|z| 1e6 * z.norm_sqr()).collect();
        let f = DetectorFrame::new(counts, &g, 1e6).unwrap();
        let peak_px = (0..f.len()).max_by(|&a, &b| f.counts[a].total_cmp(&f.counts[b])).unwrap();
        let from_pixel = deflection_from_position(g.pixel_position(peak_px), ap.center, &g).unwrap();
        assert!((from_pixel - s).abs() < 1e-4);
        let est = analyze_spot(&f, &g, ap, &SpotConfig::default()).unwrap();
        assert!((est.deflection_sin - s).abs() < 1e-6);
    }

    #[test]
    fn vcz_source_is_irrelevant_for_a_single_spot() {
        // one aperture: any source gives the same normalized profile
        let g = SensorGeometry::default();
        let mask = crate::instrument::MaskPattern::from_runs(1024, &[(507, 10)]).unwrap();
        let ap = crate::instrument::apertures_from_mask(&mask, &g).unwrap()[0];
        let src = SourceModel::VczCircular { core_diameter: 2e-4, collimator_focal: 0.1, profile: AmplitudeProfile::default() };
        let f = crate::instrument::simulate_frame(&src, &mask, &g, 1e6, None).unwrap();
        let est = analyze_spot(&f, &g, ap, &SpotConfig::default()).unwrap();
        assert!((est.refined_position - ap.center).abs() < 0.01 * g.detector_pixel_pitch);
        assert!(est.deflection_sin.abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn cog_translation_equivariant(counts in prop::collection::vec(0.0f64..100.0, 3..40), pitch in 0.5f64..20.0) {
            prop_assume!(counts.iter().sum::<f64>() > 1e-3);
            let n = counts.len();
            let mut f = frame_from(counts.clone());
            f.pixel_pitch = pitch;
            let mut shifted = counts.clone();
            shifted.insert(0, 0.0);
            let mut g = frame_from(shifted);
            g.pixel_pitch = pitch;
            let a = cog_centroid(&f, 0..n).unwrap();
            let b = cog_centroid(&g, 1..n + 1).unwrap();
            prop_assert!((b - a - pitch).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn cog_scale_invariant(counts in prop::collection::vec(0.0f64..100.0, 3..40), k in 1e-3f64..1e3) {
            prop_assume!(counts.iter().sum::<f64>() > 1e-3);
            let n = counts.len();
            let a = cog_centroid(&frame_from(counts.clone()), 0..n).unwrap();
            let b = cog_centroid(&frame_from(counts.iter().map(|c| c * k).collect()), 0..n).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn refinement_never_worse(offset_px in -1.5f64..1.5, seed in 0u64..1000) {
            let g = SensorGeometry::default();
            let peak = 20e-6;
            let f = spot_frame(&g, 76e-6, peak, 1e5, Some(seed));
            let roi = roi_around(512, 280, f.len());
            let initial = peak + offset_px * g.detector_pixel_pitch;
            let ap = Aperture { center: peak, width: 76e-6 };
            let est = refine_spot(&f, &g, ap, initial, roi.clone(), &SpotConfig::default()).unwrap();
            prop_assert!(est.residual_rmse <= spot_rmse(&f, &g, 76e-6, initial, &roi));
        }
    }
}
