//! Two-step reconstruction of one aperture group: spot calibration from
//! single-aperture frames, then maximum likelihood on the joint frame with
//! alternating refinement of the spot positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::DetectorFrame;
use crate::linalg::CMatrix;
use crate::mle::{mle_iterate, MlConfig, ReconstructionResult};
use crate::optics::{
    born_intensity, build_mode_basis, build_povm, Aperture, CoherenceMatrix, PovmSet, SensorGeometry,
};
use crate::optimize::golden_section;
use crate::spot::{analyze_spot, deflection_from_position, SpotConfig, SpotEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInput {
    /// One single-aperture frame per aperture, in aperture order.
    pub calibration: Vec<DetectorFrame>,
    /// Frame with all apertures open.
    pub joint: DetectorFrame,
    pub apertures: Vec<Aperture>,
}

fn povm_for(apertures: &[Aperture], spots: &[SpotEstimate], geometry: &SensorGeometry) -> Result<PovmSet> {
    let deflections: Vec<f64> = spots.iter().map(|s| s.deflection_sin).collect();
    build_povm(&build_mode_basis(apertures, geometry, &deflections)?, geometry)
}

/// RMSE between the unit-sum joint frame and the unit-sum Born prediction.
fn joint_rmse(frame: &DetectorFrame, rho: &CoherenceMatrix, povm: &PovmSet) -> f64 {
    let Ok(predicted) = born_intensity(rho, povm) else {
        return f64::INFINITY;
    };
    let p_total: f64 = predicted.iter().sum();
    let n_total = frame.total();
    if !(p_total > 0.0 && n_total > 0.0) {
        return f64::INFINITY;
    }
    let sse: f64 = frame
        .counts
        .iter()
        .zip(&predicted)
        .map(|(n, p)| (n / n_total - p / p_total).powi(2))
        .sum();
    (sse / frame.len() as f64).sqrt()
}

/// Slightly mixed copy of `rho`, so that it is a valid full-rank starting point.
fn warm_start(rho: &CoherenceMatrix) -> Result<CoherenceMatrix> {
    let d = rho.dimension();
    let mix = 1e-3;
    let eye = CMatrix::identity(d, d).map(|z| z / d as f64);
    CoherenceMatrix::new(rho.entries().map(|z| z * (1.0 - mix)) + eye.map(|z| z * mix))
}

/// Coordinate-wise golden-section update of every spot position against the
/// joint frame, holding `rho` fixed. A move is kept only if it lowers the RMSE.
fn refine_on_joint(
    joint: &DetectorFrame,
    rho: &CoherenceMatrix,
    apertures: &[Aperture],
    spots: &mut [SpotEstimate],
    geometry: &SensorGeometry,
    config: &SpotConfig,
) -> Result<()> {
    let pitch = geometry.detector_pixel_pitch;
    for i in 0..spots.len() {
        let objective = |peak: f64| -> f64 {
            let mut trial = spots.to_vec();
            match deflection_from_position(peak, apertures[i].center, geometry) {
                Ok(s) => trial[i].deflection_sin = s,
                Err(_) => return f64::INFINITY,
            }
            match povm_for(apertures, &trial, geometry) {
                Ok(povm) => joint_rmse(joint, rho, &povm),
                Err(_) => f64::INFINITY,
            }
        };
        let current = spots[i].refined_position;
        let current_rmse = objective(current);
        let found = golden_section(
            objective,
            current - config.bracket_pixels * pitch,
            current + config.bracket_pixels * pitch,
            config.tolerance_pixels * pitch,
            config.max_iterations,
        );
        if found.value < current_rmse {
            spots[i].refined_position = found.x;
            spots[i].deflection_sin = deflection_from_position(found.x, apertures[i].center, geometry)?;
        }
    }
    Ok(())
}

/// Calibrates spots, reconstructs the coherence matrix from the joint frame, then
/// alternates position refinement and re-estimation `outer_refinement_rounds` times.
pub fn reconstruct_pair(
    input: &PairInput,
    geometry: &SensorGeometry,
    ml: &MlConfig,
    spot: &SpotConfig,
) -> Result<ReconstructionResult> {
    ml.validate()?;
    let d = input.apertures.len();
    if d == 0 || input.calibration.len() != d {
        return Err(Error::Shape(format!(
            "{} calibration frames for {d} apertures",
            input.calibration.len()
        )));
    }
    input.joint.check_geometry(geometry)?;
    let mut spots = input
        .calibration
        .iter()
        .zip(&input.apertures)
        .map(|(frame, ap)| analyze_spot(frame, geometry, *ap, spot))
        .collect::<Result<Vec<_>>>()?;

    let povm = povm_for(&input.apertures, &spots, geometry)?;
    let mut result = mle_iterate(&CoherenceMatrix::maximally_mixed(d), &input.joint, &povm, ml)?;
    for _ in 0..ml.outer_refinement_rounds {
        refine_on_joint(&input.joint, &result.rho_hat, &input.apertures, &mut spots, geometry, spot)?;
        let povm = povm_for(&input.apertures, &spots, geometry)?;
        let next = mle_iterate(&warm_start(&result.rho_hat)?, &input.joint, &povm, ml)?;
        result = next;
    }
    result.refined_spots = spots;
    Ok(result)
}

/// `|rho_12| / sqrt(rho_11 rho_22)` of a two-mode estimate.
pub fn pair_coherence(rho: &CoherenceMatrix) -> Result<f64> {
    if rho.dimension() != 2 {
        return Err(Error::Shape(format!("expected 2 modes, got {}", rho.dimension())));
    }
    let norm = (rho.get(0, 0).re * rho.get(1, 1).re).sqrt();
    if !(norm > 0.0) {
        return Err(Error::DegenerateIntensity("zero mode intensity".into()));
    }
    Ok(rho.get(0, 1).norm() / norm)
}
