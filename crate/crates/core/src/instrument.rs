//! Measurement-chain simulation: DMD masks, source coherence, Poisson frames,
//! and a Monte-Carlo field ensemble used to cross-check the Born rule.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::bessel::bessel_j1;
use crate::error::{Error, Result};
use crate::frame::DetectorFrame;
use crate::linalg::{self, CMatrix};
use crate::optics::{
    born_intensity, build_mode_basis, build_povm, Aperture, CoherenceMatrix, PovmSet,
    SensorGeometry,
};

/// Default photon budget per frame.
pub const DEFAULT_EXPOSURE_PHOTONS: f64 = 1e6;

/// Eigenvalues below this fraction of the trace are treated as zero when sampling.
const ENSEMBLE_EIGEN_FLOOR: f64 = 1e-12;

/// Per-frame seed derived from a master seed: `master XOR index`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    master ^ index
}

/// Binary mask on a one-dimensional mirror row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPattern {
    open_mirrors: BTreeSet<usize>,
    grid_size: usize,
}

impl MaskPattern {
    pub fn new(grid_size: usize, open_mirrors: impl IntoIterator<Item = usize>) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::UnsupportedMask("grid size must be positive".into()));
        }
        let open_mirrors: BTreeSet<usize> = open_mirrors.into_iter().collect();
        if let Some(&bad) = open_mirrors.iter().find(|&&m| m >= grid_size) {
            return Err(Error::UnsupportedMask(format!(
                "mirror {bad} outside grid of {grid_size}"
            )));
        }
        Ok(MaskPattern {
            open_mirrors,
            grid_size,
        })
    }

    /// Mask from `(first_mirror, length)` runs.
    pub fn from_runs(grid_size: usize, runs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            grid_size,
            runs.iter().flat_map(|&(start, len)| start..start + len),
        )
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn open_mirrors(&self) -> &BTreeSet<usize> {
        &self.open_mirrors
    }

    pub fn is_empty(&self) -> bool {
        self.open_mirrors.is_empty()
    }

    /// Contiguous open runs as `(first_mirror, length)`, in increasing order.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &m in &self.open_mirrors {
            match runs.last_mut() {
                Some((start, len)) if *start + *len == m => *len += 1,
                _ => runs.push((m, 1)),
            }
        }
        runs
    }

    /// Mask shifted by `offset` mirrors.
    pub fn shifted(&self, offset: isize) -> Result<Self> {
        let moved = self
            .open_mirrors
            .iter()
            .map(|&m| {
                usize::try_from(m as isize + offset)
                    .map_err(|_| Error::UnsupportedMask("shift leaves the grid".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.grid_size, moved)
    }

    pub fn describe(&self) -> String {
        let runs: Vec<String> = self
            .runs()
            .iter()
            .map(|(s, n)| format!("{s}+{n}"))
            .collect();
        format!("mask[{}]", runs.join(","))
    }
}

/// Physical center of a mirror; the grid is centered on the optical axis.
pub fn mirror_position(index: f64, grid_size: usize, geometry: &SensorGeometry) -> f64 {
    (index - 0.5 * (grid_size as f64 - 1.0)) * geometry.mirror_pitch
}

/// Each run of `n` open mirrors becomes an aperture of width `n * pitch` at the run midpoint.
pub fn apertures_from_mask(mask: &MaskPattern, geometry: &SensorGeometry) -> Result<Vec<Aperture>> {
    let runs = mask.runs();
    if runs.len() > 2 {
        return Err(Error::UnsupportedMask(format!(
            "{} open runs; at most two apertures are supported",
            runs.len()
        )));
    }
    Ok(runs
        .into_iter()
        .map(|(start, len)| {
            let mid = start as f64 + 0.5 * (len as f64 - 1.0);
            Aperture {
                center: mirror_position(mid, mask.grid_size(), geometry),
                width: len as f64 * geometry.mirror_pitch,
            }
        })
        .collect())
}

/// Field amplitude `u(x)` across the sampled region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum AmplitudeProfile {
    Uniform { level: f64 },
    Gaussian { peak: f64, center: f64, radius: f64 },
}

impl Default for AmplitudeProfile {
    fn default() -> Self {
        AmplitudeProfile::Uniform { level: 1.0 }
    }
}

impl AmplitudeProfile {
    pub fn at(&self, x: f64) -> f64 {
        match *self {
            AmplitudeProfile::Uniform { level } => level,
            AmplitudeProfile::Gaussian {
                peak,
                center,
                radius,
            } => peak * (-((x - center) / radius).powi(2)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceModel {
    /// Incoherent circular source of diameter `core_diameter` behind a collimator.
    VczCircular {
        core_diameter: f64,
        collimator_focal: f64,
        #[serde(default)]
        profile: AmplitudeProfile,
    },
    /// Mutual intensity given directly at a list of DMD-plane points.
    ExplicitRho {
        centers: Vec<f64>,
        rho: CoherenceMatrix,
    },
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceModel::VczCircular {
                core_diameter,
                collimator_focal,
                profile,
            } => {
                if !(*core_diameter > 0.0 && *collimator_focal > 0.0) {
                    return Err(Error::Domain(
                        "core diameter and collimator focal length must be positive".into(),
                    ));
                }
                let ok = match *profile {
                    AmplitudeProfile::Uniform { level } => level > 0.0,
                    AmplitudeProfile::Gaussian { peak, radius, .. } => peak > 0.0 && radius > 0.0,
                };
                if !ok {
                    return Err(Error::Domain("amplitude profile must be positive".into()));
                }
                Ok(())
            }
            SourceModel::ExplicitRho { centers, rho } => {
                if centers.len() != rho.dimension() {
                    return Err(Error::Shape(format!(
                        "{} centers for a {}x{} matrix",
                        centers.len(),
                        rho.dimension(),
                        rho.dimension()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Signed coherence kernel of the circular incoherent source, `2 J1(t) / t` with
/// `t = pi w s / (lambda f)`.
pub fn vcz_kernel(core_diameter: f64, wavelength: f64, focal: f64, separation: f64) -> f64 {
    let t = std::f64::consts::PI * core_diameter * separation.abs() / (wavelength * focal);
    if t.abs() < 1e-8 {
        1.0 - t * t / 8.0
    } else {
        2.0 * bessel_j1(t) / t
    }
}

/// Mutual intensity of the source sampled at the aperture centers.
pub fn rho_from_source(
    source: &SourceModel,
    apertures: &[Aperture],
    geometry: &SensorGeometry,
) -> Result<CoherenceMatrix> {
    source.validate()?;
    if apertures.is_empty() {
        return Err(Error::NoSignal("no apertures".into()));
    }
    let n = apertures.len();
    match source {
        SourceModel::VczCircular {
            core_diameter,
            collimator_focal,
            profile,
        } => {
            let u: Vec<f64> = apertures.iter().map(|a| profile.at(a.center)).collect();
            let entries = CMatrix::from_fn(n, n, |i, j| {
                let mu = vcz_kernel(
                    *core_diameter,
                    geometry.wavelength,
                    *collimator_focal,
                    apertures[i].center - apertures[j].center,
                );
                Complex64::new(u[i] * u[j] * mu, 0.0)
            });
            CoherenceMatrix::new(entries).map_err(|e| Error::ModelInconsistency(e.to_string()))
        }
        SourceModel::ExplicitRho { centers, rho } => {
            let tolerance = 1e-3 * geometry.mirror_pitch;
            let indices = apertures
                .iter()
                .map(|a| {
                    centers
                        .iter()
                        .position(|c| (c - a.center).abs() <= tolerance)
                        .ok_or_else(|| {
                            Error::ModelInconsistency(format!(
                                "aperture at {} m is not a point of the explicit source",
                                a.center
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            rho.submatrix(&indices)
                .map_err(|e| Error::ModelInconsistency(e.to_string()))
        }
    }
}

/// Expected counts scaled to the photon budget.
pub fn expected_counts(intensity: &[f64], exposure_photons: f64) -> Result<Vec<f64>> {
    let total: f64 = intensity.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoSignal("predicted intensity is zero everywhere".into()));
    }
    Ok(intensity
        .iter()
        .map(|v| exposure_photons * v / total)
        .collect())
}

/// Draws independent Poisson counts around `means`.
pub fn poisson_counts(means: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    means
        .iter()
        .map(|&m| {
            if m > 0.0 {
                Poisson::new(m).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Simulates one detector frame. Every aperture carries the geometry's nominal
/// deflection. With `seed = None` the noiseless expected counts are returned.
pub fn simulate_frame(
    source: &SourceModel,
    mask: &MaskPattern,
    geometry: &SensorGeometry,
    exposure_photons: f64,
    seed: Option<u64>,
) -> Result<DetectorFrame> {
    if !(exposure_photons > 0.0 && exposure_photons.is_finite()) {
        return Err(Error::Domain(format!(
            "exposure must be positive, got {exposure_photons}"
        )));
    }
    if mask.is_empty() {
        return Err(Error::NoSignal("mask has no open mirrors".into()));
    }
    let apertures = apertures_from_mask(mask, geometry)?;
    let rho = rho_from_source(source, &apertures, geometry)?;
    let deflections = vec![geometry.deflection_angle.sin(); apertures.len()];
    let basis = build_mode_basis(&apertures, geometry, &deflections)?;
    let povm = build_povm(&basis, geometry)?;
    let intensity = born_intensity(&rho, &povm)?;
    let expected = expected_counts(&intensity, exposure_photons)?;
    let counts = match seed {
        Some(s) => poisson_counts(&expected, s),
        None => expected,
    };
    Ok(DetectorFrame {
        counts,
        exposure_photons,
        mask_id: mask.describe(),
        noise_seed: seed,
        pixel_pitch: geometry.detector_pixel_pitch,
        origin: geometry.detector_origin,
        mask: Some(mask.clone()),
    })
}

/// Per-pixel ensemble mean and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAverage {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Average intensity of `n` coherent realizations drawn from `rho`.
pub fn sample_ensemble(
    rho: &CoherenceMatrix,
    povm: &PovmSet,
    n_realizations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(sample_ensemble_with_error(rho, povm, n_realizations, seed)?.mean)
}

/// Each realization picks eigenmode `k` of `rho` with probability
/// `lambda_k / Tr rho`, gives it a uniformly random global phase, and records
/// `|sum_j c_j psi'_j(xi)|^2` with `c = sqrt(Tr rho) e^{i theta} conj(v_k)`.
///
/// The conjugate follows from `(Pi_xi)_ij = psi'_i conj(psi'_j)` together with
/// `I = Tr(rho Pi_xi)`: in that convention `rho_ij = <conj(c_i) c_j>`.
pub fn sample_ensemble_with_error(
    rho: &CoherenceMatrix,
    povm: &PovmSet,
    n_realizations: usize,
    seed: u64,
) -> Result<EnsembleAverage> {
    if n_realizations == 0 {
        return Err(Error::Domain("need at least one realization".into()));
    }
    if rho.dimension() != povm.dimension() {
        return Err(Error::Shape("rho and POVM dimensions differ".into()));
    }
    let trace = rho.trace();
    let (values, vectors) = linalg::eigh(rho.entries());
    if values.iter().any(|&v| v < -crate::optics::PSD_TOLERANCE * trace) {
        return Err(Error::NotPositive("ensemble source must be PSD".into()));
    }
    let weights: Vec<f64> = values
        .iter()
        .map(|&v| if v < ENSEMBLE_EIGEN_FLOOR * trace { 0.0 } else { v })
        .collect();
    let weight_total: f64 = weights.iter().sum();
    let d = rho.dimension();
    let n_pix = povm.len();
    let table = povm.amplitude_table();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; n_pix];
    let mut sum_sq = vec![0.0; n_pix];
    let mut field = vec![Complex64::new(0.0, 0.0); n_pix];
    for _ in 0..n_realizations {
        let mut pick = rng.random::<f64>() * weight_total;
        let mut k = 0;
        while k + 1 < d && (weights[k] == 0.0 || pick >= weights[k]) {
            pick -= weights[k];
            k += 1;
        }
        while weights[k] == 0.0 && k > 0 {
            k -= 1;
        }
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let phase = Complex64::from_polar(weight_total.sqrt(), theta);
        field.iter_mut().for_each(|f| *f = Complex64::new(0.0, 0.0));
        for j in 0..d {
            let c = phase * vectors[(j, k)].conj();
            for (p, f) in field.iter_mut().enumerate() {
                *f += c * table[(j, p)];
            }
        }
        for p in 0..n_pix {
            let intensity = field[p].norm_sqr();
            sum[p] += intensity;
            sum_sq[p] += intensity * intensity;
        }
    }
    let n = n_realizations as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_error = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            if n_realizations < 2 {
                0.0
            } else {
                ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
            }
        })
        .collect();
    Ok(EnsembleAverage { mean, std_error })
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default, clippy::needless_range_loop)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vcz(w: f64) -> SourceModel {
        SourceModel::VczCircular {
            core_diameter: w,
            collimator_focal: 0.1,
            profile: AmplitudeProfile::default(),
        }
    }

    #[test]
    fn ten_mirror_run_is_76_um_wide() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::from_runs(1024, &[(500, 10)]).unwrap();
        let ap = apertures_from_mask(&mask, &g).unwrap();
        assert_eq!(ap.len(), 1);
        assert_relative_eq!(ap[0].width, 76e-6, max_relative = 1e-12);
        // run 500..=509 has midpoint 504.5, grid center 511.5
        assert_relative_eq!(ap[0].center, -7.0 * 7.6e-6, max_relative = 1e-12);
    }

    #[test]
    fn single_mirror_aperture() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::new(64, [10]).unwrap();
        let ap = apertures_from_mask(&mask, &g).unwrap();
        assert_relative_eq!(ap[0].width, g.mirror_pitch);
    }

    #[test]
    fn runs_forty_mirrors_apart_are_304_um_apart() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::from_runs(1024, &[(477, 10), (517, 10)]).unwrap();
        let ap = apertures_from_mask(&mask, &g).unwrap();
        assert_eq!(ap.len(), 2);
        assert_relative_eq!(ap[1].center - ap[0].center, 304e-6, max_relative = 1e-12);
    }

    #[test]
    fn three_runs_unsupported() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::from_runs(100, &[(0, 2), (10, 2), (20, 2)]).unwrap();
        assert!(matches!(
            apertures_from_mask(&mask, &g),
            Err(Error::UnsupportedMask(_))
        ));
    }

    #[test]
    fn mask_rejects_out_of_grid_mirrors() {
        assert!(MaskPattern::new(10, [10]).is_err());
    }

    #[test]
    fn vcz_diagonal_is_intensity() {
        let g = SensorGeometry::default();
        let ap = [Aperture { center: -76e-6, width: 76e-6 }, Aperture { center: 76e-6, width: 76e-6 }];
        let rho = rho_from_source(&vcz(200e-6), &ap, &g).unwrap();
        assert_relative_eq!(rho.get(0, 0).re, 1.0);
        assert_relative_eq!(rho.get(1, 1).re, 1.0);
        // 2 J1(t)/t at t = 1.508758557174245
        assert_relative_eq!(rho.get(0, 1).re, 0.7412002277206391, max_relative = 1e-10);
    }

    #[test]
    fn vcz_vanishes_at_first_bessel_zero() {
        let g = SensorGeometry::default();
        let first_zero = 3.831705970207513;
        let separation = first_zero * g.wavelength * 0.1 / (std::f64::consts::PI * 200e-6);
        assert_relative_eq!(separation, 386.02552058584875e-6, max_relative = 1e-10);
        let ap = [Aperture { center: 0.0, width: 76e-6 }, Aperture { center: separation, width: 76e-6 }];
        let rho = rho_from_source(&vcz(200e-6), &ap, &g).unwrap();
        assert!(rho.get(0, 1).norm() < 1e-9);
    }

    #[test]
    fn wider_core_is_less_coherent() {
        let g = SensorGeometry::default();
        let ap = [Aperture { center: 0.0, width: 76e-6 }, Aperture { center: 152e-6, width: 76e-6 }];
        let narrow = rho_from_source(&vcz(105e-6), &ap, &g).unwrap();
        let wide = rho_from_source(&vcz(400e-6), &ap, &g).unwrap();
        assert!(wide.get(0, 1).norm() < narrow.get(0, 1).norm());
    }

    #[test]
    fn explicit_source_selects_points() {
        let g = SensorGeometry::default();
        let rho = CoherenceMatrix::from_real(&[&[1.0, 0.2, 0.1], &[0.2, 1.0, 0.3], &[0.1, 0.3, 1.0]]).unwrap();
        let source = SourceModel::ExplicitRho { centers: vec![-1e-4, 0.0, 1e-4], rho };
        let ap = [Aperture { center: 0.0, width: 76e-6 }, Aperture { center: 1e-4, width: 76e-6 }];
        let sub = rho_from_source(&source, &ap, &g).unwrap();
        assert_relative_eq!(sub.get(0, 1).re, 0.3);
        let missing = [Aperture { center: 5e-5, width: 76e-6 }];
        assert!(matches!(
            rho_from_source(&source, &missing, &g),
            Err(Error::ModelInconsistency(_))
        ));
    }

    #[test]
    fn noiseless_frame_is_proportional_to_born_rule() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::from_runs(1024, &[(477, 10), (497, 10)]).unwrap();
        let frame = simulate_frame(&vcz(200e-6), &mask, &g, 1e6, None).unwrap();
        assert_relative_eq!(frame.total(), 1e6, max_relative = 1e-12);
        let ap = apertures_from_mask(&mask, &g).unwrap();
        let rho = rho_from_source(&vcz(200e-6), &ap, &g).unwrap();
        let povm = build_povm(&build_mode_basis(&ap, &g, &[0.0, 0.0]).unwrap(), &g).unwrap();
        let born = born_intensity(&rho, &povm).unwrap();
        let ratio = frame.counts[512] / born[512];
        for p in (0..born.len()).step_by(13) {
            assert_relative_eq!(frame.counts[p], ratio * born[p], max_relative = 1e-10, epsilon = 1e-9);
        }
    }

    #[test]
    fn seeded_frames_are_identical() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::from_runs(1024, &[(477, 10), (537, 10)]).unwrap();
        let a = simulate_frame(&vcz(200e-6), &mask, &g, 1e6, Some(17)).unwrap();
        let b = simulate_frame(&vcz(200e-6), &mask, &g, 1e6, Some(17)).unwrap();
        let c = simulate_frame(&vcz(200e-6), &mask, &g, 1e6, Some(18)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts, c.counts);
        assert!(a.counts.iter().all(|&x| x >= 0.0 && x.fract() == 0.0));
    }

    #[test]
    fn single_aperture_frame_is_centered_sinc_squared() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::from_runs(1024, &[(507, 10)]).unwrap();
        let ap = apertures_from_mask(&mask, &g).unwrap()[0];
        let frame = simulate_frame(&vcz(200e-6), &mask, &g, 1e6, None).unwrap();
        let scale = g.spot_scale(ap.width);
        let peak = frame.counts.iter().copied().fold(0.0, f64::max);
        let peak_index = frame.counts.iter().position(|&c| c == peak).unwrap();
        assert!((g.pixel_position(peak_index) - ap.center).abs() <= g.detector_pixel_pitch);
        let at_center = {
            let u = (g.pixel_position(peak_index) - ap.center) / scale;
            let s = crate::optics::sinc(u);
            peak / (s * s)
        };
        for p in (0..frame.len()).step_by(7) {
            let u = (g.pixel_position(p) - ap.center) / scale;
            let s = crate::optics::sinc(u);
            assert_relative_eq!(frame.counts[p], at_center * s * s, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn empty_mask_has_no_signal() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::new(1024, []).unwrap();
        assert!(matches!(
            simulate_frame(&vcz(200e-6), &mask, &g, 1e6, Some(1)),
            Err(Error::NoSignal(_))
        ));
    }

    #[test]
    fn shifting_mask_shifts_centers() {
        let g = SensorGeometry::default();
        let mask = MaskPattern::from_runs(1024, &[(300, 10), (340, 7)]).unwrap();
        let moved = mask.shifted(13).unwrap();
        let a = apertures_from_mask(&mask, &g).unwrap();
        let b = apertures_from_mask(&moved, &g).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(y.center - x.center, 13.0 * g.mirror_pitch, max_relative = 1e-9);
            assert_eq!(x.width, y.width);
        }
    }

    fn pair_povm(g: &SensorGeometry) -> PovmSet {
        let ap = [Aperture { center: -76e-6, width: 76e-6 }, Aperture { center: 76e-6, width: 76e-6 }];
        build_povm(&build_mode_basis(&ap, g, &[0.0, 0.0]).unwrap(), g).unwrap()
    }

    #[test]
    fn pure_state_ensemble_is_exact() {
        let g = SensorGeometry::default();
        let povm = pair_povm(&g);
        let rho = CoherenceMatrix::pure(&[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]).unwrap();
        let avg = sample_ensemble(&rho, &povm, 50, 3).unwrap();
        let born = born_intensity(&rho, &povm).unwrap();
        for (a, b) in avg.iter().zip(&born) {
            assert_relative_eq!(*a, *b, max_relative = 1e-9, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_realization_is_nonnegative_speckle() {
        let g = SensorGeometry::default();
        let povm = pair_povm(&g);
        let avg = sample_ensemble(&CoherenceMatrix::maximally_mixed(2), &povm, 1, 9).unwrap();
        assert!(avg.iter().all(|&v| v >= 0.0));
        assert!(sample_ensemble(&CoherenceMatrix::maximally_mixed(2), &povm, 0, 9).is_err());
    }

    #[test]
    fn mixed_state_ensemble_within_three_sigma() {
        let g = SensorGeometry::default();
        let povm = pair_povm(&g);
        let rho = CoherenceMatrix::maximally_mixed(2);
        let est = sample_ensemble_with_error(&rho, &povm, 100_000, 2024).unwrap();
        let born = born_intensity(&rho, &povm).unwrap();
        for p in 0..born.len() {
            assert!((est.mean[p] - born[p]).abs() <= 3.0 * est.std_error[p] + 1e-15);
        }
    }
}
