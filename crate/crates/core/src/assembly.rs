//! Stitching pairwise reconstructions into one mutual-intensity matrix and
//! fitting the circular-source coherence model to it.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::vcz_kernel;
use crate::linalg::{self, serde_cmatrix, CMatrix};
use crate::optics::{degree_of_coherence, CoherenceMatrix};
use crate::optimize::golden_section;

/// Projections moving `J` by more than this fraction of its norm are flagged.
pub const INCONSISTENCY_FRACTION: f64 = 0.1;

pub const FIT_LOWER_DIAMETER: f64 = 1e-6;
pub const FIT_UPPER_DIAMETER: f64 = 5e-3;
const FIT_SCAN_POINTS: usize = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Aperture centers on the DMD, strictly increasing (m).
    pub points: Vec<f64>,
    pub aperture_width: f64,
    /// All `(i, j)` with `i < j`, row-major.
    pub pairs: Vec<(usize, usize)>,
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn separation(&self, i: usize, j: usize) -> f64 {
        (self.points[j] - self.points[i]).abs()
    }
}

/// Enumerates every unordered pair of sampling points.
///
/// Neighbouring apertures must be separated by at least one closed mirror's worth
/// of space, otherwise the two runs merge into a single aperture on the mask.
pub fn plan_pairs(points: &[f64], width: f64) -> Result<SamplingPlan> {
    if points.len() < 2 {
        return Err(Error::Plan(format!("need at least 2 points, got {}", points.len())));
    }
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Plan(format!("aperture width must be positive, got {width}")));
    }
    for w in points.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Plan("points must be strictly increasing".into()));
        }
        if w[1] - w[0] <= width {
            return Err(Error::Plan(format!(
                "apertures at {} m and {} m overlap (width {width} m)",
                w[0], w[1]
            )));
        }
    }
    let n = points.len();
    let pairs = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    Ok(SamplingPlan {
        points: points.to_vec(),
        aperture_width: width,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseGauge {
    /// Keep the phases of the propagation-aligned mode basis shared by all pairs.
    #[default]
    Basis,
    /// Rotate so that every `J_0j` is real and non-negative.
    AnchorFirstPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchOptions {
    pub project_psd: bool,
    pub gauge: PhaseGauge,
}

impl Default for StitchOptions {
    fn default() -> Self {
        StitchOptions {
            project_psd: true,
            gauge: PhaseGauge::Basis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchedMatrix {
    /// Mutual intensity in detected photons. Hermitian; PSD unless projection
    /// was disabled.
    #[serde(with = "serde_cmatrix")]
    pub j: CMatrix,
    #[serde(with = "serde_cmatrix")]
    pub mu: CMatrix,
    pub intensities: Vec<f64>,
    /// Frobenius norm of the adjustment made to the raw stitched matrix.
    pub psd_projection_distance: f64,
    pub inconsistent: bool,
    /// Largest `|Im J_ij|`, reported as a diagnostic only.
    pub max_imaginary: f64,
}

/// Assembles `J` from single-aperture intensities and the per-pair estimates.
///
/// Each pair contributes only its scale-free coherence `mu_ij`, rescaled by
/// `sqrt(I_i I_j)`. If the result is not PSD it is clipped to the nearest PSD
/// matrix and congruence-scaled back onto the measured diagonal.
pub fn stitch(
    plan: &SamplingPlan,
    pair_estimates: &BTreeMap<(usize, usize), CoherenceMatrix>,
    intensities: &[f64],
    options: StitchOptions,
) -> Result<StitchedMatrix> {
    let n = plan.len();
    if intensities.len() != n {
        return Err(Error::Shape(format!("{} intensities for {n} points", intensities.len())));
    }
    if let Some(bad) = intensities.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateIntensity(format!("intensity {bad}")));
    }
    let mut raw = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(intensities[i], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    for &(i, j) in &plan.pairs {
        let rho = pair_estimates
            .get(&(i, j))
            .ok_or_else(|| Error::IncompletePlan(format!("no estimate for pair ({i}, {j})")))?;
        if rho.dimension() != 2 {
            return Err(Error::Shape(format!("pair ({i}, {j}) estimate is not 2x2")));
        }
        let mu = degree_of_coherence(rho)?[(0, 1)];
        let value = mu * (intensities[i] * intensities[j]).sqrt();
        raw[(i, j)] = value;
        raw[(j, i)] = value.conj();
    }
    if options.gauge == PhaseGauge::AnchorFirstPoint {
        let phases: Vec<f64> = (0..n).map(|j| if j == 0 { 0.0 } else { raw[(0, j)].arg() }).collect();
        raw = CMatrix::from_fn(n, n, |a, b| raw[(a, b)] * Complex64::from_polar(1.0, phases[a] - phases[b]));
    }

    let mut stitched = raw.clone();
    if options.project_psd && linalg::min_eigenvalue(&raw) < 0.0 {
        let (projected, _) = linalg::nearest_psd(&raw);
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let p = projected[(i, i)].re;
                if p > 0.0 {
                    Ok((intensities[i] / p).sqrt())
                } else {
                    Err(Error::DegenerateIntensity(format!(
                        "projection removed all intensity at point {i}"
                    )))
                }
            })
            .collect::<Result<_>>()?;
        stitched = CMatrix::from_fn(n, n, |a, b| {
            if a == b {
                Complex64::new(intensities[a], 0.0)
            } else {
                projected[(a, b)] * scale[a] * scale[b]
            }
        });
    }
    let distance = (&stitched - &raw).norm();
    let max_imaginary = stitched.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let stitched = linalg::hermitian_part(&stitched);
    let mu = CMatrix::from_fn(n, n, |a, b| {
        if a == b {
            Complex64::new(1.0, 0.0)
        } else {
            stitched[(a, b)] / (intensities[a] * intensities[b]).sqrt()
        }
    });
    Ok(StitchedMatrix {
        mu,
        intensities: intensities.to_vec(),
        psd_projection_distance: distance,
        inconsistent: distance > INCONSISTENCY_FRACTION * raw.norm(),
        max_imaginary,
        j: stitched,
    })
}

/// `|2 J1(t) / t|` with `t = pi w s / (lambda f)`.
pub fn vcz_mu(core_diameter: f64, wavelength: f64, focal: f64, separation: f64) -> f64 {
    vcz_kernel(core_diameter, wavelength, focal, separation).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreFit {
    pub core_diameter: f64,
    pub rss: f64,
    /// Measured minus model `|mu|`, in sample order.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

fn fit_rss(samples: &[(f64, f64)], wavelength: f64, focal: f64, w: f64) -> f64 {
    samples
        .iter()
        .map(|&(s, m)| (m - vcz_mu(w, wavelength, focal, s)).powi(2))
        .sum()
}

/// Least-squares core diameter from `(separation, |mu|)` samples: log-spaced scan
/// of the allowed range, then golden-section polish around the best scan point.
pub fn fit_core_diameter(samples: &[(f64, f64)], wavelength: f64, focal: f64) -> Result<CoreFit> {
    if !(wavelength > 0.0 && focal > 0.0) {
        return Err(Error::Domain("wavelength and focal length must be positive".into()));
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0.abs()).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if samples.len() < 2 || distinct.len() < 2 || distinct.iter().all(|&s| s == 0.0) {
        return Err(Error::Unidentifiable(
            "need at least 2 samples at distinct, nonzero separations".into(),
        ));
    }
    let (lo, hi) = (FIT_LOWER_DIAMETER.ln(), FIT_UPPER_DIAMETER.ln());
    let step = (hi - lo) / (FIT_SCAN_POINTS - 1) as f64;
    let objective = |log_w: f64| fit_rss(samples, wavelength, focal, log_w.exp());
    let best = (0..FIT_SCAN_POINTS)
        .map(|k| lo + step * k as f64)
        .map(|x| (x, objective(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("scan is nonempty");
    let found = golden_section(objective, (best.0 - step).max(lo), (best.0 + step).min(hi), 1e-12, 200);
    let (log_w, rss) = if found.value <= best.1 {
        (found.x, found.value)
    } else {
        best
    };
    let w = log_w.exp();
    Ok(CoreFit {
        core_diameter: w,
        rss,
        residuals: samples
            .iter()
            .map(|&(s, m)| m - vcz_mu(w, wavelength, focal, s))
            .collect(),
        converged: found.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel::bessel_j1;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const LAMBDA: f64 = 633e-9;
    const FOCAL: f64 = 0.1;

    fn four_point_plan() -> SamplingPlan {
        plan_pairs(&[-228e-6, -76e-6, 76e-6, 228e-6], 76e-6).unwrap()
    }

    fn pair_state(mu: Complex64) -> CoherenceMatrix {
        let c = |a: f64| Complex64::new(a, 0.0);
        CoherenceMatrix::new(CMatrix::from_row_slice(2, 2, &[c(0.5), mu * 0.5, mu.conj() * 0.5, c(0.5)])).unwrap()
    }

    fn estimates_from(plan: &SamplingPlan, mu: impl Fn(usize, usize) -> Complex64) -> BTreeMap<(usize, usize), CoherenceMatrix> {
        plan.pairs.iter().map(|&(i, j)| ((i, j), pair_state(mu(i, j)))).collect()
    }

    #[test]
    fn pair_counts() {
        let spaced = |n: usize| (0..n).map(|i| i as f64 * 152e-6).collect::<Vec<_>>();
        assert_eq!(plan_pairs(&spaced(2), 76e-6).unwrap().pairs, vec![(0, 1)]);
        assert_eq!(four_point_plan().pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(plan_pairs(&spaced(10), 76e-6).unwrap().pairs.len(), 45);
    }

    #[test]
    fn plan_errors() {
        assert!(matches!(plan_pairs(&[0.0], 1e-5), Err(Error::Plan(_))));
        assert!(matches!(plan_pairs(&[0.0, 50e-6], 76e-6), Err(Error::Plan(_))));
        assert!(matches!(plan_pairs(&[1e-4, 0.0], 1e-5), Err(Error::Plan(_))));
    }

    #[test]
    fn incoherent_pairs_stitch_to_diagonal() {
        let plan = four_point_plan();
        let est = estimates_from(&plan, |_, _| Complex64::new(0.0, 0.0));
        let s = stitch(&plan, &est, &[1.0, 2.0, 3.0, 4.0], StitchOptions::default()).unwrap();
        assert_eq!(s.psd_projection_distance, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { (i + 1) as f64 } else { 0.0 };
                assert_eq!(s.j[(i, j)], Complex64::new(expected, 0.0));
            }
        }
    }

    #[test]
    fn two_points_reproduce_the_pair() {
        let plan = plan_pairs(&[0.0, 152e-6], 76e-6).unwrap();
        let mu = Complex64::from_polar(0.6, 0.4);
        let est = estimates_from(&plan, |_, _| mu);
        let s = stitch(&plan, &est, &[4e5, 9e5], StitchOptions::default()).unwrap();
        assert_relative_eq!(s.j[(0, 1)].re, (mu * 6e5).re, max_relative = 1e-12);
        assert_relative_eq!(s.j[(0, 1)].im, (mu * 6e5).im, max_relative = 1e-12);
        assert_relative_eq!(s.mu[(0, 1)].norm(), 0.6, max_relative = 1e-12);
    }

    #[test]
    fn missing_pair_is_incomplete() {
        let plan = four_point_plan();
        let mut est = estimates_from(&plan, |_, _| Complex64::new(0.1, 0.0));
        est.remove(&(1, 3));
        assert!(matches!(
            stitch(&plan, &est, &[1.0; 4], StitchOptions::default()),
            Err(Error::IncompletePlan(_))
        ));
    }

    #[test]
    fn projection_restores_psd_and_diagonal() {
        let plan = plan_pairs(&[0.0, 152e-6, 304e-6], 76e-6).unwrap();
        // mu_01 = mu_12 = 0.95 but mu_02 = -0.95 cannot come from any PSD matrix
        let est = estimates_from(&plan, |i, j| Complex64::new(if (i, j) == (0, 2) { -0.95 } else { 0.95 }, 0.0));
        let intensities = [1.0, 2.0, 3.0];
        let s = stitch(&plan, &est, &intensities, StitchOptions::default()).unwrap();
        assert!(s.psd_projection_distance > 0.0);
        assert!(s.inconsistent);
        assert!(linalg::min_eigenvalue(&s.j) >= -1e-12);
        for (i, v) in intensities.iter().enumerate() {
            assert_relative_eq!(s.j[(i, i)].re, *v, max_relative = 1e-14);
        }
        assert!(s.mu.iter().all(|z| z.norm() <= 1.0 + 1e-6));
        assert!(linalg::anti_hermitian_ratio(&s.j) < 1e-15);

        // projecting the output again changes nothing
        let again: BTreeMap<_, _> = plan
            .pairs
            .iter()
            .map(|&(i, j)| ((i, j), pair_state(s.mu[(i, j)])))
            .collect();
        let t = stitch(&plan, &again, &intensities, StitchOptions::default()).unwrap();
        assert!(t.psd_projection_distance <= 1e-9 * s.j.norm());
    }

    #[test]
    fn anchoring_makes_first_row_real() {
        let plan = four_point_plan();
        let phase = [0.0, 0.3, -1.2, 2.0];
        let est = estimates_from(&plan, |i, j| Complex64::from_polar(0.5, phase[i] - phase[j]));
        let opts = StitchOptions { gauge: PhaseGauge::AnchorFirstPoint, ..StitchOptions::default() };
        let s = stitch(&plan, &est, &[1.0; 4], opts).unwrap();
        for j in 1..4 {
            assert!(s.j[(0, j)].im.abs() < 1e-12);
            assert!(s.j[(0, j)].re > 0.0);
        }
        assert!(s.max_imaginary < 1e-12);
    }

    #[test]
    fn vcz_mu_examples() {
        assert_eq!(vcz_mu(200e-6, LAMBDA, FOCAL, 0.0), 1.0);
        let s_zero = 3.831705970207513 * LAMBDA * FOCAL / (std::f64::consts::PI * 200e-6);
        assert!(vcz_mu(200e-6, LAMBDA, FOCAL, s_zero) < 1e-9);
        let mut last = 1.0;
        for k in 1..=100 {
            let s = s_zero * k as f64 / 100.0;
            let v = vcz_mu(200e-6, LAMBDA, FOCAL, s);
            assert!(v <= last);
            assert_eq!(v, vcz_mu(200e-6, LAMBDA, FOCAL, -s));
            last = v;
        }
        let first_zero_105 = 3.831705970207513 * LAMBDA * FOCAL / (std::f64::consts::PI * 400e-6);
        for k in 1..100 {
            let s = first_zero_105 * k as f64 / 100.0;
            assert!(vcz_mu(105e-6, LAMBDA, FOCAL, s) > vcz_mu(400e-6, LAMBDA, FOCAL, s));
        }
    }

    #[test]
    fn bessel_recurrence_against_reference_orders() {
        // (t, J0, J2) from an independent library evaluation
        let table = [
            (0.5, 0.938469807240813, 0.030604023458682638),
            (2.0, 0.22389077914123562, 0.35283402861563773),
            (5.0, -0.1775967713143383, 0.04656511627775229),
            (7.5, 0.2663396578803784, -0.23027341052579028),
            (10.0, -0.24593576445134832, 0.2546303136851206),
            (12.0, 0.04768931079683335, -0.08493049487860475),
            (20.0, 0.16702466434058322, -0.16034135192299823),
            (25.0, 0.09626678327595801, -0.10629480324238133),
            (33.3, 0.06333848594752092, -0.05589931790539031),
            (49.0, -0.05290003332227324, 0.04875692605556695),
            (50.0, 0.055812327669252086, -0.05971280079425882),
        ];
        for (t, j0, j2) in table {
            assert!((j0 + j2 - 2.0 / t * bessel_j1(t)).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn fit_recovers_exact_samples() {
        let seps = [152e-6, 304e-6, 456e-6];
        let samples: Vec<_> = seps.iter().map(|&s| (s, vcz_mu(200e-6, LAMBDA, FOCAL, s))).collect();
        let fit = fit_core_diameter(&samples, LAMBDA, FOCAL).unwrap();
        assert!((fit.core_diameter / 200e-6 - 1.0).abs() < 1e-3);
        assert!(fit.rss < 1e-12);
        assert_eq!(fit.residuals.len(), 3);
    }

    #[test]
    fn fit_needs_distinct_separations() {
        assert!(matches!(
            fit_core_diameter(&[(152e-6, 0.7)], LAMBDA, FOCAL),
            Err(Error::Unidentifiable(_))
        ));
        assert!(matches!(
            fit_core_diameter(&[(152e-6, 0.7), (152e-6, 0.72)], LAMBDA, FOCAL),
            Err(Error::Unidentifiable(_))
        ));
        assert!(matches!(
            fit_core_diameter(&[(0.0, 1.0), (0.0, 1.0)], LAMBDA, FOCAL),
            Err(Error::Unidentifiable(_))
        ));
    }

    proptest! {
        #[test]
        fn fit_is_exact_on_noiseless_samples(log_w in (20e-6f64).ln()..(4e-3f64).ln()) {
            let w = log_w.exp();
            // keep samples on the main lobe and first sidelobe so w is identifiable
            let s_zero = 3.831705970207513 * LAMBDA * FOCAL / (std::f64::consts::PI * w);
            let samples: Vec<_> = [0.3, 0.6, 0.9, 1.3]
                .iter()
                .map(|f| (f * s_zero, vcz_mu(w, LAMBDA, FOCAL, f * s_zero)))
                .collect();
            let fit = fit_core_diameter(&samples, LAMBDA, FOCAL).unwrap();
            prop_assert!((fit.core_diameter / w - 1.0).abs() < 1e-6, "{} vs {}", fit.core_diameter, w);
        }
    }
}
