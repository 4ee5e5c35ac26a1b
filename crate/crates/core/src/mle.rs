//! Positivity-constrained maximum-likelihood reconstruction of a coherence
//! matrix from one detector frame.
//!
//! Counts are modelled as independent Poisson variables with means
//! `lambda_xi = s Tr(rho Pi_xi)`; the overall scale `s` is profiled out
//! analytically. The POVM does not resolve the identity on a finite detector, so
//! the multiplicative `R rho R` step is taken in the renormalized variable
//! `sigma = G^{1/2} rho G^{1/2}` with `G = sum_xi Pi_xi`:
//!
//! ```text
//! sigma' = G^{-1/2} R(rho) rho R(rho) G^{-1/2},    rho' = G^{-1/2} sigma' G^{-1/2} / trace
//! ```
//!
//! whose fixed points satisfy the likelihood extremal condition `R rho = c G rho`.
//! Steps that lower the likelihood are diluted toward the current iterate. The
//! iteration ends with a short Newton polish, since it creeps toward maxima on the
//! rank-deficient boundary at a rate of only about one over the iteration count.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::DetectorFrame;
use crate::linalg::{self, CMatrix};
use crate::optics::{CoherenceMatrix, PovmSet, PSD_TOLERANCE};
use crate::spot::SpotEstimate;

/// Maximum number of step halvings before an iteration is abandoned.
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlConfig {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood gain of an iteration drops below this.
    pub likelihood_tolerance: f64,
    /// Initial step fraction toward the multiplicative update, in (0, 1].
    pub dilution: f64,
    /// Eigenvalue floor of `G`, relative to its largest eigenvalue.
    pub min_eigenvalue_clip: f64,
    pub outer_refinement_rounds: usize,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            max_iterations: 5000,
            likelihood_tolerance: 1e-10,
            dilution: 1.0,
            min_eigenvalue_clip: 1e-10,
            outer_refinement_rounds: 2,
        }
    }
}

impl MlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.likelihood_tolerance > 0.0) {
            return Err(Error::Config("likelihood_tolerance must be positive".into()));
        }
        if !(self.dilution > 0.0 && self.dilution <= 1.0) {
            return Err(Error::Config("dilution must lie in (0, 1]".into()));
        }
        if !(self.min_eigenvalue_clip > 0.0 && self.min_eigenvalue_clip < 1.0) {
            return Err(Error::Config("min_eigenvalue_clip must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    /// Unit-trace estimate.
    pub rho_hat: CoherenceMatrix,
    /// Profiled Poisson scale: expected photons per unit `Tr(rho Pi)`.
    pub intensity_scale: f64,
    pub log_likelihood: f64,
    pub iterations_used: usize,
    pub converged: bool,
    #[serde(default)]
    pub refined_spots: Vec<SpotEstimate>,
    /// Log-likelihood after every accepted iteration, starting with the initial value.
    #[serde(skip)]
    pub likelihood_trace: Vec<f64>,
}

fn check_inputs(rho_dim: usize, frame: &DetectorFrame, povm: &PovmSet) -> Result<()> {
    if rho_dim != povm.dimension() {
        return Err(Error::Shape(format!(
            "rho has dimension {rho_dim}, POVM {}",
            povm.dimension()
        )));
    }
    if frame.len() != povm.len() {
        return Err(Error::Shape(format!(
            "frame has {} pixels, POVM {}",
            frame.len(),
            povm.len()
        )));
    }
    if let Some(bad) = frame.counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::Data(format!("negative or non-finite count {bad}")));
    }
    Ok(())
}

fn predictions(rho: &CMatrix, povm: &PovmSet) -> Vec<f64> {
    (0..povm.len())
        .map(|p| povm.expectation(rho, p).max(0.0))
        .collect()
}

/// Profiled Poisson log-likelihood; pixels are summed in index order.
fn profiled_log_likelihood(counts: &[f64], predicted: &[f64]) -> (f64, f64) {
    let total_counts: f64 = counts.iter().sum();
    let total_predicted: f64 = predicted.iter().sum();
    if total_counts == 0.0 {
        return (0.0, 0.0);
    }
    if !(total_predicted > 0.0) {
        return (f64::NEG_INFINITY, 0.0);
    }
    let scale = total_counts / total_predicted;
    let mut acc = 0.0;
    for (&n, &p) in counts.iter().zip(predicted) {
        if n > 0.0 {
            if p <= 0.0 {
                return (f64::NEG_INFINITY, scale);
            }
            acc += n * (scale * p).ln();
        }
    }
    (acc - total_counts, scale)
}

/// `sum_xi [n_xi ln(lambda_xi) - lambda_xi]` with the scale at its analytic optimum.
pub fn log_likelihood(rho: &CoherenceMatrix, frame: &DetectorFrame, povm: &PovmSet) -> Result<f64> {
    check_inputs(rho.dimension(), frame, povm)?;
    Ok(profiled_log_likelihood(&frame.counts, &predictions(rho.entries(), povm)).0)
}

fn r_matrix(rho: &CMatrix, counts: &[f64], povm: &PovmSet) -> Result<CMatrix> {
    let d = povm.dimension();
    let table = povm.amplitude_table();
    let mut r = CMatrix::zeros(d, d);
    for (p, &n) in counts.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        let predicted = povm.expectation(rho, p);
        if !(predicted > 0.0) {
            return Err(Error::SingularModel(format!(
                "pixel {p} has {n} counts but zero predicted intensity"
            )));
        }
        let w = n / predicted;
        for i in 0..d {
            let ai = table[(i, p)] * w;
            for j in 0..d {
                r[(i, j)] += ai * table[(j, p)].conj();
            }
        }
    }
    Ok(r)
}

/// `R(rho) = sum_xi [n_xi / Tr(rho Pi_xi)] Pi_xi`.
pub fn r_operator(rho: &CoherenceMatrix, frame: &DetectorFrame, povm: &PovmSet) -> Result<CMatrix> {
    check_inputs(rho.dimension(), frame, povm)?;
    r_matrix(rho.entries(), &frame.counts, povm)
}

fn normalize(m: &CMatrix) -> CMatrix {
    let h = linalg::hermitian_part(m);
    let t = linalg::trace_re(&h);
    h.map(|z| z / t)
}

/// Pseudo-inverse square root of `G`; errors if `G` is rank-deficient on the basis.
fn inverse_sqrt_sum_operator(povm: &PovmSet, clip: f64) -> Result<CMatrix> {
    let g = povm.sum_operator();
    let (values, _) = linalg::eigh(&g);
    let largest = values.iter().copied().fold(0.0, f64::max);
    let floor = clip * largest;
    if !(largest > 0.0) || values.iter().any(|&v| v < floor) {
        return Err(Error::IllPosed(format!(
            "sum of POVM elements is singular on the mode basis (eigenvalues {:?})",
            values.as_slice()
        )));
    }
    Ok(linalg::spectral_map(&g, |v| if v >= floor { 1.0 / v.sqrt() } else { 0.0 }))
}

pub fn mle_iterate(
    rho0: &CoherenceMatrix,
    frame: &DetectorFrame,
    povm: &PovmSet,
    config: &MlConfig,
) -> Result<ReconstructionResult> {
    mle_iterate_observed(rho0, frame, povm, config, |_, _, _| {})
}

/// As [`mle_iterate`], calling `observer(iteration, rho, log_likelihood)` for the
/// starting point and after every accepted step.
pub fn mle_iterate_observed(
    rho0: &CoherenceMatrix,
    frame: &DetectorFrame,
    povm: &PovmSet,
    config: &MlConfig,
    mut observer: impl FnMut(usize, &CMatrix, f64),
) -> Result<ReconstructionResult> {
    config.validate()?;
    check_inputs(rho0.dimension(), frame, povm)?;
    if frame.total() <= 0.0 {
        return Err(Error::NoSignal("frame has no counts".into()));
    }
    let min_eig = rho0.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
    if !(min_eig > 0.0) {
        return Err(Error::Domain("starting point must be full rank".into()));
    }
    let g_inv_sqrt = inverse_sqrt_sum_operator(povm, config.min_eigenvalue_clip)?;
    let g_inv = &g_inv_sqrt * &g_inv_sqrt;
    let counts = &frame.counts;

    let mut rho = normalize(rho0.entries());
    let (mut ll, mut scale) = profiled_log_likelihood(counts, &predictions(&rho, povm));
    if !ll.is_finite() {
        return Err(Error::SingularModel(
            "starting point predicts zero intensity where counts were recorded".into(),
        ));
    }
    let mut trace = vec![ll];
    observer(0, &rho, ll);

    let mut converged = false;
    let mut iterations = 0;
    for iteration in 1..=config.max_iterations {
        let r = r_matrix(&rho, counts, povm)?;
        let update = normalize(&(&g_inv * &r * &rho * &r * &g_inv));
        let mut step = config.dilution;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = if step >= 1.0 {
                update.clone()
            } else {
                normalize(&(rho.map(|z| z * (1.0 - step)) + update.map(|z| z * step)))
            };
            let (cand_ll, cand_scale) = profiled_log_likelihood(counts, &predictions(&candidate, povm));
            if cand_ll >= ll {
                accepted = Some((candidate, cand_ll, cand_scale));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_ll, cand_scale)) = accepted else {
            // No step improves: either stationary to round-off or stuck.
            let (full_ll, _) = profiled_log_likelihood(counts, &predictions(&update, povm));
            converged = (ll - full_ll).abs() <= config.likelihood_tolerance * ll.abs().max(1.0);
            break;
        };
        let gain = (cand_ll - ll) / ll.abs().max(1.0);
        rho = candidate;
        ll = cand_ll;
        scale = cand_scale;
        iterations = iteration;
        trace.push(ll);
        observer(iteration, &rho, ll);
        if gain < config.likelihood_tolerance {
            converged = true;
            break;
        }
    }

    for (candidate, cand_ll, cand_scale) in newton_polish(&rho, ll, counts, povm, config) {
        if (cand_ll - ll) / ll.abs().max(1.0) < config.likelihood_tolerance {
            converged = true;
        }
        rho = candidate;
        ll = cand_ll;
        scale = cand_scale;
        iterations += 1;
        trace.push(ll);
        observer(iterations, &rho, ll);
    }

    let rho_hat = CoherenceMatrix::new(rho)?.normalized()?;
    Ok(ReconstructionResult {
        rho_hat,
        intensity_scale: scale,
        log_likelihood: ll,
        iterations_used: iterations,
        converged,
        refined_spots: Vec::new(),
        likelihood_trace: trace,
    })
}

/// Traceless Hermitian directions spanning the tangent space of unit-trace matrices.
fn traceless_basis(d: usize) -> Vec<CMatrix> {
    let one = Complex64::new(1.0, 0.0);
    let mut basis = Vec::with_capacity(d * d - 1);
    for i in 0..d.saturating_sub(1) {
        let mut b = CMatrix::zeros(d, d);
        b[(i, i)] = one;
        b[(d - 1, d - 1)] = -one;
        basis.push(b);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut re = CMatrix::zeros(d, d);
            re[(i, j)] = one;
            re[(j, i)] = one;
            basis.push(re);
            let mut im = CMatrix::zeros(d, d);
            im[(i, j)] = Complex64::new(0.0, 1.0);
            im[(j, i)] = Complex64::new(0.0, -1.0);
            basis.push(im);
        }
    }
    basis
}

/// Newton ascent on the profiled likelihood over unit-trace Hermitian matrices,
/// backtracking to stay positive semidefinite.
///
/// The multiplicative iteration converges only sublinearly when the maximum sits
/// on the rank-deficient boundary (pure states); a few Newton steps from its end
/// point close the remaining gap. Returns the accepted iterates in order.
fn newton_polish(
    start: &CMatrix,
    start_ll: f64,
    counts: &[f64],
    povm: &PovmSet,
    config: &MlConfig,
) -> Vec<(CMatrix, f64, f64)> {
    const MAX_NEWTON_STEPS: usize = 50;
    let d = povm.dimension();
    if d < 2 {
        return Vec::new();
    }
    let basis = traceless_basis(d);
    let m = basis.len();
    let total_counts: f64 = counts.iter().sum();
    let mut rho = start.clone();
    let mut ll = start_ll;
    let mut accepted = Vec::new();
    for _ in 0..MAX_NEWTON_STEPS {
        let predicted = predictions(&rho, povm);
        let total_predicted: f64 = predicted.iter().sum();
        let mut grad = DVector::<f64>::zeros(m);
        let mut hess = DMatrix::<f64>::zeros(m, m);
        let mut beta = DVector::<f64>::zeros(m);
        let mut b = DVector::<f64>::zeros(m);
        for (p, (&n, &pred)) in counts.iter().zip(&predicted).enumerate() {
            for (k, dir) in basis.iter().enumerate() {
                b[k] = povm.expectation(dir, p);
            }
            beta += &b;
            if n > 0.0 {
                if !(pred > 0.0) {
                    return accepted;
                }
                grad.axpy(n / pred, &b, 1.0);
                hess.ger(-n / (pred * pred), &b, &b, 1.0);
            }
        }
        grad.axpy(-total_counts / total_predicted, &beta, 1.0);
        let tp2 = total_predicted * total_predicted;
        hess.ger(total_counts / tp2, &beta, &beta, 1.0);
        let Some(chol) = (-&hess).cholesky() else {
            return accepted;
        };
        let theta = chol.solve(&grad);
        let direction = basis
            .iter()
            .zip(theta.iter())
            .fold(CMatrix::zeros(d, d), |acc, (dir, t)| acc + dir.map(|z| z * *t));
        let mut step = 1.0;
        let mut found = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &rho + direction.map(|z| z * step);
            if linalg::min_eigenvalue(&trial) >= -PSD_TOLERANCE {
                let (clipped, _) = linalg::nearest_psd(&trial);
                let candidate = normalize(&clipped);
                let (cand_ll, cand_scale) = profiled_log_likelihood(counts, &predictions(&candidate, povm));
                if cand_ll > ll {
                    found = Some((candidate, cand_ll, cand_scale));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((candidate, cand_ll, cand_scale)) = found else {
            return accepted;
        };
        let gain = (cand_ll - ll) / ll.abs().max(1.0);
        rho = candidate.clone();
        ll = cand_ll;
        accepted.push((candidate, cand_ll, cand_scale));
        if gain < config.likelihood_tolerance * 1e-4 {
            break;
        }
    }
    accepted
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2` of unit-trace states.
pub fn fidelity(rho: &CoherenceMatrix, sigma: &CoherenceMatrix) -> Result<f64> {
    if rho.dimension() != sigma.dimension() {
        return Err(Error::Shape(format!(
            "fidelity of {}x{} and {}x{} matrices",
            rho.dimension(),
            rho.dimension(),
            sigma.dimension(),
            sigma.dimension()
        )));
    }
    let a = normalize(rho.entries());
    let b = normalize(sigma.entries());
    let root = linalg::sqrt_psd(&a);
    let inner = &root * b * &root;
    let (values, _) = linalg::eigh(&inner);
    let t: f64 = values.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((t * t).clamp(0.0, 1.0))
}
