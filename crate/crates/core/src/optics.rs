//! One-dimensional forward model of the DMD Hartmann sensor.
//!
//! Light leaving each open aperture is described by a single rect-windowed
//! plane-wave mode. Each mode is carried to the detector by the single-order
//! Fresnel expression
//!
//! ```text
//! psi'(xi) = exp(i k x0 sin a) exp(i k (xi - x0)^2 / 2z) sinc[a_w (xi - x0 + z sin a) / (lambda z)]
//! ```
//!
//! with `sinc x = sin(x)/x` (no factor of pi inside the argument). A partially
//! coherent field is a Hermitian PSD matrix in this mode basis, every detector
//! pixel is a rank-1 POVM element, and intensities follow the Born rule
//! `I(xi) = Tr(rho Pi_xi)`.
//!
//! Pixels are point-sampled at their centers (midpoint rule). All lengths are meters.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_cmatrix, CMatrix};

/// Relative anti-Hermitian Frobenius norm above which a matrix is rejected.
pub const HERMITIAN_TOLERANCE: f64 = 1e-8;
/// Smallest admissible eigenvalue, relative to the trace.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub wavelength: f64,
    /// DMD-to-detector distance `z`.
    pub detector_distance: f64,
    /// Micromirror width `D`.
    pub mirror_width: f64,
    /// Micromirror spacing `Delta`.
    pub mirror_pitch: f64,
    /// Angle of the collimated beam to the DMD normal, radians.
    pub incidence_angle: f64,
    /// Nominal reflected direction of the used diffraction order, radians.
    pub deflection_angle: f64,
    pub detector_pixel_pitch: f64,
    pub detector_pixel_count: usize,
    /// Position of the center of pixel 0 on the detector axis.
    pub detector_origin: f64,
}

impl Default for SensorGeometry {
    /// Bench geometry: 633 nm, detector 180 mm from the chip, 7.6 um mirror pitch,
    /// 24 degree incidence with the reflected order along the chip normal, and a
    /// 1024 x 16 um detector line centered on the optical axis.
    fn default() -> Self {
        let pixel_pitch = 16e-6;
        let count = 1024;
        SensorGeometry {
            wavelength: 633e-9,
            detector_distance: 0.18,
            mirror_width: 7.4e-6,
            mirror_pitch: 7.6e-6,
            incidence_angle: 24f64.to_radians(),
            deflection_angle: 0.0,
            detector_pixel_pitch: pixel_pitch,
            detector_pixel_count: count,
            detector_origin: -0.5 * (count - 1) as f64 * pixel_pitch,
        }
    }
}

impl SensorGeometry {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("wavelength", self.wavelength),
            ("detector_distance", self.detector_distance),
            ("mirror_width", self.mirror_width),
            ("mirror_pitch", self.mirror_pitch),
            ("detector_pixel_pitch", self.detector_pixel_pitch),
        ];
        for (name, value) in lengths {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {value}")));
            }
        }
        if self.mirror_width > self.mirror_pitch {
            return Err(Error::Domain(format!(
                "mirror width {} exceeds mirror pitch {}",
                self.mirror_width, self.mirror_pitch
            )));
        }
        if self.detector_pixel_count < 2 {
            return Err(Error::Domain("detector needs at least 2 pixels".into()));
        }
        if !self.detector_origin.is_finite() {
            return Err(Error::Domain("detector origin must be finite".into()));
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn pixel_position(&self, index: usize) -> f64 {
        self.detector_origin + index as f64 * self.detector_pixel_pitch
    }

    pub fn pixel_positions(&self) -> Vec<f64> {
        (0..self.detector_pixel_count)
            .map(|i| self.pixel_position(i))
            .collect()
    }

    /// Fractional pixel coordinate of a detector position.
    pub fn pixel_coordinate(&self, position: f64) -> f64 {
        (position - self.detector_origin) / self.detector_pixel_pitch
    }

    pub fn detector_span(&self) -> (f64, f64) {
        (
            self.pixel_position(0),
            self.pixel_position(self.detector_pixel_count - 1),
        )
    }

    /// Unit of the sinc argument on the detector, `lambda z / a`.
    pub fn spot_scale(&self, aperture_width: f64) -> f64 {
        self.wavelength * self.detector_distance / aperture_width
    }
}

/// A Hartmann aperture on the DMD plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aperture {
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureMode {
    pub center: f64,
    pub width: f64,
    pub wavenumber: f64,
    /// `sin(alpha)`, the local tilt carried by this aperture.
    pub deflection_sin: f64,
}

impl ApertureMode {
    pub fn new(aperture: Aperture, wavenumber: f64, deflection_sin: f64) -> Result<Self> {
        if !(aperture.width > 0.0) {
            return Err(Error::Domain(format!("aperture width {} must be positive", aperture.width)));
        }
        if !(wavenumber > 0.0) {
            return Err(Error::Domain(format!("wavenumber {wavenumber} must be positive")));
        }
        if !(deflection_sin.abs() < 1.0) {
            return Err(Error::Domain(format!(
                "non-physical deflection sin(alpha) = {deflection_sin}"
            )));
        }
        Ok(ApertureMode {
            center: aperture.center,
            width: aperture.width,
            wavenumber,
            deflection_sin,
        })
    }

    pub fn aperture(&self) -> Aperture {
        Aperture {
            center: self.center,
            width: self.width,
        }
    }

    /// Detector position of the envelope maximum, `x0 - z sin(alpha)`.
    pub fn peak_position(&self, geometry: &SensorGeometry) -> f64 {
        self.center - geometry.detector_distance * self.deflection_sin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBasis {
    modes: Vec<ApertureMode>,
}

impl ModeBasis {
    pub fn new(modes: Vec<ApertureMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidBasis("basis needs at least one mode".into()));
        }
        for (i, a) in modes.iter().enumerate() {
            for b in &modes[i + 1..] {
                if a.center == b.center {
                    return Err(Error::InvalidBasis(format!(
                        "duplicate mode center {}",
                        a.center
                    )));
                }
            }
        }
        Ok(ModeBasis { modes })
    }

    pub fn modes(&self) -> &[ApertureMode] {
        &self.modes
    }

    pub fn dimension(&self) -> usize {
        self.modes.len()
    }

    /// Identifier derived from the mode centers (in micrometers).
    pub fn tag(&self) -> String {
        let centers: Vec<String> = self
            .modes
            .iter()
            .map(|m| format!("{:.3}", m.center * 1e6))
            .collect();
        format!("modes[{}]", centers.join(","))
    }
}

/// Builds the computational basis: one mode per aperture, all sharing `k = 2 pi / lambda`
/// and each carrying its own deflection `sin(alpha)`.
pub fn build_mode_basis(
    apertures: &[Aperture],
    geometry: &SensorGeometry,
    deflection_sines: &[f64],
) -> Result<ModeBasis> {
    if apertures.is_empty() {
        return Err(Error::InvalidBasis("no apertures".into()));
    }
    if apertures.len() != deflection_sines.len() {
        return Err(Error::Shape(format!(
            "{} apertures but {} deflections",
            apertures.len(),
            deflection_sines.len()
        )));
    }
    let k = geometry.wavenumber();
    let modes = apertures
        .iter()
        .zip(deflection_sines)
        .map(|(&ap, &s)| ApertureMode::new(ap, k, s))
        .collect::<Result<Vec<_>>>()?;
    ModeBasis::new(modes)
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Raw (unnormalized) detector amplitude of one mode at the given positions.
pub fn propagate_mode(
    mode: &ApertureMode,
    geometry: &SensorGeometry,
    pixels: &[f64],
) -> Result<Vec<Complex64>> {
    let z = geometry.detector_distance;
    if !(z > 0.0) {
        return Err(Error::Domain(format!("propagation distance {z} must be positive")));
    }
    let k = mode.wavenumber;
    let x0 = mode.center;
    let s = mode.deflection_sin;
    let tilt_phase = Complex64::from_polar(1.0, k * x0 * s);
    let scale = mode.width / (geometry.wavelength * z);
    Ok(pixels
        .iter()
        .map(|&xi| {
            let d = xi - x0;
            let curvature = Complex64::from_polar(1.0, k * d * d / (2.0 * z));
            tilt_phase * curvature * sinc(scale * (d + z * s))
        })
        .collect())
}

/// Hermitian PSD matrix in a mode basis (mutual intensity or density matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceMatrix {
    #[serde(with = "serde_cmatrix")]
    entries: CMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    basis_tag: Option<String>,
    #[serde(default)]
    normalized: bool,
}

impl CoherenceMatrix {
    /// Validates and symmetrizes `(J + J^dagger)/2`.
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::Shape(format!(
                "coherence matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("non-finite matrix entry".into()));
        }
        let ratio = linalg::anti_hermitian_ratio(&entries);
        if ratio > HERMITIAN_TOLERANCE {
            return Err(Error::NotHermitian(format!(
                "anti-Hermitian part is {ratio:.3e} of the norm"
            )));
        }
        let entries = linalg::hermitian_part(&entries);
        let trace = linalg::trace_re(&entries);
        if !(trace > 0.0) {
            return Err(Error::NotPositive(format!("trace {trace} must be positive")));
        }
        let min_eig = linalg::min_eigenvalue(&entries);
        if min_eig < -PSD_TOLERANCE * trace {
            return Err(Error::NotPositive(format!(
                "eigenvalue {min_eig:.3e} below -{PSD_TOLERANCE:e} x trace"
            )));
        }
        Ok(CoherenceMatrix {
            entries,
            basis_tag: None,
            normalized: false,
        })
    }

    pub fn from_real(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = CMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j], 0.0));
        Self::new(m)
    }

    pub fn maximally_mixed(dimension: usize) -> Self {
        let d = dimension.max(1);
        let entries = CMatrix::identity(d, d).map(|z| z / d as f64);
        CoherenceMatrix {
            entries,
            basis_tag: None,
            normalized: true,
        }
    }

    /// Pure state `|v><v|` normalized to unit trace.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(amplitudes);
        Self::new(&v * v.adjoint())?.normalized()
    }

    pub fn with_basis_tag(mut self, tag: impl Into<String>) -> Self {
        self.basis_tag = Some(tag.into());
        self
    }

    pub fn basis_tag(&self) -> Option<&str> {
        self.basis_tag.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn dimension(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        linalg::trace_re(&self.entries)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    /// Copy scaled to unit trace.
    pub fn normalized(&self) -> Result<Self> {
        let t = self.trace();
        Ok(CoherenceMatrix {
            entries: self.entries.map(|z| z / t),
            basis_tag: self.basis_tag.clone(),
            normalized: true,
        })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigh(&self.entries).0.iter().copied().collect()
    }

    /// Principal sub-block on the given indices.
    pub fn submatrix(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dimension();
        if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
            return Err(Error::Shape(format!("index {bad} outside dimension {d}")));
        }
        let n = indices.len();
        Self::new(CMatrix::from_fn(n, n, |i, j| {
            self.entries[(indices[i], indices[j])]
        }))
    }

    /// `D rho D^dagger` with `D = diag(exp(i phases))`.
    pub fn rephased(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.dimension() {
            return Err(Error::Shape("phase count does not match dimension".into()));
        }
        let entries = CMatrix::from_fn(self.dimension(), self.dimension(), |i, j| {
            self.entries[(i, j)] * Complex64::from_polar(1.0, phases[i] - phases[j])
        });
        Ok(CoherenceMatrix {
            entries,
            basis_tag: self.basis_tag.clone(),
            normalized: self.normalized,
        })
    }
}

/// Rank-1 measurement operators, one per detector pixel, stored as the
/// `d x n_pixels` amplitude table `A`, with `Pi_xi = A[:, xi] A[:, xi]^dagger`.
///
/// Each mode row is scaled so the mode deposits unit total intensity on the
/// detector; absolute brightness lives in the exposure model.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmSet {
    amplitudes: CMatrix,
    pixel_positions: Vec<f64>,
}

impl PovmSet {
    pub fn from_amplitudes(amplitudes: CMatrix, pixel_positions: Vec<f64>) -> Result<Self> {
        if amplitudes.ncols() != pixel_positions.len() {
            return Err(Error::Shape(format!(
                "{} amplitude columns for {} pixels",
                amplitudes.ncols(),
                pixel_positions.len()
            )));
        }
        Ok(PovmSet {
            amplitudes,
            pixel_positions,
        })
    }

    pub fn dimension(&self) -> usize {
        self.amplitudes.nrows()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_positions(&self) -> &[f64] {
        &self.pixel_positions
    }

    pub fn amplitude_table(&self) -> &CMatrix {
        &self.amplitudes
    }

    pub fn amplitude(&self, mode: usize, pixel: usize) -> Complex64 {
        self.amplitudes[(mode, pixel)]
    }

    /// The matrix `(Pi_xi)_ij = psi'_i(xi) conj(psi'_j(xi))`.
    pub fn element(&self, pixel: usize) -> CMatrix {
        let col = self.amplitudes.column(pixel);
        col * col.adjoint()
    }

    pub fn elements(&self) -> Vec<CMatrix> {
        (0..self.len()).map(|p| self.element(p)).collect()
    }

    /// `G = sum_xi Pi_xi = A A^dagger`.
    pub fn sum_operator(&self) -> CMatrix {
        linalg::hermitian_part(&(&self.amplitudes * self.amplitudes.adjoint()))
    }

    /// Same measurement with basis mode `j` multiplied by `exp(i phases[j])`.
    pub fn with_mode_phases(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.dimension() {
            return Err(Error::Shape("phase count does not match dimension".into()));
        }
        let amplitudes = CMatrix::from_fn(self.dimension(), self.len(), |j, p| {
            self.amplitudes[(j, p)] * Complex64::from_polar(1.0, phases[j])
        });
        Ok(PovmSet {
            amplitudes,
            pixel_positions: self.pixel_positions.clone(),
        })
    }

    /// `Tr(rho Pi_xi) = a^dagger rho a` for one pixel, without clamping.
    pub(crate) fn expectation(&self, rho: &CMatrix, pixel: usize) -> f64 {
        let d = self.dimension();
        let mut acc = 0.0;
        for i in 0..d {
            let ai = self.amplitudes[(i, pixel)].conj();
            let mut row = Complex64::new(0.0, 0.0);
            for j in 0..d {
                row += rho[(i, j)] * self.amplitudes[(j, pixel)];
            }
            acc += (ai * row).re;
        }
        acc
    }
}

pub fn build_povm(basis: &ModeBasis, geometry: &SensorGeometry) -> Result<PovmSet> {
    geometry.validate()?;
    let pixels = geometry.pixel_positions();
    let d = basis.dimension();
    let mut amplitudes = CMatrix::zeros(d, pixels.len());
    for (j, mode) in basis.modes().iter().enumerate() {
        let column = propagate_mode(mode, geometry, &pixels)?;
        let energy: f64 = column.iter().map(|z| z.norm_sqr()).sum();
        if !(energy > 0.0) {
            return Err(Error::Domain(format!(
                "mode {j} deposits no intensity on the detector"
            )));
        }
        let norm = energy.sqrt();
        for (p, z) in column.into_iter().enumerate() {
            amplitudes[(j, p)] = z / norm;
        }
    }
    PovmSet::from_amplitudes(amplitudes, pixels)
}

/// Born-rule intensity `Tr(rho Pi_xi)` per pixel, tiny negative round-off clamped to zero.
pub fn born_intensity(rho: &CoherenceMatrix, povm: &PovmSet) -> Result<Vec<f64>> {
    if rho.dimension() != povm.dimension() {
        return Err(Error::Shape(format!(
            "rho is {0}x{0} but POVM has dimension {1}",
            rho.dimension(),
            povm.dimension()
        )));
    }
    Ok((0..povm.len())
        .map(|p| povm.expectation(rho.entries(), p).max(0.0))
        .collect())
}

/// Complex degree of coherence `mu_ij = J_ij / sqrt(J_ii J_jj)`.
pub fn degree_of_coherence(j: &CoherenceMatrix) -> Result<CMatrix> {
    let d = j.dimension();
    let diag: Vec<f64> = (0..d).map(|i| j.get(i, i).re).collect();
    if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateIntensity(format!(
            "diagonal entry {i} is {}",
            diag[i]
        )));
    }
    Ok(CMatrix::from_fn(d, d, |a, b| {
        if a == b {
            Complex64::new(1.0, 0.0)
        } else {
            j.get(a, b) / (diag[a] * diag[b]).sqrt()
        }
    }))
}
