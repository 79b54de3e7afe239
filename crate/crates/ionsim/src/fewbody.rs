//! Full quantum ground state of the radial motion of a three-ion chain.
//!
//! The radial (transverse) potential of a linear chain, expanded to fourth
//! order by [`crate::modes::taylor_expand`], defines a few-body Hamiltonian
//! for the radial displacements.  In normal-mode coordinates q (lengths in
//! the single-ion width x_q = √(ħ/mω_z), energies in ħω_z) it reads
//!
//! ```text
//! H = Σ_k [ −½ ∂²/∂q_k² + ½ ω̃_k² q_k² ] + η² W₄(B q)
//! ```
//!
//! where ω̃_k² are the eigenvalues of the quadratic form, B is the orthonormal
//! mode matrix (columns are modes, rows are sites), η² = x_q²/ℓ² and W₄ is the
//! dimensionless quartic form of the expansion evaluated in site coordinates
//! ξ = B q.  Below the structural transition the softest mode develops a
//! double well and the ground state becomes a superposition of the two
//! zigzag configurations; this module resolves that state exactly on a grid,
//! computes single-ion entanglement entropies and position statistics, and
//! compares against a decoupled single-mode model and a Gaussian variational
//! bound.
//!
//! The solver represents states on a product grid in mode coordinates
//! (kinetic term applied spectrally via FFT) and restricts to an inversion
//! parity sector; the global ground state is inversion even, and the
//! tunnelling gap is the energy difference to the odd-sector ground state.
//! Entanglement entropies are evaluated in *site* coordinates: the amplitude
//! array is resampled onto a per-ion quadrature (two patches per ion when
//! the wells separate) through FFT band-limited upsampling and cubic
//! B-spline interpolation, and the Schmidt spectrum is read off a weighted
//! singular-value decomposition of the reshaped array.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::crystal::{find_equilibrium, Seed};
use crate::doublewell::{eigenstates_1d, DoubleWellError, GridSpec, Potential1D};
use crate::gaussian::entropy_from_nu;
use crate::modes::{landau_reduce, normal_modes, taylor_expand, ModesError, TaylorCoefficients};
use crate::units::{PhysicalContext, HBAR};

/// Ground-state second moment ⟨ξ²⟩ of the pure quartic oscillator
/// −½∂² + b̂ξ⁴ in units of the quartic length (2b̂)^(−1/6).
const QUARTIC_SECOND_MOMENT: f64 = 0.362_022_648_8;

/// Residual target ‖Hψ − Eψ‖ for converged eigenstates, in ħω_z.
pub const RESIDUAL_TARGET: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FewBodyError {
    #[error("the full grid solver handles exactly 3 ions, got {n}")]
    NotThreeIons { n: usize },
    #[error("the decoupled mode model handles 2 to 7 ions, got {n}")]
    UnsupportedSize { n: usize },
    #[error("grid axis {axis} too coarse: step {step:.3e} x_q, need at most {required:.3e} x_q to resolve the local width")]
    GridTooCoarse { axis: usize, step: f64, required: f64 },
    #[error("invalid parameter: {what} = {value}")]
    InvalidParameter { what: &'static str, value: f64 },
    #[error("solver stalled above the residual target {target:.1e}; residual history {history:?}")]
    NotConverged { target: f64, history: Vec<f64> },
    #[error("state is not normalized: ‖ψ‖ = {norm}")]
    NotNormalized { norm: f64 },
    #[error("state amplitude at the grid edge is {ratio:.2e} of the peak; the box truncates the state")]
    TruncatedState { ratio: f64 },
    #[error("site index {site} out of range for {n} ions")]
    SiteOutOfRange { site: usize, n: usize },
    #[error("state has irreducible complex structure (imaginary fraction {imag:.2e}); site analysis handles real ground states")]
    ComplexState { imag: f64 },
    #[error("Hamiltonian failed the Hermiticity spot check: relative asymmetry {0:.2e}")]
    NotHermitian(f64),
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error(transparent)]
    Crystal(#[from] crate::crystal::CrystalError),
    #[error(transparent)]
    DoubleWell(#[from] DoubleWellError),
    #[error(transparent)]
    Gaussian(#[from] crate::gaussian::GaussianError),
}

// ---------------------------------------------------------------------------
// Grids and wavefunctions
// ---------------------------------------------------------------------------

/// One uniform grid axis in mode coordinates (units of x_q).  Points sit at
/// the midpoints `x_i = (i − (n−1)/2)·step`, symmetric about zero, so the
/// inversion `x → −x` maps the point set onto itself exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    /// Number of points (even).
    pub n: usize,
    /// Spacing in x_q.
    pub step: f64,
}

impl GridAxis {
    fn from_extent(extent: f64, n: usize) -> Self {
        GridAxis { n, step: 2.0 * extent / n as f64 }
    }

    /// First grid point, −(n−1)/2 · step.
    pub fn min(&self) -> f64 {
        -(self.n as f64 - 1.0) / 2.0 * self.step
    }

    /// Last grid point (= −min).
    pub fn max(&self) -> f64 {
        -self.min()
    }

    /// Grid point `i`; `point(i) == −point(n−1−i)` exactly.
    pub fn point(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.step
    }

    /// All points, ascending.
    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }
}

/// How the solver grids are sized.
#[derive(Debug, Clone, Copy)]
pub struct GridPolicy {
    /// Base point count per axis; the soft axis doubles from here until its
    /// spacing resolves the predicted local width.
    pub n_base: usize,
    /// Cap for the soft-axis doubling.
    pub n_cap: usize,
    /// Number of site-coordinate quadrature points per ion for the
    /// entanglement analysis.
    pub n_site: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy { n_base: 64, n_cap: 512, n_site: 96 }
    }
}

impl GridPolicy {
    fn validate(&self) -> Result<(), FewBodyError> {
        if self.n_base < 8 || self.n_base % 2 != 0 {
            return Err(FewBodyError::InvalidParameter {
                what: "n_base (even, ≥ 8)",
                value: self.n_base as f64,
            });
        }
        if self.n_cap < self.n_base {
            return Err(FewBodyError::InvalidParameter { what: "n_cap", value: self.n_cap as f64 });
        }
        if self.n_site < 16 || self.n_site % 2 != 0 {
            return Err(FewBodyError::InvalidParameter {
                what: "n_site (even, ≥ 16)",
                value: self.n_site as f64,
            });
        }
        Ok(())
    }
}

/// A wavefunction of up to three radial coordinates sampled on a uniform
/// product grid (mode coordinates, units of x_q).  Amplitudes are stored
/// row-major: the last axis is contiguous.
#[derive(Debug, Clone)]
pub struct RadialWavefunction {
    axes: Vec<GridAxis>,
    /// Complex amplitudes; ground states produced by this module are real.
    pub amplitudes: Vec<Complex64>,
}

impl RadialWavefunction {
    pub fn new(axes: Vec<GridAxis>, amplitudes: Vec<Complex64>) -> Result<Self, FewBodyError> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(FewBodyError::InvalidParameter {
                what: "dimension (1..=3)",
                value: axes.len() as f64,
            });
        }
        let n: usize = axes.iter().map(|a| a.n).product();
        if n != amplitudes.len() {
            return Err(FewBodyError::InvalidParameter {
                what: "amplitude count",
                value: amplitudes.len() as f64,
            });
        }
        Ok(RadialWavefunction { axes, amplitudes })
    }

    /// Number of coordinates (1 to 3).
    pub fn d(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    /// Product of the axis spacings.
    pub fn volume_element(&self) -> f64 {
        self.axes.iter().map(|a| a.step).product()
    }

    /// √(Σ |ψ|² h_vol) — 1 for a normalized state.
    pub fn norm(&self) -> f64 {
        let s: f64 = self.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        (s * self.volume_element()).sqrt()
    }

    /// Rescale to unit norm.
    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            for a in self.amplitudes.iter_mut() {
                *a *= inv;
            }
        }
    }

    /// Errors unless the norm is 1 within `tol`.
    pub fn assert_normalized(&self, tol: f64) -> Result<(), FewBodyError> {
        let n = self.norm();
        if (n - 1.0).abs() > tol {
            return Err(FewBodyError::NotNormalized { norm: n });
        }
        Ok(())
    }

    /// Largest |amplitude| on the outermost grid planes relative to the
    /// global peak — a truncation diagnostic; well-resolved bound states
    /// leave this far below 1e-5.
    pub fn boundary_ratio(&self) -> f64 {
        let dims: Vec<usize> = self.axes.iter().map(|a| a.n).collect();
        let mut peak = 0.0f64;
        let mut edge = 0.0f64;
        let mut index = vec![0usize; dims.len()];
        for (flat, a) in self.amplitudes.iter().enumerate() {
            let mut rem = flat;
            for (k, &nk) in dims.iter().enumerate().rev() {
                index[k] = rem % nk;
                rem /= nk;
            }
            let mag = a.norm();
            peak = peak.max(mag);
            if index.iter().zip(dims.iter()).any(|(&i, &nk)| i == 0 || i == nk - 1) {
                edge = edge.max(mag);
            }
        }
        if peak > 0.0 {
            edge / peak
        } else {
            0.0
        }
    }

    /// Strip a global phase and return real amplitudes; errors if the state
    /// has genuinely complex structure.
    fn real_amplitudes(&self) -> Result<Vec<f64>, FewBodyError> {
        let mut peak = Complex64::new(0.0, 0.0);
        for a in &self.amplitudes {
            if a.norm_sqr() > peak.norm_sqr() {
                peak = *a;
            }
        }
        let mag = peak.norm();
        if mag == 0.0 {
            return Err(FewBodyError::NotNormalized { norm: 0.0 });
        }
        let phase = peak / mag;
        let mut out = Vec::with_capacity(self.amplitudes.len());
        let mut worst = 0.0f64;
        for a in &self.amplitudes {
            let rotated = a * phase.conj();
            worst = worst.max(rotated.im.abs());
            out.push(rotated.re);
        }
        if worst > 1e-8 * mag {
            return Err(FewBodyError::ComplexState { imag: worst / mag });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Mode frame: eigendata of the quadratic form plus the projected quartic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ModeFrame {
    /// Mode frequencies squared (ω̃_k/ω_z)², ascending (softest first).
    omega2: DVector<f64>,
    /// Orthonormal mode matrix; entry (site, mode).
    modes: DMatrix<f64>,
    /// Soft-mode quartic η² B̃ in x_q units.
    c_soft: f64,
    eta2: f64,
}

impl ModeFrame {
    fn new(t: &TaylorCoefficients, eta2: f64) -> Result<Self, FewBodyError> {
        let nm = normal_modes(t);
        let (_, soft) = nm.soft_mode();
        let b_tilde = t.quartic_energy(&soft);
        if b_tilde <= 0.0 {
            return Err(FewBodyError::InvalidParameter { what: "projected quartic", value: b_tilde });
        }
        Ok(ModeFrame {
            omega2: nm.omega_squared,
            modes: nm.vectors,
            c_soft: eta2 * b_tilde,
            eta2,
        })
    }

    fn n(&self) -> usize {
        self.omega2.len()
    }

    /// Predicted width of the soft coordinate and the well displacement
    /// (both in x_q): harmonic or quartic-limited width above the
    /// transition, local well width below it.
    fn soft_width(&self) -> (f64, f64) {
        let w0 = self.omega2[0];
        let sq = QUARTIC_SECOND_MOMENT.sqrt() * (2.0 * self.c_soft).powf(-1.0 / 6.0);
        if w0 >= 0.0 {
            let sh = 1.0 / (2.0 * w0.max(1e-12).sqrt()).sqrt();
            (sh.min(1.6 * sq), 0.0)
        } else {
            let qmin = (-w0 / (4.0 * self.c_soft)).sqrt();
            let omega_loc = (2.0 * -w0).sqrt();
            (1.0 / (2.0 * omega_loc.sqrt()).sqrt(), qmin)
        }
    }

    /// Ground width of stiff mode `k` (k ≥ 1), 1/√(2 ω̃_k).
    fn stiff_width(&self, k: usize) -> f64 {
        1.0 / (2.0 * self.omega2[k].sqrt()).sqrt()
    }

    /// Per-site local width (within one well) and well displacement, x_q.
    fn site_local_widths(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.n();
        let (sig0, qmin) = self.soft_width();
        let mut var = vec![sig0 * sig0];
        for k in 1..n {
            var.push(0.5 / self.omega2[k].sqrt());
        }
        let mut sig_loc = Vec::with_capacity(n);
        let mut x_well = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = 0.0;
            for k in 0..n {
                v += self.modes[(i, k)] * self.modes[(i, k)] * var[k];
            }
            sig_loc.push(v.sqrt());
            x_well.push(self.modes[(i, 0)].abs() * qmin);
        }
        (sig_loc, x_well, qmin)
    }

    /// Site-coordinate quadrature axes for the entanglement analysis: one
    /// patch in the symmetric phase, two patches around ±x_well once the
    /// wells separate by more than three local widths.  Every axis has a
    /// uniform spacing, returned with it.
    fn site_quadratures(&self, n_site: usize) -> Vec<(Vec<f64>, f64)> {
        let n = self.n();
        let (sig_loc, x_well, qmin) = self.site_local_widths();
        let (sig0, _) = self.soft_width();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if qmin > 0.0 && x_well[i] > 3.0 * sig_loc[i] {
                let w = 6.0 * sig_loc[i];
                if x_well[i] - w < 0.5 * sig_loc[i] {
                    // Wells overlap the origin region: one wide patch.
                    out.push(linspace(-(x_well[i] + w), x_well[i] + w, n_site));
                } else {
                    let half = n_site / 2;
                    let (left, h) = linspace(-x_well[i] - w, -x_well[i] + w, half);
                    let (right, _) = linspace(x_well[i] - w, x_well[i] + w, half);
                    let mut axis = left;
                    axis.extend(right);
                    out.push((axis, h));
                }
            } else {
                // Symmetric phase: span set by the total width of the site.
                let mut v = vec![(sig0 * sig0).min(20.0)];
                for k in 1..n {
                    v.push(0.5 / self.omega2[k].sqrt());
                }
                let mut tot = 0.0;
                for k in 0..n {
                    tot += self.modes[(i, k)] * self.modes[(i, k)] * v[k];
                }
                let st = tot.sqrt();
                out.push(linspace(-6.5 * st, 6.5 * st, n_site));
            }
        }
        out
    }
}

/// Evenly spaced points including both endpoints, with the spacing.
fn linspace(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (n as f64 - 1.0);
    ((0..n).map(|i| lo + i as f64 * h).collect(), h)
}

// ---------------------------------------------------------------------------
// 3D FFT helper
// ---------------------------------------------------------------------------

struct Fft3 {
    shape: [usize; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
    line: RefCell<Vec<Complex64>>,
    scratch: RefCell<Vec<Complex64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("shape", &self.shape).finish()
    }
}

impl Fft3 {
    fn new(shape: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = [
            planner.plan_fft_forward(shape[0]),
            planner.plan_fft_forward(shape[1]),
            planner.plan_fft_forward(shape[2]),
        ];
        let inv = [
            planner.plan_fft_inverse(shape[0]),
            planner.plan_fft_inverse(shape[1]),
            planner.plan_fft_inverse(shape[2]),
        ];
        let max_n = shape.iter().copied().max().unwrap();
        let max_scratch = fwd
            .iter()
            .chain(inv.iter())
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap();
        Fft3 {
            shape,
            fwd,
            inv,
            line: RefCell::new(vec![Complex64::new(0.0, 0.0); max_n]),
            scratch: RefCell::new(vec![Complex64::new(0.0, 0.0); max_scratch]),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        for axis in 0..3 {
            self.transform_axis(data, axis, inverse);
        }
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let [n0, n1, n2] = self.shape;
        let plan = if inverse { &self.inv[axis] } else { &self.fwd[axis] };
        let mut scratch = self.scratch.borrow_mut();
        match axis {
            2 => {
                for chunk in data.chunks_exact_mut(n2) {
                    plan.process_with_scratch(chunk, &mut scratch);
                }
            }
            1 => {
                let mut line = self.line.borrow_mut();
                for i0 in 0..n0 {
                    for i2 in 0..n2 {
                        let base = i0 * n1 * n2 + i2;
                        for j in 0..n1 {
                            line[j] = data[base + j * n2];
                        }
                        plan.process_with_scratch(&mut line[..n1], &mut scratch);
                        for j in 0..n1 {
                            data[base + j * n2] = line[j];
                        }
                    }
                }
            }
            _ => {
                let mut line = self.line.borrow_mut();
                for i1 in 0..n1 {
                    for i2 in 0..n2 {
                        let base = i1 * n2 + i2;
                        for j in 0..n0 {
                            line[j] = data[base + j * n1 * n2];
                        }
                        plan.process_with_scratch(&mut line[..n0], &mut scratch);
                        for j in 0..n0 {
                            data[base + j * n1 * n2] = line[j];
                        }
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.shape[axis] as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Hamiltonian
// ---------------------------------------------------------------------------

/// Inversion parity sector: the grid inversion q → −q flips all three mode
/// coordinates (equivalently all site coordinates) at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// The radial Hamiltonian of a three-ion chain on a product grid in mode
/// coordinates (x_q units, energies in ħω_z).  Kinetic term applied
/// spectrally; potential = harmonic mode terms plus the quartic site form.
#[derive(Debug)]
pub struct Hamiltonian3 {
    frame: ModeFrame,
    axes: [GridAxis; 3],
    shape: [usize; 3],
    /// Potential energy on the grid, flattened row-major.
    v: Vec<f64>,
    /// Per-axis kinetic multipliers ½k².
    k2half: [Vec<f64>; 3],
    fft: Fft3,
    work: RefCell<Vec<Complex64>>,
    n_site: usize,
}

/// Build the grid Hamiltonian for a three-ion chain from its fourth-order
/// radial expansion.
///
/// Grid policy: stiff axes span ±8 ground widths with `n_base` points; the
/// soft axis spans 8 predicted widths around the origin (plus the well
/// displacement below the transition) and doubles its point count from
/// `n_base` until the spacing resolves the predicted local width, up to
/// `n_cap`.  Errors with [`FewBodyError::GridTooCoarse`] when any axis fails
/// that resolution test, and verifies Hermiticity on a pair of spot vectors.
pub fn build_hamiltonian_3ion(
    t: &TaylorCoefficients,
    ctx: &PhysicalContext,
    policy: &GridPolicy,
) -> Result<Hamiltonian3, FewBodyError> {
    Hamiltonian3::build(t, ctx, policy, true)
}

impl Hamiltonian3 {
    /// Same grids as [`build_hamiltonian_3ion`], with the quartic term
    /// dropped — a harmonic reference whose spectrum is Σ (n_k + ½) ω̃_k.
    pub fn harmonic_reference(
        t: &TaylorCoefficients,
        ctx: &PhysicalContext,
        policy: &GridPolicy,
    ) -> Result<Self, FewBodyError> {
        Hamiltonian3::build(t, ctx, policy, false)
    }

    fn build(
        t: &TaylorCoefficients,
        ctx: &PhysicalContext,
        policy: &GridPolicy,
        include_quartic: bool,
    ) -> Result<Self, FewBodyError> {
        policy.validate()?;
        let n_ions = t.n_ions();
        if n_ions != 3 {
            return Err(FewBodyError::NotThreeIons { n: n_ions });
        }
        let frame = ModeFrame::new(t, ctx.eta_squared())?;

        // Axis extents and counts.
        let (sig0, qmin) = frame.soft_width();
        let sq_raw = QUARTIC_SECOND_MOMENT.sqrt() * (2.0 * frame.c_soft).powf(-1.0 / 6.0);
        let ext0 = if qmin == 0.0 { 8.0 * sig0.max(sq_raw) } else { 1.45 * qmin + 8.0 * sig0 };
        let mut n0 = policy.n_base;
        while 2.0 * ext0 / n0 as f64 > 1.1 * sig0 && n0 < policy.n_cap {
            n0 *= 2;
        }
        let axes = [
            GridAxis::from_extent(ext0, n0),
            GridAxis::from_extent(8.0 * frame.stiff_width(1), policy.n_base),
            GridAxis::from_extent(8.0 * frame.stiff_width(2), policy.n_base),
        ];
        for (axis, (grid, sigma)) in axes
            .iter()
            .zip([sig0, frame.stiff_width(1), frame.stiff_width(2)])
            .enumerate()
            .map(|(k, pair)| (k, pair))
        {
            let required = 1.1 * sigma;
            if grid.step > required * (1.0 + 1e-12) {
                return Err(FewBodyError::GridTooCoarse { axis, step: grid.step, required });
            }
        }
        let shape = [axes[0].n, axes[1].n, axes[2].n];
        let total = shape[0] * shape[1] * shape[2];

        // Potential on the grid.
        let b = [t.b[0], t.b[1], t.b[2]];
        let mut alpha = [[0.0f64; 3]; 3];
        let mut kappa = [[0.0f64; 3]; 3];
        let mut bmat = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                alpha[i][j] = t.alpha[(i, j)];
                kappa[i][j] = t.kappa[(i, j)];
                bmat[i][j] = frame.modes[(i, j)];
            }
        }
        let w2 = [frame.omega2[0], frame.omega2[1], frame.omega2[2]];
        let eta2 = frame.eta2;
        let pts: Vec<Vec<f64>> = axes.iter().map(|a| a.points()).collect();
        let mut v = vec![0.0f64; total];
        let mut idx = 0usize;
        for &q0 in &pts[0] {
            let h0 = 0.5 * w2[0] * q0 * q0;
            for &q1 in &pts[1] {
                let h01 = h0 + 0.5 * w2[1] * q1 * q1;
                for &q2 in &pts[2] {
                    let mut val = h01 + 0.5 * w2[2] * q2 * q2;
                    if include_quartic {
                        let x = [
                            bmat[0][0] * q0 + bmat[0][1] * q1 + bmat[0][2] * q2,
                            bmat[1][0] * q0 + bmat[1][1] * q1 + bmat[1][2] * q2,
                            bmat[2][0] * q0 + bmat[2][1] * q1 + bmat[2][2] * q2,
                        ];
                        let mut quart = 0.0;
                        for i in 0..3 {
                            let xi2 = x[i] * x[i];
                            quart += b[i] * xi2 * xi2;
                            for j in 0..3 {
                                if j != i {
                                    quart += alpha[i][j] * xi2 * x[j] * x[j]
                                        + kappa[i][j] * xi2 * x[i] * x[j];
                                }
                            }
                        }
                        val += eta2 * quart;
                    }
                    v[idx] = val;
                    idx += 1;
                }
            }
        }

        // Kinetic multipliers, built symmetric under j → n−j.
        let mut k2half: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (k, axis) in axes.iter().enumerate() {
            let n = axis.n;
            let dk = 2.0 * PI / (n as f64 * axis.step);
            let mut arr = vec![0.0f64; n];
            for j in 0..=n / 2 {
                let kj = j as f64 * dk;
                let val = 0.5 * kj * kj;
                arr[j] = val;
                if j != 0 && j != n - j {
                    arr[n - j] = val;
                }
            }
            k2half[k] = arr;
        }

        let ham = Hamiltonian3 {
            frame,
            axes,
            shape,
            v,
            k2half,
            fft: Fft3::new(shape),
            work: RefCell::new(vec![Complex64::new(0.0, 0.0); total]),
            n_site: policy.n_site,
        };
        ham.hermiticity_spot_check()?;
        Ok(ham)
    }

    pub fn axes(&self) -> &[GridAxis; 3] {
        &self.axes
    }

    pub fn n_points(&self) -> usize {
        self.v.len()
    }

    /// Mode frequencies squared (ω̃_k/ω_z)², ascending.
    pub fn omega_squared(&self) -> [f64; 3] {
        [self.frame.omega2[0], self.frame.omega2[1], self.frame.omega2[2]]
    }

    /// Mode matrix entry (site, mode).
    pub fn mode_matrix(&self) -> DMatrix<f64> {
        self.frame.modes.clone()
    }

    /// Soft-mode quartic coefficient η²B̃ (x_q units).
    pub fn soft_quartic(&self) -> f64 {
        self.frame.c_soft
    }

    fn volume_element(&self) -> f64 {
        self.axes.iter().map(|a| a.step).product()
    }

    /// out = H ψ for a real grid vector.
    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        let [n0, n1, n2] = self.shape;
        let mut w = self.work.borrow_mut();
        for (wi, &xi) in w.iter_mut().zip(input.iter()) {
            *wi = Complex64::new(xi, 0.0);
        }
        self.fft.transform(&mut w, false);
        let mut idx = 0usize;
        for i0 in 0..n0 {
            let k0 = self.k2half[0][i0];
            for i1 in 0..n1 {
                let k01 = k0 + self.k2half[1][i1];
                for i2 in 0..n2 {
                    w[idx] *= k01 + self.k2half[2][i2];
                    idx += 1;
                }
            }
        }
        self.fft.transform(&mut w, true);
        for i in 0..input.len() {
            out[i] = w[i].re + self.v[i] * input[i];
        }
    }

    /// Rayleigh quotient ⟨ψ|H|ψ⟩/⟨ψ|ψ⟩ for a real grid vector.
    pub fn rayleigh(&self, psi: &[f64]) -> f64 {
        let mut hpsi = vec![0.0; psi.len()];
        self.apply(psi, &mut hpsi);
        dot(psi, &hpsi) / dot(psi, psi)
    }

    /// Project onto an inversion parity sector in place.
    pub fn parity_project(&self, v: &mut [f64], parity: Parity) {
        let [n0, n1, n2] = self.shape;
        let sign = match parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        };
        for i0 in 0..n0 {
            let r0 = n0 - 1 - i0;
            for i1 in 0..n1 {
                let r1 = n1 - 1 - i1;
                for i2 in 0..n2 {
                    let r2 = n2 - 1 - i2;
                    let l = (i0 * n1 + i1) * n2 + i2;
                    let lr = (r0 * n1 + r1) * n2 + r2;
                    if l < lr {
                        let a = v[l];
                        let b = v[lr];
                        v[l] = 0.5 * (a + sign * b);
                        v[lr] = 0.5 * (b + sign * a);
                    }
                }
            }
        }
    }

    /// Largest kinetic eigenvalue on the grid, ½|k_max|².
    pub fn kinetic_max(&self) -> f64 {
        self.k2half.iter().map(|arr| arr.iter().cloned().fold(0.0, f64::max)).sum()
    }

    fn hermiticity_spot_check(&self) -> Result<(), FewBodyError> {
        let n = self.n_points();
        let mut u = vec![0.0f64; n];
        let mut w = vec![0.0f64; n];
        for i in 0..n {
            let x = i as f64;
            u[i] = (0.37 * x + 1.3).sin();
            w[i] = (0.23 * x + 2.1).cos();
        }
        let mut hu = vec![0.0f64; n];
        let mut hw = vec![0.0f64; n];
        self.apply(&u, &mut hu);
        self.apply(&w, &mut hw);
        let lhs = dot(&u, &hw);
        let rhs = dot(&hu, &w);
        let scale = norm2(&hu) * norm2(&w) + norm2(&u) * norm2(&hw);
        let asym = (lhs - rhs).abs() / (0.5 * scale);
        if asym > 1e-10 {
            return Err(FewBodyError::NotHermitian(asym));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ---------------------------------------------------------------------------
// Ground-state solvers
// ---------------------------------------------------------------------------

/// Ground-state solver selection.
#[derive(Debug, Clone, Copy)]
pub enum GroundMethod {
    /// Restarted Rayleigh–Ritz iteration in a Krylov subspace (default).
    IterativeEigensolver {
        /// Maximum restart rounds before giving up.
        max_rounds: usize,
    },
    /// Split-step imaginary-time relaxation with an annealed step.  The
    /// initial step comes from the kinetic stability bound 2/max(½k²) and is
    /// reduced in stages to push the Trotter bias below the residual target.
    ImaginaryTime {
        /// Total step budget across all stages.
        max_steps: usize,
    },
}

impl Default for GroundMethod {
    fn default() -> Self {
        GroundMethod::IterativeEigensolver { max_rounds: 300 }
    }
}

/// Lowest states of one parity sector.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// Energies in ħω_z, ascending.
    pub energies: Vec<f64>,
    /// The matching states, unit-normalized.
    pub states: Vec<RadialWavefunction>,
    /// Final residuals ‖Hψ − Eψ‖ (ħω_z, l² sense).
    pub residuals: Vec<f64>,
    /// Operator applications spent.
    pub iterations: usize,
    /// Energy measurements along the imaginary-time flow (empty for the
    /// iterative eigensolver); decreases monotonically.
    pub energy_history: Vec<f64>,
}

/// Ground state of the full Hamiltonian.  The global ground state of the
/// inversion-symmetric potential is even, so this solves the even sector;
/// use [`sector_ground`] for the odd sector (tunnelling gap).
pub fn ground_state(h: &Hamiltonian3, method: GroundMethod) -> Result<SpectralResult, FewBodyError> {
    sector_ground(h, Parity::Even, method)
}

/// Lowest state of one inversion-parity sector.
pub fn sector_ground(
    h: &Hamiltonian3,
    parity: Parity,
    method: GroundMethod,
) -> Result<SpectralResult, FewBodyError> {
    let start = start_vector(h, parity);
    let (energy, psi, residual, iterations, energy_history) = match method {
        GroundMethod::IterativeEigensolver { max_rounds } => {
            let (e, x, r, it, _) = lanczos_ground(h, parity, start, max_rounds)?;
            (e, x, r, it, Vec::new())
        }
        GroundMethod::ImaginaryTime { max_steps } => imaginary_time_ground(h, parity, start, max_steps)?,
    };
    // Physical normalization: l²-unit vector divided by √h_vol.
    let scale = 1.0 / h.volume_element().sqrt();
    let amplitudes: Vec<Complex64> = psi.iter().map(|&x| Complex64::new(x * scale, 0.0)).collect();
    let state = RadialWavefunction::new(h.axes.to_vec(), amplitudes)?;
    state.assert_normalized(1e-9)?;
    let ratio = state.boundary_ratio();
    if ratio > 1e-4 {
        return Err(FewBodyError::TruncatedState { ratio });
    }
    Ok(SpectralResult {
        energies: vec![energy],
        states: vec![state],
        residuals: vec![residual],
        iterations,
        energy_history,
    })
}

/// Physics-informed start vector: a Gaussian in each mode, displaced to the
/// two wells (symmetrically or antisymmetrically) below the transition.
fn start_vector(h: &Hamiltonian3, parity: Parity) -> Vec<f64> {
    let (sig0, qmin) = h.frame.soft_width();
    let s1 = h.frame.stiff_width(1);
    let s2 = h.frame.stiff_width(2);
    let pts: Vec<Vec<f64>> = h.axes.iter().map(|a| a.points()).collect();
    let mut v = vec![0.0f64; h.n_points()];
    let mut idx = 0usize;
    for &q0 in &pts[0] {
        let soft = if qmin > 0.0 {
            let lp = (-((q0 - qmin) / (2.0 * sig0)).powi(2)).exp();
            let lm = (-((q0 + qmin) / (2.0 * sig0)).powi(2)).exp();
            match parity {
                Parity::Even => lp + lm,
                Parity::Odd => lp - lm,
            }
        } else {
            let g = (-(q0 / (2.0 * sig0)).powi(2)).exp();
            match parity {
                Parity::Even => g,
                Parity::Odd => q0 * g,
            }
        };
        for &q1 in &pts[1] {
            let g1 = (-(q1 / (2.0 * s1)).powi(2)).exp();
            for &q2 in &pts[2] {
                let g2 = (-(q2 / (2.0 * s2)).powi(2)).exp();
                v[idx] = soft * g1 * g2;
                idx += 1;
            }
        }
    }
    h.parity_project(&mut v, parity);
    let n = norm2(&v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    v
}

/// Restarted Rayleigh–Ritz: expand a Krylov basis with full
/// reorthogonalization, diagonalize the projected Hamiltonian, restart from
/// the best Ritz vectors plus the current residual direction.
fn lanczos_ground(
    h: &Hamiltonian3,
    parity: Parity,
    start: Vec<f64>,
    max_rounds: usize,
) -> Result<(f64, Vec<f64>, f64, usize, Vec<f64>), FewBodyError> {
    const M: usize = 18;
    const KEEP: usize = 4;
    let n = h.n_points();
    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut images: Vec<Vec<f64>> = Vec::new(); // images[j] = H basis[j]
    let mut proj = DMatrix::<f64>::zeros(M, M);
    let mut applies = 0usize;
    let mut history = Vec::new();

    for _round in 0..max_rounds {
        // Expand the subspace.
        while images.len() < M && images.len() < basis.len() {
            let j = images.len();
            let mut u = vec![0.0f64; n];
            h.apply(&basis[j], &mut u);
            applies += 1;
            h.parity_project(&mut u, parity);
            images.push(u);
            let mut w = images[j].clone();
            for i in 0..basis.len() {
                let c = dot(&basis[i], &images[j]);
                proj[(i, j)] = c;
                proj[(j, i)] = c;
                axpy(-c, &basis[i], &mut w);
            }
            // Second orthogonalization pass for roundoff hygiene.
            for b in basis.iter() {
                let c = dot(b, &w);
                axpy(-c, b, &mut w);
            }
            h.parity_project(&mut w, parity);
            let beta = norm2(&w);
            if beta > 1e-13 && basis.len() < M {
                for x in w.iter_mut() {
                    *x /= beta;
                }
                basis.push(w);
            } else if beta <= 1e-13 {
                break; // invariant subspace
            }
        }

        // Rayleigh–Ritz on the filled block.  The eigenvalue array of the
        // decomposition does not always index-match its eigenvector columns,
        // so each column's eigenvalue is re-derived as a Rayleigh quotient.
        let p = images.len();
        let small = proj.view((0, 0), (p, p)).into_owned();
        let eig = nalgebra::SymmetricEigen::new(small.clone());
        let lam: Vec<f64> = (0..p)
            .map(|i| {
                let c = eig.eigenvectors.column(i);
                (&small * c).dot(&c)
            })
            .collect();
        let mut best = 0usize;
        for i in 1..p {
            if lam[i] < lam[best] {
                best = i;
            }
        }
        let theta = lam[best];
        let c = eig.eigenvectors.column(best);
        let mut x = vec![0.0f64; n];
        let mut hx = vec![0.0f64; n];
        for i in 0..p {
            axpy(c[i], &basis[i], &mut x);
            axpy(c[i], &images[i], &mut hx);
        }
        let xn = norm2(&x);
        for v in x.iter_mut() {
            *v /= xn;
        }
        for v in hx.iter_mut() {
            *v /= xn;
        }
        let mut res = hx.clone();
        axpy(-theta, &x, &mut res);
        let residual = norm2(&res);
        history.push(residual);

        if residual < RESIDUAL_TARGET * 0.5 || p < basis.len() {
            // Converged (or the subspace went invariant): polish and return.
            let energy = dot(&x, &hx);
            let mut fresh = vec![0.0f64; n];
            h.apply(&x, &mut fresh);
            applies += 1;
            axpy(-energy, &x, &mut fresh);
            let final_res = norm2(&fresh);
            if final_res > RESIDUAL_TARGET {
                history.push(final_res);
                if p < basis.len() {
                    continue;
                }
                return Err(FewBodyError::NotConverged { target: RESIDUAL_TARGET, history });
            }
            return Ok((energy, x, final_res, applies, history));
        }

        // Thick restart: keep the lowest Ritz vectors (their images come
        // free) and seed the next expansion with the residual direction.
        let keep = KEEP.min(p);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| lam[a].partial_cmp(&lam[b]).unwrap());
        let mut new_basis = Vec::with_capacity(M);
        let mut new_images = Vec::with_capacity(M);
        for &col in order.iter().take(keep) {
            let cc = eig.eigenvectors.column(col);
            let mut xb = vec![0.0f64; n];
            let mut xi = vec![0.0f64; n];
            for i in 0..p {
                axpy(cc[i], &basis[i], &mut xb);
                axpy(cc[i], &images[i], &mut xi);
            }
            new_basis.push(xb);
            new_images.push(xi);
        }
        proj.fill(0.0);
        for (i, &col) in order.iter().take(keep).enumerate() {
            proj[(i, i)] = lam[col];
        }
        // Residual direction, orthogonalized against the kept block.
        let mut w = res;
        for _ in 0..2 {
            for b in new_basis.iter() {
                let cb = dot(b, &w);
                axpy(-cb, b, &mut w);
            }
        }
        h.parity_project(&mut w, parity);
        let beta = norm2(&w);
        if beta > 1e-13 {
            for v in w.iter_mut() {
                *v /= beta;
            }
            new_basis.push(w);
        }
        basis = new_basis;
        images = new_images;
        // Off-diagonal couplings ⟨x_i|H|w⟩ are filled when H w is computed.
    }
    Err(FewBodyError::NotConverged { target: RESIDUAL_TARGET, history })
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

/// Split-step imaginary time: ψ ← e^{−τV/2} e^{−τT} e^{−τV/2} ψ, projected
/// and renormalized each step, with the step annealed in stages.
fn imaginary_time_ground(
    h: &Hamiltonian3,
    parity: Parity,
    start: Vec<f64>,
    max_steps: usize,
) -> Result<(f64, Vec<f64>, f64, usize, Vec<f64>), FewBodyError> {
    let n = h.n_points();
    let tau0 = (2.0 / h.kinetic_max()).min(0.08);
    let stages = [tau0, tau0 / 4.0, tau0 / 16.0, tau0 / 64.0];
    let per_stage = (max_steps / stages.len()).max(1);

    let mut psi = start;
    let mut steps = 0usize;
    let mut energy_history: Vec<f64> = Vec::new();
    let mut residual_history: Vec<f64> = Vec::new();
    let mut hpsi = vec![0.0f64; n];

    let measure = |psi: &[f64], hpsi: &mut Vec<f64>| -> (f64, f64) {
        h.apply(psi, hpsi);
        let e = dot(psi, hpsi);
        let mut r = hpsi.clone();
        axpy(-e, psi, &mut r);
        (e, norm2(&r))
    };

    let mut done = false;
    for &tau in &stages {
        if done {
            break;
        }
        let expv: Vec<f64> = h.v.iter().map(|&vv| (-0.5 * tau * vv).exp()).collect();
        let expk: Vec<Vec<f64>> =
            h.k2half.iter().map(|arr| arr.iter().map(|&k| (-tau * k).exp()).collect()).collect();
        let mut last_r = f64::INFINITY;
        let mut stalled = 0usize;
        for step in 0..per_stage {
            {
                let mut w = h.work.borrow_mut();
                for i in 0..n {
                    w[i] = Complex64::new(psi[i] * expv[i], 0.0);
                }
                h.fft.transform(&mut w, false);
                let [n0, n1, n2] = h.shape;
                let mut idx = 0usize;
                for i0 in 0..n0 {
                    let f0 = expk[0][i0];
                    for i1 in 0..n1 {
                        let f01 = f0 * expk[1][i1];
                        for i2 in 0..n2 {
                            w[idx] *= f01 * expk[2][i2];
                            idx += 1;
                        }
                    }
                }
                h.fft.transform(&mut w, true);
                for i in 0..n {
                    psi[i] = w[i].re * expv[i];
                }
            }
            h.parity_project(&mut psi, parity);
            let nn = norm2(&psi);
            for x in psi.iter_mut() {
                *x /= nn;
            }
            steps += 1;
            if step % 8 == 7 || step == per_stage - 1 {
                let (e, r) = measure(&psi, &mut hpsi);
                energy_history.push(e);
                residual_history.push(r);
                if r < 0.9 * RESIDUAL_TARGET {
                    done = true;
                    break;
                }
                // Each step size has a splitting-bias floor below which the
                // residual cannot relax.  Once the residual stops improving
                // between measurements the floor has been reached, so move on
                // to the next, smaller step.
                if r > 0.999 * last_r {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                if stalled >= 3 {
                    break;
                }
                last_r = r;
            }
        }
    }
    let (e, r) = measure(&psi, &mut hpsi);
    energy_history.push(e);
    residual_history.push(r);
    if r > RESIDUAL_TARGET {
        return Err(FewBodyError::NotConverged { target: RESIDUAL_TARGET, history: residual_history });
    }
    Ok((e, psi, r, steps, energy_history))
}

// ---------------------------------------------------------------------------
// Site-coordinate resampling: entropy and marginals
// ---------------------------------------------------------------------------

/// FFT band-limited upsampling of a real 3D array by integer factors: the
/// spectrum is zero-padded symmetrically along each axis, so the new samples
/// interpolate the periodic trigonometric representation of the data.
fn fft_upsample(data: &[f64], shape: [usize; 3], factors: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let mut cur: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut cur_shape = shape;
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        let f = factors[axis];
        if f == 1 {
            continue;
        }
        let n = cur_shape[axis];
        let m = f * n;
        let mut new_shape = cur_shape;
        new_shape[axis] = m;
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(m);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut big = vec![Complex64::new(0.0, 0.0); m];
        let mut out = vec![Complex64::new(0.0, 0.0); new_shape[0] * new_shape[1] * new_shape[2]];
        let (pre, post) = line_strides(cur_shape, axis);
        let (pre_n, post_n) = line_strides(new_shape, axis);
        debug_assert_eq!(pre, pre_n);
        let _ = pre_n;
        for a in 0..pre {
            for b in 0..post {
                for j in 0..n {
                    line[j] = cur[(a * n + j) * post + b];
                }
                fwd.process(&mut line);
                for v in big.iter_mut() {
                    *v = Complex64::new(0.0, 0.0);
                }
                let scale = f as f64;
                for j in 0..n {
                    let dest = if j < n / 2 { j } else { m - n + j };
                    big[dest] = line[j] * scale;
                }
                inv.process(&mut big);
                let inv_scale = 1.0 / m as f64;
                for j in 0..m {
                    out[(a * m + j) * post_n + b] = big[j] * inv_scale;
                }
            }
        }
        cur = out;
        cur_shape = new_shape;
    }
    (cur.into_iter().map(|c| c.re).collect(), cur_shape)
}

/// Number of lines before/after `axis` when iterating a row-major 3D array.
fn line_strides(shape: [usize; 3], axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, shape[1] * shape[2]),
        1 => (shape[0], shape[2]),
        _ => (shape[0] * shape[1], 1),
    }
}

/// In-place cubic B-spline prefilter along one line (mirror boundary): after
/// this, the samples are the spline coefficients whose cubic B-spline
/// reconstruction interpolates the original data.
fn spline_filter_line(c: &mut [f64]) {
    const Z: f64 = -0.267_949_192_431_122_7; // √3 − 2
    let n = c.len();
    if n < 2 {
        return;
    }
    for x in c.iter_mut() {
        *x *= 6.0;
    }
    let horizon = n.min(28);
    let mut sum = c[0];
    let mut zk = 1.0;
    for item in c.iter().take(horizon).skip(1) {
        zk *= Z;
        sum += zk * item;
    }
    c[0] = sum;
    for k in 1..n {
        c[k] += Z * c[k - 1];
    }
    c[n - 1] = (Z / (Z * Z - 1.0)) * (c[n - 1] + Z * c[n - 2]);
    for k in (0..n - 1).rev() {
        c[k] = Z * (c[k + 1] - c[k]);
    }
}

fn spline_prefilter_3d(data: &mut [f64], shape: [usize; 3]) {
    for axis in 0..3 {
        let n = shape[axis];
        let (pre, post) = line_strides(shape, axis);
        let mut line = vec![0.0f64; n];
        for a in 0..pre {
            for b in 0..post {
                for j in 0..n {
                    line[j] = data[(a * n + j) * post + b];
                }
                spline_filter_line(&mut line);
                for j in 0..n {
                    data[(a * n + j) * post + b] = line[j];
                }
            }
        }
    }
}

fn bspline_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        (1.0 - u).powi(3) / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Evaluate the cubic B-spline reconstruction of prefiltered coefficients at
/// fractional index `t` (per axis); outside the grid the value is zero.
fn tricubic(coef: &[f64], shape: [usize; 3], t: [f64; 3]) -> f64 {
    let mut taps: [[Option<usize>; 4]; 3] = [[None; 4]; 3];
    let mut weights = [[0.0f64; 4]; 3];
    for k in 0..3 {
        let base = t[k].floor();
        let u = t[k] - base;
        let wk = bspline_weights(u);
        for (s, w) in wk.iter().enumerate() {
            let idx = base as i64 + s as i64 - 1;
            if idx >= 0 && (idx as usize) < shape[k] {
                taps[k][s] = Some(idx as usize);
                weights[k][s] = *w;
            }
        }
    }
    let mut acc = 0.0;
    for s0 in 0..4 {
        let Some(i0) = taps[0][s0] else { continue };
        let w0 = weights[0][s0];
        for s1 in 0..4 {
            let Some(i1) = taps[1][s1] else { continue };
            let w01 = w0 * weights[1][s1];
            let row = (i0 * shape[1] + i1) * shape[2];
            for s2 in 0..4 {
                let Some(i2) = taps[2][s2] else { continue };
                acc += w01 * weights[2][s2] * coef[row + i2];
            }
        }
    }
    acc
}

/// The wavefunction resampled onto site-coordinate quadrature axes, weighted
/// for quadrature: entry (i, (j,k)) is ψ(ξ_site = a_i, ξ_o1 = b_j, ξ_o2 = c_k)
/// · √(h_site h_o1 h_o2).
struct SiteResample {
    axis: Vec<f64>,
    step: f64,
    matrix: DMatrix<f64>,
}

fn site_resample(
    h: &Hamiltonian3,
    psi: &RadialWavefunction,
    site: usize,
) -> Result<SiteResample, FewBodyError> {
    let n_ions = h.frame.n();
    if site >= n_ions {
        return Err(FewBodyError::SiteOutOfRange { site, n: n_ions });
    }
    psi.assert_normalized(1e-6)?;
    let real = psi.real_amplitudes()?;

    // Band-limit upsampling until each axis resolves its local width.
    let (sig0, _) = h.frame.soft_width();
    let sigs = [sig0, h.frame.stiff_width(1), h.frame.stiff_width(2)];
    let mut factors = [1usize; 3];
    for k in 0..3 {
        while h.axes[k].step / factors[k] as f64 > sigs[k] / 2.5 && factors[k] < 8 {
            factors[k] *= 2;
        }
    }
    let shape = h.shape;
    let (mut coef, ushape) = fft_upsample(&real, shape, factors);
    spline_prefilter_3d(&mut coef, ushape);
    let umin = [h.axes[0].min(), h.axes[1].min(), h.axes[2].min()];
    let ustep = [
        h.axes[0].step / factors[0] as f64,
        h.axes[1].step / factors[1] as f64,
        h.axes[2].step / factors[2] as f64,
    ];

    let quads = h.frame.site_quadratures(h.n_site);
    let others: Vec<usize> = (0..3).filter(|&i| i != site).collect();
    let (axis_s, h_s) = quads[site].clone();
    let (axis_1, h_1) = quads[others[0]].clone();
    let (axis_2, h_2) = quads[others[1]].clone();
    let weight = (h_s * h_1 * h_2).sqrt();

    let bm = &h.frame.modes;
    let mut matrix = DMatrix::<f64>::zeros(axis_s.len(), axis_1.len() * axis_2.len());
    let mut x = [0.0f64; 3];
    for (row, &a) in axis_s.iter().enumerate() {
        for (j1, &b) in axis_1.iter().enumerate() {
            for (j2, &c) in axis_2.iter().enumerate() {
                x[site] = a;
                x[others[0]] = b;
                x[others[1]] = c;
                // q = Bᵀ x.
                let mut t = [0.0f64; 3];
                let mut inside = true;
                for k in 0..3 {
                    let q = bm[(0, k)] * x[0] + bm[(1, k)] * x[1] + bm[(2, k)] * x[2];
                    let ti = (q - umin[k]) / ustep[k];
                    if ti < -2.0 || ti > ushape[k] as f64 + 1.0 {
                        inside = false;
                        break;
                    }
                    t[k] = ti;
                }
                if inside {
                    let val = tricubic(&coef, ushape, t);
                    matrix[(row, j1 * axis_2.len() + j2)] = val * weight;
                }
            }
        }
    }
    Ok(SiteResample { axis: axis_s, step: h_s, matrix })
}

/// Entanglement entropy (bits) of one ion with the rest of the chain,
/// from the Schmidt spectrum of the state partitioned in site coordinates.
pub fn reduced_entropy_site(
    h: &Hamiltonian3,
    psi: &RadialWavefunction,
    site: usize,
) -> Result<f64, FewBodyError> {
    let rs = site_resample(h, psi, site)?;
    Ok(entropy_from_matrix(&rs.matrix))
}

fn entropy_from_matrix(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let mut entropy = 0.0;
    for s in sv.iter() {
        let p = s * s / total;
        if p > 1e-300 {
            entropy -= p * p.log2();
        }
    }
    entropy
}

/// Position statistics of one ion: exact grid moments of its site coordinate
/// plus the marginal probability on the site quadrature axis.
#[derive(Debug, Clone)]
pub struct PositionStatistics {
    /// ⟨x_site⟩ in x_q.
    pub mean: f64,
    /// ⟨x_site²⟩ in x_q².
    pub second_moment: f64,
    /// Site quadrature points (x_q).
    pub axis: Vec<f64>,
    /// Quadrature spacing (x_q).
    pub step: f64,
    /// Probability mass per quadrature point; sums to 1.
    pub masses: Vec<f64>,
}

impl PositionStatistics {
    /// Probability density (per x_q) at the quadrature points.
    pub fn density(&self) -> Vec<f64> {
        self.masses.iter().map(|&m| m / self.step).collect()
    }

    /// Total probability — 1 by construction.
    pub fn integral(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Probability mass nearest the origin relative to the peak mass: ≈ 1
    /// for a unimodal symmetric marginal, ≈ 0 once the state is bimodal.
    /// Returns 0 when the quadrature has no point near the origin (the
    /// two-patch deep-well regime).
    pub fn dip_ratio(&self) -> f64 {
        let peak = self.masses.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return 0.0;
        }
        let mut center = None;
        let mut best = f64::INFINITY;
        for (i, &x) in self.axis.iter().enumerate() {
            if x.abs() < best {
                best = x.abs();
                center = Some(i);
            }
        }
        match center {
            Some(i) if best <= 1.5 * self.step => self.masses[i] / peak,
            _ => 0.0,
        }
    }

    /// Two-column CSV of the marginal in SI units: position (m), density (1/m).
    pub fn marginal_csv(&self, ctx: &PhysicalContext) -> String {
        let xq = ctx.quantum_length();
        let mut out = String::from("x_m,p_per_m\n");
        for (&x, &m) in self.axis.iter().zip(self.masses.iter()) {
            out.push_str(&format!("{:.9e},{:.9e}\n", x * xq, m / self.step / xq));
        }
        out
    }
}

/// Mean, second moment and marginal of the site coordinate of `site`.
pub fn position_statistics(
    h: &Hamiltonian3,
    psi: &RadialWavefunction,
    site: usize,
) -> Result<PositionStatistics, FewBodyError> {
    let n_ions = h.frame.n();
    if site >= n_ions {
        return Err(FewBodyError::SiteOutOfRange { site, n: n_ions });
    }
    let real = psi.real_amplitudes()?;
    let hvol = psi.volume_element();
    let pts: Vec<Vec<f64>> = h.axes.iter().map(|a| a.points()).collect();
    let [n0, n1, n2] = h.shape;
    // Mode-coordinate first and second moments.
    let mut m1 = [0.0f64; 3];
    let mut m2 = [[0.0f64; 3]; 3];
    let mut idx = 0usize;
    for i0 in 0..n0 {
        let q0 = pts[0][i0];
        for i1 in 0..n1 {
            let q1 = pts[1][i1];
            for i2 in 0..n2 {
                let q2 = pts[2][i2];
                let w = real[idx] * real[idx] * hvol;
                let q = [q0, q1, q2];
                for a in 0..3 {
                    m1[a] += w * q[a];
                    for b in 0..3 {
                        m2[a][b] += w * q[a] * q[b];
                    }
                }
                idx += 1;
            }
        }
    }
    let bm = &h.frame.modes;
    let mut mean = 0.0;
    let mut second = 0.0;
    for a in 0..3 {
        mean += bm[(site, a)] * m1[a];
        for b in 0..3 {
            second += bm[(site, a)] * bm[(site, b)] * m2[a][b];
        }
    }
    let rs = site_resample(h, psi, site)?;
    let mut masses: Vec<f64> = (0..rs.matrix.nrows())
        .map(|r| rs.matrix.row(r).iter().map(|v| v * v).sum())
        .collect();
    let total: f64 = masses.iter().sum();
    for m in masses.iter_mut() {
        *m /= total;
    }
    Ok(PositionStatistics { mean, second_moment: second, axis: rs.axis, step: rs.step, masses })
}

// ---------------------------------------------------------------------------
// Decoupled mode model
// ---------------------------------------------------------------------------

/// Independent-mode approximation: the soft mode keeps its projected quartic
/// term and is solved as a one-dimensional problem through the double-well
/// machinery; every stiff mode is a harmonic-oscillator ground state.  Site
/// statistics follow from the mode composition of the site coordinate.
#[derive(Debug, Clone)]
pub struct DecoupledModel {
    /// Lowest soft-mode levels (ħω_z).
    pub soft_energies: Vec<f64>,
    /// Soft-mode tunnelling gap E₁ − E₀ in Hz.
    pub gap_hz: f64,
    /// ⟨q_k²⟩ per mode (x_q²), soft mode first.
    pub mode_variances: Vec<f64>,
    /// Squared mode coefficients of the site coordinate (row of B squared).
    pub site_weights: Vec<f64>,
    /// ⟨x_site²⟩ = Σ_k weight_k ⟨q_k²⟩ (x_q²) — the variance identity.
    pub second_moment: f64,
    /// Marginal of the site coordinate: the convolution of the per-mode
    /// marginals scaled by the mode coefficients, on the site quadrature.
    pub statistics: PositionStatistics,
    /// Entanglement entropy (bits) of the site in the product-of-modes
    /// state, evaluated with the same pipeline as the full solver.
    /// Only available for 3 ions.
    pub entropy_bits: Option<f64>,
}

/// Solve the decoupled model for `site` of a chain of 2 to 7 ions.
pub fn decoupled_mode_model(
    t: &TaylorCoefficients,
    ctx: &PhysicalContext,
    policy: &GridPolicy,
    site: usize,
) -> Result<DecoupledModel, FewBodyError> {
    policy.validate()?;
    let n = t.n_ions();
    if !(2..=7).contains(&n) {
        return Err(FewBodyError::UnsupportedSize { n });
    }
    if site >= n {
        return Err(FewBodyError::SiteOutOfRange { site, n });
    }
    let frame = ModeFrame::new(t, ctx.eta_squared())?;
    let xq = ctx.quantum_length();

    // Soft mode: 1D quartic problem in SI units via the Landau reduction.
    let lc = landau_reduce(t, ctx)?;
    let p1d = Potential1D::symmetric(lc.a, lc.b, lc.mass)?;
    let (sig0, qmin) = frame.soft_width();
    let sq_raw = QUARTIC_SECOND_MOMENT.sqrt() * (2.0 * frame.c_soft).powf(-1.0 / 6.0);
    let ext_q = if qmin == 0.0 {
        10.0 * sig0.max(sq_raw).max(1.0 / (2.0 * frame.omega2[0].max(1e-9).sqrt()).sqrt())
    } else {
        1.45 * qmin + 10.0 * sig0
    };
    let sol = eigenstates_1d(&p1d, GridSpec { n: 2048, span: Some(ext_q * xq) }, 4)?;
    let hbar_wz = HBAR * ctx.omega_z();
    let soft_energies: Vec<f64> = sol.energies.iter().map(|&e| e / hbar_wz).collect();
    let gap_hz = (sol.energies[1] - sol.energies[0]) / (2.0 * PI * HBAR);

    // ⟨q_soft²⟩ from the 1D ground state, then the variance identity.
    let q2_soft = sol.states[0]
        .iter()
        .zip(sol.grid.x.iter())
        .map(|(&p, &x)| p * p * x * x)
        .sum::<f64>()
        * sol.grid.h
        / (xq * xq);
    let mut mode_variances = vec![q2_soft];
    for k in 1..n {
        mode_variances.push(0.5 / frame.omega2[k].sqrt());
    }
    let mut site_weights = Vec::with_capacity(n);
    let mut second_moment = 0.0;
    for k in 0..n {
        let w = frame.modes[(site, k)] * frame.modes[(site, k)];
        site_weights.push(w);
        second_moment += w * mode_variances[k];
    }

    // Site marginal: convolution of the mode marginals mapped through the
    // mode coefficients, sampled on a fine uniform axis.
    let quads = frame.site_quadratures(policy.n_site);
    let (site_axis, site_h) = quads[site].clone();
    let soft_coeff = frame.modes[(site, 0)];
    let mut conv_ext = soft_coeff.abs() * ext_q;
    for k in 1..n {
        conv_ext += frame.modes[(site, k)].abs() * 8.0 * frame.stiff_width(k);
    }
    conv_ext = conv_ext.max(site_axis.iter().fold(0.0f64, |m, &x| m.max(x.abs())) + 1.0);
    let n_conv = 2048usize;
    let (conv_axis, conv_h) = linspace(-conv_ext, conv_ext, n_conv + 1);
    // Soft-mode contribution density on the fine axis.
    let mut pdf: Vec<f64> = conv_axis
        .iter()
        .map(|&x| {
            if soft_coeff.abs() < 1e-12 {
                return 0.0;
            }
            let q = x / soft_coeff; // site contribution x = coeff · q
            let xs = q * xq;
            interp_linear(&sol.grid.x, &sol.states[0], xs).powi(2) * xq / soft_coeff.abs()
        })
        .collect();
    if soft_coeff.abs() < 1e-12 {
        // Degenerate mapping: the soft mode does not move this site.
        let mid = n_conv / 2;
        pdf = vec![0.0; conv_axis.len()];
        pdf[mid] = 1.0 / conv_h;
    }
    for k in 1..n {
        let coeff = frame.modes[(site, k)];
        if coeff.abs() < 1e-12 {
            continue;
        }
        let sigma = coeff.abs() * frame.stiff_width(k);
        let gauss: Vec<f64> = conv_axis
            .iter()
            .map(|&x| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt()))
            .collect();
        pdf = convolve_density(&pdf, &gauss, conv_h);
    }
    let masses_raw: Vec<f64> =
        site_axis.iter().map(|&x| interp_linear(&conv_axis, &pdf, x).max(0.0) * site_h).collect();
    let total: f64 = masses_raw.iter().sum();
    let masses: Vec<f64> = masses_raw.iter().map(|&m| m / total).collect();
    let statistics = PositionStatistics {
        mean: 0.0,
        second_moment,
        axis: site_axis,
        step: site_h,
        masses,
    };

    // Entropy of the product state through the full pipeline (3 ions only).
    let entropy_bits = if n == 3 {
        let h3 = build_hamiltonian_3ion(t, ctx, policy)?;
        let pts: Vec<Vec<f64>> = h3.axes.iter().map(|a| a.points()).collect();
        let phi0: Vec<f64> = pts[0]
            .iter()
            .map(|&q| interp_linear(&sol.grid.x, &sol.states[0], q * xq) * xq.sqrt())
            .collect();
        let mut gs: Vec<Vec<f64>> = vec![phi0];
        for k in 1..3 {
            let w = h3.frame.omega2[k].sqrt();
            gs.push(pts[k].iter().map(|&q| (w / PI).powf(0.25) * (-0.5 * w * q * q).exp()).collect());
        }
        let mut amps = Vec::with_capacity(h3.n_points());
        for &a in &gs[0] {
            for &b in &gs[1] {
                for &c in &gs[2] {
                    amps.push(Complex64::new(a * b * c, 0.0));
                }
            }
        }
        let mut state = RadialWavefunction::new(h3.axes.to_vec(), amps)?;
        state.normalize();
        Some(reduced_entropy_site(&h3, &state, site)?)
    } else {
        None
    };

    Ok(DecoupledModel {
        soft_energies,
        gap_hz,
        mode_variances,
        site_weights,
        second_moment,
        statistics,
        entropy_bits,
    })
}

/// Linear interpolation with zero outside the table.
fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let mut lo = 0usize;
    let mut hi = xs.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xs[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tfrac = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + tfrac * (ys[hi] - ys[lo])
}

/// Discrete convolution of two densities sampled on the same symmetric
/// uniform axis, evaluated back on that axis.
fn convolve_density(f: &[f64], g: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mid = (n - 1) / 2;
    let mut out = vec![0.0f64; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        // out(x_i) = Σ_j f(x_j) g(x_i − x_j) h, with x_i − x_j at offset i − j + mid.
        let j_lo = i.saturating_sub(n - 1 - mid);
        let j_hi = (i + mid).min(n - 1);
        for j in j_lo..=j_hi {
            acc += f[j] * g[i + mid - j];
        }
        *o = acc * h;
    }
    out
}

// ---------------------------------------------------------------------------
// Gaussian variational bound and the deep-well closed form
// ---------------------------------------------------------------------------

/// Best product-of-Gaussians (in mode coordinates) upper bound on the ground
/// energy, in ħω_z: E(s) = Σ_k [1/(8 s_k) + ½ ω̃_k² s_k] + η² ⟨W₄⟩ with the
/// quartic expectation taken by Wick contraction over the site covariance
/// Σ = B diag(s) Bᵀ, minimized over the mode variances s by Nelder–Mead.
pub fn gaussian_product_energy(
    t: &TaylorCoefficients,
    ctx: &PhysicalContext,
) -> Result<f64, FewBodyError> {
    let frame = ModeFrame::new(t, ctx.eta_squared())?;
    let n = frame.n();
    let b: Vec<f64> = (0..n).map(|i| t.b[i]).collect();
    let energy = |logs: &[f64]| -> f64 {
        let s: Vec<f64> = logs.iter().map(|&l| l.exp()).collect();
        let mut e = 0.0;
        for k in 0..n {
            e += 0.125 / s[k] + 0.5 * frame.omega2[k] * s[k];
        }
        // Site covariance Σ = B diag(s) Bᵀ.
        let mut cov = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += frame.modes[(i, k)] * frame.modes[(j, k)] * s[k];
                }
                cov[i][j] = acc;
            }
        }
        let mut quart = 0.0;
        for i in 0..n {
            quart += 3.0 * b[i] * cov[i][i] * cov[i][i];
            for j in 0..n {
                if j != i {
                    quart += t.alpha[(i, j)] * (cov[i][i] * cov[j][j] + 2.0 * cov[i][j] * cov[i][j])
                        + 3.0 * t.kappa[(i, j)] * cov[i][i] * cov[i][j];
                }
            }
        }
        e + frame.eta2 * quart
    };
    let mut start = Vec::with_capacity(n);
    start.push((0.5 / frame.omega2[0].max(1e-4).sqrt()).max(1.0).ln());
    for k in 1..n {
        start.push((0.5 / frame.omega2[k].sqrt()).ln());
    }
    Ok(nelder_mead(energy, &start, 0.15, 4000, 1e-13))
}

/// Nelder–Mead simplex minimizer (reflection 1, expansion 2, contraction ½,
/// shrink ½) — adequate for the smooth low-dimensional energy above.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    spread: f64,
    max_iter: usize,
    ftol: f64,
) -> f64 {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..n {
        let mut p = start.to_vec();
        p[k] += spread;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        if (values[worst] - values[best]).abs() < ftol * (1.0 + values[best].abs()) {
            break;
        }
        let mut centroid = vec![0.0f64; n];
        for &i in order.iter().take(n) {
            for k in 0..n {
                centroid[k] += simplex[i][k] / n as f64;
            }
        }
        let reflect: Vec<f64> =
            (0..n).map(|k| centroid[k] + (centroid[k] - simplex[worst][k])).collect();
        let fr = f(&reflect);
        if fr < values[best] {
            let expand: Vec<f64> =
                (0..n).map(|k| centroid[k] + 2.0 * (centroid[k] - simplex[worst][k])).collect();
            let fe = f(&expand);
            if fe < fr {
                simplex[worst] = expand;
                values[worst] = fe;
            } else {
                simplex[worst] = reflect;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = fr;
        } else {
            let contract: Vec<f64> =
                (0..n).map(|k| centroid[k] + 0.5 * (simplex[worst][k] - centroid[k])).collect();
            let fc = f(&contract);
            if fc < values[worst] {
                simplex[worst] = contract;
                values[worst] = fc;
            } else {
                let best_point = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for k in 0..n {
                        simplex[i][k] = 0.5 * (simplex[i][k] + best_point[k]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    values.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Closed-form deep-well entropy estimate: below the transition the state is
/// an equal superposition of two well-localized Gaussians, giving one bit
/// plus the Gaussian entropy of the within-well fluctuations.  The local
/// frame replaces the soft mode by its well curvature ω_loc = √(2|ω̃₀²|).
pub fn deep_well_entropy(t: &TaylorCoefficients, site: usize) -> Result<f64, FewBodyError> {
    let nm = normal_modes(t);
    let n = nm.omega_squared.len();
    if site >= n {
        return Err(FewBodyError::SiteOutOfRange { site, n });
    }
    let w0 = nm.omega_squared[0];
    if w0 >= 0.0 {
        return Err(FewBodyError::InvalidParameter { what: "soft mode ω̃₀² (< 0 required)", value: w0 });
    }
    let wl = (2.0 * -w0).sqrt();
    let mut sx = 0.0;
    let mut sp = 0.0;
    for k in 0..n {
        let bb = nm.vectors[(site, k)] * nm.vectors[(site, k)];
        let w = if k == 0 { wl } else { nm.omega_squared[k].sqrt() };
        sx += bb * 0.5 / w;
        sp += bb * 0.5 * w;
    }
    let nu = (sx * sp).sqrt();
    Ok(1.0 + entropy_from_nu(nu)?)
}

// ---------------------------------------------------------------------------
// Entropy scan across the transition
// ---------------------------------------------------------------------------

/// One point of the entropy scan: full ground state, entanglement entropy of
/// an outer ion, its position spread, and the tunnelling gap.
#[derive(Debug, Clone)]
pub struct ScanRecord {
    /// Confinement ratio ω_x/ω_z.
    pub r_x: f64,
    /// Entanglement entropy of site 0 (bits).
    pub entropy_bits: f64,
    /// √⟨x₁²⟩ of site 0 in meters.
    pub rms_m: f64,
    /// Gap to the odd-parity ground state, Hz.
    pub gap_hz: f64,
    /// Even-sector ground energy (ħω_z).
    pub ground_energy: f64,
    /// Gaussian variational upper bound (ħω_z).
    pub gaussian_bound: f64,
    /// Soft-axis point count the grid policy chose.
    pub n_soft: usize,
}

/// Solve the full three-ion problem across a list of confinement ratios.
/// Points run in parallel; records preserve the input order.
pub fn entropy_scan(
    r_values: &[f64],
    ctx: &PhysicalContext,
    policy: &GridPolicy,
) -> Result<Vec<ScanRecord>, FewBodyError> {
    let chain = find_equilibrium(3, 10.0, f64::INFINITY, 1, Seed::Heuristic)?;
    r_values
        .par_iter()
        .map(|&r| -> Result<ScanRecord, FewBodyError> {
            let t = taylor_expand(&chain, r)?;
            let h = build_hamiltonian_3ion(&t, ctx, policy)?;
            let even = sector_ground(&h, Parity::Even, GroundMethod::default())?;
            let odd = sector_ground(&h, Parity::Odd, GroundMethod::default())?;
            let entropy_bits = reduced_entropy_site(&h, &even.states[0], 0)?;
            let stats = position_statistics(&h, &even.states[0], 0)?;
            let bound = gaussian_product_energy(&t, ctx)?;
            Ok(ScanRecord {
                r_x: r,
                entropy_bits,
                rms_m: stats.second_moment.sqrt() * ctx.quantum_length(),
                gap_hz: (odd.energies[0] - even.energies[0]) * ctx.omega_z() / (2.0 * PI),
                ground_energy: even.energies[0],
                gaussian_bound: bound,
                n_soft: h.axes[0].n,
            })
        })
        .collect()
}

/// CSV table of a scan: `r_x,S_bits,sqrt_x2_m,gap_Hz`.
pub fn scan_csv(records: &[ScanRecord]) -> String {
    let mut out = String::from("r_x,S_bits,sqrt_x2_m,gap_Hz\n");
    for r in records {
        out.push_str(&format!(
            "{:.9},{:.6},{:.9e},{:.9e}\n",
            r.r_x, r.entropy_bits, r.rms_m, r.gap_hz
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::critical_frequency;
    use crate::gaussian::{ground_state_covariance, single_site_entropy};
    use crate::units::ContextSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn ctx() -> PhysicalContext {
        ContextSpec::matched().build().unwrap()
    }

    fn chain3() -> crate::crystal::CrystalConfig {
        find_equilibrium(3, 10.0, f64::INFINITY, 1, Seed::Heuristic).unwrap()
    }

    fn taylor_at(r: f64) -> TaylorCoefficients {
        taylor_expand(&chain3(), r).unwrap()
    }

    fn rc3() -> f64 {
        critical_frequency(3).unwrap()
    }

    #[test]
    fn mode_frame_weights_and_ordering() {
        let t = taylor_at(1.6);
        let frame = ModeFrame::new(&t, ctx().eta_squared()).unwrap();
        // Ascending mode frequencies: zigzag, tilt, center of mass.
        assert_relative_eq!(frame.omega2[0], 1.6 * 1.6 - 2.4, max_relative = 1e-9);
        assert_relative_eq!(frame.omega2[1], 1.6 * 1.6 - 1.0, max_relative = 1e-9);
        assert_relative_eq!(frame.omega2[2], 1.6 * 1.6, max_relative = 1e-9);
        // Squared coefficients of the outer site: 1/6, 1/2, 1/3.
        let w: Vec<f64> = (0..3).map(|k| frame.modes[(0, k)] * frame.modes[(0, k)]).collect();
        assert_abs_diff_eq!(w[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // Soft-mode quartic projection.
        assert_relative_eq!(frame.c_soft / frame.eta2, 1.163_394_732_6, max_relative = 1e-9);
    }

    #[test]
    fn grid_axis_is_exactly_symmetric() {
        let axis = GridAxis::from_extent(10.0, 64);
        let pts = axis.points();
        for i in 0..64 {
            assert_eq!(pts[i], -pts[63 - i]);
        }
        assert!(pts[0] > -10.0 && pts[63] < 10.0);
        assert_relative_eq!(axis.step, 20.0 / 64.0, max_relative = 1e-15);
    }

    #[test]
    fn hamiltonian_is_hermitian_and_parity_clean() {
        let t = taylor_at(rc3() - 0.01);
        let h = build_hamiltonian_3ion(&t, &ctx(), &GridPolicy { n_base: 32, ..Default::default() })
            .unwrap();
        // Constructor already spot-checks Hermiticity; verify parity: H maps
        // the even sector to itself.
        let n = h.n_points();
        let mut v = vec![0.0f64; n];
        for (i, x) in v.iter_mut().enumerate() {
            *x = ((i % 97) as f64 * 0.171).sin() + 0.3;
        }
        h.parity_project(&mut v, Parity::Even);
        let mut hv = vec![0.0f64; n];
        h.apply(&v, &mut hv);
        let mut odd_part = hv.clone();
        h.parity_project(&mut odd_part, Parity::Odd);
        assert!(norm2(&odd_part) < 1e-12 * norm2(&hv));
    }

    #[test]
    fn harmonic_reference_reproduces_mode_sums() {
        let t = taylor_at(1.7);
        let h = Hamiltonian3::harmonic_reference(&t, &ctx(), &GridPolicy::default()).unwrap();
        let w: Vec<f64> = h.omega_squared().iter().map(|&x| x.sqrt()).collect();
        let even = ground_state(&h, GroundMethod::default()).unwrap();
        let e_expected = 0.5 * (w[0] + w[1] + w[2]);
        assert_relative_eq!(even.energies[0], e_expected, max_relative = 1e-6);
        let odd = sector_ground(&h, Parity::Odd, GroundMethod::default()).unwrap();
        assert_relative_eq!(odd.energies[0] - even.energies[0], w[0], max_relative = 1e-5);
        assert!(even.residuals[0] < RESIDUAL_TARGET);
    }

    #[test]
    fn transition_point_frozen_values() {
        let c = ctx();
        let t = taylor_at(rc3());
        let h = build_hamiltonian_3ion(&t, &c, &GridPolicy::default()).unwrap();
        assert_eq!(h.axes()[0].n, 64);
        let even = ground_state(&h, GroundMethod::default()).unwrap();
        let odd = sector_ground(&h, Parity::Odd, GroundMethod::default()).unwrap();
        let psi = &even.states[0];
        assert_abs_diff_eq!(psi.norm(), 1.0, epsilon = 1e-9);
        assert!(psi.boundary_ratio() < 1e-6);

        // Tunnelling gap in Hz.
        let gap_hz = (odd.energies[0] - even.energies[0]) * c.omega_z() / (2.0 * PI);
        assert_relative_eq!(gap_hz, 5529.0, max_relative = 1.5e-2);

        // Position spread of an outer ion.
        let stats = position_statistics(&h, psi, 0).unwrap();
        assert!(stats.mean.abs() < 1e-9);
        assert_abs_diff_eq!(stats.integral(), 1.0, epsilon = 1e-9);
        let rms_m = stats.second_moment.sqrt() * c.quantum_length();
        assert_relative_eq!(rms_m, 65.48e-9, max_relative = 1e-2);

        // Entanglement entropy of the outer ion, and edge equivalence.
        let s0 = reduced_entropy_site(&h, psi, 0).unwrap();
        assert_abs_diff_eq!(s0, 1.6916, epsilon = 0.015);
        let s2 = reduced_entropy_site(&h, psi, 2).unwrap();
        assert_abs_diff_eq!(s0, s2, epsilon = 1e-6);

        // Variational bound.
        let bound = gaussian_product_energy(&t, &c).unwrap();
        assert!(even.energies[0] <= bound + 1e-9);
    }

    #[test]
    fn deep_zigzag_matches_local_well_picture() {
        let c = ctx();
        let r = rc3() - 0.012;
        let t = taylor_at(r);
        let h = build_hamiltonian_3ion(&t, &c, &GridPolicy::default()).unwrap();
        assert_eq!(h.axes()[0].n, 128);
        let even = ground_state(&h, GroundMethod::default()).unwrap();
        let odd = sector_ground(&h, Parity::Odd, GroundMethod::default()).unwrap();
        let psi = &even.states[0];

        // Entropy: frozen value, and the closed-form two-well estimate.
        let s = reduced_entropy_site(&h, psi, 0).unwrap();
        assert_abs_diff_eq!(s, 1.4846, epsilon = 0.015);
        let s_deep = deep_well_entropy(&t, 0).unwrap();
        assert_abs_diff_eq!(s, s_deep, epsilon = 0.012);

        // Position spread and bimodality.
        let stats = position_statistics(&h, psi, 0).unwrap();
        let rms_m = stats.second_moment.sqrt() * c.quantum_length();
        assert_relative_eq!(rms_m, 551.10e-9, max_relative = 1.2e-2);
        assert!(stats.dip_ratio() < 0.05);

        // Tunnelling suppressed this deep.
        let gap_hz = (odd.energies[0] - even.energies[0]) * c.omega_z() / (2.0 * PI);
        assert!(gap_hz.abs() < 20.0);

        // Decoupled model tracks the full spread and entropy.
        let dec = decoupled_mode_model(&t, &c, &GridPolicy::default(), 0).unwrap();
        let rms_dec = dec.second_moment.sqrt() * c.quantum_length();
        assert!((rms_dec - rms_m).abs() < 2.5e-9);
        let s_dec = dec.entropy_bits.unwrap();
        assert!((s - s_dec).abs() < 0.05);

        // Ground state obeys the variational bound.
        let bound = gaussian_product_energy(&t, &c).unwrap();
        assert!(even.energies[0] <= bound + 1e-9);
    }

    #[test]
    fn linear_regime_matches_gaussian_theory() {
        let c = ctx();
        let t = taylor_at(1.7);
        let h = build_hamiltonian_3ion(&t, &c, &GridPolicy::default()).unwrap();
        let even = ground_state(&h, GroundMethod::default()).unwrap();
        let psi = &even.states[0];

        let nm = normal_modes(&t);
        let cov = ground_state_covariance(&nm).unwrap();
        for site in 0..3 {
            let stats = position_statistics(&h, psi, site).unwrap();
            assert_relative_eq!(stats.second_moment, cov.x[(site, site)], max_relative = 1e-2);
        }
        let s_full = reduced_entropy_site(&h, psi, 0).unwrap();
        let s_gauss = single_site_entropy(&cov, 0).unwrap();
        assert!((s_full - s_gauss).abs() < 0.02);

        // Decoupled marginal agrees with the full marginal far above the
        // transition (discrete L¹ distance of the probability masses).
        let dec = decoupled_mode_model(&t, &c, &GridPolicy::default(), 0).unwrap();
        let stats = position_statistics(&h, psi, 0).unwrap();
        assert_eq!(dec.statistics.axis.len(), stats.axis.len());
        let l1: f64 = dec
            .statistics
            .masses
            .iter()
            .zip(stats.masses.iter())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        assert!(l1 < 0.02, "L1 distance {l1}");

        let bound = gaussian_product_energy(&t, &c).unwrap();
        assert!(even.energies[0] <= bound + 1e-9);
        // In the near-harmonic regime the bound is tight.
        assert_relative_eq!(even.energies[0], bound, max_relative = 1e-3);
    }

    #[test]
    fn imaginary_time_energy_is_monotone() {
        let c = ctx();
        let t = taylor_at(2.2);
        let policy = GridPolicy { n_base: 32, ..Default::default() };
        let h = build_hamiltonian_3ion(&t, &c, &policy).unwrap();
        let it = ground_state(&h, GroundMethod::ImaginaryTime { max_steps: 12000 }).unwrap();
        assert!(!it.energy_history.is_empty());
        for pair in it.energy_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "energy rose: {} -> {}", pair[0], pair[1]);
        }
        assert!(it.residuals[0] < RESIDUAL_TARGET);
        let lz = ground_state(&h, GroundMethod::default()).unwrap();
        assert_abs_diff_eq!(it.energies[0], lz.energies[0], epsilon = 1e-5);
    }

    #[test]
    fn grid_refinement_is_stable() {
        let c = ctx();
        let t = taylor_at(rc3());
        let coarse = build_hamiltonian_3ion(&t, &c, &GridPolicy { n_base: 32, ..Default::default() })
            .unwrap();
        let fine = build_hamiltonian_3ion(&t, &c, &GridPolicy { n_base: 64, ..Default::default() })
            .unwrap();
        let e_coarse = ground_state(&coarse, GroundMethod::default()).unwrap().energies[0];
        let e_fine = ground_state(&fine, GroundMethod::default()).unwrap().energies[0];
        assert_relative_eq!(e_coarse, e_fine, max_relative = 1e-5);
    }

    #[test]
    fn site_product_state_carries_no_entropy() {
        // An isotropic Gaussian is a product over any orthogonal frame, in
        // particular over the site coordinates: its Schmidt spectrum is a
        // single term.
        let c = ctx();
        let t = taylor_at(1.7);
        let h = build_hamiltonian_3ion(&t, &c, &GridPolicy::default()).unwrap();
        let pts: Vec<Vec<f64>> = h.axes().iter().map(|a| a.points()).collect();
        let sigma = 0.8f64;
        let mut amps = Vec::with_capacity(h.n_points());
        for &q0 in &pts[0] {
            for &q1 in &pts[1] {
                for &q2 in &pts[2] {
                    let r2 = q0 * q0 + q1 * q1 + q2 * q2;
                    amps.push(Complex64::new((-r2 / (4.0 * sigma * sigma)).exp(), 0.0));
                }
            }
        }
        let mut state = RadialWavefunction::new(h.axes().to_vec(), amps).unwrap();
        state.normalize();
        let s = reduced_entropy_site(&h, &state, 0).unwrap();
        assert!(s < 1e-3, "product state entropy {s}");
    }

    #[test]
    fn decoupled_model_weights_and_near_critical_gap() {
        let c = ctx();
        let t = taylor_at(rc3() - 0.001);
        let dec = decoupled_mode_model(&t, &c, &GridPolicy::default(), 0).unwrap();
        // Variance identity weights for an outer ion: 1/6, 1/2, 1/3.
        assert_abs_diff_eq!(dec.site_weights[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.site_weights[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.site_weights[2], 1.0 / 3.0, epsilon = 1e-12);
        let recon: f64 = dec
            .site_weights
            .iter()
            .zip(dec.mode_variances.iter())
            .map(|(&w, &v)| w * v)
            .sum();
        assert_abs_diff_eq!(dec.second_moment, recon, epsilon = 1e-14);
        // Soft-mode tunnelling gap just below the transition.
        assert_relative_eq!(dec.gap_hz, 381.0, max_relative = 0.03);
        // The marginal is a normalized probability.
        assert_abs_diff_eq!(dec.statistics.integral(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn decoupled_model_handles_longer_chains() {
        let c = ctx();
        let chain = find_equilibrium(5, 10.0, f64::INFINITY, 1, Seed::Heuristic).unwrap();
        let rc5 = critical_frequency(5).unwrap();
        let t = taylor_expand(&chain, rc5 - 0.01).unwrap();
        let dec = decoupled_mode_model(&t, &c, &GridPolicy::default(), 0).unwrap();
        assert_eq!(dec.site_weights.len(), 5);
        assert!(dec.entropy_bits.is_none());
        assert_abs_diff_eq!(dec.site_weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(dec.second_moment > 0.0);
        assert_abs_diff_eq!(dec.statistics.integral(), 1.0, epsilon = 1e-9);
        // The full solver refuses anything but 3 ions.
        assert!(matches!(
            build_hamiltonian_3ion(&t, &c, &GridPolicy::default()),
            Err(FewBodyError::NotThreeIons { n: 5 })
        ));
    }

    #[test]
    fn entropy_scan_crosses_the_transition() {
        let c = ctx();
        let rc = rc3();
        let rs = [rc - 0.004, rc, 1.70];
        let records = entropy_scan(&rs, &c, &GridPolicy::default()).unwrap();
        assert_eq!(records.len(), 3);
        for (rec, &r) in records.iter().zip(rs.iter()) {
            assert_eq!(rec.r_x, r);
            assert!(rec.entropy_bits.is_finite() && rec.entropy_bits >= 0.0);
            assert!(rec.gap_hz > 0.0);
            assert!(rec.ground_energy <= rec.gaussian_bound + 1e-9);
        }
        // Frozen values on each side of the transition.
        assert_abs_diff_eq!(records[0].entropy_bits, 1.7756, epsilon = 0.02);
        assert_abs_diff_eq!(records[1].entropy_bits, 1.6916, epsilon = 0.015);
        // Far above the transition the Gaussian closed form is exact to the
        // test tolerance.
        let nm = normal_modes(&taylor_at(1.70));
        let s_gauss = single_site_entropy(&ground_state_covariance(&nm).unwrap(), 0).unwrap();
        assert_abs_diff_eq!(records[2].entropy_bits, s_gauss, epsilon = 0.02);
        // The entropy maximum sits below the critical ratio.
        assert!(records[0].entropy_bits > records[1].entropy_bits);
        assert!(records[1].entropy_bits > records[2].entropy_bits);
        // Spread shrinks with confinement.
        assert!(records[0].rms_m > records[1].rms_m);
        assert!(records[1].rms_m > records[2].rms_m);
        // CSV contract.
        let csv = scan_csv(&records);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "r_x,S_bits,sqrt_x2_m,gap_Hz");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn coarse_grids_are_rejected() {
        let c = ctx();
        // Stiff axes under-resolved.
        let t = taylor_at(1.7);
        assert!(matches!(
            build_hamiltonian_3ion(&t, &c, &GridPolicy { n_base: 8, ..Default::default() }),
            Err(FewBodyError::GridTooCoarse { .. })
        ));
        // Soft axis capped below the deep-well requirement.
        let t_deep = taylor_at(rc3() - 0.03);
        assert!(matches!(
            build_hamiltonian_3ion(
                &t_deep,
                &c,
                &GridPolicy { n_base: 64, n_cap: 64, ..Default::default() }
            ),
            Err(FewBodyError::GridTooCoarse { axis: 0, .. })
        ));
    }

    #[test]
    fn failed_convergence_reports_residual_history() {
        let c = ctx();
        let t = taylor_at(rc3());
        let h = build_hamiltonian_3ion(&t, &c, &GridPolicy::default()).unwrap();
        let err = sector_ground(&h, Parity::Even, GroundMethod::IterativeEigensolver { max_rounds: 1 })
            .unwrap_err();
        match err {
            FewBodyError::NotConverged { history, target } => {
                assert!(!history.is_empty());
                assert_eq!(target, RESIDUAL_TARGET);
            }
            other => panic!("expected NotConverged, got {other}"),
        }
    }

    #[test]
    fn wavefunction_validation() {
        let axes = vec![GridAxis { n: 8, step: 0.5 }];
        let bad = RadialWavefunction::new(axes.clone(), vec![Complex64::new(1.0, 0.0); 8]).unwrap();
        assert!(matches!(bad.assert_normalized(1e-9), Err(FewBodyError::NotNormalized { .. })));
        let mut ok = bad.clone();
        ok.normalize();
        assert!(ok.assert_normalized(1e-9).is_ok());
        assert_eq!(ok.d(), 1);
        // Mismatched amplitude count.
        assert!(RadialWavefunction::new(axes, vec![Complex64::new(1.0, 0.0); 7]).is_err());
    }
}
