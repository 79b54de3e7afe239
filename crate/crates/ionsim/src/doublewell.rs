//! One-dimensional quantum engine for the soft-mode potential
//! `V(x) = ½ a x² + ¼ b x⁴ + α₃ x³`.
//!
//! Everything in this module works in SI units: positions in metres, energies
//! in joules, times in seconds.  The quartic stiffness `b` and effective mass
//! `m` must be positive; `a < 0` produces a double well whose minima sit at
//! `±√(−a/b)`, and the optional cubic coefficient `α₃` tilts the two wells
//! against each other.
//!
//! Statics are solved with a finite-difference Hamiltonian on a uniform grid
//! (Sturm-sequence bisection for eigenvalues, shifted inverse iteration with
//! partial pivoting for eigenvectors).  Dynamics use the Crank–Nicolson
//! (Cayley) propagator built from the *same* tridiagonal Hamiltonian, which is
//! unconditionally stable and exactly norm-preserving, and keeps the evolved
//! spectrum consistent with the eigensolver so that tunneling periods and
//! adiabatic fidelities can be checked without discretization cross-talk.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::units::HBAR;

/// Planck constant h = 2πħ (J·s), used for splitting → rate conversions.
const H_PLANCK: f64 = 2.0 * PI * HBAR;

/// Errors produced by the double-well engine.
#[derive(Debug, Error)]
pub enum DoubleWellError {
    /// A structural parameter is outside its allowed range.
    #[error("invalid potential parameter {what} = {value:e}")]
    InvalidPotential { what: &'static str, value: f64 },
    /// An operation that needs two wells was given `a ≥ 0`.
    #[error("not a double well: a = {a:e} J/m^2 (need a < 0)")]
    NotADoubleWell { a: f64 },
    /// The grid does not cover the classical turning points with a margin of
    /// three decay widths.
    #[error("grid half-span {span:e} m too small; need at least {required:e} m")]
    GridTooSmall { span: f64, required: f64 },
    /// The requested time step under-resolves ħ/ΔE or the drive period.
    /// Raised by schedule validation before any propagation is performed.
    #[error("time step {dt:e} s too large; limit is {max_dt:e} s")]
    StepTooLarge { dt: f64, max_dt: f64 },
    /// A schedule field is structurally invalid (non-positive duration, ...).
    #[error("invalid evolution schedule: {0}")]
    InvalidSchedule(String),
    /// The potential does not support a localized left/right doublet.
    #[error("no double-well doublet: {0}")]
    NoDoublet(String),
    /// The eigensolver could not reach the requested residual.
    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),
}

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

/// Quartic potential `V(x) = ½ a x² + ¼ b x⁴ + α₃ x³` with effective mass `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential1D {
    /// Quadratic coefficient (J/m²); negative values open a double well.
    pub a: f64,
    /// Quartic coefficient (J/m⁴) in the quarter convention; must be > 0.
    pub b: f64,
    /// Cubic bias coefficient (J/m³); 0 keeps the potential reflection
    /// symmetric.
    pub alpha3: f64,
    /// Effective mass of the mode coordinate (kg); must be > 0.
    pub mass: f64,
}

impl Potential1D {
    /// Builds a symmetric potential (no cubic bias).
    pub fn symmetric(a: f64, b: f64, mass: f64) -> Result<Self, DoubleWellError> {
        Self::new(a, b, 0.0, mass)
    }

    /// Builds a potential, checking `b > 0`, `m > 0` and finiteness.
    pub fn new(a: f64, b: f64, alpha3: f64, mass: f64) -> Result<Self, DoubleWellError> {
        let p = Potential1D { a, b, alpha3, mass };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), DoubleWellError> {
        if !self.a.is_finite() {
            return Err(DoubleWellError::InvalidPotential { what: "a", value: self.a });
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(DoubleWellError::InvalidPotential { what: "b", value: self.b });
        }
        if !self.alpha3.is_finite() {
            return Err(DoubleWellError::InvalidPotential { what: "alpha3", value: self.alpha3 });
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(DoubleWellError::InvalidPotential { what: "mass", value: self.mass });
        }
        Ok(())
    }

    /// Potential energy at `x` (J).
    pub fn value(&self, x: f64) -> f64 {
        0.5 * self.a * x * x + 0.25 * self.b * x.powi(4) + self.alpha3 * x.powi(3)
    }

    /// Second derivative V''(x) (J/m²).
    pub fn curvature(&self, x: f64) -> f64 {
        self.a + 3.0 * self.b * x * x + 6.0 * self.alpha3 * x
    }

    /// Real critical points of V (roots of `x(a + 3α₃x + bx²)`), ascending.
    pub fn critical_points(&self) -> Vec<f64> {
        let mut roots = vec![0.0];
        let disc = 9.0 * self.alpha3 * self.alpha3 - 4.0 * self.a * self.b;
        if disc > 0.0 {
            let s = disc.sqrt();
            roots.push((-3.0 * self.alpha3 + s) / (2.0 * self.b));
            roots.push((-3.0 * self.alpha3 - s) / (2.0 * self.b));
        } else if disc == 0.0 && (self.alpha3 != 0.0 || self.a != 0.0) {
            roots.push(-3.0 * self.alpha3 / (2.0 * self.b));
        }
        roots.sort_by(|p, q| p.partial_cmp(q).unwrap());
        roots.dedup_by(|p, q| (*p - *q).abs() < 1e-300);
        roots
    }

    /// Local minima of V as `(x, V''(x))`, ascending in `x`; only strictly
    /// positive curvatures count.
    pub fn minima(&self) -> Vec<(f64, f64)> {
        self.critical_points()
            .into_iter()
            .filter_map(|x| {
                let c = self.curvature(x);
                (c > 0.0).then_some((x, c))
            })
            .collect()
    }

    /// Barrier between two wells: `(x_top, V(x_top))` at the interior local
    /// maximum, or `None` if the potential has fewer than two minima.
    pub fn barrier(&self) -> Option<(f64, f64)> {
        let minima = self.minima();
        if minima.len() < 2 {
            return None;
        }
        let top = self
            .critical_points()
            .into_iter()
            .find(|&x| x > minima[0].0 && x < minima[minima.len() - 1].0 && self.curvature(x) < 0.0)?;
        Some((top, self.value(top)))
    }

    /// Distance between the two minima of a symmetric double well, `2√(−a/b)`.
    pub fn well_separation(&self) -> Result<f64, DoubleWellError> {
        if self.a >= 0.0 {
            return Err(DoubleWellError::NotADoubleWell { a: self.a });
        }
        Ok(2.0 * (-self.a / self.b).sqrt())
    }

    /// Length scale of the bare quartic problem, `(ħ²/(2m·(b/4)))^{1/6}`.
    fn quartic_length(&self) -> f64 {
        (HBAR * HBAR / (2.0 * self.mass * (self.b / 4.0))).powf(1.0 / 6.0)
    }

    /// Ground-state width at a local minimum with curvature `c`:
    /// σ = √(ħ/(2mω)) with ω = √(c/m).
    fn local_width(&self, curvature: f64) -> f64 {
        let omega = (curvature / self.mass).sqrt();
        (HBAR / (2.0 * self.mass * omega)).sqrt()
    }

    /// Default half-span used when no explicit grid span is given: the widest
    /// critical point plus twelve reference widths, where the reference width
    /// is the smaller of the tightest local harmonic width and the quartic
    /// length (the state is confined by whichever term is steeper).
    pub fn default_span(&self) -> f64 {
        let x_ext = self
            .critical_points()
            .into_iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        let sigma_loc = self
            .minima()
            .into_iter()
            .map(|(_, c)| self.local_width(c))
            .fold(f64::INFINITY, f64::min);
        let sigma = sigma_loc.min(self.quartic_length());
        1.3 * x_ext + 12.0 * sigma
    }
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Uniform interior-node grid on `[-span, span]` with Dirichlet boundaries.
///
/// Nodes sit at `x_i = -span + (i+1)h`, `h = 2·span/(n+1)`, so the mirror of
/// node `i` is exactly node `n-1-i` and parity is represented exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    /// Number of interior nodes.
    pub n: usize,
    /// Half-extent of the box (m).
    pub span: f64,
    /// Node spacing (m).
    pub h: f64,
    /// Node positions (m), ascending.
    pub x: Vec<f64>,
}

impl Grid1D {
    /// Builds a grid with `n ≥ 8` interior nodes on `[-span, span]`.
    pub fn new(n: usize, span: f64) -> Result<Self, DoubleWellError> {
        if n < 8 {
            return Err(DoubleWellError::InvalidPotential { what: "grid n", value: n as f64 });
        }
        if !(span.is_finite() && span > 0.0) {
            return Err(DoubleWellError::InvalidPotential { what: "grid span", value: span });
        }
        let h = 2.0 * span / (n as f64 + 1.0);
        let x = (0..n).map(|i| -span + (i as f64 + 1.0) * h).collect();
        Ok(Grid1D { n, span, h, x })
    }
}

/// Grid request: node count plus an optional explicit half-span.  With
/// `span: None` the span is derived from the potential's critical points and
/// ground widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Number of interior nodes.
    pub n: usize,
    /// Half-extent override (m); `None` selects the automatic policy.
    pub span: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: 4096, span: None }
    }
}

impl GridSpec {
    /// Resolves the request against a potential.
    pub fn resolve(&self, p: &Potential1D) -> Result<Grid1D, DoubleWellError> {
        let span = self.span.unwrap_or_else(|| p.default_span());
        Grid1D::new(self.n, span)
    }
}

// ---------------------------------------------------------------------------
// Finite-difference Hamiltonian and eigensolver
// ---------------------------------------------------------------------------

/// Tridiagonal FD Hamiltonian: diagonal `V(x_i) + 2t`, off-diagonal `-t`,
/// with `t = ħ²/(2mh²)`.
struct FdHamiltonian {
    diag: Vec<f64>,
    t: f64,
}

impl FdHamiltonian {
    fn new(p: &Potential1D, grid: &Grid1D) -> Self {
        let t = HBAR * HBAR / (2.0 * p.mass * grid.h * grid.h);
        let diag = grid.x.iter().map(|&x| p.value(x) + 2.0 * t).collect();
        FdHamiltonian { diag, t }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            let mut acc = self.diag[i] * v[i];
            if i > 0 {
                acc -= self.t * v[i - 1];
            }
            if i + 1 < n {
                acc -= self.t * v[i + 1];
            }
            out[i] = acc;
        }
    }

    /// Gershgorin bound on the spectral radius, used as the error scale.
    fn scale(&self) -> f64 {
        self.diag
            .iter()
            .fold(0.0f64, |acc, &d| acc.max(d.abs()))
            + 2.0 * self.t.abs()
    }

    /// Number of eigenvalues strictly below `lambda` (Sturm sequence).
    fn count_below(&self, lambda: f64) -> usize {
        let t2 = self.t * self.t;
        let mut count = 0usize;
        let mut q = self.diag[0] - lambda;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            if q.abs() < 1e-300 {
                q = -1e-300;
            }
            q = self.diag[i] - lambda - t2 / q;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// k-th smallest eigenvalue (0-based) by bisection to machine precision.
    fn eigenvalue(&self, k: usize) -> f64 {
        let dmin = self.diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = self.diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = dmin - 2.0 * self.t.abs();
        let mut hi = dmax + 2.0 * self.t.abs();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(H - shift) y = rhs` by Gaussian elimination with partial
    /// pivoting on the tridiagonal band (LAPACK `dgtsv` layout).
    fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut d: Vec<f64> = self.diag.iter().map(|&v| v - shift).collect();
        let mut dl = vec![-self.t; n - 1];
        let mut du = vec![-self.t; n - 1];
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut b = rhs.to_vec();
        let tiny = 1e-300;
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                // No row interchange.
                let pivot = if d[i] != 0.0 { d[i] } else { tiny };
                d[i] = pivot;
                let fact = dl[i] / pivot;
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
                if i < n - 2 {
                    du2[i] = 0.0;
                }
                dl[i] = 0.0;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i < n - 2 {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du2[i];
                }
                du[i] = temp;
                let tb = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tb - fact * b[i];
                dl[i] = fact;
            }
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = b[n - 1] / d[n - 1];
        if n >= 2 {
            x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        x
    }
}

fn normalize_l2(v: &mut [f64]) {
    let norm = v.iter().map(|&y| y * y).sum::<f64>().sqrt();
    if norm > 0.0 {
        for y in v.iter_mut() {
            *y /= norm;
        }
    }
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // Two classical Gram-Schmidt passes for numerical robustness.
    for _ in 0..2 {
        for u in basis {
            let dot: f64 = v.iter().zip(u.iter()).map(|(&a, &b)| a * b).sum();
            for (y, &b) in v.iter_mut().zip(u.iter()) {
                *y -= dot * b;
            }
        }
    }
}

/// Eigen-decomposition of the lowest `k` states of a quartic potential on a
/// grid, plus the context needed to interpret them.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// Lowest `k` eigenenergies, ascending (J).
    pub energies: Vec<f64>,
    /// Eigenstates as grid samples normalized to `Σ ψ² h = 1` (m^{-1/2});
    /// the sign is fixed so the largest-magnitude sample is positive.
    pub states: Vec<Vec<f64>>,
    /// Grid the problem was solved on.
    pub grid: Grid1D,
    /// The potential that was solved.
    pub potential: Potential1D,
    /// Barrier-top energy between the wells, if the potential has two minima.
    pub barrier_top: Option<f64>,
    /// Largest relative eigen-residual ‖Hψ − Eψ‖ / ‖H‖ over the returned set.
    pub max_residual: f64,
}

impl SpectralResult {
    /// Position expectation value of state `k` (m).
    pub fn x_mean(&self, k: usize) -> f64 {
        self.states[k]
            .iter()
            .zip(self.grid.x.iter())
            .map(|(&psi, &x)| x * psi * psi)
            .sum::<f64>()
            * self.grid.h
    }

    /// Matrix element ⟨k|x|l⟩ (m).
    pub fn x_element(&self, k: usize, l: usize) -> f64 {
        self.states[k]
            .iter()
            .zip(self.states[l].iter())
            .zip(self.grid.x.iter())
            .map(|((&pa, &pb), &x)| pa * pb * x)
            .sum::<f64>()
            * self.grid.h
    }

    /// Energy quadratic form ⟨v|H|w⟩ for grid-sampled real states (J).
    pub fn energy_form(&self, v: &[f64], w: &[f64]) -> f64 {
        let ham = FdHamiltonian::new(&self.potential, &self.grid);
        let mut hw = vec![0.0; w.len()];
        ham.apply(w, &mut hw);
        v.iter().zip(hw.iter()).map(|(&a, &b)| a * b).sum::<f64>() * self.grid.h
    }
}

/// Solves the lowest `k` eigenstates of `p` on the requested grid.
///
/// After solving, the grid extent is checked: the classical turning point of
/// the highest requested level must sit at least three exponential decay
/// widths `1/κ = ħ/√(2m(V(span) − E))` inside the box edge; otherwise a
/// `GridTooSmall` error is returned.  Eigen-residuals are verified to be
/// below `1e-8` relative to the spectral scale.
pub fn eigenstates_1d(
    p: &Potential1D,
    grid: GridSpec,
    k: usize,
) -> Result<SpectralResult, DoubleWellError> {
    p.validate()?;
    if k == 0 {
        return Err(DoubleWellError::InvalidPotential { what: "k", value: 0.0 });
    }
    let grid = grid.resolve(p)?;
    if k >= grid.n / 2 {
        return Err(DoubleWellError::InvalidPotential { what: "k", value: k as f64 });
    }
    let ham = FdHamiltonian::new(p, &grid);
    let scale = ham.scale();
    let mut energies = Vec::with_capacity(k);
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut basis_l2: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut max_residual = 0.0f64;
    for idx in 0..k {
        let lambda = ham.eigenvalue(idx);
        // Inverse iteration from a smooth seed with the right number of sign
        // changes; the shift is offset by a few ulps of the spectral scale so
        // the factorization stays finite even at an exact eigenvalue.
        let shift = lambda + scale * 1e-13;
        let n = grid.n;
        let mut v: Vec<f64> = (0..n)
            .map(|i| ((idx as f64 + 1.0) * PI * (i as f64 + 1.0) / (n as f64 + 1.0)).sin())
            .collect();
        normalize_l2(&mut v);
        let mut residual = f64::INFINITY;
        for _ in 0..6 {
            orthogonalize(&mut v, &basis_l2);
            let mut w = ham.solve_shifted(shift, &v);
            orthogonalize(&mut w, &basis_l2);
            normalize_l2(&mut w);
            v = w;
            let mut hv = vec![0.0; n];
            ham.apply(&v, &mut hv);
            residual = v
                .iter()
                .zip(hv.iter())
                .map(|(&a, &b)| (b - lambda * a) * (b - lambda * a))
                .sum::<f64>()
                .sqrt()
                / scale;
            if residual < 1e-10 {
                break;
            }
        }
        if residual > 1e-8 {
            return Err(DoubleWellError::EigensolverFailure(format!(
                "state {idx} residual {residual:e} exceeds 1e-8"
            )));
        }
        max_residual = max_residual.max(residual);
        // Deterministic sign: largest-magnitude sample positive.
        let imax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if v[imax] < 0.0 {
            for y in v.iter_mut() {
                *y = -*y;
            }
        }
        // Convert to physical normalization Σ ψ² h = 1.
        let inv_sqrt_h = 1.0 / grid.h.sqrt();
        let psi: Vec<f64> = v.iter().map(|&y| y * inv_sqrt_h).collect();
        energies.push(lambda);
        states.push(psi);
        basis_l2.push(v);
    }
    let e_top = energies[k - 1];
    let v_edge = p.value(grid.span);
    let x_turn = grid
        .x
        .iter()
        .filter(|&&x| p.value(x) <= e_top)
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let required = if v_edge > e_top {
        let kappa = (2.0 * p.mass * (v_edge - e_top)).sqrt() / HBAR;
        x_turn + 3.0 / kappa
    } else {
        f64::INFINITY
    };
    if grid.span < required {
        return Err(DoubleWellError::GridTooSmall { span: grid.span, required });
    }
    let barrier_top = p.barrier().map(|(_, v)| v);
    Ok(SpectralResult {
        energies,
        states,
        grid,
        potential: *p,
        barrier_top,
        max_residual,
    })
}

// ---------------------------------------------------------------------------
// Tunneling splitting and localized states
// ---------------------------------------------------------------------------

/// Doublet splitting of a double well and the associated tunneling rate.
#[derive(Debug, Clone, Copy)]
pub struct TunnelingSplitting {
    /// ΔE = E₁ − E₀ (J).
    pub delta_e: f64,
    /// Tunneling rate ΔE/h (Hz).
    pub rate_hz: f64,
    /// The two doublet energies (J).
    pub energies: [f64; 2],
}

/// Computes the ground-doublet splitting `ΔE = E₁ − E₀` and the tunneling
/// rate `ΔE/h` for a double well (`a < 0` required).
pub fn tunneling_splitting(p: &Potential1D) -> Result<TunnelingSplitting, DoubleWellError> {
    tunneling_splitting_on(p, GridSpec::default())
}

/// As [`tunneling_splitting`], with explicit grid control.
pub fn tunneling_splitting_on(
    p: &Potential1D,
    grid: GridSpec,
) -> Result<TunnelingSplitting, DoubleWellError> {
    if p.a >= 0.0 {
        return Err(DoubleWellError::NotADoubleWell { a: p.a });
    }
    let sol = eigenstates_1d(p, grid, 2)?;
    let delta_e = sol.energies[1] - sol.energies[0];
    Ok(TunnelingSplitting {
        delta_e,
        rate_hz: delta_e / H_PLANCK,
        energies: [sol.energies[0], sol.energies[1]],
    })
}

/// Left/right localized superpositions of a double-well doublet.
#[derive(Debug, Clone)]
pub struct LocalizedPair {
    /// State concentrated in the left well (⟨L|x|L⟩ < 0), `Σ ψ² h = 1`.
    pub left: Vec<f64>,
    /// State concentrated in the right well.
    pub right: Vec<f64>,
    /// ⟨L|x|L⟩ (m).
    pub x_left: f64,
    /// ⟨R|x|R⟩ (m).
    pub x_right: f64,
    /// Present when the doublet is not cleanly below the barrier top, in
    /// which case the pair is poorly localized.
    pub warning: Option<String>,
}

/// Forms the localized pair `(|0⟩ ∓ |1⟩)/√2` from a solved double-well
/// doublet, with the sign fixed so that ⟨L|x|L⟩ < 0.
///
/// If the first excited state lies above the barrier top the pair is still
/// returned but carries a warning instead of failing.
pub fn localized_states(sol: &SpectralResult) -> Result<LocalizedPair, DoubleWellError> {
    if sol.energies.len() < 2 {
        return Err(DoubleWellError::NoDoublet("need at least two states".into()));
    }
    let barrier = sol
        .barrier_top
        .ok_or_else(|| DoubleWellError::NoDoublet("potential has fewer than two wells".into()))?;
    let s = 1.0 / 2.0f64.sqrt();
    let minus: Vec<f64> = sol.states[0]
        .iter()
        .zip(sol.states[1].iter())
        .map(|(&a, &b)| s * (a - b))
        .collect();
    let plus: Vec<f64> = sol.states[0]
        .iter()
        .zip(sol.states[1].iter())
        .map(|(&a, &b)| s * (a + b))
        .collect();
    let x_of = |v: &[f64]| -> f64 {
        v.iter()
            .zip(sol.grid.x.iter())
            .map(|(&psi, &x)| x * psi * psi)
            .sum::<f64>()
            * sol.grid.h
    };
    let (left, right) = if x_of(&minus) <= x_of(&plus) {
        (minus, plus)
    } else {
        (plus, minus)
    };
    let x_left = x_of(&left);
    let x_right = x_of(&right);
    let warning = (sol.energies[1] > barrier).then(|| {
        format!(
            "doublet top {:.3e} J lies above the barrier top {:.3e} J; \
             the pair is not well localized",
            sol.energies[1], barrier
        )
    });
    Ok(LocalizedPair { left, right, x_left, x_right, warning })
}

/// Localized pair obtained by diagonalizing the position operator inside the
/// doublet span.  For a reflection-symmetric well this coincides with
/// [`localized_states`]; with a cubic bias it remains the natural definition
/// of "well states" because it extremizes ⟨x⟩ within the two-state subspace.
pub fn position_localized_doublet(sol: &SpectralResult) -> Result<LocalizedPair, DoubleWellError> {
    if sol.energies.len() < 2 {
        return Err(DoubleWellError::NoDoublet("need at least two states".into()));
    }
    let barrier = sol
        .barrier_top
        .ok_or_else(|| DoubleWellError::NoDoublet("potential has fewer than two wells".into()))?;
    // 2x2 symmetric eigenproblem for X = [[x00, x01], [x01, x11]].
    let x00 = sol.x_element(0, 0);
    let x11 = sol.x_element(1, 1);
    let x01 = sol.x_element(0, 1);
    let theta = 0.5 * (2.0 * x01).atan2(x00 - x11);
    let (c, s) = (theta.cos(), theta.sin());
    // Eigenvector for the larger eigenvalue is (c, s); the smaller is (-s, c).
    let combine = |u: f64, v: f64| -> Vec<f64> {
        sol.states[0]
            .iter()
            .zip(sol.states[1].iter())
            .map(|(&a, &b)| u * a + v * b)
            .collect()
    };
    let hi = combine(c, s);
    let lo = combine(-s, c);
    let x_of = |v: &[f64]| -> f64 {
        v.iter()
            .zip(sol.grid.x.iter())
            .map(|(&psi, &x)| x * psi * psi)
            .sum::<f64>()
            * sol.grid.h
    };
    let (left, right) = if x_of(&lo) <= x_of(&hi) { (lo, hi) } else { (hi, lo) };
    let x_left = x_of(&left);
    let x_right = x_of(&right);
    let warning = (sol.energies[1] > barrier).then(|| {
        format!(
            "doublet top {:.3e} J lies above the barrier top {:.3e} J; \
             the pair is not well localized",
            sol.energies[1], barrier
        )
    });
    Ok(LocalizedPair { left, right, x_left, x_right, warning })
}

/// Left-right energy asymmetry ⟨L|H|L⟩ − ⟨R|H|R⟩ (J) of a cubically biased
/// double well, with L/R taken from the position-localized doublet.
///
/// Errors if `a ≥ 0`, or if the bias is so strong that one of the wells no
/// longer holds a bound level (depth below ħω/2 for its local curvature), or
/// has disappeared outright.
pub fn cubic_bias_gap(p: &Potential1D) -> Result<f64, DoubleWellError> {
    cubic_bias_gap_on(p, GridSpec::default())
}

/// As [`cubic_bias_gap`], with explicit grid control.
pub fn cubic_bias_gap_on(p: &Potential1D, grid: GridSpec) -> Result<f64, DoubleWellError> {
    if p.a >= 0.0 {
        return Err(DoubleWellError::NotADoubleWell { a: p.a });
    }
    let minima = p.minima();
    if minima.len() < 2 {
        return Err(DoubleWellError::NoDoublet(
            "cubic bias removed one of the wells".into(),
        ));
    }
    let (_, v_top) = p
        .barrier()
        .ok_or_else(|| DoubleWellError::NoDoublet("no barrier between wells".into()))?;
    for &(x_min, curv) in &minima {
        let depth = v_top - p.value(x_min);
        let omega = (curv / p.mass).sqrt();
        if depth < 0.5 * HBAR * omega {
            return Err(DoubleWellError::NoDoublet(format!(
                "well at {x_min:e} m is too shallow to hold a bound level \
                 (depth {depth:e} J < half quantum {:e} J)",
                0.5 * HBAR * omega
            )));
        }
    }
    let sol = eigenstates_1d(p, grid, 2)?;
    let pair = position_localized_doublet(&sol)?;
    Ok(sol.energy_form(&pair.left, &pair.left) - sol.energy_form(&pair.right, &pair.right))
}

// ---------------------------------------------------------------------------
// Time evolution
// ---------------------------------------------------------------------------

/// Complex amplitude type used by the propagator.
pub type C64 = num_complex::Complex64;

/// Time-dependence of the Hamiltonian during one evolution run.
///
/// `Sweep` moves the quadratic coefficient linearly from `a_start` to `a_end`
/// over `duration`; `Drive` adds the spatially linear term
/// `(V₀/x_s)·x·cos(ωt)` with `x_s = √(−a/b)` (a spatially uniform drive would
/// be a pure global phase).  A drive with `amplitude = 0` evolves under the
/// static potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvolutionSchedule {
    /// Linear ramp of the quadratic coefficient.
    Sweep {
        /// Initial quadratic coefficient (J/m²).
        a_start: f64,
        /// Final quadratic coefficient (J/m²).
        a_end: f64,
        /// Total ramp time (s).
        duration: f64,
        /// Time step (s).
        dt: f64,
    },
    /// Monochromatic linear drive on a static potential.
    Drive {
        /// Drive strength V₀ (J); the drive term is `(V₀/x_s)·x·cos(ωt)`.
        amplitude: f64,
        /// Angular drive frequency (rad/s).
        omega: f64,
        /// Total drive time (s).
        duration: f64,
        /// Time step (s).
        dt: f64,
    },
}

impl EvolutionSchedule {
    fn duration(&self) -> f64 {
        match *self {
            EvolutionSchedule::Sweep { duration, .. } => duration,
            EvolutionSchedule::Drive { duration, .. } => duration,
        }
    }

    fn dt(&self) -> f64 {
        match *self {
            EvolutionSchedule::Sweep { dt, .. } => dt,
            EvolutionSchedule::Drive { dt, .. } => dt,
        }
    }

    /// Ramp rate |a_end − a_start| / duration for sweeps (J/m²/s), 0 for
    /// drives.
    pub fn rate(&self) -> f64 {
        match *self {
            EvolutionSchedule::Sweep { a_start, a_end, duration, .. } => {
                (a_end - a_start).abs() / duration
            }
            EvolutionSchedule::Drive { .. } => 0.0,
        }
    }

    /// Checks schedule invariants against the potential and grid **before**
    /// any propagation: positive duration and step, and a step that resolves
    /// both ħ/(E₃−E₀) at the schedule endpoints and (for drives) the drive
    /// period by at least 20 samples.  Returns the permitted maximum step.
    pub fn validate(&self, p: &Potential1D, grid: &Grid1D) -> Result<f64, DoubleWellError> {
        let duration = self.duration();
        let dt = self.dt();
        if !(duration.is_finite() && duration > 0.0) {
            return Err(DoubleWellError::InvalidSchedule(format!(
                "duration must be positive, got {duration:e}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0 && dt <= duration) {
            return Err(DoubleWellError::InvalidSchedule(format!(
                "dt must satisfy 0 < dt <= duration, got {dt:e}"
            )));
        }
        let spec = GridSpec { n: grid.n, span: Some(grid.span) };
        let mut e_char = 0.0f64;
        let mut endpoint = |a: f64, alpha3: f64| -> Result<(), DoubleWellError> {
            let pe = Potential1D { a, b: p.b, alpha3, mass: p.mass };
            let sol = eigenstates_1d(&pe, spec, 4)?;
            e_char = e_char.max(sol.energies[3] - sol.energies[0]);
            Ok(())
        };
        match *self {
            EvolutionSchedule::Sweep { a_start, a_end, .. } => {
                endpoint(a_start, p.alpha3)?;
                endpoint(a_end, p.alpha3)?;
            }
            EvolutionSchedule::Drive { amplitude, omega, .. } => {
                if amplitude != 0.0 {
                    if !(omega.is_finite() && omega > 0.0) {
                        return Err(DoubleWellError::InvalidSchedule(format!(
                            "drive omega must be positive, got {omega:e}"
                        )));
                    }
                    if p.a >= 0.0 {
                        return Err(DoubleWellError::NotADoubleWell { a: p.a });
                    }
                }
                endpoint(p.a, p.alpha3)?;
            }
        }
        let mut max_dt = HBAR / (20.0 * e_char);
        if let EvolutionSchedule::Drive { amplitude, omega, .. } = *self {
            if amplitude != 0.0 {
                max_dt = max_dt.min(2.0 * PI / omega / 20.0);
            }
        }
        if dt > max_dt {
            return Err(DoubleWellError::StepTooLarge { dt, max_dt });
        }
        Ok(max_dt)
    }
}

/// Sampled history of one evolution run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Sample times (s), beginning at 0 and ending at the schedule duration.
    pub times: Vec<f64>,
    /// Population |⟨L|ψ⟩|² of the left probe state (1 if no probes given).
    pub p_left: Vec<f64>,
    /// Population |⟨R|ψ⟩|² of the right probe state (0 if no probes given).
    pub p_right: Vec<f64>,
    /// Position expectation ⟨x⟩ (m).
    pub x_mean: Vec<f64>,
    /// Norm ⟨ψ|ψ⟩ at each sample; the propagator keeps this at 1.
    pub norm: Vec<f64>,
    /// Instantaneous energy ⟨ψ|H(t)|ψ⟩ (J).
    pub energy: Vec<f64>,
    /// Final complex state on the evolution grid (normalized like ψ: Σ|ψ|²h = 1).
    pub final_state: Vec<C64>,
}

impl Trajectory {
    /// Renders the trajectory as CSV with columns `t,p_left,p_right,x_mean,norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,p_left,p_right,x_mean,norm\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.12e}\n",
                self.times[i], self.p_left[i], self.p_right[i], self.x_mean[i], self.norm[i]
            ));
        }
        out
    }
}

/// Crank–Nicolson step: solves `(1 + iλH)ψ' = (1 − iλH)ψ`, λ = dt/2ħ, where
/// `H` is the tridiagonal FD Hamiltonian with diagonal `diag` and constant
/// off-diagonal `-t`.  The Cayley form is exactly norm-preserving.
fn cn_step(diag: &[f64], t: f64, lambda: f64, psi: &mut [C64], work: &mut CnWork) {
    let n = psi.len();
    let i_lam = C64::new(0.0, lambda);
    // Right-hand side: (1 − iλH)ψ.
    for i in 0..n {
        let mut hpsi = psi[i] * diag[i];
        if i > 0 {
            hpsi -= psi[i - 1] * t;
        }
        if i + 1 < n {
            hpsi -= psi[i + 1] * t;
        }
        work.rhs[i] = psi[i] - i_lam * hpsi;
    }
    // Thomas solve of the complex tridiagonal (1 + iλH).
    let off = -i_lam * t;
    let mut beta = C64::new(1.0, 0.0) + i_lam * diag[0];
    psi[0] = work.rhs[0] / beta;
    for i in 1..n {
        work.gamma[i] = off / beta;
        beta = C64::new(1.0, 0.0) + i_lam * diag[i] - off * work.gamma[i];
        psi[i] = (work.rhs[i] - off * psi[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        let g = work.gamma[i + 1];
        psi[i] = psi[i] - g * psi[i + 1];
    }
}

struct CnWork {
    rhs: Vec<C64>,
    gamma: Vec<C64>,
}

fn probe_population(probe: &[f64], psi: &[C64], h: f64) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for (&p, &a) in probe.iter().zip(psi.iter()) {
        acc += a * p;
    }
    (acc * h).norm_sqr()
}

/// Propagates `psi0` under the potential `p` according to `schedule`.
///
/// The state is advanced with the Crank–Nicolson (Cayley) propagator built on
/// the same finite-difference Hamiltonian as [`eigenstates_1d`]; for
/// time-dependent Hamiltonians the midpoint value `H(t + dt/2)` is used, which
/// keeps the scheme second-order.  The schedule is validated *before* the
/// first step; an oversized `dt` returns [`DoubleWellError::StepTooLarge`]
/// without touching the state.
///
/// `probes` supplies the (real, normalized) left and right reference states
/// whose populations are recorded; without probes those columns read 1 and 0.
/// Up to ~2050 uniformly spaced samples are recorded, always including the
/// initial and final times.
pub fn evolve(
    psi0: &[C64],
    p: &Potential1D,
    schedule: &EvolutionSchedule,
    grid: &Grid1D,
    probes: Option<(&[f64], &[f64])>,
) -> Result<Trajectory, DoubleWellError> {
    p.validate()?;
    if psi0.len() != grid.n {
        return Err(DoubleWellError::InvalidSchedule(format!(
            "state length {} does not match grid size {}",
            psi0.len(),
            grid.n
        )));
    }
    schedule.validate(p, grid)?;
    let duration = schedule.duration();
    let dt = schedule.dt();
    let steps = (duration / dt).round().max(1.0) as usize;
    let dt = duration / steps as f64;
    let lambda = dt / (2.0 * HBAR);
    let t_kin = HBAR * HBAR / (2.0 * p.mass * grid.h * grid.h);
    let stride = (steps / 2000).max(1);

    // Static part of the FD diagonal; time-dependent pieces are added per step.
    let base_diag: Vec<f64> = grid.x.iter().map(|&x| p.value(x) + 2.0 * t_kin).collect();
    let x_scale = if p.a < 0.0 { (-p.a / p.b).sqrt() } else { 0.0 };

    let diag_at = |time: f64, buf: &mut Vec<f64>| match *schedule {
        EvolutionSchedule::Sweep { a_start, a_end, duration, .. } => {
            let a_t = a_start + (a_end - a_start) * (time / duration).clamp(0.0, 1.0);
            let da = a_t - p.a;
            buf.clear();
            buf.extend(
                grid.x
                    .iter()
                    .zip(base_diag.iter())
                    .map(|(&x, &d)| d + 0.5 * da * x * x),
            );
        }
        EvolutionSchedule::Drive { amplitude, omega, .. } => {
            buf.clear();
            if amplitude == 0.0 {
                buf.extend(base_diag.iter().copied());
            } else {
                let f = amplitude / x_scale * (omega * time).cos();
                buf.extend(grid.x.iter().zip(base_diag.iter()).map(|(&x, &d)| d + f * x));
            }
        }
    };

    let mut psi: Vec<C64> = psi0.to_vec();
    let mut work = CnWork {
        rhs: vec![C64::new(0.0, 0.0); grid.n],
        gamma: vec![C64::new(0.0, 0.0); grid.n],
    };
    let mut diag = Vec::with_capacity(grid.n);
    let mut traj = Trajectory {
        times: Vec::new(),
        p_left: Vec::new(),
        p_right: Vec::new(),
        x_mean: Vec::new(),
        norm: Vec::new(),
        energy: Vec::new(),
        final_state: Vec::new(),
    };
    let record = |time: f64, psi: &[C64], diag_now: &[f64], traj: &mut Trajectory| {
        let h = grid.h;
        let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum::<f64>() * h;
        let x_mean: f64 = psi
            .iter()
            .zip(grid.x.iter())
            .map(|(a, &x)| a.norm_sqr() * x)
            .sum::<f64>()
            * h;
        let mut energy = 0.0;
        for i in 0..psi.len() {
            let mut hpsi = psi[i] * diag_now[i];
            if i > 0 {
                hpsi -= psi[i - 1] * t_kin;
            }
            if i + 1 < psi.len() {
                hpsi -= psi[i + 1] * t_kin;
            }
            energy += (psi[i].conj() * hpsi).re;
        }
        energy *= h;
        let (pl, pr) = match probes {
            Some((l, r)) => (probe_population(l, psi, h), probe_population(r, psi, h)),
            None => (1.0, 0.0),
        };
        traj.times.push(time);
        traj.p_left.push(pl);
        traj.p_right.push(pr);
        traj.x_mean.push(x_mean);
        traj.norm.push(norm);
        traj.energy.push(energy);
    };

    diag_at(0.0, &mut diag);
    record(0.0, &psi, &diag, &mut traj);
    for step in 0..steps {
        let t_mid = (step as f64 + 0.5) * dt;
        diag_at(t_mid, &mut diag);
        cn_step(&diag, t_kin, lambda, &mut psi, &mut work);
        let t_now = (step as f64 + 1.0) * dt;
        if (step + 1) % stride == 0 || step + 1 == steps {
            diag_at(t_now, &mut diag);
            record(t_now, &psi, &diag, &mut traj);
        }
    }
    traj.final_state = psi;
    Ok(traj)
}

/// Squared overlap |⟨φ|ψ⟩|² of a real reference state with a complex state.
pub fn overlap_fidelity(reference: &[f64], psi: &[C64], h: f64) -> f64 {
    probe_population(reference, psi, h)
}

// ---------------------------------------------------------------------------
// Adiabatic sweeps
// ---------------------------------------------------------------------------

/// Outcome of one adiabatic sweep at a fixed rate.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    /// Ramp rate |Δa|/duration (J/m²/s).
    pub rate: f64,
    /// Ramp time (s).
    pub duration: f64,
    /// |⟨ground(a_end)|ψ_final⟩|².
    pub fidelity: f64,
}

/// Sweeps the quadratic coefficient from `p_start.a` to `a_end` over
/// `duration`, starting from the ground state of `p_start`, and returns the
/// final overlap with the instantaneous ground state plus the trajectory.
///
/// The grid must be wide enough for both endpoint potentials; build it with
/// [`sweep_grid`] unless there is a reason not to.
pub fn adiabatic_ground_state_fidelity(
    p_start: &Potential1D,
    a_end: f64,
    duration: f64,
    dt: f64,
    grid: &Grid1D,
) -> Result<(f64, Trajectory), DoubleWellError> {
    let spec = GridSpec { n: grid.n, span: Some(grid.span) };
    let start = eigenstates_1d(p_start, spec, 2)?;
    let p_end = Potential1D { a: a_end, ..*p_start };
    let end = eigenstates_1d(&p_end, spec, 2)?;
    let psi0: Vec<C64> = start.states[0].iter().map(|&v| C64::new(v, 0.0)).collect();
    let schedule = EvolutionSchedule::Sweep { a_start: p_start.a, a_end, duration, dt };
    let traj = evolve(&psi0, p_start, &schedule, grid, None)?;
    let fidelity = overlap_fidelity(&end.states[0], &traj.final_state, grid.h);
    Ok((fidelity, traj))
}

/// Grid that covers both endpoints of a sweep: the larger of the two
/// automatic spans with `n` interior nodes.
pub fn sweep_grid(
    p_start: &Potential1D,
    a_end: f64,
    n: usize,
) -> Result<Grid1D, DoubleWellError> {
    p_start.validate()?;
    let p_end = Potential1D { a: a_end, ..*p_start };
    Grid1D::new(n, p_start.default_span().max(p_end.default_span()))
}

/// Runs [`adiabatic_ground_state_fidelity`] for each duration in parallel.
pub fn sweep_study(
    p_start: &Potential1D,
    a_end: f64,
    durations: &[f64],
    dt: f64,
    grid: &Grid1D,
) -> Result<Vec<SweepPoint>, DoubleWellError> {
    let rate_of = |duration: f64| (a_end - p_start.a).abs() / duration;
    durations
        .par_iter()
        .map(|&duration| {
            let (fidelity, _) =
                adiabatic_ground_state_fidelity(p_start, a_end, duration, dt, grid)?;
            Ok(SweepPoint { rate: rate_of(duration), duration, fidelity })
        })
        .collect()
}

/// Renders sweep-study points as CSV with columns `rate,fidelity`.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("rate,fidelity\n");
    for p in points {
        out.push_str(&format!("{:.9e},{:.9e}\n", p.rate, p.fidelity));
    }
    out
}

// ---------------------------------------------------------------------------
// Rabi drive
// ---------------------------------------------------------------------------

/// Result of a driven population-transfer scan.
#[derive(Debug, Clone)]
pub struct RabiScan {
    /// Sampled populations and observables over the drive window.
    pub trajectory: Trajectory,
    /// Doublet resonance (E₁ − E₀)/ħ of the undriven potential (rad/s).
    pub resonance_omega: f64,
    /// Extracted population-oscillation angular frequency (rad/s), from the
    /// first maximum of P_R (parabolic refinement); meaningful when the
    /// drive is near resonance.
    pub rabi_omega: f64,
    /// max(P_R) − min(P_R) over the window.
    pub contrast: f64,
    /// Set when the contrast stays below 0.5 (off-resonant or too-weak
    /// drive); the scan is still returned.
    pub low_contrast: bool,
}

/// Drives a (possibly biased) double well with `(V₀/x_s)·x·cos(ωt)` starting
/// from the left-localized doublet state and records the left/right
/// populations.
///
/// The resonance is the solved doublet gap; driving far away from it simply
/// yields a low-contrast scan flagged via `low_contrast` rather than an
/// error.
pub fn rabi_scan(
    p: &Potential1D,
    amplitude: f64,
    omega: f64,
    duration: f64,
    dt: f64,
    grid: GridSpec,
) -> Result<RabiScan, DoubleWellError> {
    if p.a >= 0.0 {
        return Err(DoubleWellError::NotADoubleWell { a: p.a });
    }
    let sol = eigenstates_1d(p, grid, 2)?;
    let pair = position_localized_doublet(&sol)?;
    let resonance_omega = (sol.energies[1] - sol.energies[0]) / HBAR;
    let psi0: Vec<C64> = pair.left.iter().map(|&v| C64::new(v, 0.0)).collect();
    let schedule = EvolutionSchedule::Drive { amplitude, omega, duration, dt };
    let traj = evolve(
        &psi0,
        p,
        &schedule,
        &sol.grid,
        Some((pair.left.as_slice(), pair.right.as_slice())),
    )?;
    // Population-oscillation frequency from the first upward crossing of
    // half the peak height: P_R = C·sin²(Ωt/2) reaches C/2 at t = π/(2Ω).
    // This is robust against the small fast ripple the counter-rotating and
    // diagonal drive terms superimpose on the envelope.
    let pr = &traj.p_right;
    let max_pr = pr.iter().cloned().fold(0.0f64, f64::max);
    let min_pr = pr.iter().cloned().fold(f64::INFINITY, f64::min);
    let half = 0.5 * max_pr;
    let mut t_half = None;
    for i in 1..pr.len() {
        if pr[i - 1] < half && pr[i] >= half {
            let frac = (half - pr[i - 1]) / (pr[i] - pr[i - 1]);
            t_half = Some(traj.times[i - 1] + frac * (traj.times[i] - traj.times[i - 1]));
            break;
        }
    }
    let rabi_omega = match t_half {
        Some(t) if t > 0.0 => PI / (2.0 * t),
        _ => PI / (2.0 * traj.times.last().copied().unwrap_or(duration)),
    };
    let contrast = max_pr - min_pr;
    Ok(RabiScan {
        trajectory: traj,
        resonance_omega,
        rabi_omega,
        contrast,
        low_contrast: contrast < 0.5,
    })
}

// ---------------------------------------------------------------------------
// Reference values for the quartic limit
// ---------------------------------------------------------------------------

/// Single-Gaussian variational ground energy of the pure quartic well
/// `V = ¼ b x⁴`: `(3^{4/3}/2^{8/3})·(ħ⁴(b/4)/m²)^{1/3}`.  This upper-bounds
/// the true ground energy.
pub fn gaussian_quartic_ground(p: &Potential1D) -> f64 {
    let bq = p.b / 4.0;
    (3.0f64.powf(4.0 / 3.0) / 2.0f64.powf(8.0 / 3.0))
        * (HBAR.powi(4) * bq / (p.mass * p.mass)).powf(1.0 / 3.0)
}

/// Gaussian-approximation gap of the pure quartic well:
/// `(3/2)^{4/3}·(ħ⁴(b/4)/m²)^{1/3}`.
pub fn gaussian_quartic_gap(p: &Potential1D) -> f64 {
    let bq = p.b / 4.0;
    (1.5f64).powf(4.0 / 3.0) * (HBAR.powi(4) * bq / (p.mass * p.mass)).powf(1.0 / 3.0)
}
