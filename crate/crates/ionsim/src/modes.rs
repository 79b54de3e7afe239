//! Transverse normal modes of a linear chain and the reduction of the soft
//! (zigzag) mode to a one-dimensional Landau potential.
//!
//! For a linear chain with axial positions z_i (units of ℓ) the potential is
//! expanded in the transverse displacements x_i:
//!
//! ```text
//! v(x) = ½ Σ_ij γ_ij x_i x_j
//!      + Σ_i b_i x_i⁴ + Σ_{i≠j} (α_ij x_i² x_j² + κ_ij x_i³ x_j)
//! ```
//!
//! with γ_ii = r_x² − Σ_{j≠i} d_ij⁻³, γ_ij = d_ij⁻³, and per-pair quartic
//! coefficients b_i = Σ_{j≠i} 3/(8 d_ij⁵), α_ij = 9/(8 d_ij⁵),
//! κ_ij = −3/(2 d_ij⁵) (ordered-pair sums, so x_i²x_j² carries 2α_ij in
//! total). All of this is dimensionless — lengths in ℓ, energies in m ω_z² ℓ².
//!
//! Near the zigzag instability the lowest mode of γ goes soft; projecting the
//! quartic terms onto it yields the Landau form V(x) = ½ a x² + ¼ b x⁴ for
//! the mode amplitude, with a = m ω_z² (r_x² − r_c²) and b = 4 B̃ m ω_z²/ℓ²
//! in SI units, where B̃ is the projected dimensionless quartic.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::crystal::CrystalConfig;
use crate::units::{PhysicalContext, HBAR};

/// Quadratic and quartic Taylor coefficients of the transverse potential of
/// a linear chain, dimensionless (lengths in ℓ, energy in m ω_z² ℓ²).
#[derive(Debug, Clone)]
pub struct TaylorCoefficients {
    /// Quadratic form: v₂ = ½ xᵀ γ x.
    pub gamma: DMatrix<f64>,
    /// On-site quartic x_i⁴ coefficients.
    pub b: DVector<f64>,
    /// Cross-Kerr x_i²x_j² coefficients (ordered pairs; diagonal zero).
    pub alpha: DMatrix<f64>,
    /// Cubic-linear x_i³x_j coefficients (ordered pairs; diagonal zero).
    pub kappa: DMatrix<f64>,
    /// Transverse confinement ratio ω_x/ω_z the expansion was made at.
    pub r_x: f64,
}

#[derive(Debug, Error)]
pub enum ModesError {
    #[error("configuration is not a linear chain (largest transverse coordinate {max_transverse:.3e} ℓ)")]
    NotALinearChain { max_transverse: f64 },
    #[error("chain needs at least {needed} ions, got {got}")]
    TooFewIons { needed: usize, got: usize },
    #[error("projected quartic coefficient is not confining (B̃ = {b_tilde:.3e} ≤ 0)")]
    QuarticNotConfining { b_tilde: f64 },
    #[error(transparent)]
    Crystal(#[from] crate::crystal::CrystalError),
}

/// Expand the transverse potential of a linear chain to fourth order.
///
/// The configuration must be a linear chain: one-dimensional, or with all
/// transverse coordinates below 1e-9 ℓ.
pub fn taylor_expand(chain: &CrystalConfig, r_x: f64) -> Result<TaylorCoefficients, ModesError> {
    let n = chain.n_ions();
    if n < 2 {
        return Err(ModesError::TooFewIons { needed: 2, got: n });
    }
    let d = chain.dim();
    if d > 1 {
        let mut max_t = 0.0f64;
        for i in 0..n {
            for k in 0..d - 1 {
                max_t = max_t.max(chain.positions[(i, k)].abs());
            }
        }
        if max_t > 1e-9 {
            return Err(ModesError::NotALinearChain { max_transverse: max_t });
        }
    }
    let z = chain.axial();
    let mut gamma = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut alpha = DMatrix::<f64>::zeros(n, n);
    let mut kappa = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        gamma[(i, i)] = r_x * r_x;
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dist = (z[i] - z[j]).abs();
            let inv3 = 1.0 / (dist * dist * dist);
            let inv5 = inv3 / (dist * dist);
            if j > i {
                gamma[(i, j)] = inv3;
                gamma[(j, i)] = inv3;
            }
            gamma[(i, i)] -= inv3;
            b[i] += 0.375 * inv5;
            alpha[(i, j)] = 1.125 * inv5;
            kappa[(i, j)] = -1.5 * inv5;
        }
    }
    Ok(TaylorCoefficients { gamma, b, alpha, kappa, r_x })
}

impl TaylorCoefficients {
    pub fn n_ions(&self) -> usize {
        self.b.len()
    }

    /// Quadratic part ½ xᵀ γ x.
    pub fn quadratic_energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.gamma * x))
    }

    /// Quartic part Σ b_i x_i⁴ + Σ_{i≠j} (α_ij x_i²x_j² + κ_ij x_i³x_j).
    pub fn quartic_energy(&self, x: &DVector<f64>) -> f64 {
        let n = self.n_ions();
        let mut v = 0.0;
        for i in 0..n {
            v += self.b[i] * x[i].powi(4);
            for j in 0..n {
                if j != i {
                    v += self.alpha[(i, j)] * x[i] * x[i] * x[j] * x[j]
                        + self.kappa[(i, j)] * x[i].powi(3) * x[j];
                }
            }
        }
        v
    }

    /// On-site quartic coefficients in SI units (J/m⁴).
    pub fn b_si(&self, ctx: &PhysicalContext) -> DVector<f64> {
        let f = self.si_quartic_factor(ctx);
        &self.b * f
    }

    /// Conversion factor from dimensionless quartic coefficients to J/m⁴:
    /// m ω_z² / ℓ².
    pub fn si_quartic_factor(&self, ctx: &PhysicalContext) -> f64 {
        let l = ctx.length_scale();
        ctx.mass() * ctx.omega_z() * ctx.omega_z() / (l * l)
    }
}

/// Frequency of a normal mode, in units of ω_z. A negative eigenvalue of the
/// quadratic form means the chain is unstable along that mode; the imaginary
/// frequency's magnitude is the growth rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeFrequency {
    Real(f64),
    Imaginary(f64),
}

/// Transverse normal modes: eigenpairs of the quadratic form γ.
#[derive(Debug, Clone)]
pub struct NormalModes {
    /// Eigenvalues of γ in ascending order (ω_n/ω_z)²; may be negative.
    pub omega_squared: DVector<f64>,
    /// Orthonormal eigenvectors, one column per mode, same order.
    pub vectors: DMatrix<f64>,
}

/// Diagonalize the transverse quadratic form.
pub fn normal_modes(t: &TaylorCoefficients) -> NormalModes {
    let eig = nalgebra::SymmetricEigen::new(t.gamma.clone());
    let n = t.n_ions();
    // The eigenvalue array of the decomposition does not always index-match
    // its eigenvector columns; re-derive each column's eigenvalue as a
    // Rayleigh quotient before pairing and sorting.
    let lam: Vec<f64> = (0..n)
        .map(|k| {
            let v = eig.eigenvectors.column(k);
            (&t.gamma * v).dot(&v)
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lam[a].partial_cmp(&lam[b]).unwrap());
    let omega_squared = DVector::from_iterator(n, order.iter().map(|&k| lam[k]));
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let mut lead = 0;
        for i in 0..n {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v = -v;
        }
        vectors.set_column(col, &v);
    }
    NormalModes { omega_squared, vectors }
}

impl NormalModes {
    /// Mode frequencies in units of ω_z, imaginary ones flagged.
    pub fn frequencies(&self) -> Vec<ModeFrequency> {
        self.omega_squared
            .iter()
            .map(|&w2| {
                if w2 >= 0.0 {
                    ModeFrequency::Real(w2.sqrt())
                } else {
                    ModeFrequency::Imaginary((-w2).sqrt())
                }
            })
            .collect()
    }

    /// Lowest mode: (ω²/ω_z², eigenvector).
    pub fn soft_mode(&self) -> (f64, DVector<f64>) {
        (self.omega_squared[0], self.vectors.column(0).into_owned())
    }

    /// Number of unstable (imaginary-frequency) modes.
    pub fn soft_count(&self) -> usize {
        self.omega_squared.iter().filter(|&&w2| w2 < 0.0).count()
    }

    /// Mode table: index, ω², |ω| (or growth rate), stability flag, vector.
    pub fn to_csv(&self) -> String {
        let n = self.omega_squared.len();
        let mut out = String::from("# mode, omega2 [wz^2], omega_abs [wz], stable");
        for i in 0..n {
            out.push_str(&format!(", v_{i}"));
        }
        out.push('\n');
        for m in 0..n {
            let w2 = self.omega_squared[m];
            let mut line = format!(
                "{m}, {:.12e}, {:.12e}, {}",
                w2,
                w2.abs().sqrt(),
                if w2 >= 0.0 { 1 } else { 0 }
            );
            for i in 0..n {
                line.push_str(&format!(", {:.12e}", self.vectors[(i, m)]));
            }
            line.push('\n');
            out.push_str(&line);
        }
        out
    }
}

/// One-dimensional Landau description of the soft mode, in SI units:
/// V(x) = ½ a x² + ¼ b x⁴ for the mode amplitude x in meters, with the full
/// ion mass as the effective mass.
#[derive(Debug, Clone)]
pub struct LandauCoefficients {
    /// Quadratic coefficient in J/m²; negative below the structural
    /// transition.
    pub a: f64,
    /// Quartic coefficient in J/m⁴ (quarter convention above).
    pub b: f64,
    /// Effective mass in kg.
    pub mass: f64,
    /// The soft-mode eigenvector the reduction projected onto.
    pub mode: DVector<f64>,
    /// Soft-mode eigenvalue (ω₀/ω_z)², dimensionless.
    pub omega_squared_dimensionless: f64,
    /// Projected dimensionless quartic B̃ (so b = 4 B̃ m ω_z²/ℓ²).
    pub b_tilde: f64,
}

/// Project the quartic expansion onto the softest transverse mode.
pub fn landau_reduce(
    t: &TaylorCoefficients,
    ctx: &PhysicalContext,
) -> Result<LandauCoefficients, ModesError> {
    let nm = normal_modes(t);
    let (w2, u) = nm.soft_mode();
    let b_tilde = t.quartic_energy(&u);
    if b_tilde <= 0.0 {
        return Err(ModesError::QuarticNotConfining { b_tilde });
    }
    let m = ctx.mass();
    let wz2 = ctx.omega_z() * ctx.omega_z();
    let l = ctx.length_scale();
    Ok(LandauCoefficients {
        a: m * wz2 * w2,
        b: 4.0 * b_tilde * m * wz2 / (l * l),
        mass: m,
        mode: u,
        omega_squared_dimensionless: w2,
        b_tilde,
    })
}

impl LandauCoefficients {
    /// Distance between the two well minima, 2√(−a/b), if the potential is
    /// double-welled.
    pub fn well_separation(&self) -> Option<f64> {
        (self.a < 0.0).then(|| 2.0 * (-self.a / self.b).sqrt())
    }

    /// Barrier height a²/(4b) between the wells, if double-welled.
    pub fn barrier_depth(&self) -> Option<f64> {
        (self.a < 0.0).then(|| self.a * self.a / (4.0 * self.b))
    }

    /// Curvature scale |a| at which each well holds exactly one level below
    /// the barrier: the depth a²/(4b) equals ħ times the local well frequency
    /// √(2|a|/m), giving |a|* = 2^(5/3) (ħ² b²/m)^(1/3).
    pub fn one_level_threshold(&self) -> f64 {
        one_level_threshold(self.b, self.mass)
    }

    /// |a| / |a|*: ≥ 1 means at most one level fits below the barrier.
    pub fn one_level_margin(&self) -> f64 {
        self.a.abs() / self.one_level_threshold()
    }
}

/// |a|* = 2^(5/3) (ħ² b²/m)^(1/3) — see [`LandauCoefficients::one_level_threshold`].
pub fn one_level_threshold(b: f64, mass: f64) -> f64 {
    2f64.powf(5.0 / 3.0) * (HBAR * HBAR * b * b / mass).cbrt()
}

/// Soft-mode frequency scale √(ω_c² − ω_x²) (rad/s) at which the margin is
/// exactly one, for quartic coefficient `b` (J/m⁴) and ion mass (kg):
/// √(|a|*/m).
pub fn margin_one_detuning(b: f64, mass: f64) -> f64 {
    (one_level_threshold(b, mass) / mass).sqrt()
}

/// Relax the `n`-ion chain and reduce its soft mode at confinement ratio
/// `r_x`, returning the Landau coefficients in the given context.
pub fn chain_landau(
    n: usize,
    r_x: f64,
    ctx: &PhysicalContext,
) -> Result<LandauCoefficients, ModesError> {
    let chain = crate::crystal::find_equilibrium(n, r_x, f64::INFINITY, 1, crate::crystal::Seed::Heuristic)?;
    let t = taylor_expand(&chain, r_x)?;
    landau_reduce(&t, ctx)
}
