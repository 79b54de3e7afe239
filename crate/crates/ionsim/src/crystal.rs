//! Classical electrostatics of the ion crystal: equilibrium configurations,
//! stability analysis, and the structural phase boundaries.
//!
//! Positions are dimensionless (units of the context length ℓ) and the
//! potential is measured in units of m ω_z² ℓ². With confinement ratios
//! r_x = ω_x/ω_z, r_y = ω_y/ω_z the energy of a configuration {q_i} is
//!
//! ```text
//! u = ½ Σ_i (r_x² x_i² + r_y² y_i² + z_i²) + Σ_{i<j} 1/|q_i − q_j|
//! ```
//!
//! Coordinate layout: `dim == 1` stores `[z]`, `dim == 2` stores `[x, z]`,
//! `dim == 3` stores `[x, y, z]` — the axial coordinate is always the last
//! column, transverse coordinates come first.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::units::{PhysicalContext, Quantity};

/// A crystal configuration together with the trap ratios that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalConfig {
    /// N×D position matrix in units of ℓ.
    pub positions: DMatrix<f64>,
    /// ω_x/ω_z.
    pub r_x: f64,
    /// ω_y/ω_z; `f64::INFINITY` means the y direction is frozen out.
    pub r_y: f64,
}

impl CrystalConfig {
    pub fn new(positions: DMatrix<f64>, r_x: f64, r_y: f64) -> Result<Self, CrystalError> {
        let dim = positions.ncols();
        if dim == 0 || dim > 3 {
            return Err(CrystalError::InvalidDimension { dim });
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(CrystalError::NonFinitePositions);
        }
        Ok(CrystalConfig { positions, r_x, r_y })
    }

    pub fn n_ions(&self) -> usize {
        self.positions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// Axial coordinates (last column).
    pub fn axial(&self) -> DVector<f64> {
        self.positions.column(self.dim() - 1).into_owned()
    }

    /// Confinement weight per coordinate column: x → r_x², y → r_y², z → 1.
    fn weights(&self) -> Vec<f64> {
        match self.dim() {
            1 => vec![1.0],
            2 => vec![self.r_x * self.r_x, 1.0],
            _ => vec![self.r_x * self.r_x, self.r_y * self.r_y, 1.0],
        }
    }

    /// Two-column (index + coordinates) CSV with a unit-carrying header.
    /// When a context is supplied, SI columns in meters are appended.
    pub fn to_csv(&self, ctx: Option<&PhysicalContext>) -> String {
        let d = self.dim();
        let names = ["x", "y", "z"];
        let cols: Vec<&str> = match d {
            1 => vec!["z"],
            2 => vec!["x", "z"],
            _ => names.to_vec(),
        };
        let mut out = String::new();
        let mut header = String::from("# ion");
        for c in &cols {
            header.push_str(&format!(", {c} [l]"));
        }
        if ctx.is_some() {
            for c in &cols {
                header.push_str(&format!(", {c} [m]"));
            }
        }
        out.push_str(&header);
        out.push('\n');
        for i in 0..self.n_ions() {
            let mut line = format!("{i}");
            for j in 0..d {
                line.push_str(&format!(", {:.12e}", self.positions[(i, j)]));
            }
            if let Some(ctx) = ctx {
                for j in 0..d {
                    line.push_str(&format!(
                        ", {:.12e}",
                        ctx.to_si(self.positions[(i, j)], Quantity::Length)
                    ));
                }
            }
            line.push('\n');
            out.push_str(&line);
        }
        out
    }
}

/// Structural label assigned by [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigurationLabel {
    Linear,
    Zigzag,
    Planar,
    ThreeDimensional,
    /// Saddle point: a Hessian eigenvalue below −1e-9.
    Unstable,
}

/// Stability summary of a configuration.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub lowest_eigenvalue: f64,
    pub eigenvector: DVector<f64>,
    pub label: ConfigurationLabel,
}

#[derive(Debug, Error)]
pub enum CrystalError {
    #[error("ions {i} and {j} are closer than 1e-12 (distance {distance:.3e}); Coulomb term singular")]
    CoincidentIons { i: usize, j: usize, distance: f64 },
    #[error("equilibrium search did not converge: gradient norm {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        /// Best configuration reached before giving up.
        best: Box<CrystalConfig>,
    },
    #[error("bisection bracket [{lo}, {hi}] does not straddle a sign change of the stability indicator")]
    BracketingFailure { lo: f64, hi: f64 },
    #[error("critical frequency is undefined for a single ion")]
    UndefinedForSingleIon,
    #[error("dimension must be 1, 2, or 3, got {dim}")]
    InvalidDimension { dim: usize },
    #[error("positions contain non-finite values")]
    NonFinitePositions,
}

/// Dimensionless potential energy of a configuration.
pub fn potential_energy(config: &CrystalConfig) -> Result<f64, CrystalError> {
    let p = &config.positions;
    let (n, d) = (p.nrows(), p.ncols());
    let w = config.weights();
    let mut u = 0.0;
    for i in 0..n {
        for k in 0..d {
            u += 0.5 * w[k] * p[(i, k)] * p[(i, k)];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = pair_distance(p, i, j)?;
            u += 1.0 / dist;
        }
    }
    Ok(u)
}

fn pair_distance(p: &DMatrix<f64>, i: usize, j: usize) -> Result<f64, CrystalError> {
    let mut s = 0.0;
    for k in 0..p.ncols() {
        let d = p[(i, k)] - p[(j, k)];
        s += d * d;
    }
    let dist = s.sqrt();
    if dist < 1e-12 {
        return Err(CrystalError::CoincidentIons { i, j, distance: dist });
    }
    Ok(dist)
}

/// Gradient of [`potential_energy`], N×D.
pub fn gradient(config: &CrystalConfig) -> Result<DMatrix<f64>, CrystalError> {
    let p = &config.positions;
    let (n, d) = (p.nrows(), p.ncols());
    let w = config.weights();
    let mut g = DMatrix::<f64>::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            g[(i, k)] = w[k] * p[(i, k)];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = pair_distance(p, i, j)?;
            let inv3 = 1.0 / (dist * dist * dist);
            for k in 0..d {
                let diff = (p[(i, k)] - p[(j, k)]) * inv3;
                g[(i, k)] -= diff;
                g[(j, k)] += diff;
            }
        }
    }
    Ok(g)
}

/// Hessian of [`potential_energy`], (N·D)×(N·D), row-major in ion index then
/// coordinate. Symmetric by construction.
pub fn hessian(config: &CrystalConfig) -> Result<DMatrix<f64>, CrystalError> {
    let p = &config.positions;
    let (n, d) = (p.nrows(), p.ncols());
    let w = config.weights();
    let mut h = DMatrix::<f64>::zeros(n * d, n * d);
    for i in 0..n {
        for k in 0..d {
            h[(i * d + k, i * d + k)] = w[k];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = pair_distance(p, i, j)?;
            let inv3 = 1.0 / (dist * dist * dist);
            // Second derivative block of 1/|q_i − q_j|: (3 u uᵀ − I)/dist³.
            for a in 0..d {
                for b in 0..d {
                    let ua = (p[(i, a)] - p[(j, a)]) / dist;
                    let ub = (p[(i, b)] - p[(j, b)]) / dist;
                    let blk = (3.0 * ua * ub - if a == b { 1.0 } else { 0.0 }) * inv3;
                    h[(i * d + a, i * d + b)] += blk;
                    h[(j * d + a, j * d + b)] += blk;
                    h[(i * d + a, j * d + b)] -= blk;
                    h[(j * d + a, i * d + b)] -= blk;
                }
            }
        }
    }
    Ok(h)
}

/// Seed for the equilibrium search.
#[derive(Debug, Clone)]
pub enum Seed {
    /// Chain-based heuristics (plus the compact 4-ion seeds in 3D).
    Heuristic,
    /// Explicit N×D start positions.
    Explicit(DMatrix<f64>),
}

/// Interior knobs of the damped-Newton relaxation.
struct RelaxOptions {
    gradient_tol: f64,
    max_iterations: usize,
    /// Escape saddle points by stepping along the negative-curvature direction.
    escape_saddles: bool,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions { gradient_tol: 1e-10, max_iterations: 600, escape_saddles: true }
    }
}

/// Relax a configuration to a stationary point. Damped Newton with eigenvalue
/// flooring; falls back to line-searched gradient descent when the Newton
/// step fails to decrease the energy. Energy is non-increasing across
/// accepted steps.
fn relax(
    mut config: CrystalConfig,
    opts: &RelaxOptions,
    mut energy_trace: Option<&mut Vec<f64>>,
) -> Result<CrystalConfig, CrystalError> {
    let (n, d) = (config.n_ions(), config.dim());
    let mut escapes = 0usize;
    let mut energy = potential_energy(&config)?;
    if let Some(t) = energy_trace.as_deref_mut() {
        t.push(energy);
    }
    for iter in 0..opts.max_iterations {
        let g = gradient(&config)?;
        let gnorm = g.norm();
        if gnorm < opts.gradient_tol {
            if !opts.escape_saddles {
                return Ok(config);
            }
            // At a stationary point: accept if no meaningful negative curvature.
            let h = hessian(&config)?;
            let eig = nalgebra::SymmetricEigen::new(h.clone());
            // Pair each eigenvector with its own Rayleigh quotient: the
            // decomposition's eigenvalue array does not always index-match
            // its columns.
            let (mut min_val, mut min_idx) = (f64::INFINITY, 0);
            for k in 0..eig.eigenvalues.len() {
                let c = eig.eigenvectors.column(k);
                let v = (&h * c).dot(&c);
                if v < min_val {
                    min_val = v;
                    min_idx = k;
                }
            }
            if min_val >= -1e-9 {
                return Ok(config);
            }
            if escapes >= 12 {
                return Err(CrystalError::NonConvergence {
                    residual: gnorm,
                    iterations: iter,
                    best: Box::new(config),
                });
            }
            escapes += 1;
            let dir = eig.eigenvectors.column(min_idx);
            let scale = 1e-3;
            for i in 0..n {
                for k in 0..d {
                    config.positions[(i, k)] += scale * dir[i * d + k];
                }
            }
            energy = potential_energy(&config)?;
            continue;
        }

        let h = hessian(&config)?;
        let eig = nalgebra::SymmetricEigen::new(h.clone());
        // Per-column Rayleigh quotients; the decomposition's eigenvalue array
        // does not always index-match its eigenvector columns.
        let lams: Vec<f64> = (0..n * d)
            .map(|k| {
                let c = eig.eigenvectors.column(k);
                (&h * c).dot(&c)
            })
            .collect();
        let min_eig = lams.iter().cloned().fold(f64::INFINITY, f64::min);
        let gvec = DVector::from_iterator(n * d, (0..n * d).map(|k| g[(k / d, k % d)]));

        // Near a stationary point energy differences underflow and a line
        // search cannot certify progress; switch to an undamped Newton polish
        // toward the stationary point (signed eigenvalues, flat directions
        // dropped), which converges quadratically.
        if gnorm < 1e-6 {
            let mut step = DVector::zeros(n * d);
            for k in 0..n * d {
                let lam = lams[k];
                if lam.abs() > 1e-8 {
                    let proj = eig.eigenvectors.column(k).dot(&gvec);
                    step += eig.eigenvectors.column(k) * (proj / lam);
                }
            }
            let mut trial = config.clone();
            for i in 0..n {
                for k in 0..d {
                    trial.positions[(i, k)] -= step[i * d + k];
                }
            }
            if let Ok(gn_new) = gradient(&trial).map(|g| g.norm()) {
                if gn_new < gnorm {
                    config = trial;
                    energy = potential_energy(&config)?;
                    if let Some(t) = energy_trace.as_deref_mut() {
                        t.push(energy);
                    }
                    continue;
                }
            }
            // Polish failed to contract; fall through to the damped path.
        }

        // Floor the spectrum so the modified Hessian is safely positive.
        let floor = if min_eig < 1e-6 { 1e-6 - min_eig } else { 0.0 };
        let mut step = DVector::zeros(n * d);
        for k in 0..n * d {
            let lam = lams[k] + floor;
            let proj = eig.eigenvectors.column(k).dot(&gvec);
            step += eig.eigenvectors.column(k) * (proj / lam);
        }
        // Backtracking line search on the energy.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = config.clone();
            for i in 0..n {
                for k in 0..d {
                    trial.positions[(i, k)] -= alpha * step[i * d + k];
                }
            }
            match potential_energy(&trial) {
                Ok(e_new) if e_new <= energy => {
                    config = trial;
                    energy = e_new;
                    accepted = true;
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        if !accepted {
            // Gradient-descent fallback with its own line search.
            let mut alpha = 1e-2 / (1.0 + gnorm);
            let mut moved = false;
            for _ in 0..60 {
                let mut trial = config.clone();
                for i in 0..n {
                    for k in 0..d {
                        trial.positions[(i, k)] -= alpha * g[(i, k)];
                    }
                }
                match potential_energy(&trial) {
                    Ok(e_new) if e_new < energy => {
                        config = trial;
                        energy = e_new;
                        moved = true;
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            if !moved {
                return Err(CrystalError::NonConvergence {
                    residual: gnorm,
                    iterations: iter,
                    best: Box::new(config),
                });
            }
        }
        if let Some(t) = energy_trace.as_deref_mut() {
            t.push(energy);
        }
    }
    let g = gradient(&config)?;
    Err(CrystalError::NonConvergence {
        residual: g.norm(),
        iterations: opts.max_iterations,
        best: Box::new(config),
    })
}

fn heuristic_seeds(n: usize, dim: usize) -> Vec<DMatrix<f64>> {
    let axial = |scale: f64| -> Vec<f64> {
        if n == 1 {
            return vec![0.0];
        }
        let l = 0.62 * (n as f64).powf(0.62) * scale;
        (0..n).map(|i| -l + 2.0 * l * i as f64 / (n as f64 - 1.0)).collect()
    };
    let z = axial(1.0);
    let mut seeds = Vec::new();
    match dim {
        1 => seeds.push(DMatrix::from_fn(n, 1, |i, _| z[i])),
        2 => {
            // Alternating ±1e-3 transverse perturbation breaks the mirror
            // symmetry toward a definite zigzag branch.
            seeds.push(DMatrix::from_fn(n, 2, |i, k| {
                if k == 0 {
                    if i % 2 == 0 {
                        1e-3
                    } else {
                        -1e-3
                    }
                } else {
                    z[i]
                }
            }));
            // A strongly displaced variant for deep-zigzag parameters.
            seeds.push(DMatrix::from_fn(n, 2, |i, k| {
                if k == 0 {
                    if i % 2 == 0 {
                        0.5
                    } else {
                        -0.5
                    }
                } else {
                    z[i] * 0.8
                }
            }));
        }
        _ => {
            seeds.push(DMatrix::from_fn(n, 3, |i, k| match k {
                0 => {
                    if i % 2 == 0 {
                        1e-3
                    } else {
                        -1e-3
                    }
                }
                1 => 1e-3 * (i as f64 * 2.1).cos(),
                _ => z[i],
            }));
            if n == 4 {
                // Radial-plane square.
                let a = 1.0;
                let sq = [[a, 0.0, 0.0], [0.0, a, 0.0], [-a, 0.0, 0.0], [0.0, -a, 0.0]];
                seeds.push(DMatrix::from_fn(4, 3, |i, k| sq[i][k]));
                // Tetrahedron.
                let t = 0.55;
                let te = [[t, t, t], [t, -t, -t], [-t, t, -t], [-t, -t, t]];
                seeds.push(DMatrix::from_fn(4, 3, |i, k| te[i][k]));
            }
        }
    }
    seeds
}

/// Find a stable equilibrium configuration.
///
/// With [`Seed::Heuristic`] several starting arrangements are relaxed and the
/// lowest-energy stable result wins; with an explicit seed only that basin is
/// searched. Deterministic for identical inputs.
pub fn find_equilibrium(
    n: usize,
    r_x: f64,
    r_y: f64,
    dim: usize,
    seed: Seed,
) -> Result<CrystalConfig, CrystalError> {
    if dim == 0 || dim > 3 {
        return Err(CrystalError::InvalidDimension { dim });
    }
    let starts = match seed {
        Seed::Explicit(p) => vec![p],
        Seed::Heuristic => heuristic_seeds(n, dim),
    };
    let opts = RelaxOptions::default();
    let mut best: Option<(f64, CrystalConfig)> = None;
    let mut last_err = None;
    for p in starts {
        let config = CrystalConfig::new(p, r_x, r_y)?;
        match relax(config, &opts, None) {
            Ok(c) => {
                let e = potential_energy(&c)?;
                if best.as_ref().map_or(true, |(eb, _)| e < *eb - 1e-12) {
                    best = Some((e, c));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, c)) => Ok(c),
        None => Err(last_err.unwrap_or(CrystalError::NonConvergence {
            residual: f64::NAN,
            iterations: 0,
            best: Box::new(CrystalConfig::new(DMatrix::<f64>::zeros(n, dim), r_x, r_y)?),
        })),
    }
}

/// Label a configuration and report its stability.
pub fn classify(config: &CrystalConfig, hess: &DMatrix<f64>) -> StabilityReport {
    let eig = nalgebra::SymmetricEigen::new(hess.clone());
    // Pair each eigenvector with its own Rayleigh quotient: the
    // decomposition's eigenvalue array does not always index-match its
    // columns.
    let (mut min_val, mut min_idx) = (f64::INFINITY, 0);
    for k in 0..eig.eigenvalues.len() {
        let c = eig.eigenvectors.column(k);
        let v = (hess * c).dot(&c);
        if v < min_val {
            min_val = v;
            min_idx = k;
        }
    }
    let eigenvector = eig.eigenvectors.column(min_idx).into_owned();
    let label = if min_val < -1e-9 {
        ConfigurationLabel::Unstable
    } else {
        geometric_label(config)
    };
    StabilityReport { lowest_eigenvalue: min_val, eigenvector, label }
}

fn geometric_label(config: &CrystalConfig) -> ConfigurationLabel {
    let p = &config.positions;
    let (n, d) = (p.nrows(), p.ncols());
    let trans_max = (0..n)
        .flat_map(|i| (0..d.saturating_sub(1)).map(move |k| (i, k)))
        .map(|(i, k)| p[(i, k)].abs())
        .fold(0.0f64, f64::max);
    if d == 1 || trans_max < 1e-6 {
        return ConfigurationLabel::Linear;
    }
    // Planarity: smallest singular value of the centered position cloud.
    let mut centered = p.clone();
    for k in 0..d {
        let mean = p.column(k).sum() / n as f64;
        for i in 0..n {
            centered[(i, k)] -= mean;
        }
    }
    let planar = if d == 2 || n <= 3 {
        true
    } else {
        let svd = centered.svd(false, false);
        svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min) < 1e-6
    };
    if !planar {
        return ConfigurationLabel::ThreeDimensional;
    }
    // Zigzag: axial extent present and the dominant transverse coordinate
    // alternates sign along the chain.
    let z = config.axial();
    let zspan = z.max() - z.min();
    if zspan > 1e-6 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[a].partial_cmp(&z[b]).unwrap());
        // Pick the transverse column with the largest extent.
        let mut best_col = 0;
        let mut best_ext = -1.0;
        for k in 0..d - 1 {
            let ext = p.column(k).amax();
            if ext > best_ext {
                best_ext = ext;
                best_col = k;
            }
        }
        let alternating = order.windows(2).all(|w| {
            let a = p[(w[0], best_col)];
            let b = p[(w[1], best_col)];
            a * b < 0.0 && a.abs() > 1e-6 && b.abs() > 1e-6
        });
        if alternating {
            return ConfigurationLabel::Zigzag;
        }
    }
    ConfigurationLabel::Planar
}

/// Lowest transverse-sector Hessian eigenvalue of the relaxed linear chain at
/// confinement ratio `r_x` — the bisection indicator for [`critical_frequency`].
fn linear_chain_transverse_indicator(z: &DVector<f64>, r_x: f64) -> f64 {
    let n = z.len();
    // Transverse block decouples for a linear chain: r_x² I − L where
    // L = diag(Σ_j 1/d³) − [1/d³].
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (z[i] - z[j]).abs();
                let k = 1.0 / (d * d * d);
                l[(i, j)] -= k;
                l[(i, i)] += k;
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(l);
    let lam_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    r_x * r_x - lam_max
}

/// Critical confinement ratio ω_c/ω_z below which the linear chain of `n`
/// ions buckles into a zigzag. Located by bisection of the lowest transverse
/// Hessian eigenvalue to a bracket width of 1e-9.
pub fn critical_frequency(n: usize) -> Result<f64, CrystalError> {
    if n < 2 {
        return Err(CrystalError::UndefinedForSingleIon);
    }
    let chain = find_equilibrium(n, 10.0, f64::INFINITY, 1, Seed::Heuristic)?;
    let z = chain.axial();
    let mut lo = 1e-3;
    let mut hi = {
        // The large-N trend 3N/(4√log N) bounds the answer well above.
        let guess = 0.75 * n as f64 / (n as f64).ln().max(0.7).sqrt();
        2.0 * guess + 2.0
    };
    let f_lo = linear_chain_transverse_indicator(&z, lo);
    let f_hi = linear_chain_transverse_indicator(&z, hi);
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(CrystalError::BracketingFailure { lo, hi });
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if linear_chain_transverse_indicator(&z, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Structural thresholds of the 4-ion crystal in an isotropic radial trap
/// (r_x = r_y = r): returns `(lower, upper)`.
///
/// Below `lower` the stable arrangement is planar (a square in the radial
/// plane); between the two the crystal is three-dimensional; `upper` is where
/// the three-dimensional branch loses stability on its way back to chain-like
/// order.
pub fn threshold_scan_3d() -> Result<(f64, f64), CrystalError> {
    // Lower: out-of-plane buckling of the radial square. The in-plane
    // geometry only rescales with r (positions ∝ r^(-2/3)), so relax the
    // square once in a unit isotropic 2D trap and read the buckling point
    // off the out-of-plane Hessian block: with distances d̃ of the unit-trap
    // solution, that block is I − r² G̃ with G̃_ii = Σ_j d̃_ij⁻³ and
    // G̃_ij = −d̃_ij⁻³, so it first goes soft at r = λ_max(G̃)^(-1/2).
    let square2d = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
    // dim = 2 columns are [x, z] with weights [r_x², 1]; r_x = 1 makes the
    // trap isotropic in the plane.
    let cfg2d = relax(
        CrystalConfig::new(square2d, 1.0, f64::INFINITY)?,
        &RelaxOptions::default(),
        None,
    )?;
    let mut g = DMatrix::<f64>::zeros(4, 4);
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                let d = pair_distance(&cfg2d.positions, i, j)?;
                let k = 1.0 / (d * d * d);
                g[(i, j)] -= k;
                g[(i, i)] += k;
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(g);
    let lam_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lower = 1.0 / lam_max.sqrt();

    // Upper: spinodal of the three-dimensional branch, located by bisection
    // with continuation — each probe relaxes from the branch configuration
    // found at the nearest confirmed-stable ratio, so the search stays on the
    // branch as its basin shrinks. The isotropic trap leaves an exact
    // rotational zero mode; the +1e-8 offset keeps it from masquerading as
    // the structural instability.
    let opts = RelaxOptions { escape_saddles: false, ..RelaxOptions::default() };
    let probe = |seed: &DMatrix<f64>, r: f64| -> Result<(bool, DMatrix<f64>), CrystalError> {
        let cfg = relax(CrystalConfig::new(seed.clone(), r, r)?, &opts, None)?;
        let h = hessian(&cfg)?;
        let eig = nalgebra::SymmetricEigen::new(h);
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let stable = min_eig + 1e-8 >= 0.0;
        // Genuinely three-dimensional: the centered cloud has no thin axis.
        let mut centered = cfg.positions.clone();
        for k in 0..3 {
            let mean = centered.column(k).sum() / 4.0;
            for i in 0..4 {
                centered[(i, k)] -= mean;
            }
        }
        let svd = centered.svd(false, false);
        let thin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok((stable && thin > 1e-3, cfg.positions))
    };
    let t = 0.55;
    let mut branch =
        DMatrix::from_row_slice(4, 3, &[t, t, t, t, -t, -t, -t, t, -t, -t, -t, t]);
    let mut lo = 1.05;
    let mut hi = 1.35;
    let (ok_lo, p) = probe(&branch, lo)?;
    let (ok_hi, _) = probe(&p, hi)?;
    if !ok_lo || ok_hi {
        return Err(CrystalError::BracketingFailure { lo, hi });
    }
    branch = p;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        let (ok, p) = probe(&branch, mid)?;
        if ok {
            lo = mid;
            branch = p;
        } else {
            hi = mid;
        }
    }
    let upper = 0.5 * (lo + hi);
    Ok((lower, upper))
}

/// Relax with an energy trace (used by tests asserting monotone descent).
#[cfg(test)]
fn relax_traced(config: CrystalConfig) -> Result<(CrystalConfig, Vec<f64>), CrystalError> {
    let mut trace = Vec::new();
    let cfg = relax(config, &RelaxOptions::default(), Some(&mut trace))?;
    Ok((cfg, trace))
}
