//! Gaussian (harmonic) ground state of the linearized chain: covariance
//! matrices, single-site entanglement entropy, and its near-critical
//! closed-form asymptotics.
//!
//! Conventions: positions in units of the single-ion ground width
//! x_q = √(ħ/(m ω_z)), momenta in ħ/x_q, so ⟨x²⟩⟨p²⟩ is dimensionless and
//! the Heisenberg floor is ¼. Mode frequencies are in units of ω_z.
//!
//! For mode matrix B (columns = modes) and frequencies w_n the ground-state
//! covariances are X_ij = Σ_n B_in B_jn/(2 w_n), P_ij = Σ_n B_in B_jn w_n/2.
//! A site's reduced state is Gaussian with symplectic eigenvalue
//! ν = √(X_ss P_ss − cross²); its entropy in bits is
//! S(ν) = (ν+½)log₂(ν+½) − (ν−½)log₂(ν−½), which diverges like −¼ log₂ ε as
//! the soft-mode squared frequency ε → 0.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::crystal::{find_equilibrium, Seed};
use crate::modes::{normal_modes, taylor_expand, ModesError, NormalModes};

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("mode {index} has ω² = {omega_squared:.3e} ≤ 0; no Gaussian ground state")]
    UnstableMode { index: usize, omega_squared: f64 },
    #[error("symplectic eigenvalue ν = {nu} violates the Heisenberg floor ½")]
    InvalidSymplectic { nu: f64 },
    #[error("site index {site} out of range for {n} ions")]
    SiteOutOfRange { site: usize, n: usize },
    #[error(transparent)]
    Modes(#[from] ModesError),
}

/// Ground-state second moments of the chain in site coordinates.
#[derive(Debug, Clone)]
pub struct CovarianceData {
    /// ⟨x_i x_j⟩ in units of x_q².
    pub x: DMatrix<f64>,
    /// ⟨p_i p_j⟩ in units of (ħ/x_q)².
    pub p: DMatrix<f64>,
    /// ⟨x_i p_j + p_j x_i⟩/2 — identically zero in the ground state, stored
    /// for generality.
    pub cross: DMatrix<f64>,
}

impl CovarianceData {
    pub fn n_sites(&self) -> usize {
        self.x.nrows()
    }

    /// Symplectic eigenvalue of the one-site reduced state:
    /// ν = √(X_ss P_ss − cross_ss²).
    pub fn site_nu(&self, site: usize) -> Result<f64, GaussianError> {
        let n = self.n_sites();
        if site >= n {
            return Err(GaussianError::SiteOutOfRange { site, n });
        }
        let c = self.cross[(site, site)];
        Ok((self.x[(site, site)] * self.p[(site, site)] - c * c).sqrt())
    }
}

/// Ground-state covariances from a set of stable normal modes.
pub fn ground_state_covariance(nm: &NormalModes) -> Result<CovarianceData, GaussianError> {
    let n = nm.omega_squared.len();
    for (index, &w2) in nm.omega_squared.iter().enumerate() {
        if w2 <= 0.0 {
            return Err(GaussianError::UnstableMode { index, omega_squared: w2 });
        }
    }
    let mut x = DMatrix::<f64>::zeros(n, n);
    let mut p = DMatrix::<f64>::zeros(n, n);
    for m in 0..n {
        let w = nm.omega_squared[m].sqrt();
        for i in 0..n {
            for j in 0..n {
                let bb = nm.vectors[(i, m)] * nm.vectors[(j, m)];
                x[(i, j)] += bb / (2.0 * w);
                p[(i, j)] += bb * w / 2.0;
            }
        }
    }
    Ok(CovarianceData { x, p, cross: DMatrix::zeros(n, n) })
}

/// Von Neumann entropy in bits of a one-mode Gaussian state with symplectic
/// eigenvalue ν. Errors if ν < ½ − 1e-9; values within that tolerance clamp
/// to the pure-state floor S = 0.
pub fn entropy_from_nu(nu: f64) -> Result<f64, GaussianError> {
    if nu < 0.5 - 1e-9 {
        return Err(GaussianError::InvalidSymplectic { nu });
    }
    if nu <= 0.5 {
        return Ok(0.0);
    }
    let a = nu + 0.5;
    let b = nu - 0.5;
    Ok(a * a.log2() - b * b.log2())
}

/// Entanglement entropy (bits) of one site with the rest of the chain.
pub fn single_site_entropy(cov: &CovarianceData, site: usize) -> Result<f64, GaussianError> {
    entropy_from_nu(cov.site_nu(site)?)
}

/// Normal modes of the `n`-ion chain with the confinement tuned so the soft
/// (zigzag) mode sits at squared frequency `epsilon` (in ω_z²); all other
/// modes shift rigidly, exactly as r_x² = (ω_c/ω_z)² + ε would place them.
pub fn soft_chain_modes(n: usize, epsilon: f64) -> Result<NormalModes, GaussianError> {
    let chain = find_equilibrium(n, 10.0, f64::INFINITY, 1, Seed::Heuristic)
        .map_err(ModesError::from)?;
    let t = taylor_expand(&chain, 1.0)?;
    let mut nm = normal_modes(&t);
    let w2_min = nm.omega_squared[0];
    for w2 in nm.omega_squared.iter_mut() {
        *w2 += epsilon - w2_min;
    }
    Ok(nm)
}

/// Central site index used by the near-critical entropy scans: the soft-mode
/// weight is largest in the middle of the chain.
pub fn central_site(n: usize) -> usize {
    (n - 1) / 2
}

/// Closed-form near-critical asymptote for the 2-ion single-site entropy
/// (bits) at soft-mode squared frequency ε.
pub fn closed_form_s2(epsilon: f64) -> f64 {
    (-0.25 * epsilon.ln() + (1.0 / (4.0 * 2f64.sqrt())).ln() + 1.0) / std::f64::consts::LN_2
}

/// Closed-form near-critical asymptote for the middle site of 3 ions (bits).
pub fn closed_form_s3(epsilon: f64) -> f64 {
    (-0.25 * epsilon.ln() + ((2f64 / 5.0).sqrt() / 3.0).ln() + 1.0) / std::f64::consts::LN_2
}

/// Least-squares slope and intercept of S (bits) against log₂ ε for the
/// central site, over `npts` log-spaced points in `[lo, hi]`.
pub fn entropy_slope(
    n: usize,
    site: usize,
    lo: f64,
    hi: f64,
    npts: usize,
) -> Result<(f64, f64), GaussianError> {
    let mut su = 0.0;
    let mut ss = 0.0;
    let mut suu = 0.0;
    let mut sus = 0.0;
    for k in 0..npts {
        let f = k as f64 / (npts as f64 - 1.0);
        let eps = lo * (hi / lo).powf(f);
        let nm = soft_chain_modes(n, eps)?;
        let cov = ground_state_covariance(&nm)?;
        let s = single_site_entropy(&cov, site)?;
        let u = eps.log2();
        su += u;
        ss += s;
        suu += u * u;
        sus += u * s;
    }
    let m = npts as f64;
    let slope = (m * sus - su * ss) / (m * suu - su * su);
    let intercept = (ss - slope * su) / m;
    Ok((slope, intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::DVector;

    #[test]
    fn two_mode_covariance_closed_form() {
        // N=2 chain at r_x = 2: mode frequencies² {3 (relative), 4 (cm)}.
        let nm = soft_chain_modes(2, 3.0).unwrap();
        assert_abs_diff_eq!(nm.omega_squared[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(nm.omega_squared[1], 4.0, epsilon = 1e-9);
        let cov = ground_state_covariance(&nm).unwrap();
        let s3 = 3f64.sqrt();
        assert_relative_eq!(cov.x[(0, 0)], 0.125 + 1.0 / (4.0 * s3), max_relative = 1e-9);
        assert_relative_eq!(cov.x[(0, 1)], 0.125 - 1.0 / (4.0 * s3), max_relative = 1e-9);
        assert_relative_eq!(cov.p[(0, 0)], 0.5 + s3 / 4.0, max_relative = 1e-9);
        assert_relative_eq!(cov.p[(0, 1)], 0.5 - s3 / 4.0, max_relative = 1e-9);
        assert_abs_diff_eq!(cov.cross[(0, 0)], 0.0);
    }

    #[test]
    fn covariances_positive_definite() {
        let nm = soft_chain_modes(5, 1e-3).unwrap();
        let cov = ground_state_covariance(&nm).unwrap();
        assert!(cov.x.clone().cholesky().is_some());
        assert!(cov.p.clone().cholesky().is_some());
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(cov.x[(i, j)], cov.x[(j, i)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unstable_mode_rejected() {
        let nm = soft_chain_modes(3, -1e-3).unwrap();
        assert!(matches!(
            ground_state_covariance(&nm),
            Err(GaussianError::UnstableMode { index: 0, .. })
        ));
    }

    #[test]
    fn pure_product_state_has_zero_entropy() {
        // Two uncoupled identical sites: the mode basis is any rotation, but
        // equal frequencies make each site exactly pure.
        let nm = NormalModes {
            omega_squared: DVector::from_row_slice(&[1.0, 1.0]),
            vectors: DMatrix::identity(2, 2),
        };
        let cov = ground_state_covariance(&nm).unwrap();
        let nu = cov.site_nu(0).unwrap();
        assert_abs_diff_eq!(nu, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(single_site_entropy(&cov, 0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn heisenberg_floor_holds() {
        for n in [2usize, 3, 5] {
            for eps in [1e-6, 1e-3, 1e-1] {
                let cov =
                    ground_state_covariance(&soft_chain_modes(n, eps).unwrap()).unwrap();
                for site in 0..n {
                    assert!(cov.site_nu(site).unwrap() >= 0.5 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn nu_below_half_rejected() {
        assert!(matches!(
            entropy_from_nu(0.4),
            Err(GaussianError::InvalidSymplectic { .. })
        ));
        assert_abs_diff_eq!(entropy_from_nu(0.5).unwrap(), 0.0);
        // Within tolerance of the floor: clamps to zero.
        assert_abs_diff_eq!(entropy_from_nu(0.5 - 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn uncertainty_product_diverges_at_criticality() {
        // Per-site ⟨x²⟩⟨p²⟩ grows without bound as the soft mode slows down;
        // note tr(XP) itself is exactly N/4 by mode orthonormality.
        let site_products = |eps: f64| {
            let cov = ground_state_covariance(&soft_chain_modes(3, eps).unwrap()).unwrap();
            assert_relative_eq!((&cov.x * &cov.p).trace(), 0.75, max_relative = 1e-9);
            (0..3).map(|s| cov.site_nu(s).unwrap().powi(2)).sum::<f64>()
        };
        let t4 = site_products(1e-4);
        let t6 = site_products(1e-6);
        let t8 = site_products(1e-8);
        assert!(t6 > 5.0 * t4);
        assert!(t8 > 5.0 * t6);
    }

    #[test]
    fn deep_scan_nu_frozen_value() {
        let cov = ground_state_covariance(&soft_chain_modes(3, 1e-6).unwrap()).unwrap();
        assert_relative_eq!(cov.site_nu(1).unwrap(), 9.284_677_660_4, max_relative = 1e-8);
    }

    #[test]
    fn slope_near_one_quarter_wide_window() {
        // Central-site entropy vs log₂ ε over ε ∈ [1e-4, 1e-2].
        for (n, frozen) in [(2usize, -0.24348), (3, -0.24409), (5, -0.24702), (10, -0.24709)]
        {
            let (slope, _) = entropy_slope(n, central_site(n), 1e-4, 1e-2, 25).unwrap();
            assert_abs_diff_eq!(slope, frozen, epsilon = 2e-4);
        }
    }

    #[test]
    fn slope_approaches_asymptote_near_critical() {
        for (n, frozen) in [(2usize, -0.24939), (10, -0.24971)] {
            let (slope, _) = entropy_slope(n, central_site(n), 1e-6, 1e-4, 25).unwrap();
            assert_abs_diff_eq!(slope, frozen, epsilon = 2e-4);
            assert!((slope + 0.25).abs() < 0.005);
        }
    }

    #[test]
    fn closed_form_residuals_constant() {
        // Numeric minus closed form settles to a base-conversion constant
        // near the transition.
        let npts = 15;
        let (lo, hi) = (1e-6f64, 1e-4f64);
        let mut r2 = Vec::new();
        let mut r3 = Vec::new();
        for k in 0..npts {
            let f = k as f64 / (npts as f64 - 1.0);
            let eps = lo * (hi / lo) .powf(f);
            let c2 = ground_state_covariance(&soft_chain_modes(2, eps).unwrap()).unwrap();
            r2.push(single_site_entropy(&c2, 0).unwrap() - closed_form_s2(eps));
            let c3 = ground_state_covariance(&soft_chain_modes(3, eps).unwrap()).unwrap();
            r3.push(single_site_entropy(&c3, 1).unwrap() - closed_form_s3(eps));
        }
        let stats = |r: &[f64]| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let spread = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - r.iter().cloned().fold(f64::INFINITY, f64::min);
            (mean, spread)
        };
        let (m2, sp2) = stats(&r2);
        let (m3, sp3) = stats(&r3);
        assert_abs_diff_eq!(m2, 0.5019, epsilon = 3e-3);
        assert_abs_diff_eq!(m3, 0.4786, epsilon = 3e-3);
        assert!(sp2 < 0.02, "S2 residual spread {sp2}");
        assert!(sp3 < 0.02, "S3 residual spread {sp3}");
        assert_abs_diff_eq!(sp2, 0.00437, epsilon = 1e-3);
        assert_abs_diff_eq!(sp3, 0.00419, epsilon = 1e-3);
    }

    #[test]
    fn entropy_monotone_in_epsilon() {
        let s = |eps: f64| {
            let cov = ground_state_covariance(&soft_chain_modes(3, eps).unwrap()).unwrap();
            single_site_entropy(&cov, 1).unwrap()
        };
        assert!(s(1e-5) > s(1e-4));
        assert!(s(1e-4) > s(1e-3));
        assert!(s(1e-3) > s(1e-2));
    }

    #[test]
    fn site_out_of_range_rejected() {
        let cov = ground_state_covariance(&soft_chain_modes(2, 1.0).unwrap()).unwrap();
        assert!(matches!(
            single_site_entropy(&cov, 2),
            Err(GaussianError::SiteOutOfRange { site: 2, n: 2 })
        ));
    }
}
