//! Physical constants, ion species data, and the unit system shared by every
//! other module.
//!
//! All frequencies in this crate are angular (rad/s) unless a value is being
//! ingested through a config with `freq_convention: cyclic`, in which case the
//! conversion ω = 2πf happens exactly once, at the boundary.
//!
//! The natural length of a chain in a trap with axial frequency ω_z is
//!
//! ```text
//! ℓ = (e² / (4π ε₀ m ω_z²))^(1/3)
//! ```
//!
//! which balances Coulomb repulsion against axial confinement; dimensionless
//! positions throughout the crate are measured in units of ℓ. Quantum
//! fluctuations live on the much smaller oscillator scale
//! √(ħ/(m ω_z)); the ratio of the two squared, [`PhysicalContext::eta_squared`],
//! is the small parameter that makes chains of heavy ions nearly classical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant (J·s), 2018 CODATA exact.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Elementary charge (C), 2018 CODATA exact.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity (F/m), 2018 CODATA.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Atomic mass constant (kg), 2018 CODATA.
pub const ATOMIC_MASS: f64 = 1.660_539_066_60e-27;

/// Ion species with embedded isotopic masses (amu).
///
/// Only singly-ionized species commonly used in linear Paul traps are listed;
/// arbitrary masses are accepted through [`Species::Custom`].
const SPECIES_TABLE: &[(&str, f64)] = &[
    ("Be-9", 9.012_183_065),
    ("Mg-24", 23.985_041_697),
    ("Ca-40", 39.962_590_863),
    ("Sr-88", 87.905_612_254),
    ("Ba-138", 137.905_246_899),
    ("Yb-171", 170.936_325_800),
    ("Yb-174", 173.938_866_4),
];

/// How frequency values in a config file are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqConvention {
    /// Values are angular frequencies in rad/s (the crate-internal convention).
    #[default]
    Angular,
    /// Values are cyclic frequencies in Hz and get multiplied by 2π on ingest.
    Cyclic,
}

/// Species selector: a known name or an explicit mass.
#[derive(Debug, Clone, PartialEq)]
pub enum Species {
    Named(String),
    /// Mass in atomic mass units.
    Custom(f64),
}

impl Species {
    pub fn mass_kg(&self) -> Result<f64, UnitsError> {
        match self {
            Species::Named(name) => SPECIES_TABLE
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, amu)| amu * ATOMIC_MASS)
                .ok_or_else(|| UnitsError::UnknownSpecies {
                    name: name.clone(),
                    known: SPECIES_TABLE.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "),
                }),
            Species::Custom(amu) => {
                if *amu > 0.0 {
                    Ok(amu * ATOMIC_MASS)
                } else {
                    Err(UnitsError::NonPositive { what: "mass_amu", value: *amu })
                }
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum UnitsError {
    #[error("unknown species `{name}`; known species: {known} (or pass mass_amu)")]
    UnknownSpecies { name: String, known: String },
    #[error("{what} must be strictly positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
}

/// The kind tag for SI↔dimensionless conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Lengths, natural unit ℓ.
    Length,
    /// Energies, natural unit ħω_z.
    Energy,
    /// Angular frequencies, natural unit ω_z.
    Frequency,
}

/// Immutable bundle of the trap/ion parameters and every derived scale.
///
/// Construction enforces the defining relation ℓ³·4πε₀·m·ω_z² = e²; all
/// other modules receive lengths in ℓ or √(ħ/(m ω_z)) and energies in ħω_z
/// and convert back through this struct only.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalContext {
    mass: f64,
    omega_z: f64,
    charge: f64,
    epsilon0: f64,
    hbar: f64,
    length_scale: f64,
    energy_scale: f64,
    ground_width: f64,
}

impl PhysicalContext {
    /// Build a context from a species and an axial angular frequency (rad/s).
    pub fn new(species: &Species, omega_z: f64) -> Result<Self, UnitsError> {
        let mass = species.mass_kg()?;
        Self::from_raw(mass, omega_z, ELEMENTARY_CHARGE)
    }

    /// Build a context with an explicit charge (untested territory beyond +1e,
    /// but the scaling relations stay exact).
    pub fn from_raw(mass: f64, omega_z: f64, charge: f64) -> Result<Self, UnitsError> {
        if mass <= 0.0 {
            return Err(UnitsError::NonPositive { what: "mass", value: mass });
        }
        if omega_z <= 0.0 {
            return Err(UnitsError::NonPositive { what: "omega_z", value: omega_z });
        }
        if charge <= 0.0 {
            return Err(UnitsError::NonPositive { what: "charge", value: charge });
        }
        let epsilon0 = VACUUM_PERMITTIVITY;
        let hbar = HBAR;
        let length_scale =
            (charge * charge / (4.0 * std::f64::consts::PI * epsilon0 * mass * omega_z * omega_z))
                .cbrt();
        Ok(PhysicalContext {
            mass,
            omega_z,
            charge,
            epsilon0,
            hbar,
            length_scale,
            energy_scale: hbar * omega_z,
            ground_width: (hbar / (2.0 * mass * omega_z)).sqrt(),
        })
    }

    /// Ion mass (kg).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Axial angular frequency (rad/s).
    pub fn omega_z(&self) -> f64 {
        self.omega_z
    }

    /// Ion charge (C).
    pub fn charge(&self) -> f64 {
        self.charge
    }

    /// Coulomb-vs-confinement length ℓ (m).
    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// ħω_z (J).
    pub fn energy_scale(&self) -> f64 {
        self.energy_scale
    }

    /// Axial zero-point width √(ħ/(2mω_z)) (m).
    pub fn ground_width(&self) -> f64 {
        self.ground_width
    }

    /// Oscillator length √(ħ/(mω_z)) (m) — the unit in which the quantum
    /// solvers measure displacements.
    pub fn quantum_length(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.ground_width
    }

    /// (quantum_length/ℓ)² — the dimensionless strength of quartic terms once
    /// displacements are measured in oscillator lengths.
    pub fn eta_squared(&self) -> f64 {
        let q = self.quantum_length() / self.length_scale;
        q * q
    }

    /// Convert a dimensionless value to SI.
    pub fn to_si(&self, value: f64, kind: Quantity) -> f64 {
        match kind {
            Quantity::Length => value * self.length_scale,
            Quantity::Energy => value * self.energy_scale,
            Quantity::Frequency => value * self.omega_z,
        }
    }

    /// Convert an SI value to the dimensionless system. Exact inverse of
    /// [`Self::to_si`] up to floating-point roundoff.
    pub fn from_si(&self, value: f64, kind: Quantity) -> f64 {
        match kind {
            Quantity::Length => value / self.length_scale,
            Quantity::Energy => value / self.energy_scale,
            Quantity::Frequency => value / self.omega_z,
        }
    }
}

/// Serializable form of the context used in config files and manifests.
///
/// `omega_z` is interpreted per `freq_convention`. Exactly one of `species`
/// and `mass_amu` must be given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_amu: Option<f64>,
    pub omega_z: f64,
    #[serde(default)]
    pub freq_convention: FreqConvention,
}

impl ContextSpec {
    /// The default experimental context: Ca-40 at ω_z = 1e6 rad/s.
    ///
    /// This pairing reproduces the dimensional scales quoted for a three-ion
    /// chain (soft-mode quartic coefficient within ~12% of 3·10⁻⁴ J·m⁻⁴);
    /// a cyclic reading of the same numbers misses by three orders of
    /// magnitude, which is why `angular` is the default convention.
    pub fn matched() -> Self {
        ContextSpec {
            species: Some("Ca-40".to_owned()),
            mass_amu: None,
            omega_z: 1.0e6,
            freq_convention: FreqConvention::Angular,
        }
    }

    pub fn build(&self) -> Result<PhysicalContext, UnitsError> {
        let species = match (&self.species, self.mass_amu) {
            (Some(name), None) => Species::Named(name.clone()),
            (None, Some(amu)) => Species::Custom(amu),
            (Some(_), Some(_)) => {
                return Err(UnitsError::NonPositive {
                    what: "exactly one of species/mass_amu (both given; amu sentinel)",
                    value: f64::NAN,
                })
            }
            (None, None) => Species::Named("Ca-40".to_owned()),
        };
        let omega_z = match self.freq_convention {
            FreqConvention::Angular => self.omega_z,
            FreqConvention::Cyclic => 2.0 * std::f64::consts::PI * self.omega_z,
        };
        PhysicalContext::new(&species, omega_z)
    }
}
