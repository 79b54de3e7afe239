//! Config-driven experiment runner behind the `ionsim` binary.
//!
//! Invocation: `ionsim <kind> --config <file> [--jobs N] [--out DIR]`.  The
//! positional `<kind>` must match the `kind` field of the JSON config — the
//! redundancy catches "ran the wrong file" mistakes in batch scripts.
//!
//! # Config format
//!
//! Strict JSON: unknown keys anywhere are rejected, naming the offending key.
//!
//! ```json
//! {
//!   "context": { "species": "Ca-40", "omega_z": 1.0e6, "freq_convention": "angular" },
//!   "kind": "entropy-full",
//!   "params": { "r_values": [1.60, 1.55, 1.50] },
//!   "out_dir": "runs/scan-a",
//!   "seed": 0
//! }
//! ```
//!
//! - `context`: ion species (or `mass_amu`) and axial frequency; see
//!   [`ContextSpec`].  `freq_convention` selects how every frequency in the
//!   file is read (`angular` rad/s — the default — or `cyclic` Hz).
//! - `kind`: one of `equilibrium`, `critical`, `modes`, `entropy-gaussian`,
//!   `entropy-full`, `doublewell-spectrum`, `sweep`, `rabi`, `thresholds-3d`.
//! - `params`: kind-specific block, documented on the `*Params` types below.
//! - `out_dir`: output directory; the `--out` flag overrides it and the
//!   `IONSIM_OUT` environment variable overrides both.  Output location is
//!   the only thing the environment may override.
//! - `seed`: recorded in the manifest; reserved (every solver in the crate
//!   is deterministic, so reruns are reproducible without it).
//!
//! # Outputs
//!
//! Every run writes its data files plus `manifest.json` echoing the fully
//! resolved config together with the tool version and the solver tolerances
//! in effect.  Scan kinds compute points in parallel (`--jobs`), write each
//! point atomically under `points/`, then merge them in input order, so
//! reruns of the same config produce byte-identical CSV bodies regardless
//! of thread count.  Scan kinds also emit `plot.dat`, a gnuplot-compatible
//! column file with a monotone x column and units in its comment header.
//!
//! The process exits 0 only if every requested computation met its residual
//! tolerance; any validation or solver failure exits 1 with the error chain
//! on stderr.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::crystal::{
    classify, critical_frequency, find_equilibrium, hessian, potential_energy, threshold_scan_3d,
    CrystalError, Seed,
};
use crate::doublewell::{
    adiabatic_ground_state_fidelity, eigenstates_1d, rabi_scan, sweep_grid, DoubleWellError,
    Grid1D, GridSpec, Potential1D,
};
use crate::fewbody::{entropy_scan, FewBodyError, GridPolicy, RESIDUAL_TARGET};
use crate::gaussian::{ground_state_covariance, single_site_entropy, GaussianError};
use crate::modes::{
    chain_landau, margin_one_detuning, normal_modes, one_level_threshold, taylor_expand,
    LandauCoefficients, ModesError,
};
use crate::units::{ContextSpec, FreqConvention, PhysicalContext, UnitsError, HBAR};

/// Command-line arguments of the `ionsim` binary.
#[derive(Debug, Parser)]
#[command(
    name = "ionsim",
    version,
    about = "Radial-mode simulator for trapped-ion chains: crystal structure, \
             the linear-zigzag transition, entanglement entropy, and double-well dynamics"
)]
pub struct CliArgs {
    /// Experiment kind; must match the `kind` field of the config file.
    pub kind: String,
    /// Path to the JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads for scan-level parallelism (0 or absent: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not validate: {message}")]
    ConfigParse { message: String },
    #[error("`{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("params for kind `{kind}` do not validate: {message}")]
    BadParams { kind: &'static str, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build worker pool: {message}")]
    Pool { message: String },
    #[error("scan point {index} (x = {value}) failed: {source}")]
    Point {
        index: usize,
        value: f64,
        #[source]
        source: Box<CliError>,
    },
    #[error(transparent)]
    Units(#[from] UnitsError),
    #[error(transparent)]
    Crystal(#[from] CrystalError),
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    DoubleWell(#[from] DoubleWellError),
    #[error(transparent)]
    FewBody(#[from] FewBodyError),
}

/// The nine experiment kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "equilibrium")]
    Equilibrium,
    #[serde(rename = "critical")]
    Critical,
    #[serde(rename = "modes")]
    Modes,
    #[serde(rename = "entropy-gaussian")]
    EntropyGaussian,
    #[serde(rename = "entropy-full")]
    EntropyFull,
    #[serde(rename = "doublewell-spectrum")]
    DoublewellSpectrum,
    #[serde(rename = "sweep")]
    Sweep,
    #[serde(rename = "rabi")]
    Rabi,
    #[serde(rename = "thresholds-3d")]
    Thresholds3d,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Equilibrium,
        ExperimentKind::Critical,
        ExperimentKind::Modes,
        ExperimentKind::EntropyGaussian,
        ExperimentKind::EntropyFull,
        ExperimentKind::DoublewellSpectrum,
        ExperimentKind::Sweep,
        ExperimentKind::Rabi,
        ExperimentKind::Thresholds3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::Critical => "critical",
            ExperimentKind::Modes => "modes",
            ExperimentKind::EntropyGaussian => "entropy-gaussian",
            ExperimentKind::EntropyFull => "entropy-full",
            ExperimentKind::DoublewellSpectrum => "doublewell-spectrum",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Rabi => "rabi",
            ExperimentKind::Thresholds3d => "thresholds-3d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// One run: context, experiment kind, kind-specific parameters.
///
/// `params` is validated against the kind's parameter struct immediately
/// after the outer parse, so a typo anywhere in the file is an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub context: ContextSpec,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_dim() -> usize {
    2
}

/// `equilibrium`: relax an `n`-ion crystal at confinement ratios
/// (`r_x` = ω_x/ω_z, `r_y` = ω_y/ω_z) in `dim` dimensions (1, 2, or 3;
/// default 2 = the xz plane that hosts the zigzag).  `r_y` is required only
/// for `dim = 3`.  Writes `positions.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumParams {
    pub n: usize,
    pub r_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_y: Option<f64>,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

/// `critical`: the buckling ratio ω_c/ω_z of the `n`-ion linear chain.
/// Writes `critical.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalParams {
    pub n: usize,
}

/// `modes`: transverse normal modes of the `n`-ion linear chain at ratio
/// `r_x`.  Writes `modes.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesParams {
    pub n: usize,
    pub r_x: f64,
}

/// `entropy-gaussian`: harmonic-theory single-site entanglement entropies of
/// the `n`-ion chain at each ratio in `r_values` (all must lie above the
/// critical ratio, where the linearized theory exists).  Writes
/// `entropy.csv` with one entropy column per site, plus `plot.dat`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyGaussianParams {
    pub n: usize,
    pub r_values: Vec<f64>,
}

/// Optional overrides of the few-body grid policy; absent fields keep the
/// defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPolicyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_base: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_site: Option<usize>,
}

impl GridPolicyParams {
    fn resolve(&self) -> GridPolicy {
        let d = GridPolicy::default();
        GridPolicy {
            n_base: self.n_base.unwrap_or(d.n_base),
            n_cap: self.n_cap.unwrap_or(d.n_cap),
            n_site: self.n_site.unwrap_or(d.n_site),
        }
    }
}

/// `entropy-full`: the full three-ion quantum solver at each ratio in
/// `r_values` — outer-site entanglement entropy, spatial spread, and the
/// parity gap.  Writes `scan.csv` and `plot.dat`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyFullParams {
    pub r_values: Vec<f64>,
    #[serde(default)]
    pub grid: GridPolicyParams,
}

/// Where a 1D double-well potential comes from: either the soft-mode
/// reduction of an `n`-ion chain at ratio `r_x`, or explicit coefficients
/// `a` (J/m²) and `b` (J/m⁴, quarter convention) with the context's ion
/// mass.  `alpha3` (J/m³) adds a cubic bias; 0 keeps the well symmetric.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default)]
    pub alpha3: f64,
}

impl WellParams {
    /// Resolve to a potential; chain-sourced wells also return the Landau
    /// reduction for the manifest.
    fn resolve(
        &self,
        ctx: &PhysicalContext,
    ) -> Result<(Potential1D, Option<LandauCoefficients>), CliError> {
        match (self.n, self.r_x, self.a, self.b) {
            (Some(n), Some(r_x), None, None) => {
                let lc = chain_landau(n, r_x, ctx)?;
                let p = Potential1D::new(lc.a, lc.b, self.alpha3, lc.mass)?;
                Ok((p, Some(lc)))
            }
            (None, None, Some(a), Some(b)) => {
                let p = Potential1D::new(a, b, self.alpha3, ctx.mass())?;
                Ok((p, None))
            }
            _ => Err(CliError::BadValue {
                key: "params.well".into(),
                message: "give either {n, r_x} (chain soft-mode reduction) or {a, b} \
                          (explicit coefficients), not a mixture"
                    .into(),
            }),
        }
    }
}

/// Optional 1D grid overrides: `n` interior nodes (default 4096) and a
/// half-span in meters (default: automatic from the potential).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1dParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<f64>,
}

impl Grid1dParams {
    fn resolve(&self) -> GridSpec {
        GridSpec { n: self.n.unwrap_or_else(|| GridSpec::default().n), span: self.span }
    }
}

fn default_levels() -> usize {
    4
}

/// `doublewell-spectrum`: low-lying spectrum of the soft-mode well, plus the
/// barrier, doublet splitting, and the one-level criterion point.  Writes
/// `spectrum.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoublewellSpectrumParams {
    pub well: WellParams,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub grid: Grid1dParams,
}

/// `sweep`: adiabatic ramps of the quadratic coefficient from the well's `a`
/// to `a_end` (J/m²), one ramp per entry of `durations` (s), each started in
/// the instantaneous ground state; records the final ground-state fidelity.
/// Writes `sweep.csv` and `plot.dat`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub well: WellParams,
    pub a_end: f64,
    pub durations: Vec<f64>,
    /// Propagation step (s); validated against ħ/(E₃−E₀) before running.
    pub dt: f64,
    #[serde(default)]
    pub grid: Grid1dParams,
}

/// `rabi`: drive a double well with `(V₀/x_s)·x·cos(ωt)` starting from the
/// left-localized doublet state.  `amplitude` is V₀ in J; `omega` is the
/// drive frequency (per the context's `freq_convention`), defaulting to the
/// solved doublet resonance.  Writes `rabi.csv` and `plot.dat`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiParams {
    pub well: WellParams,
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    pub duration: f64,
    /// Propagation step (s); validated against ħ/(E₃−E₀) and the drive
    /// period before running.
    pub dt: f64,
    #[serde(default)]
    pub grid: Grid1dParams,
}

/// `thresholds-3d`: structural thresholds of the four-ion crystal in an
/// isotropic radial trap.  Writes `thresholds.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds3dParams {}

/// What a completed run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    /// Files written, relative to `out_dir` (`manifest.json` last).
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest {
    tool: ToolVersions,
    resolved_config: ResolvedConfig,
    tolerances: serde_json::Value,
    results: serde_json::Value,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct ToolVersions {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct ResolvedConfig {
    context: ContextSpec,
    kind: &'static str,
    params: serde_json::Value,
    out_dir: String,
    seed: u64,
}

/// Entry point used by the `ionsim` binary; returns the process exit code.
pub fn main() -> i32 {
    let args = CliArgs::parse();
    match run_cli(&args) {
        Ok(summary) => {
            println!(
                "{}: wrote {} file(s) to {}",
                summary.kind.name(),
                summary.files.len(),
                summary.out_dir.display()
            );
            for f in &summary.files {
                println!("  {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut cause = std::error::Error::source(&e);
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            1
        }
    }
}

/// Load the config named by `args`, cross-check the kind, resolve the output
/// directory (env > flag > config > `ionsim-out`), and run.
pub fn run_cli(args: &CliArgs) -> Result<RunSummary, CliError> {
    let raw = fs::read_to_string(&args.config)
        .map_err(|source| CliError::ConfigRead { path: args.config.clone(), source })?;
    let config: RunConfig = serde_json::from_str(&raw)
        .map_err(|e| CliError::ConfigParse { message: e.to_string() })?;
    let kind = ExperimentKind::parse(&args.kind).ok_or_else(|| CliError::BadValue {
        key: "kind".into(),
        message: format!(
            "unknown kind `{}`; expected one of: {}",
            args.kind,
            ExperimentKind::ALL.map(|k| k.name()).join(", ")
        ),
    })?;
    if kind != config.kind {
        return Err(CliError::BadValue {
            key: "kind".into(),
            message: format!(
                "command line says `{}` but the config says `{}`",
                kind.name(),
                config.kind.name()
            ),
        });
    }
    let env_out = std::env::var_os("IONSIM_OUT").map(PathBuf::from);
    let out_dir = resolve_out_dir(env_out.as_deref(), args.out.as_deref(), config.out_dir.as_deref());
    run(&config, &out_dir, args.jobs)
}

/// Output-directory precedence: environment > `--out` flag > config >
/// default `ionsim-out`.
pub fn resolve_out_dir(env: Option<&Path>, flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    env.or(flag).or(config).unwrap_or_else(|| Path::new("ionsim-out")).to_path_buf()
}

/// Execute one run into `out_dir` with an optional worker-thread budget.
pub fn run(config: &RunConfig, out_dir: &Path, jobs: Option<usize>) -> Result<RunSummary, CliError> {
    let ctx = config.context.build()?;
    fs::create_dir_all(out_dir)
        .map_err(|source| CliError::Io { path: out_dir.to_path_buf(), source })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Pool { message: e.to_string() })?;
    let (params_json, tolerances, results, files) = pool.install(|| -> Result<_, CliError> {
        match config.kind {
            ExperimentKind::Equilibrium => run_equilibrium(config, &ctx, out_dir),
            ExperimentKind::Critical => run_critical(config, out_dir),
            ExperimentKind::Modes => run_modes(config, out_dir),
            ExperimentKind::EntropyGaussian => run_entropy_gaussian(config, out_dir),
            ExperimentKind::EntropyFull => run_entropy_full(config, &ctx, out_dir),
            ExperimentKind::DoublewellSpectrum => run_doublewell_spectrum(config, &ctx, out_dir),
            ExperimentKind::Sweep => run_sweep(config, &ctx, out_dir),
            ExperimentKind::Rabi => run_rabi(config, &ctx, out_dir),
            ExperimentKind::Thresholds3d => run_thresholds_3d(config, out_dir),
        }
    })?;
    let manifest = Manifest {
        tool: ToolVersions { name: "ionsim", version: env!("CARGO_PKG_VERSION") },
        resolved_config: ResolvedConfig {
            context: config.context.clone(),
            kind: config.kind.name(),
            params: params_json,
            out_dir: out_dir.display().to_string(),
            seed: config.seed.unwrap_or(0),
        },
        tolerances,
        results,
        outputs: files.iter().map(|f| f.display().to_string()).collect(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::ConfigParse { message: e.to_string() })?;
    let mut files = files;
    files.push(write_atomic(out_dir, "manifest.json", &manifest_json)?);
    Ok(RunSummary { kind: config.kind, out_dir: out_dir.to_path_buf(), files })
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn parse_params<T: DeserializeOwned>(kind: ExperimentKind, v: &serde_json::Value) -> Result<T, CliError> {
    let v = if v.is_null() { serde_json::Value::Object(Default::default()) } else { v.clone() };
    serde_json::from_value(v)
        .map_err(|e| CliError::BadParams { kind: kind.name(), message: e.to_string() })
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("params serialize")
}

/// Write `contents` to `dir/name` atomically (temp file + rename).
fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(|source| CliError::Io { path: tmp.clone(), source })?;
    let dest = dir.join(name);
    fs::rename(&tmp, &dest).map_err(|source| CliError::Io { path: dest.clone(), source })?;
    Ok(PathBuf::from(name))
}

fn check_positive_list(key: &str, values: &[f64]) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::BadValue { key: key.into(), message: "must be non-empty".into() });
    }
    for (i, &v) in values.iter().enumerate() {
        if !(v.is_finite() && v > 0.0) {
            return Err(CliError::BadValue {
                key: format!("{key}[{i}]"),
                message: format!("must be a finite positive number, got {v}"),
            });
        }
    }
    Ok(())
}

/// Run one scan point per entry of `xs` in parallel.  Each closure returns
/// the point's CSV row (no trailing newline) plus its numeric plot columns;
/// rows are written atomically under `points/` as they complete, then merged
/// under `header` into `file` in input order.
fn scan_to_csv<F>(
    out_dir: &Path,
    file: &str,
    header: &str,
    xs: &[f64],
    point: F,
) -> Result<(PathBuf, Vec<Vec<f64>>), CliError>
where
    F: Fn(usize, f64) -> Result<(String, Vec<f64>), CliError> + Sync,
{
    let points_dir = out_dir.join("points");
    fs::create_dir_all(&points_dir)
        .map_err(|source| CliError::Io { path: points_dir.clone(), source })?;
    let fragment = |i: usize| format!("{file}.{i:04}");
    let plot_rows: Vec<Vec<f64>> = xs
        .par_iter()
        .enumerate()
        .map(|(i, &x)| -> Result<Vec<f64>, CliError> {
            let (row, cols) = point(i, x)
                .map_err(|e| CliError::Point { index: i, value: x, source: Box::new(e) })?;
            write_atomic(&points_dir, &fragment(i), &row)?;
            Ok(cols)
        })
        .collect::<Result<_, _>>()?;
    let mut body = String::from(header);
    if !body.ends_with('\n') {
        body.push('\n');
    }
    for i in 0..xs.len() {
        let frag = points_dir.join(fragment(i));
        let row =
            fs::read_to_string(&frag).map_err(|source| CliError::Io { path: frag.clone(), source })?;
        body.push_str(&row);
        if !row.ends_with('\n') {
            body.push('\n');
        }
    }
    let path = write_atomic(out_dir, file, &body)?;
    let _ = fs::remove_dir_all(&points_dir);
    Ok((path, plot_rows))
}

/// Gnuplot-compatible column file: `# …` comment header carrying units, then
/// space-separated rows sorted so the first column is monotone.
pub fn emit_plot_data(
    out_dir: &Path,
    name: &str,
    comment_header: &str,
    mut rows: Vec<Vec<f64>>,
) -> Result<PathBuf, CliError> {
    if rows.is_empty() {
        return Err(CliError::BadValue {
            key: "plot".into(),
            message: "scan produced no rows".into(),
        });
    }
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut s = String::new();
    if !comment_header.starts_with('#') {
        s.push_str("# ");
    }
    s.push_str(comment_header);
    s.push('\n');
    for r in &rows {
        let cols: Vec<String> = r.iter().map(|v| format!("{v:.9e}")).collect();
        s.push_str(&cols.join(" "));
        s.push('\n');
    }
    write_atomic(out_dir, name, &s)
}

fn to_angular(value: f64, convention: FreqConvention) -> f64 {
    match convention {
        FreqConvention::Angular => value,
        FreqConvention::Cyclic => 2.0 * std::f64::consts::PI * value,
    }
}

type KindOutput = (serde_json::Value, serde_json::Value, serde_json::Value, Vec<PathBuf>);

// ---------------------------------------------------------------------------
// Kind handlers
// ---------------------------------------------------------------------------

fn run_equilibrium(
    config: &RunConfig,
    ctx: &PhysicalContext,
    out_dir: &Path,
) -> Result<KindOutput, CliError> {
    let p: EquilibriumParams = parse_params(config.kind, &config.params)?;
    if !(1..=3).contains(&p.dim) {
        return Err(CliError::BadValue {
            key: "params.dim".into(),
            message: format!("must be 1, 2, or 3, got {}", p.dim),
        });
    }
    if p.dim == 3 && p.r_y.is_none() {
        return Err(CliError::BadValue {
            key: "params.r_y".into(),
            message: "required when dim = 3".into(),
        });
    }
    let r_y = p.r_y.unwrap_or(f64::INFINITY);
    let cfg = find_equilibrium(p.n, p.r_x, r_y, p.dim, Seed::Heuristic)?;
    let h = hessian(&cfg)?;
    let report = classify(&cfg, &h);
    let energy = potential_energy(&cfg)?;
    let files = vec![write_atomic(out_dir, "positions.csv", &cfg.to_csv(Some(ctx)))?];
    let results = json!({
        "label": format!("{:?}", report.label),
        "lowest_hessian_eigenvalue": report.lowest_eigenvalue,
        "potential_energy_natural": energy,
    });
    Ok((to_json(&p), json!({ "relax_gradient_norm": 1e-10 }), results, files))
}

fn run_critical(config: &RunConfig, out_dir: &Path) -> Result<KindOutput, CliError> {
    let p: CriticalParams = parse_params(config.kind, &config.params)?;
    let rc = critical_frequency(p.n)?;
    let csv = format!("# n, r_c [wx/wz]\n{}, {:.9e}\n", p.n, rc);
    let files = vec![write_atomic(out_dir, "critical.csv", &csv)?];
    let results = json!({ "n": p.n, "critical_ratio": rc });
    let tol = json!({ "relax_gradient_norm": 1e-10, "bisection_bracket": 1e-9 });
    Ok((to_json(&p), tol, results, files))
}

fn run_modes(config: &RunConfig, out_dir: &Path) -> Result<KindOutput, CliError> {
    let p: ModesParams = parse_params(config.kind, &config.params)?;
    let chain = find_equilibrium(p.n, 10.0, f64::INFINITY, 1, Seed::Heuristic)?;
    let t = taylor_expand(&chain, p.r_x)?;
    let nm = normal_modes(&t);
    let files = vec![write_atomic(out_dir, "modes.csv", &nm.to_csv())?];
    let (soft_w2, _) = nm.soft_mode();
    let results = json!({
        "soft_mode_omega_squared": soft_w2,
        "soft_count": nm.soft_count(),
    });
    Ok((to_json(&p), json!({ "relax_gradient_norm": 1e-10 }), results, files))
}

fn run_entropy_gaussian(config: &RunConfig, out_dir: &Path) -> Result<KindOutput, CliError> {
    let p: EntropyGaussianParams = parse_params(config.kind, &config.params)?;
    check_positive_list("params.r_values", &p.r_values)?;
    let chain = find_equilibrium(p.n, 10.0, f64::INFINITY, 1, Seed::Heuristic)?;
    let mut header = String::from("r_x");
    for site in 0..p.n {
        header.push_str(&format!(",S_site{site}_bits"));
    }
    let (csv, plot_rows) = scan_to_csv(out_dir, "entropy.csv", &header, &p.r_values, |_, r| {
        let t = taylor_expand(&chain, r)?;
        let nm = normal_modes(&t);
        let cov = ground_state_covariance(&nm)?;
        let mut row = format!("{r:.9}");
        let mut cols = vec![r];
        for site in 0..p.n {
            let s = single_site_entropy(&cov, site)?;
            row.push_str(&format!(",{s:.6}"));
            cols.push(s);
        }
        Ok((row, cols))
    })?;
    let mut plot_header = String::from("# r_x");
    for site in 0..p.n {
        plot_header.push_str(&format!("  S_site{site} [bits]"));
    }
    let plot = emit_plot_data(out_dir, "plot.dat", &plot_header, plot_rows)?;
    let results = json!({ "points": p.r_values.len(), "sites": p.n });
    Ok((to_json(&p), json!({ "relax_gradient_norm": 1e-10 }), results, vec![csv, plot]))
}

fn run_entropy_full(
    config: &RunConfig,
    ctx: &PhysicalContext,
    out_dir: &Path,
) -> Result<KindOutput, CliError> {
    let p: EntropyFullParams = parse_params(config.kind, &config.params)?;
    check_positive_list("params.r_values", &p.r_values)?;
    let policy = p.grid.resolve();
    let header = "r_x,S_bits,sqrt_x2_m,gap_Hz";
    let (csv, plot_rows) = scan_to_csv(out_dir, "scan.csv", header, &p.r_values, |_, r| {
        let rec = entropy_scan(&[r], ctx, &policy)?.remove(0);
        let row = format!(
            "{:.9},{:.6},{:.9e},{:.9e}",
            rec.r_x, rec.entropy_bits, rec.rms_m, rec.gap_hz
        );
        Ok((row, vec![rec.r_x, rec.entropy_bits, rec.rms_m, rec.gap_hz]))
    })?;
    let plot_rows_2col: Vec<Vec<f64>> = plot_rows.iter().map(|r| vec![r[0], r[1]]).collect();
    let plot = emit_plot_data(out_dir, "plot.dat", "# r_x  S [bits]", plot_rows_2col)?;
    let results = json!({ "points": p.r_values.len() });
    let tol = json!({ "relax_gradient_norm": 1e-10, "ground_state_residual": RESIDUAL_TARGET });
    Ok((to_json(&p), tol, results, vec![csv, plot]))
}

fn landau_json(lc: &LandauCoefficients) -> serde_json::Value {
    json!({
        "a_J_per_m2": lc.a,
        "b_J_per_m4": lc.b,
        "soft_omega_squared": lc.omega_squared_dimensionless,
        "b_tilde": lc.b_tilde,
    })
}

fn run_doublewell_spectrum(
    config: &RunConfig,
    ctx: &PhysicalContext,
    out_dir: &Path,
) -> Result<KindOutput, CliError> {
    let p: DoublewellSpectrumParams = parse_params(config.kind, &config.params)?;
    if p.levels < 2 {
        return Err(CliError::BadValue {
            key: "params.levels".into(),
            message: format!("need at least 2 levels, got {}", p.levels),
        });
    }
    let (well, lc) = p.well.resolve(ctx)?;
    let sol = eigenstates_1d(&well, p.grid.resolve(), p.levels)?;
    let h_planck = 2.0 * std::f64::consts::PI * HBAR;
    let mut csv = String::from("# k, E [J], (E-E0)/h [Hz]\n");
    for (k, &e) in sol.energies.iter().enumerate() {
        csv.push_str(&format!("{k}, {:.12e}, {:.9e}\n", e, (e - sol.energies[0]) / h_planck));
    }
    let files = vec![write_atomic(out_dir, "spectrum.csv", &csv)?];
    // The one-level criterion point for this quartic coefficient, reported
    // alongside whatever detuning the config chose.
    let a_star = one_level_threshold(well.b, well.mass);
    let mut results = json!({
        "a_J_per_m2": well.a,
        "b_J_per_m4": well.b,
        "alpha3_J_per_m3": well.alpha3,
        "mass_kg": well.mass,
        "splitting_Hz": (sol.energies[1] - sol.energies[0]) / h_planck,
        "max_residual": sol.max_residual,
        "criterion_point": {
            "a_star_J_per_m2": -a_star,
            "detuning_rad_s": margin_one_detuning(well.b, well.mass),
        },
    });
    if let Some((_, v_top)) = well.barrier() {
        // Height above the shallower minimum — the escape scale.
        let depth = well
            .minima()
            .iter()
            .map(|&(x, _)| v_top - well.value(x))
            .fold(f64::INFINITY, f64::min);
        results["barrier_J"] = json!(depth);
        results["barrier_over_h_Hz"] = json!(depth / h_planck);
    }
    if let Ok(sep) = well.well_separation() {
        results["well_separation_m"] = json!(sep);
    }
    if let Some(lc) = &lc {
        results["landau"] = landau_json(lc);
    }
    Ok((to_json(&p), json!({ "eigenstate_residual": 1e-8 }), results, files))
}

fn run_sweep(
    config: &RunConfig,
    ctx: &PhysicalContext,
    out_dir: &Path,
) -> Result<KindOutput, CliError> {
    let p: SweepParams = parse_params(config.kind, &config.params)?;
    check_positive_list("params.durations", &p.durations)?;
    if !(p.dt.is_finite() && p.dt > 0.0) {
        return Err(CliError::BadValue {
            key: "params.dt".into(),
            message: format!("must be a finite positive time in seconds, got {}", p.dt),
        });
    }
    let (start, lc) = p.well.resolve(ctx)?;
    let spec = p.grid.resolve();
    let grid = match spec.span {
        Some(span) => Grid1D::new(spec.n, span)?,
        None => sweep_grid(&start, p.a_end, spec.n)?,
    };
    let header = "rate_J_per_m2_s,duration_s,fidelity";
    let (csv, plot_rows) = scan_to_csv(out_dir, "sweep.csv", header, &p.durations, |_, duration| {
        let (fidelity, _) = adiabatic_ground_state_fidelity(&start, p.a_end, duration, p.dt, &grid)?;
        let rate = (p.a_end - start.a).abs() / duration;
        let row = format!("{rate:.9e},{duration:.9e},{fidelity:.9}");
        Ok((row, vec![rate, fidelity]))
    })?;
    let plot = emit_plot_data(out_dir, "plot.dat", "# rate [J/m^2/s]  fidelity", plot_rows)?;
    let mut results = json!({
        "a_start_J_per_m2": start.a,
        "a_end_J_per_m2": p.a_end,
        "ramps": p.durations.len(),
    });
    if let Some(lc) = &lc {
        results["landau"] = landau_json(lc);
    }
    let tol = json!({ "eigenstate_residual": 1e-8, "max_dt_rule": "hbar/(20*(E3-E0))" });
    Ok((to_json(&p), tol, results, vec![csv, plot]))
}

fn run_rabi(
    config: &RunConfig,
    ctx: &PhysicalContext,
    out_dir: &Path,
) -> Result<KindOutput, CliError> {
    let p: RabiParams = parse_params(config.kind, &config.params)?;
    let (well, lc) = p.well.resolve(ctx)?;
    let spec = p.grid.resolve();
    let omega = match p.omega {
        Some(w) => {
            let w = to_angular(w, config.context.freq_convention);
            if !(w.is_finite() && w > 0.0) {
                return Err(CliError::BadValue {
                    key: "params.omega".into(),
                    message: format!("must be a finite positive frequency, got {w}"),
                });
            }
            w
        }
        None => {
            let sol = eigenstates_1d(&well, spec, 2)?;
            (sol.energies[1] - sol.energies[0]) / HBAR
        }
    };
    let scan = rabi_scan(&well, p.amplitude, omega, p.duration, p.dt, spec)?;
    let traj = &scan.trajectory;
    let mut csv = String::from("t_s,p_left,p_right,x_mean_m,norm\n");
    let mut plot_rows = Vec::with_capacity(traj.times.len());
    for i in 0..traj.times.len() {
        csv.push_str(&format!(
            "{:.9e},{:.9},{:.9},{:.9e},{:.9}\n",
            traj.times[i], traj.p_left[i], traj.p_right[i], traj.x_mean[i], traj.norm[i]
        ));
        plot_rows.push(vec![traj.times[i], traj.p_left[i], traj.p_right[i]]);
    }
    let files = vec![
        write_atomic(out_dir, "rabi.csv", &csv)?,
        emit_plot_data(out_dir, "plot.dat", "# t [s]  P_L  P_R", plot_rows)?,
    ];
    let mut results = json!({
        "resonance_omega_rad_s": scan.resonance_omega,
        "drive_omega_rad_s": omega,
        "rabi_omega_rad_s": scan.rabi_omega,
        "contrast": scan.contrast,
        "low_contrast": scan.low_contrast,
    });
    if let Some(lc) = &lc {
        results["landau"] = landau_json(lc);
    }
    let tol = json!({
        "eigenstate_residual": 1e-8,
        "max_dt_rule": "min(hbar/(20*(E3-E0)), drive_period/20)",
    });
    Ok((to_json(&p), tol, results, files))
}

fn run_thresholds_3d(config: &RunConfig, out_dir: &Path) -> Result<KindOutput, CliError> {
    let p: Thresholds3dParams = parse_params(config.kind, &config.params)?;
    let (lower, upper) = threshold_scan_3d()?;
    let csv = format!("# n, lower [wr/wz], upper [wr/wz]\n4, {lower:.9e}, {upper:.9e}\n");
    let files = vec![write_atomic(out_dir, "thresholds.csv", &csv)?];
    let results = json!({ "n": 4, "lower_ratio": lower, "upper_ratio": upper });
    let tol = json!({ "relax_gradient_norm": 1e-10, "bisection_bracket": 1e-9 });
    Ok((to_json(&p), tol, results, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn base_config(kind: &str, params: serde_json::Value) -> RunConfig {
        serde_json::from_value(json!({
            "context": { "species": "Ca-40", "omega_z": 1.0e6 },
            "kind": kind,
            "params": params,
        }))
        .unwrap()
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::parse(k.name()), Some(k));
            let j = serde_json::to_value(k).unwrap();
            assert_eq!(j, json!(k.name()));
            let back: ExperimentKind = serde_json::from_value(j).unwrap();
            assert_eq!(back, k);
        }
        assert_eq!(ExperimentKind::parse("entropy"), None);
    }

    #[test]
    fn unknown_top_level_key_is_rejected_by_name() {
        let err = serde_json::from_value::<RunConfig>(json!({
            "context": { "species": "Ca-40", "omega_z": 1.0e6 },
            "kind": "critical",
            "params": { "n": 3 },
            "outdir": "x",
        }))
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown field `outdir`"), "{msg}");
        assert!(msg.contains("out_dir"), "should list the expected keys: {msg}");
    }

    #[test]
    fn unknown_param_key_is_rejected_by_name() {
        let cfg = base_config("critical", json!({ "n": 3, "nn": 4 }));
        let err = parse_params::<CriticalParams>(cfg.kind, &cfg.params).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('`') && msg.contains("nn"), "{msg}");
        assert!(msg.contains("critical"), "names the kind: {msg}");
    }

    #[test]
    fn param_type_error_names_expected_type() {
        let cfg = base_config("critical", json!({ "n": "three" }));
        let err = parse_params::<CriticalParams>(cfg.kind, &cfg.params).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("invalid type"), "{msg}");
        assert!(msg.contains("usize") || msg.contains("integer"), "{msg}");
    }

    #[test]
    fn null_params_mean_empty_block() {
        let p: Thresholds3dParams =
            parse_params(ExperimentKind::Thresholds3d, &serde_json::Value::Null).unwrap();
        let _ = p;
        // A kind with required params still fails cleanly.
        let err =
            parse_params::<CriticalParams>(ExperimentKind::Critical, &serde_json::Value::Null)
                .unwrap_err();
        assert!(err.to_string().contains("missing field `n`"), "{err}");
    }

    #[test]
    fn out_dir_precedence_is_env_flag_config_default() {
        let env = Path::new("/e");
        let flag = Path::new("/f");
        let cfg = Path::new("/c");
        assert_eq!(resolve_out_dir(Some(env), Some(flag), Some(cfg)), PathBuf::from("/e"));
        assert_eq!(resolve_out_dir(None, Some(flag), Some(cfg)), PathBuf::from("/f"));
        assert_eq!(resolve_out_dir(None, None, Some(cfg)), PathBuf::from("/c"));
        assert_eq!(resolve_out_dir(None, None, None), PathBuf::from("ionsim-out"));
    }

    #[test]
    fn well_params_demand_exactly_one_source() {
        let ctx = ContextSpec::matched().build().unwrap();
        // Mixtures parse fine; resolution rejects them.
        let wp: WellParams =
            serde_json::from_value(json!({ "n": 3, "r_x": 1.5, "a": -1e-16 })).unwrap();
        let err = wp.resolve(&ctx).unwrap_err();
        assert!(err.to_string().contains("params.well"), "{err}");
        let ok: WellParams = serde_json::from_value(json!({ "a": -1e-16, "b": 1.3e-3 })).unwrap();
        let (p, lc) = ok.resolve(&ctx).unwrap();
        assert!(p.a < 0.0 && lc.is_none());
    }

    #[test]
    fn plot_data_is_sorted_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![2.0, 20.0], vec![1.0, 10.0], vec![3.0, 30.0]];
        let name = emit_plot_data(dir.path(), "plot.dat", "# x  y", rows).unwrap();
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# x  y");
        let xs: Vec<f64> = lines[1..]
            .iter()
            .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn critical_run_writes_value_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_config("critical", json!({ "n": 3 }));
        let summary = run(&cfg, dir.path(), Some(1)).unwrap();
        assert_eq!(summary.files.last().unwrap(), &PathBuf::from("manifest.json"));
        let csv = fs::read_to_string(dir.path().join("critical.csv")).unwrap();
        assert!(csv.contains("1.549193338"), "{csv}");
        assert!(csv.starts_with("# n, r_c [wx/wz]"), "{csv}");
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["resolved_config"]["kind"], json!("critical"));
        assert_eq!(manifest["resolved_config"]["seed"], json!(0));
        assert_eq!(manifest["tool"]["name"], json!("ionsim"));
        assert_abs_diff_eq!(
            manifest["results"]["critical_ratio"].as_f64().unwrap(),
            (12.0f64 / 5.0).sqrt(),
            epsilon = 1e-8
        );
        // Rerun: byte-identical CSV body.
        let dir2 = tempfile::tempdir().unwrap();
        run(&cfg, dir2.path(), Some(2)).unwrap();
        let csv2 = fs::read_to_string(dir2.path().join("critical.csv")).unwrap();
        assert_eq!(csv, csv2);
    }

    #[test]
    fn equilibrium_single_ion_sits_at_the_origin() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_config("equilibrium", json!({ "n": 1, "r_x": 3.0 }));
        run(&cfg, dir.path(), Some(1)).unwrap();
        let csv = fs::read_to_string(dir.path().join("positions.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2, "header + one row: {csv}");
        assert!(lines[0].starts_with("# ion"));
        let row: Vec<&str> = lines[1].split(", ").collect();
        assert_eq!(row[0], "0");
        for coord in &row[1..] {
            assert_eq!(coord.parse::<f64>().unwrap(), 0.0);
        }
    }

    #[test]
    fn kind_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            serde_json::to_string(&base_config("critical", json!({ "n": 3 }))).unwrap(),
        )
        .unwrap();
        let args = CliArgs {
            kind: "modes".into(),
            config: path,
            jobs: None,
            out: Some(dir.path().join("out")),
        };
        let err = run_cli(&args).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("modes") && msg.contains("critical"), "{msg}");
    }

    #[test]
    fn scan_points_merge_in_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let xs = [3.0, 1.0, 2.0];
        let (name, rows) = scan_to_csv(dir.path(), "t.csv", "x,y", &xs, |_, x| {
            Ok((format!("{x:.1},{:.1}", 10.0 * x), vec![x, 10.0 * x]))
        })
        .unwrap();
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text, "x,y\n3.0,30.0\n1.0,10.0\n2.0,20.0\n");
        assert_eq!(rows, vec![vec![3.0, 30.0], vec![1.0, 10.0], vec![2.0, 20.0]]);
        assert!(!dir.path().join("points").exists(), "fragments are cleaned up");
    }

    #[test]
    fn scan_point_failure_names_the_point() {
        let dir = tempfile::tempdir().unwrap();
        let xs = [1.0, 2.0];
        let err = scan_to_csv(dir.path(), "t.csv", "x", &xs, |_, x| {
            if x > 1.5 {
                Err(CliError::BadValue { key: "x".into(), message: "too big".into() })
            } else {
                Ok((format!("{x}"), vec![x]))
            }
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("point 1") && msg.contains("x = 2"), "{msg}");
    }
}
