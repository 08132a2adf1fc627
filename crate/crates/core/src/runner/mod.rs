//! Run planning over (state x L x observables), caching, persistence and reports.

pub mod figures;
pub mod svg;
pub mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::analysis::{
    area_law_extract, default_fit_window, equilibrium_stats, eth_deviation_fit, fit_relaxation_time, DeviationPoint,
    EquilibriumStats, RelaxationFit, RelaxationOptions, TimeSeries,
};
use crate::basis::{build_sector_basis, RingGeometry, SectorSpec, SymmetryBasis};
use crate::bloch::{build_bloch_state, catalog_entry, BlochParams};
use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianKernel, HamiltonianParams};
use crate::krylov::{evolve_and_measure, fmt_float, CheckpointPaths, KrylovConfig, TrajectoryStatus};
use crate::observables::{ObservableKind, ObservableSpec};
use crate::thermal::{default_thermal_observables, BetaGrid, SpectrumTable, ThermalCurve, ThermalOptions};

/// Default evolution size limit.
pub const MAX_EVOLUTION_SITES: usize = 24;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "THERMALAB_CACHE";

/// Bumped whenever task outputs change for identical inputs.
const TASK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Named(String),
    Explicit { name: String, theta_over_pi: f64, phi_over_pi: f64 },
}

impl StateRef {
    pub fn name(&self) -> &str {
        match self {
            StateRef::Named(n) | StateRef::Explicit { name: n, .. } => n,
        }
    }

    pub fn resolve(&self) -> Result<BlochParams> {
        match self {
            StateRef::Named(n) => Ok(catalog_entry(n)?.params()),
            StateRef::Explicit { theta_over_pi, phi_over_pi, .. } => {
                if !(theta_over_pi.is_finite() && phi_over_pi.is_finite()) {
                    return Err(Error::Config(format!("non-finite angles for state {}", self.name())));
                }
                Ok(BlochParams::from_fractions(*theta_over_pi, *phi_over_pi))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalConfig {
    pub enabled: bool,
    pub sites: usize,
    pub l_max: usize,
    pub beta_grid: BetaGrid,
    pub max_sites: usize,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        let o = ThermalOptions::default();
        Self { enabled: true, sites: 14, l_max: o.l_max, beta_grid: BetaGrid::default(), max_sites: o.max_sites }
    }
}

impl ThermalConfig {
    pub fn options(&self) -> ThermalOptions {
        ThermalOptions { l_max: self.l_max, max_sites: self.max_sites, ..ThermalOptions::default() }
    }
}

/// A fit window for matching trajectories; unset fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub observable: Option<String>,
    #[serde(default)]
    pub sites: Option<usize>,
    pub window: [f64; 2],
}

impl FitWindow {
    fn specificity(&self, state: &str, obs: &str, sites: usize) -> Option<usize> {
        let mut score = 0;
        for (want, have) in [(self.state.as_deref(), state), (self.observable.as_deref(), obs)] {
            match want {
                Some(w) if w != have => return None,
                Some(_) => score += 1,
                None => {}
            }
        }
        match self.sites {
            Some(l) if l != sites => None,
            Some(_) => Some(score + 1),
            None => Some(score),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeisenbergConfig {
    pub t_final: f64,
    pub dt: f64,
    pub windows: Vec<f64>,
    /// Ring sizes scanned for `fig12`.
    pub sizes: Vec<usize>,
}

impl Default for HeisenbergConfig {
    fn default() -> Self {
        Self { t_final: 1e5, dt: 1.0, windows: vec![100.0, 1000.0], sizes: vec![6, 8, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Trailing fraction of the run used for equilibrium averages.
    pub fraction: f64,
    pub relaxation: RelaxationOptions,
    pub windows: Vec<FitWindow>,
    pub heisenberg: HeisenbergConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fraction: 0.25,
            relaxation: RelaxationOptions::default(),
            windows: Vec::new(),
            heisenberg: HeisenbergConfig::default(),
        }
    }
}

impl AnalysisConfig {
    /// Most specific configured window, or the default `[0.15 t_f, 0.75 t_f]`.
    pub fn window_for(&self, state: &str, obs: &str, sites: usize, t_final: f64) -> (f64, f64) {
        let mut best: Option<(usize, &FitWindow)> = None;
        for w in &self.windows {
            if let Some(s) = w.specificity(state, obs, sites) {
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, w));
                }
            }
        }
        best.map_or_else(|| default_fit_window(t_final), |(_, w)| (w.window[0], w.window[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: HamiltonianParams,
    pub states: Vec<StateRef>,
    pub sizes: Vec<usize>,
    pub observables: Vec<ObservableSpec>,
    pub krylov: KrylovConfig,
    pub thermal: ThermalConfig,
    pub analysis: AnalysisConfig,
    pub output: PathBuf,
    pub seed: u64,
    /// Concurrent trajectory tasks (0 uses all cores).
    pub workers: usize,
    pub max_evolution_sites: usize,
    pub figures: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: HamiltonianParams::BENCHMARK,
            states: Vec::new(),
            sizes: Vec::new(),
            observables: Vec::new(),
            krylov: KrylovConfig::default(),
            thermal: ThermalConfig::default(),
            analysis: AnalysisConfig::default(),
            output: PathBuf::from("thermalab-out"),
            seed: 0,
            workers: 0,
            max_evolution_sites: MAX_EVOLUTION_SITES,
            figures: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`. Not validated.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        HamiltonianParams::new(self.params.h_x, self.params.h_z)?;
        self.krylov.validate()?;
        let mut names = Vec::new();
        for s in &self.states {
            s.resolve()?;
            if names.contains(&s.name()) {
                return Err(Error::Config(format!("state {} listed twice", s.name())));
            }
            names.push(s.name());
        }
        for &l in &self.sizes {
            if l > self.max_evolution_sites {
                return Err(Error::Resource(format!(
                    "L = {l} exceeds the evolution limit {} (raise max_evolution_sites to override)",
                    self.max_evolution_sites
                )));
            }
            RingGeometry::new(l)?;
            for o in &self.observables {
                if o.extent() > l {
                    return Err(Error::Config(format!("{} does not fit on L = {l}", o.id())));
                }
            }
        }
        if !self.states.is_empty() && self.observables.is_empty() {
            return Err(Error::Config("no observables to measure".into()));
        }
        if self.thermal.enabled && self.thermal.sites > self.thermal.max_sites {
            return Err(Error::Resource(format!(
                "thermal L = {} exceeds the diagonalization limit {}",
                self.thermal.sites, self.thermal.max_sites
            )));
        }
        if !(self.analysis.fraction > 0.0 && self.analysis.fraction <= 1.0) {
            return Err(Error::Config("analysis.fraction must be in (0, 1]".into()));
        }
        for w in &self.analysis.windows {
            if !(w.window[0] < w.window[1]) {
                return Err(Error::Config(format!("empty fit window {:?}", w.window)));
            }
        }
        figures::check_ids(&self.figures)?;
        Ok(())
    }
}

/// Cache directory: `THERMALAB_CACHE` if set, else `<output>/cache`.
pub fn cache_dir(output: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| output.join("cache"))
}

/// Git-style blob hash `sha1("blob <len>\0" + bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn task_key<T: Serialize>(inputs: &T) -> Result<String> {
    let mut h = Sha1::new();
    h.update(TASK_VERSION.to_le_bytes());
    h.update(serde_json::to_vec(inputs)?);
    Ok(hex(&h.finalize()))
}

/// Writes via a temporary file and rename so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// File-name-safe form of a state name (`Y_+` -> `Y_p`).
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| match c {
            '+' => 'p',
            '-' => 'm',
            c if c.is_ascii_alphanumeric() || c == '_' => c,
            _ => '_',
        })
        .collect()
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Loads or builds a sector basis through the cache; returns it with its blob hash.
pub fn cached_basis(cache: &Path, geometry: RingGeometry, sector: SectorSpec) -> Result<(Arc<SymmetryBasis>, String)> {
    let path = cache.join(format!("basis_L{}_k{}_r{}.bin", geometry.sites, sector.momentum, sector.reflection.code()));
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(b) = SymmetryBasis::read_cache(bytes.as_slice()) {
            if b.geometry() == geometry && b.sector() == sector {
                return Ok((Arc::new(b), blob_hash(&bytes)));
            }
        }
    }
    let b = build_sector_basis(geometry, sector)?;
    let mut bytes = Vec::new();
    b.write_cache(&mut bytes)?;
    write_atomic(&path, &bytes)?;
    Ok((Arc::new(b), blob_hash(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Thermal,
    Trajectory,
    Analysis,
    Figure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    Done,
    /// Completed in an earlier run with the same inputs.
    Reused,
    Failed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    pub key: String,
    #[serde(flatten)]
    pub status: TaskStatus,
    pub outputs: Vec<String>,
    pub started: u64,
    pub finished: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub started: u64,
    pub config: RunConfig,
    pub tasks: Vec<TaskRecord>,
}

/// Append-only history of runs into one output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Blob hashes of cache files touched by any run.
    pub caches: BTreeMap<String, String>,
    pub runs: Vec<RunEntry>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        match fs::File::open(path) {
            Ok(f) => Ok(serde_json::from_reader(BufReader::new(f))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    fn completed(&self, key: &str, out_dir: &Path) -> Option<&TaskRecord> {
        self.runs.iter().rev().flat_map(|r| &r.tasks).find(|t| {
            t.key == key
                && matches!(t.status, TaskStatus::Done | TaskStatus::Reused)
                && t.outputs.iter().all(|o| out_dir.join(o).exists())
        })
    }

    pub fn last_run(&self) -> Option<&RunEntry> {
        self.runs.last()
    }

    /// True when no task of the latest run failed.
    pub fn all_succeeded(&self) -> bool {
        self.last_run().is_none_or(|r| r.tasks.iter().all(|t| !matches!(t.status, TaskStatus::Failed { .. })))
    }

    pub fn failures(&self) -> Vec<(String, String)> {
        self.last_run()
            .map(|r| {
                r.tasks
                    .iter()
                    .filter_map(|t| match &t.status {
                        TaskStatus::Failed { message } => Some((t.id.clone(), message.clone())),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Metadata written next to each trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub state: String,
    #[serde(rename = "L")]
    pub sites: usize,
    pub sector: SectorSpec,
    pub params: HamiltonianParams,
    pub cfg: KrylovConfig,
    pub basis_hash: String,
    pub theta_over_pi: f64,
    pub phi_over_pi: f64,
    pub observables: Vec<String>,
    pub epsilon: f64,
    pub variance: f64,
    pub status: TrajectoryStatus,
    pub max_norm_drift: f64,
    pub max_energy_drift: f64,
    pub max_variance_drift: f64,
    pub max_subspace_dim: usize,
    pub max_error_estimate: f64,
}

/// A trajectory loaded back from its CSV and sidecar.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub meta: TrajectorySidecar,
    pub times: Vec<f64>,
    /// `columns[o][i]`, in the order of `meta.observables`.
    pub columns: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn series(&self, id: &str) -> Option<TimeSeries> {
        let c = self.meta.observables.iter().position(|o| o == id)?;
        Some(TimeSeries {
            state: self.meta.state.clone(),
            sites: self.meta.sites,
            observable: id.to_string(),
            times: self.times.clone(),
            values: self.columns[c].clone(),
        })
    }

    pub fn load(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let meta: TrajectorySidecar = serde_json::from_reader(BufReader::new(fs::File::open(json_path)?))?;
        let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| Error::Format(e.to_string()))?;
        let header = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
        if header.len() != meta.observables.len() + 1 {
            return Err(Error::Format(format!("{} does not match its sidecar", csv_path.display())));
        }
        let mut times = Vec::new();
        let mut columns = vec![Vec::new(); meta.observables.len()];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s}: {e}")));
            times.push(parse(&rec[0])?);
            for (c, col) in columns.iter_mut().enumerate() {
                col.push(parse(&rec[c + 1])?);
            }
        }
        Ok(Self { meta, times, columns })
    }
}

fn trajectory_paths(state: &str, sites: usize) -> (String, String) {
    let stem = format!("trajectories/{}_L{sites}", file_stem(state));
    (format!("{stem}.csv"), format!("{stem}.json"))
}

#[derive(Serialize)]
struct TrajectoryKey<'a> {
    state: &'a str,
    theta: f64,
    phi: f64,
    sites: usize,
    params: HamiltonianParams,
    krylov: &'a KrylovConfig,
    observables: &'a [ObservableSpec],
}

/// Runs one trajectory and writes its CSV and sidecar.
pub fn run_trajectory(
    out: &Path,
    cache: &Path,
    state: &StateRef,
    sites: usize,
    params: HamiltonianParams,
    observables: &[ObservableSpec],
    krylov: &KrylovConfig,
) -> Result<Trajectory> {
    let bloch = state.resolve()?;
    let geometry = RingGeometry::new(sites)?;
    let sector = SectorSpec::ZERO_EVEN;
    let (basis, basis_hash) = cached_basis(cache, geometry, sector)?;
    let kernel = HamiltonianKernel::new(basis.clone(), params);
    let psi = build_bloch_state(bloch, &basis)?;
    let ckpt = CheckpointPaths::in_dir(&cache.join("checkpoints"), &format!("{}_L{sites}", file_stem(state.name())));
    let rec = evolve_and_measure(&kernel, &psi, observables, krylov, state.name(), Some(&ckpt))?;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let meta = TrajectorySidecar {
        state: state.name().to_string(),
        sites,
        sector,
        params,
        cfg: *krylov,
        basis_hash,
        theta_over_pi: bloch.theta / std::f64::consts::PI,
        phi_over_pi: bloch.phi / std::f64::consts::PI,
        observables: rec.observables.clone(),
        epsilon: rec.epsilon,
        variance: rec.variance,
        status: rec.status.clone(),
        max_norm_drift: max_abs(&rec.norm_drift),
        max_energy_drift: max_abs(&rec.energy_drift),
        max_variance_drift: max_abs(&rec.variance_drift),
        max_subspace_dim: rec.max_subspace_dim,
        max_error_estimate: rec.max_error_estimate,
    };
    let (csv_rel, json_rel) = trajectory_paths(state.name(), sites);
    let mut csv = Vec::new();
    rec.write_csv(&mut csv)?;
    write_atomic(&out.join(&csv_rel), &csv)?;
    write_atomic(&out.join(&json_rel), &serde_json::to_vec_pretty(&meta)?)?;
    if let TrajectoryStatus::Aborted { time, reason } = &rec.status {
        return Err(Error::Numerical(format!("aborted at t = {time}: {reason}")));
    }
    ckpt.clear()?;
    let columns = (0..rec.observables.len()).map(|c| rec.values.iter().map(|r| r[c]).collect()).collect();
    Ok(Trajectory { meta, times: rec.times, columns })
}

/// Thermal reference at one ring size, with the curve used for `β` solves.
pub struct ThermalReference {
    pub table: SpectrumTable,
    pub curve: ThermalCurve,
}

impl ThermalReference {
    pub fn build(
        cache: &Path,
        sites: usize,
        params: HamiltonianParams,
        extra: &[ObservableSpec],
        cfg: &ThermalConfig,
    ) -> Result<Self> {
        let mut registered = default_thermal_observables(sites);
        for o in extra {
            if matches!(o.kind(), ObservableKind::PauliAvg { .. } | ObservableKind::EnergyCorrelator(_))
                && o.extent() <= sites
                && !registered.contains(o)
            {
                registered.push(o.clone());
            }
        }
        let table =
            SpectrumTable::load_or_build(Some(cache), RingGeometry::new(sites)?, params, &registered, &cfg.options())?;
        let curve = table.curve(&cfg.beta_grid)?;
        Ok(Self { table, curve })
    }

    pub fn beta(&self, epsilon: f64) -> Result<f64> {
        self.table.solve_beta(epsilon, Some(&self.curve))
    }

    /// `Õ(β(ε))`, or `None` for observables without a thermal counterpart.
    pub fn expectation(&self, spec: &ObservableSpec, epsilon: f64) -> Result<Option<f64>> {
        match spec.kind() {
            ObservableKind::Fidelity => Ok(None),
            ObservableKind::Entropy(l) | ObservableKind::MutualInformation(l, _) if *l > self.table.l_max() => Ok(None),
            ObservableKind::MutualInformation(l, r) if l + r > self.table.l_max() => Ok(None),
            ObservableKind::PauliAvg { .. } | ObservableKind::EnergyCorrelator(_)
                if !self.table.observables().iter().any(|o| o == spec.id()) =>
            {
                Ok(None)
            }
            _ => {
                let beta = self.beta(epsilon)?;
                Ok(Some(self.table.thermal_expectation(spec, beta)?))
            }
        }
    }

    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(&["beta", "epsilon", "v_tilde", "S_tilde", "log_Z_per_site"]);
        for p in &self.curve.points {
            w.row(vec![
                fmt_float(p.beta),
                fmt_float(p.epsilon),
                fmt_float(p.v_tilde),
                fmt_float(p.s_tilde),
                fmt_float(p.log_z_per_site),
            ])?;
        }
        write_atomic(path, &w.finish()?)
    }
}

/// In-memory CSV with a fixed header.
pub struct CsvOut {
    w: csv::Writer<Vec<u8>>,
}

pub fn csv_writer(header: &[&str]) -> CsvOut {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    CsvOut { w }
}

impl CsvOut {
    pub fn row(&mut self, fields: Vec<String>) -> Result<()> {
        self.w.write_record(&fields).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn finish(self) -> Result<Vec<u8>> {
        self.w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// One `equilibrium.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumRow {
    pub state: String,
    pub sites: usize,
    pub observable: String,
    pub stats: EquilibriumStats,
    pub o_tilde: Option<f64>,
    pub epsilon: f64,
    pub variance: f64,
    pub v_tilde: Option<f64>,
}

impl EquilibriumRow {
    pub fn deviation(&self) -> Option<f64> {
        self.o_tilde.map(|t| self.stats.o_bar - t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauRow {
    pub state: String,
    pub sites: usize,
    pub observable: String,
    pub window: (f64, f64),
    pub fit: std::result::Result<RelaxationFit, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EthRow {
    pub sites: usize,
    pub observable: String,
    pub n: usize,
    pub epsilon_mean: f64,
    pub slope: f64,
    pub thermal_d2: Option<f64>,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaLawRow {
    pub state: String,
    pub sites: usize,
    pub epsilon: f64,
    pub per_l: Vec<(usize, f64)>,
    pub g: f64,
    pub spread: f64,
    pub i_bar_11: Option<f64>,
    pub i_tilde_11: Option<f64>,
}

/// Everything derived from the trajectories of one run.
#[derive(Debug, Clone, Default)]
pub struct AnalysisReport {
    pub equilibrium: Vec<EquilibriumRow>,
    pub tau: Vec<TauRow>,
    pub eth: Vec<EthRow>,
    pub arealaw: Vec<AreaLawRow>,
}

/// Equilibrium statistics, thermal comparison, relaxation and area-law fits.
pub fn analyze(
    trajectories: &[Trajectory],
    thermal: Option<&ThermalReference>,
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::default();
    for tr in trajectories {
        let m = &tr.meta;
        let v_tilde = match thermal {
            Some(th) => Some(th.table.point(th.beta(m.epsilon)?).v_tilde),
            None => None,
        };
        for id in &m.observables {
            let spec: ObservableSpec = id.parse()?;
            let series = tr.series(id).expect("listed observable");
            let stats = equilibrium_stats(&series, cfg.fraction)?;
            let o_tilde = match thermal {
                Some(th) => th.expectation(&spec, m.epsilon)?,
                None => None,
            };
            report.equilibrium.push(EquilibriumRow {
                state: m.state.clone(),
                sites: m.sites,
                observable: id.clone(),
                stats,
                o_tilde,
                epsilon: m.epsilon,
                variance: m.variance,
                v_tilde,
            });
            if matches!(spec.kind(), ObservableKind::Fidelity) {
                continue;
            }
            let window = cfg.window_for(&m.state, id, m.sites, m.cfg.t_final);
            let fit = fit_relaxation_time(&series, &stats, window, &cfg.relaxation).map_err(|e| e.to_string());
            report.tau.push(TauRow { state: m.state.clone(), sites: m.sites, observable: id.clone(), window, fit });
        }
        // area law from whichever S_l and I_1_1 were measured
        if let Some(th) = thermal {
            let s_bar: Vec<(usize, f64)> = report
                .equilibrium
                .iter()
                .filter(|r| r.state == m.state && r.sites == m.sites)
                .filter_map(|r| match r.observable.parse::<ObservableSpec>().ok()?.kind() {
                    ObservableKind::Entropy(l) => Some((*l, r.stats.o_bar)),
                    _ => None,
                })
                .collect();
            if !s_bar.is_empty() {
                let beta = th.beta(m.epsilon)?;
                let per_site = th.table.point(beta).s_tilde / th.table.sites() as f64;
                let i_row = report
                    .equilibrium
                    .iter()
                    .find(|r| r.state == m.state && r.sites == m.sites && r.observable == "I_1_1");
                let i_tilde =
                    if th.table.l_max() >= 2 { Some(th.table.thermal_mutual_information(beta, 1, 1)?) } else { None };
                let res = area_law_extract(
                    &s_bar,
                    per_site,
                    i_row.map_or(f64::NAN, |r| r.stats.o_bar),
                    i_tilde.unwrap_or(f64::NAN),
                )?;
                report.arealaw.push(AreaLawRow {
                    state: m.state.clone(),
                    sites: m.sites,
                    epsilon: m.epsilon,
                    per_l: res.per_l,
                    g: res.g,
                    spread: res.spread,
                    i_bar_11: i_row.map(|r| r.stats.o_bar),
                    i_tilde_11: i_tilde,
                });
            }
        }
    }
    // ETH fits per (L, observable) over all states of the run
    if let Some(th) = thermal {
        let mut groups: BTreeMap<(usize, String), Vec<&EquilibriumRow>> = BTreeMap::new();
        for r in &report.equilibrium {
            if r.o_tilde.is_some() && r.v_tilde.is_some() {
                groups.entry((r.sites, r.observable.clone())).or_default().push(r);
            }
        }
        for ((sites, obs), rows) in groups {
            if rows.len() < 3 {
                continue;
            }
            let points: Vec<DeviationPoint> = rows
                .iter()
                .map(|r| DeviationPoint {
                    x: (r.variance - r.v_tilde.unwrap()) / r.sites as f64,
                    y: r.deviation().unwrap(),
                    state: r.state.clone(),
                    sites,
                    observable: obs.clone(),
                })
                .collect();
            let Ok(fit) = eth_deviation_fit(&points) else { continue };
            let eps = rows.iter().map(|r| r.epsilon).sum::<f64>() / rows.len() as f64;
            let spec: ObservableSpec = obs.parse()?;
            let thermal_d2 = match spec.kind() {
                ObservableKind::PauliAvg { .. } | ObservableKind::EnergyCorrelator(_) => {
                    th.table.second_derivative_at(&spec, th.beta(eps)?).ok()
                }
                _ => None,
            };
            report.eth.push(EthRow {
                sites,
                observable: obs,
                n: rows.len(),
                epsilon_mean: eps,
                slope: fit.slope,
                thermal_d2,
                residual_rms: fit.residual_rms,
            });
        }
    }
    Ok(report)
}

impl AnalysisReport {
    /// Writes `equilibrium.csv`, `tau.csv`, `eth_fit.csv` and `arealaw.csv`; returns their names.
    pub fn write(&self, out: &Path) -> Result<Vec<String>> {
        let mut eq = csv_writer(&["state", "L", "observable", "O_bar", "delta_O2", "O_tilde", "deviation"]);
        for r in &self.equilibrium {
            eq.row(vec![
                r.state.clone(),
                r.sites.to_string(),
                r.observable.clone(),
                fmt_float(r.stats.o_bar),
                fmt_float(r.stats.delta_o2),
                opt_float(r.o_tilde),
                opt_float(r.deviation()),
            ])?;
        }
        write_atomic(&out.join("equilibrium.csv"), &eq.finish()?)?;

        let mut tau =
            csv_writer(&["state", "L", "observable", "tau", "t_a", "t_b", "ci_lo", "ci_hi", "r2", "accepted"]);
        for r in &self.tau {
            let mut row = vec![r.state.clone(), r.sites.to_string(), r.observable.clone()];
            match &r.fit {
                Ok(f) => row.extend([
                    fmt_float(f.tau),
                    fmt_float(f.t_a),
                    fmt_float(f.t_b),
                    fmt_float(f.ci_lo),
                    fmt_float(f.ci_hi),
                    fmt_float(f.r2),
                    f.accepted.to_string(),
                ]),
                Err(_) => row.extend([
                    String::new(),
                    fmt_float(r.window.0),
                    fmt_float(r.window.1),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                ]),
            }
            tau.row(row)?;
        }
        write_atomic(&out.join("tau.csv"), &tau.finish()?)?;

        let mut eth = csv_writer(&["L", "observable", "n", "epsilon_mean", "slope", "thermal_d2", "residual_rms"]);
        for r in &self.eth {
            eth.row(vec![
                r.sites.to_string(),
                r.observable.clone(),
                r.n.to_string(),
                fmt_float(r.epsilon_mean),
                fmt_float(r.slope),
                opt_float(r.thermal_d2),
                fmt_float(r.residual_rms),
            ])?;
        }
        write_atomic(&out.join("eth_fit.csv"), &eth.finish()?)?;

        let mut al = csv_writer(&["state", "L", "epsilon", "l", "excess", "G", "spread", "I_bar_11", "I_tilde_11"]);
        for r in &self.arealaw {
            for (l, x) in &r.per_l {
                al.row(vec![
                    r.state.clone(),
                    r.sites.to_string(),
                    fmt_float(r.epsilon),
                    l.to_string(),
                    fmt_float(*x),
                    fmt_float(r.g),
                    fmt_float(r.spread),
                    opt_float(r.i_bar_11),
                    opt_float(r.i_tilde_11),
                ])?;
            }
        }
        write_atomic(&out.join("arealaw.csv"), &al.finish()?)?;
        Ok(["equilibrium.csv", "tau.csv", "eth_fit.csv", "arealaw.csv"].map(String::from).to_vec())
    }
}

/// State of a finished plan: manifest plus loaded results for figures.
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub trajectories: Vec<Trajectory>,
    pub thermal: Option<ThermalReference>,
    pub report: AnalysisReport,
}

/// Builds or loads bases and spectra, runs trajectories and analyses, writes
/// CSV/JSON outputs and requested figures. Completed tasks with matching
/// inputs are reused; failures are isolated per task.
pub fn plan_and_execute(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let out = config.output.as_path();
    fs::create_dir_all(out)?;
    let cache = cache_dir(out);
    fs::create_dir_all(&cache)?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = RunManifest::load(&manifest_path)?;
    let mut entry = RunEntry { started: unix_now(), config: config.clone(), tasks: Vec::new() };

    // thermal reference
    let mut thermal = None;
    if config.thermal.enabled {
        let started = unix_now();
        let key = task_key(&(&config.thermal, config.params, &config.observables))?;
        let curve_rel = format!("thermal/curve_L{}.csv", config.thermal.sites);
        let reused = manifest.completed(&key, out).is_some();
        let result =
            ThermalReference::build(&cache, config.thermal.sites, config.params, &config.observables, &config.thermal)
                .and_then(|th| {
                    if !reused {
                        th.write_curve_csv(&out.join(&curve_rel))?;
                    }
                    Ok(th)
                });
        let status = match result {
            Ok(th) => {
                thermal = Some(th);
                if reused {
                    TaskStatus::Reused
                } else {
                    TaskStatus::Done
                }
            }
            Err(e) => TaskStatus::Failed { message: e.to_string() },
        };
        entry.tasks.push(TaskRecord {
            id: format!("thermal/L{}", config.thermal.sites),
            kind: TaskKind::Thermal,
            key,
            status,
            outputs: vec![curve_rel],
            started,
            finished: unix_now(),
        });
    }

    // trajectories
    let jobs: Vec<(&StateRef, usize)> =
        config.states.iter().flat_map(|s| config.sizes.iter().map(move |&l| (s, l))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(TaskRecord, Option<Trajectory>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(state, sites)| {
                let started = unix_now();
                let bloch = state.resolve().ok();
                let key = task_key(&TrajectoryKey {
                    state: state.name(),
                    theta: bloch.map_or(f64::NAN, |b| b.theta),
                    phi: bloch.map_or(f64::NAN, |b| b.phi),
                    sites,
                    params: config.params,
                    krylov: &config.krylov,
                    observables: &config.observables,
                })
                .unwrap_or_default();
                let (csv_rel, json_rel) = trajectory_paths(state.name(), sites);
                let id = format!("trajectory/{}/L{sites}", state.name());
                // outputs that no longer parse are recomputed
                let reused = manifest
                    .completed(&key, out)
                    .and_then(|_| Trajectory::load(&out.join(&csv_rel), &out.join(&json_rel)).ok());
                let (status, traj) = match reused {
                    Some(t) => (TaskStatus::Reused, Some(t)),
                    None => {
                        match run_trajectory(
                            out,
                            &cache,
                            state,
                            sites,
                            config.params,
                            &config.observables,
                            &config.krylov,
                        ) {
                            Ok(t) => (TaskStatus::Done, Some(t)),
                            Err(e) => (TaskStatus::Failed { message: e.to_string() }, None),
                        }
                    }
                };
                let rec = TaskRecord {
                    id,
                    kind: TaskKind::Trajectory,
                    key,
                    status,
                    outputs: vec![csv_rel, json_rel],
                    started,
                    finished: unix_now(),
                };
                (rec, traj)
            })
            .collect()
    });
    let mut trajectories = Vec::new();
    for (rec, traj) in results {
        entry.tasks.push(rec);
        trajectories.extend(traj);
    }
    for t in &trajectories {
        let name =
            format!("basis_L{}_k{}_r{}.bin", t.meta.sites, t.meta.sector.momentum, t.meta.sector.reflection.code());
        manifest.caches.insert(name, t.meta.basis_hash.clone());
    }

    // analysis
    let started = unix_now();
    let report = match analyze(&trajectories, thermal.as_ref(), &config.analysis) {
        Ok(r) => {
            let status = match r.write(out) {
                Ok(_) => TaskStatus::Done,
                Err(e) => TaskStatus::Failed { message: e.to_string() },
            };
            let keys: Vec<&str> = entry.tasks.iter().map(|t| t.key.as_str()).collect();
            entry.tasks.push(TaskRecord {
                id: "analysis".into(),
                kind: TaskKind::Analysis,
                key: task_key(&(keys, &config.analysis))?,
                status,
                outputs: ["equilibrium.csv", "tau.csv", "eth_fit.csv", "arealaw.csv"].map(String::from).to_vec(),
                started,
                finished: unix_now(),
            });
            r
        }
        Err(e) => {
            entry.tasks.push(TaskRecord {
                id: "analysis".into(),
                kind: TaskKind::Analysis,
                key: String::new(),
                status: TaskStatus::Failed { message: e.to_string() },
                outputs: Vec::new(),
                started,
                finished: unix_now(),
            });
            AnalysisReport::default()
        }
    };

    let mut outcome = RunOutcome { manifest: RunManifest::default(), trajectories, thermal, report };
    for id in &config.figures {
        let started = unix_now();
        let rel = format!("figures/{id}.svg");
        let status = match figures::render(id, &outcome, config) {
            Ok(svg) => match write_atomic(&out.join(&rel), svg.as_bytes()) {
                Ok(()) => TaskStatus::Done,
                Err(e) => TaskStatus::Failed { message: e.to_string() },
            },
            Err(e) => TaskStatus::Failed { message: e.to_string() },
        };
        entry.tasks.push(TaskRecord {
            id: format!("figure/{id}"),
            kind: TaskKind::Figure,
            key: String::new(),
            status,
            outputs: vec![rel],
            started,
            finished: unix_now(),
        });
    }

    manifest.runs.push(entry);
    manifest.save(&manifest_path)?;
    outcome.manifest = manifest;
    Ok(outcome)
}

/// Writes a finished trajectory's metadata summary (used by the CLI `evolve`).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}
