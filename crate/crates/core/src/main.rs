use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use thermalab::basis::{Reflection, RingGeometry, SectorSpec};
use thermalab::bloch::{bloch_variance_density, catalog, catalog_entry};
use thermalab::hamiltonian::HamiltonianParams;
use thermalab::krylov::{fmt_float, KrylovConfig};
use thermalab::observables::ObservableSpec;
use thermalab::runner::verify::run_verify;
use thermalab::runner::{
    analyze, blob_hash, cache_dir, cached_basis, plan_and_execute, run_trajectory, RunConfig, RunManifest, StateRef,
    TaskStatus, ThermalConfig, ThermalReference, Trajectory,
};

/// Guard used by `--allow-large`: the sector lookup tables are 32-bit.
const LARGE_SITES: usize = 30;

#[derive(Parser)]
#[command(name = "thermalab", version, about = "Mixed-field Ising ring quenches and thermal comparisons")]
struct Cli {
    /// Lift the default size guards (L <= 24 evolution, L~ <= 16 diagonalization).
    #[arg(long, global = true)]
    allow_large: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Symmetry-sector bases.
    Basis {
        #[command(subcommand)]
        cmd: BasisCmd,
    },
    /// Catalog of initial product states.
    State {
        #[command(subcommand)]
        cmd: StateCmd,
    },
    /// Evolve one state and write its observable CSV.
    Evolve(EvolveArgs),
    /// Canonical-ensemble reference.
    Thermal {
        #[command(subcommand)]
        cmd: ThermalCmd,
    },
    /// Recompute analysis tables for a finished run directory.
    Analyze {
        /// Output directory of a previous `run`.
        dir: PathBuf,
    },
    /// Render figures for a run config (completed tasks are reused).
    Fig {
        #[arg(long)]
        config: PathBuf,
        /// Figure ids, e.g. fig2a fig9.
        #[arg(required = true)]
        ids: Vec<String>,
    },
    /// Run the acceptance suite.
    Verify {
        #[arg(long, default_value = "thermalab-verify")]
        output: PathBuf,
        /// Criterion numbers to run (default all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
    /// Execute a run config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum ReflectionArg {
    Even,
    Odd,
    None,
}

#[derive(Subcommand)]
enum BasisCmd {
    Build {
        #[arg(long)]
        sites: usize,
        #[arg(long, default_value_t = 0)]
        momentum: usize,
        #[arg(long, value_enum, default_value = "even")]
        reflection: ReflectionArg,
        #[arg(long, default_value = ".")]
        cache: PathBuf,
    },
}

#[derive(Subcommand)]
enum StateCmd {
    List,
    Show { name: String },
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, default_value_t = HamiltonianParams::BENCHMARK.h_x, allow_hyphen_values = true)]
    hx: f64,
    #[arg(long, default_value_t = HamiltonianParams::BENCHMARK.h_z, allow_hyphen_values = true)]
    hz: f64,
}

impl ParamArgs {
    fn params(&self) -> anyhow::Result<HamiltonianParams> {
        Ok(HamiltonianParams::new(self.hx, self.hz)?)
    }
}

#[derive(Args)]
struct EvolveArgs {
    /// Catalog name.
    #[arg(long, conflicts_with_all = ["theta", "phi"])]
    state: Option<String>,
    /// Polar angle in units of pi.
    #[arg(long, requires = "phi", allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Azimuth in units of pi.
    #[arg(long, requires = "theta", allow_hyphen_values = true)]
    phi: Option<f64>,
    #[arg(long)]
    sites: usize,
    /// Comma-separated observable ids.
    #[arg(long, value_delimiter = ',', default_value = "sx,sz,C0,C1,C2,S1")]
    observables: Vec<ObservableSpec>,
    #[arg(long, default_value_t = 100.0)]
    t_final: f64,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value = "thermalab-out")]
    output: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, default_value_t = 14)]
    sites: usize,
    #[arg(long, default_value_t = 3)]
    l_max: usize,
    #[arg(long, default_value = "thermalab-out")]
    output: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Subcommand)]
enum ThermalCmd {
    /// Diagonalize and cache the spectrum table.
    Build(TableArgs),
    /// ε(β), ṽ(β), S̃(β) on the default grid as CSV.
    Curve(TableArgs),
    /// Thermal expectation at the β matching ε (or at a given β).
    Expect {
        #[command(flatten)]
        table: TableArgs,
        #[arg(long)]
        observable: ObservableSpec,
        #[arg(long, allow_hyphen_values = true, required_unless_present = "beta")]
        epsilon: Option<f64>,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "epsilon")]
        beta: Option<f64>,
    },
    /// Second ε-derivative of a thermal expectation.
    D2 {
        #[command(flatten)]
        table: TableArgs,
        #[arg(long)]
        observable: ObservableSpec,
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
    },
}

fn thermal_reference(t: &TableArgs, extra: &[ObservableSpec], allow_large: bool) -> anyhow::Result<ThermalReference> {
    let mut cfg = ThermalConfig { sites: t.sites, l_max: t.l_max, ..ThermalConfig::default() };
    if allow_large {
        cfg.max_sites = LARGE_SITES;
    }
    let cache = cache_dir(&t.output);
    Ok(ThermalReference::build(&cache, t.sites, t.params.params()?, extra, &cfg)?)
}

fn exit_for(manifest: &RunManifest) -> ExitCode {
    let failures = manifest.failures();
    for (id, msg) in &failures {
        eprintln!("task {id} failed: {msg}");
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut out = std::io::stdout().lock();
    match cli.cmd {
        Cmd::Basis { cmd: BasisCmd::Build { sites, momentum, reflection, cache } } => {
            let reflection = match reflection {
                ReflectionArg::Even => Reflection::Even,
                ReflectionArg::Odd => Reflection::Odd,
                ReflectionArg::None => Reflection::None,
            };
            let sector = SectorSpec { momentum, reflection };
            let (basis, hash) = cached_basis(&cache, RingGeometry::new(sites)?, sector)?;
            writeln!(out, "L={sites} k={momentum} R={} dim={} sha1={hash}", reflection.code(), basis.dim())?;
        }
        Cmd::State { cmd: StateCmd::List } => {
            writeln!(out, "name,theta_over_pi,phi_over_pi,epsilon,v")?;
            for e in catalog() {
                writeln!(out, "{},{},{},{},{}", e.name, e.theta_over_pi, e.phi_over_pi, e.epsilon_ref, e.v_ref)?;
            }
        }
        Cmd::State { cmd: StateCmd::Show { name } } => {
            let e = catalog_entry(&name)?;
            let d = bloch_variance_density(e.params(), HamiltonianParams::BENCHMARK);
            writeln!(out, "{}", serde_json::to_string_pretty(e)?)?;
            writeln!(out, "recomputed epsilon = {}, v = {}", fmt_float(d.epsilon), fmt_float(d.variance))?;
        }
        Cmd::Evolve(a) => {
            let limit = if cli.allow_large { LARGE_SITES } else { thermalab::runner::MAX_EVOLUTION_SITES };
            if a.sites > limit {
                bail!("L = {} exceeds the evolution guard {limit}; pass --allow-large to override", a.sites);
            }
            let state = match (a.state, a.theta, a.phi) {
                (Some(n), _, _) => StateRef::Named(n),
                (None, Some(t), Some(p)) => {
                    StateRef::Explicit { name: format!("theta{t}_phi{p}"), theta_over_pi: t, phi_over_pi: p }
                }
                _ => bail!("give --state or both --theta and --phi"),
            };
            let krylov = KrylovConfig { t_final: a.t_final, dt: a.dt, ..KrylovConfig::default() };
            let cache = cache_dir(&a.output);
            let tr = run_trajectory(&a.output, &cache, &state, a.sites, a.params.params()?, &a.observables, &krylov)?;
            writeln!(
                out,
                "{} L={} epsilon={} v={} samples={}",
                tr.meta.state,
                tr.meta.sites,
                fmt_float(tr.meta.epsilon),
                fmt_float(tr.meta.variance),
                tr.times.len()
            )?;
        }
        Cmd::Thermal { cmd } => match cmd {
            ThermalCmd::Build(t) => {
                let th = thermal_reference(&t, &[], cli.allow_large)?;
                writeln!(out, "L~={} states={} l_max={}", th.table.sites(), th.table.state_count(), th.table.l_max())?;
            }
            ThermalCmd::Curve(t) => {
                let th = thermal_reference(&t, &[], cli.allow_large)?;
                let path = t.output.join(format!("thermal/curve_L{}.csv", t.sites));
                th.write_curve_csv(&path)?;
                writeln!(out, "{}", path.display())?;
            }
            ThermalCmd::Expect { table, observable, epsilon, beta } => {
                let th = thermal_reference(&table, std::slice::from_ref(&observable), cli.allow_large)?;
                let beta = match (beta, epsilon) {
                    (Some(b), _) => b,
                    (None, Some(e)) => th.beta(e)?,
                    _ => unreachable!("clap requires one of them"),
                };
                let p = th.table.point(beta);
                let v = th.table.thermal_expectation(&observable, beta)?;
                writeln!(out, "observable,beta,epsilon,value")?;
                writeln!(out, "{},{},{},{}", observable.id(), fmt_float(beta), fmt_float(p.epsilon), fmt_float(v))?;
            }
            ThermalCmd::D2 { table, observable, epsilon } => {
                let th = thermal_reference(&table, std::slice::from_ref(&observable), cli.allow_large)?;
                let beta = th.beta(epsilon)?;
                let d2 = th.table.second_derivative_at(&observable, beta)?;
                writeln!(out, "observable,epsilon,beta,d2")?;
                writeln!(out, "{},{},{},{}", observable.id(), fmt_float(epsilon), fmt_float(beta), fmt_float(d2))?;
            }
        },
        Cmd::Analyze { dir } => {
            let manifest = RunManifest::load(&dir.join("manifest.json"))?;
            let entry = manifest.last_run().context("no runs recorded in this directory")?;
            let config = &entry.config;
            let mut trajectories = Vec::new();
            for s in &config.states {
                for &l in &config.sizes {
                    let stem = format!("trajectories/{}_L{l}", thermalab::runner::file_stem(s.name()));
                    let (c, j) = (dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.json")));
                    match Trajectory::load(&c, &j) {
                        Ok(t) => trajectories.push(t),
                        Err(e) => eprintln!("skipping {}: {e}", c.display()),
                    }
                }
            }
            let thermal = if config.thermal.enabled {
                Some(ThermalReference::build(
                    &cache_dir(&dir),
                    config.thermal.sites,
                    config.params,
                    &config.observables,
                    &config.thermal,
                )?)
            } else {
                None
            };
            let report = analyze(&trajectories, thermal.as_ref(), &config.analysis)?;
            for f in report.write(&dir)? {
                writeln!(out, "{}", dir.join(f).display())?;
            }
        }
        Cmd::Fig { config, ids } => {
            let mut cfg = load_config(&config, cli.allow_large)?;
            cfg.figures = ids;
            let outcome = plan_and_execute(&cfg)?;
            for id in &cfg.figures {
                writeln!(out, "{}", cfg.output.join(format!("figures/{id}.svg")).display())?;
            }
            return Ok(exit_for(&outcome.manifest));
        }
        Cmd::Verify { output, only } => {
            let results = run_verify(&output, &only)?;
            for r in &results {
                writeln!(out, "{r}")?;
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            writeln!(out, "{} of {} criteria passed", results.len() - failed, results.len())?;
            return Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Cmd::Run { config } => {
            let cfg = load_config(&config, cli.allow_large)?;
            let outcome = plan_and_execute(&cfg)?;
            if let Some(run) = outcome.manifest.last_run() {
                for t in &run.tasks {
                    let status = match &t.status {
                        TaskStatus::Done => "done",
                        TaskStatus::Reused => "reused",
                        TaskStatus::Failed { .. } => "FAILED",
                    };
                    writeln!(out, "{:<40} {status}", t.id)?;
                }
            }
            let bytes = std::fs::read(cfg.output.join("manifest.json"))?;
            writeln!(out, "manifest sha1 {}", blob_hash(&bytes))?;
            return Ok(exit_for(&outcome.manifest));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: &Path, allow_large: bool) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = RunConfig::parse(&text)?;
    if allow_large {
        cfg.max_evolution_sites = LARGE_SITES;
        cfg.thermal.max_sites = LARGE_SITES;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
