use std::fs;
use std::path::Path;

use thermalab::krylov::KrylovConfig;
use thermalab::runner::figures::render;
use thermalab::runner::{plan_and_execute, RunConfig, StateRef, TaskKind, TaskStatus, ThermalConfig};

fn small_config(out: &Path) -> RunConfig {
    RunConfig {
        output: out.to_path_buf(),
        thermal: ThermalConfig { sites: 10, ..ThermalConfig::default() },
        ..RunConfig::default()
    }
}

fn statuses(cfg: &RunConfig, kind: TaskKind) -> Vec<TaskStatus> {
    let m = thermalab::runner::RunManifest::load(&cfg.output.join("manifest.json")).unwrap();
    m.last_run().unwrap().tasks.iter().filter(|t| t.kind == kind).map(|t| t.status.clone()).collect()
}

#[test]
fn empty_state_list_still_runs_thermal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let outcome = plan_and_execute(&cfg).unwrap();
    let run = outcome.manifest.last_run().unwrap();
    assert!(run.tasks.iter().all(|t| t.kind != TaskKind::Trajectory));
    assert_eq!(statuses(&cfg, TaskKind::Thermal), vec![TaskStatus::Done]);
    assert!(dir.path().join("thermal/curve_L10.csv").exists());
    assert!(outcome.manifest.all_succeeded());
}

#[test]
fn smoke_run_is_idempotent_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.states = vec![StateRef::Named("Y_+".into())];
    cfg.sizes = vec![12];
    cfg.observables = vec!["C2".parse().unwrap(), "S1".parse().unwrap()];
    cfg.krylov = KrylovConfig { t_final: 100.0, ..KrylovConfig::default() };

    let first = plan_and_execute(&cfg).unwrap();
    assert!(first.manifest.all_succeeded(), "{:?}", first.manifest.failures());
    let csv = fs::read_to_string(dir.path().join("trajectories/Y_p_L12.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,C2,S1");
    assert_eq!(csv.lines().count(), 1002);
    let eq = fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
    assert!(eq.lines().any(|l| l.starts_with("Y_+,12,C2,")));
    assert!(eq.lines().any(|l| l.starts_with("Y_+,12,S1,")));
    // Y_+ sits at β = 0, where S~_1 = 1 bit
    let s1 = first.report.equilibrium.iter().find(|r| r.observable == "S1").unwrap();
    assert!((s1.o_tilde.unwrap() - 1.0).abs() < 1e-10);
    assert!((s1.stats.o_bar - 1.0).abs() < 0.01);

    let before: Vec<Vec<u8>> = ["trajectories/Y_p_L12.csv", "equilibrium.csv", "tau.csv"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    let second = plan_and_execute(&cfg).unwrap();
    assert_eq!(second.manifest.runs.len(), 2);
    assert_eq!(statuses(&cfg, TaskKind::Trajectory), vec![TaskStatus::Reused]);
    assert_eq!(statuses(&cfg, TaskKind::Thermal), vec![TaskStatus::Reused]);
    for (f, b) in ["trajectories/Y_p_L12.csv", "equilibrium.csv", "tau.csv"].iter().zip(before) {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), b, "{f} changed on re-execution");
    }

    // an independent output directory reproduces the same bytes
    let other = tempfile::tempdir().unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.output = other.path().to_path_buf();
    plan_and_execute(&cfg2).unwrap();
    for f in ["trajectories/Y_p_L12.csv", "equilibrium.csv", "tau.csv", "thermal/curve_L10.csv"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(other.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failed_tasks_are_recorded_and_do_not_abort_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.thermal.sites = 8;
    cfg.states = vec![StateRef::Named("X_+".into()), StateRef::Named("Z_+".into())];
    cfg.sizes = vec![8];
    cfg.observables = vec!["sx".parse().unwrap()];
    // a 2-vector Krylov space cannot reach 1e-14 per step without halving
    cfg.krylov =
        KrylovConfig { t_final: 2.0, m_max: 2, step_tolerance: 1e-14, max_halvings: 0, ..KrylovConfig::default() };
    let outcome = plan_and_execute(&cfg).unwrap();
    assert!(!outcome.manifest.all_succeeded());
    assert_eq!(outcome.manifest.failures().len(), 2, "{:?}", outcome.manifest.failures());
    assert_eq!(statuses(&cfg, TaskKind::Thermal), vec![TaskStatus::Done]);
    // the partial record stays on disk for diagnosis
    let meta = fs::read_to_string(dir.path().join("trajectories/X_p_L8.json")).unwrap();
    assert!(meta.contains("aborted"), "{meta}");
    // the next run retries failed tasks and reuses the rest
    cfg.krylov = KrylovConfig { t_final: 2.0, ..KrylovConfig::default() };
    let outcome = plan_and_execute(&cfg).unwrap();
    assert!(outcome.manifest.all_succeeded(), "{:?}", outcome.manifest.failures());
    assert_eq!(statuses(&cfg, TaskKind::Thermal), vec![TaskStatus::Reused]);
    assert_eq!(statuses(&cfg, TaskKind::Trajectory), vec![TaskStatus::Done, TaskStatus::Done]);
}

#[test]
fn unreadable_outputs_are_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.thermal.enabled = false;
    cfg.states = vec![StateRef::Named("Y_+".into())];
    cfg.sizes = vec![8];
    cfg.observables = vec!["C1".parse().unwrap()];
    cfg.krylov = KrylovConfig { t_final: 20.0, ..KrylovConfig::default() };
    plan_and_execute(&cfg).unwrap();
    let path = dir.path().join("trajectories/Y_p_L8.csv");
    let reference = fs::read(&path).unwrap();
    fs::write(&path, "t,C1\n0,garbage\n").unwrap();
    let outcome = plan_and_execute(&cfg).unwrap();
    assert!(outcome.manifest.all_succeeded(), "{:?}", outcome.manifest.failures());
    assert_eq!(statuses(&cfg, TaskKind::Trajectory), vec![TaskStatus::Done]);
    assert_eq!(fs::read(&path).unwrap(), reference);
}

#[test]
fn corrupted_cache_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.thermal.sites = 8;
    cfg.states = vec![StateRef::Named("X_+".into())];
    cfg.sizes = vec![8];
    cfg.observables = vec!["sx".parse().unwrap()];
    cfg.krylov = KrylovConfig { t_final: 20.0, ..KrylovConfig::default() };
    plan_and_execute(&cfg).unwrap();
    let reference = fs::read(dir.path().join("trajectories/X_p_L8.csv")).unwrap();

    // truncate every cache file and drop the outputs, as after an interrupted write
    for e in fs::read_dir(dir.path().join("cache")).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            let bytes = fs::read(&p).unwrap();
            fs::write(&p, &bytes[..bytes.len() / 3]).unwrap();
        }
    }
    fs::remove_file(dir.path().join("trajectories/X_p_L8.csv")).unwrap();
    let outcome = plan_and_execute(&cfg).unwrap();
    assert!(outcome.manifest.all_succeeded(), "{:?}", outcome.manifest.failures());
    assert_eq!(fs::read(dir.path().join("trajectories/X_p_L8.csv")).unwrap(), reference);
}

#[test]
fn figures_render_and_report_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.states = ["y_2", "y_4", "Y_+"].iter().map(|s| StateRef::Named(s.to_string())).collect();
    cfg.sizes = vec![8, 10];
    cfg.observables = (0..=4).map(thermalab::observables::ObservableSpec::correlator).collect();
    cfg.krylov = KrylovConfig { t_final: 40.0, ..KrylovConfig::default() };
    cfg.figures = vec!["fig2a".into(), "fig9".into(), "fig1".into()];
    let outcome = plan_and_execute(&cfg).unwrap();
    assert!(outcome.manifest.all_succeeded(), "{:?}", outcome.manifest.failures());
    let fig9 = fs::read_to_string(dir.path().join("figures/fig9.svg")).unwrap();
    assert!(fig9.contains("thermal") && fig9.contains("<circle"));
    let fig2a = fs::read_to_string(dir.path().join("figures/fig2a.svg")).unwrap();
    assert!(fig2a.contains("L=8") && fig2a.contains("L=10") && fig2a.contains("thermal slope"));
    assert_eq!(render("fig9", &outcome, &cfg).unwrap(), fig9);

    let e = render("fig8", &outcome, &cfg).unwrap_err().to_string();
    assert!(e.contains("missing inputs"), "{e}");
    let e = render("fig4", &outcome, &cfg).unwrap_err().to_string();
    assert!(e.contains("available") && e.contains("fig10"), "{e}");
}

#[test]
fn config_parses_from_toml_and_json() {
    let toml = r#"
        states = ["Y_+", { name = "tilted", theta_over_pi = 0.3, phi_over_pi = 0.1 }]
        sizes = [10, 12]
        observables = ["C2", "S1", "I_1_1"]
        output = "out"

        [krylov]
        t_final = 50.0

        [thermal]
        sites = 12

        [[analysis.windows]]
        state = "Y_+"
        observable = "C2"
        window = [1.5, 20.0]
    "#;
    let cfg = RunConfig::parse(toml).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.states[1].name(), "tilted");
    assert_eq!(cfg.krylov.t_final, 50.0);
    assert_eq!(cfg.krylov.dt, 0.1);
    assert_eq!(cfg.analysis.window_for("Y_+", "C2", 12, 50.0), (1.5, 20.0));
    assert_eq!(cfg.analysis.window_for("Y_+", "S1", 12, 50.0), (7.5, 37.5));

    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::parse(&json).unwrap(), cfg);

    assert!(RunConfig::parse("bogus = 1").is_err());
    let mut bad = cfg.clone();
    bad.states.push(StateRef::Named("nope".into()));
    assert!(bad.validate().is_err());
    let mut big = cfg.clone();
    big.sizes = vec![26];
    assert!(matches!(big.validate(), Err(thermalab::Error::Resource(_))));
    big.max_evolution_sites = 30;
    assert!(big.validate().is_ok());
}
