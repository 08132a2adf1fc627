//! Lanczos approximation of `exp(-i H dt) v` and the measured time loop.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::TimeSeries;
use crate::basis::{SectorSpec, SectorVector};
use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianKernel, HamiltonianParams};
use crate::linalg::{axpy, dot, hermitian_eigen, norm, symmetric_eigen};
use crate::observables::{Measurement, ObservableSpec};

/// Subdiagonal below which the Krylov space is treated as invariant.
const BREAKDOWN: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrylovConfig {
    pub m_max: usize,
    pub step_tolerance: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Maximum recursion depth when a step is split in halves.
    pub max_halvings: u32,
    pub checkpoint_every: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { m_max: 30, step_tolerance: 1e-12, dt: 0.1, t_final: 100.0, max_halvings: 12, checkpoint_every: 10.0 }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_max < 2 {
            return Err(Error::Config("m_max must be at least 2".into()));
        }
        if !(self.step_tolerance > 0.0) {
            return Err(Error::Config("step_tolerance must be positive".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config("t_final must be non-negative".into()));
        }
        self.sample_count()?;
        Ok(())
    }

    /// Number of steps `n` with `n dt = t_final`.
    pub fn sample_count(&self) -> Result<usize> {
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(Error::Config(format!("t_final {} is not a multiple of dt {}", self.t_final, self.dt)));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub error_estimate: f64,
    /// Largest Krylov dimension used by any sub-step.
    pub subspace_dim: usize,
    pub substeps: usize,
}

/// `exp(-i T dt) e_1` for the tridiagonal with diagonal `alpha` and off-diagonal `beta`.
fn tridiagonal_exp_e1(alpha: &[f64], beta: &[f64], dt: f64) -> Result<Vec<Complex64>> {
    let m = alpha.len();
    let t = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let (vals, vecs) = symmetric_eigen(&t)?;
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    for (k, &lam) in vals.iter().enumerate() {
        let c = Complex64::from_polar(vecs[(0, k)], -lam * dt);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += c * vecs[(i, k)];
        }
    }
    Ok(y)
}

/// One Krylov attempt; `None` when `m_max` is not enough for the tolerance.
fn krylov_attempt<F>(
    apply_h: &F,
    v: &[Complex64],
    dt: f64,
    cfg: &KrylovConfig,
) -> Result<Option<(Vec<Complex64>, f64, usize)>>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let nrm = norm(v);
    if nrm == 0.0 {
        return Ok(Some((v.to_vec(), 0.0, 0)));
    }
    let mut q: Vec<Vec<Complex64>> = vec![v.iter().map(|c| c / nrm).collect()];
    let mut alpha = Vec::with_capacity(cfg.m_max);
    let mut beta: Vec<f64> = Vec::with_capacity(cfg.m_max);
    for j in 0..cfg.m_max {
        let mut w = apply_h(&q[j]);
        let a = dot(&q[j], &w).re;
        axpy(Complex64::new(-a, 0.0), &q[j], &mut w);
        if j > 0 {
            axpy(Complex64::new(-beta[j - 1], 0.0), &q[j - 1], &mut w);
        }
        for qi in &q {
            let c = dot(qi, &w);
            axpy(-c, qi, &mut w);
        }
        let b = norm(&w);
        alpha.push(a);
        let y = tridiagonal_exp_e1(&alpha, &beta, dt)?;
        let invariant = b < BREAKDOWN || j + 1 == v.len();
        let err = if invariant { 0.0 } else { nrm * b * y[j].norm() };
        if invariant || (j >= 1 && err <= cfg.step_tolerance) {
            let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
            for (qi, yi) in q.iter().zip(&y) {
                axpy(yi * nrm, qi, &mut out);
            }
            return Ok(Some((out, err, j + 1)));
        }
        beta.push(b);
        q.push(w.iter().map(|c| c / b).collect());
    }
    Ok(None)
}

fn step_recursive<F>(
    apply_h: &F,
    v: &[Complex64],
    dt: f64,
    cfg: &KrylovConfig,
    depth: u32,
    report: &mut StepReport,
) -> Result<Vec<Complex64>>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    if let Some((w, err, m)) = krylov_attempt(apply_h, v, dt, cfg)? {
        report.error_estimate += err;
        report.subspace_dim = report.subspace_dim.max(m);
        report.substeps += 1;
        return Ok(w);
    }
    if depth >= cfg.max_halvings {
        return Err(Error::Numerical(format!(
            "Krylov step did not reach tolerance {:e} after {depth} halvings",
            cfg.step_tolerance
        )));
    }
    let half = step_recursive(apply_h, v, dt / 2.0, cfg, depth + 1, report)?;
    step_recursive(apply_h, &half, dt / 2.0, cfg, depth + 1, report)
}

/// `exp(-i H dt) v` with a posteriori error control. The result is not renormalized.
pub fn lanczos_exp_step<F>(
    apply_h: F,
    v: &SectorVector,
    dt: f64,
    cfg: &KrylovConfig,
) -> Result<(SectorVector, StepReport)>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    cfg.validate()?;
    if dt == 0.0 {
        return Ok((v.clone(), StepReport::default()));
    }
    let mut report = StepReport::default();
    let w = step_recursive(&apply_h, v.amplitudes(), dt, cfg, 0, &mut report)?;
    Ok((SectorVector::new(v.basis().clone(), w)?, report))
}

/// Exact propagator from a dense eigendecomposition (oracle use).
pub struct DensePropagator {
    values: Vec<f64>,
    vectors: Mat<Complex64>,
}

impl DensePropagator {
    pub fn new(kernel: &HamiltonianKernel) -> Result<Self> {
        let eig = hermitian_eigen(&kernel.to_dense()?)?;
        Ok(Self { values: eig.values, vectors: eig.vectors })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    /// Overlaps `c_j = <E_j|v>`.
    pub fn overlaps(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.values.len();
        (0..n).map(|j| (0..n).map(|i| self.vectors[(i, j)].conj() * v[i]).sum()).collect()
    }

    pub fn eigenvector(&self, j: usize) -> Vec<Complex64> {
        self.vectors.col(j).iter().copied().collect()
    }

    pub fn propagate(&self, v: &[Complex64], t: f64) -> Vec<Complex64> {
        let c = self.overlaps(v);
        let n = self.values.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (j, (&cj, &e)) in c.iter().zip(&self.values).enumerate() {
            let cj = cj * Complex64::from_polar(1.0, -e * t);
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.vectors[(i, j)] * cj;
            }
        }
        out
    }

    /// Infinite-time fidelity `Σ_j |c_j|⁴` (non-degenerate spectrum).
    pub fn inverse_participation(&self, v: &[Complex64]) -> f64 {
        self.overlaps(v).iter().map(|c| c.norm_sqr().powi(2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Complete,
    Aborted { time: f64, reason: String },
}

/// Per-sample values of a measured schedule along one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub state: String,
    pub sites: usize,
    pub sector: SectorSpec,
    pub params: HamiltonianParams,
    pub config: KrylovConfig,
    pub observables: Vec<String>,
    /// `<H>/L` and `<H²>/L - L ε²` of the initial state.
    pub epsilon: f64,
    pub variance: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub norm_drift: Vec<f64>,
    pub energy_drift: Vec<f64>,
    pub variance_drift: Vec<f64>,
    pub max_subspace_dim: usize,
    pub max_error_estimate: f64,
    pub status: TrajectoryStatus,
}

impl TrajectoryRecord {
    pub fn column(&self, id: &str) -> Option<usize> {
        self.observables.iter().position(|o| o == id)
    }

    pub fn series(&self, id: &str) -> Option<TimeSeries> {
        let c = self.column(id)?;
        Some(TimeSeries {
            state: self.state.clone(),
            sites: self.sites,
            observable: id.to_string(),
            times: self.times.clone(),
            values: self.values.iter().map(|row| row[c]).collect(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.status == TrajectoryStatus::Complete
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("t");
        for o in &self.observables {
            h.push(',');
            h.push_str(o);
        }
        h
    }

    /// Observable columns only; diagnostics go to the sidecar.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        for (t, row) in self.times.iter().zip(&self.values) {
            write!(w, "{}", fmt_float(*t))?;
            for x in row {
                write!(w, ",{}", fmt_float(*x))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fixed 17-significant-digit formatting used in every CSV.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Files used to resume an interrupted trajectory.
#[derive(Debug, Clone)]
pub struct CheckpointPaths {
    pub state: PathBuf,
    pub rows: PathBuf,
}

impl CheckpointPaths {
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        Self { state: dir.join(format!("{stem}.ckpt")), rows: dir.join(format!("{stem}.rows.csv")) }
    }

    pub fn clear(&self) -> Result<()> {
        for p in [&self.state, &self.rows] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        Ok(())
    }
}

struct Sample {
    t: f64,
    values: Vec<f64>,
    drift: [f64; 3],
}

fn row_line(s: &Sample) -> String {
    let mut line = fmt_float(s.t);
    for x in s.values.iter().chain(&s.drift) {
        line.push(',');
        line.push_str(&fmt_float(*x));
    }
    line
}

fn parse_row(line: &str, width: usize) -> Option<Sample> {
    let xs: Vec<f64> = line.split(',').map(|f| f.parse().ok()).collect::<Option<_>>()?;
    if xs.len() != width + 4 {
        return None;
    }
    Some(Sample { t: xs[0], values: xs[1..=width].to_vec(), drift: [xs[width + 1], xs[width + 2], xs[width + 3]] })
}

/// Rows and state saved by an earlier run, truncated to the checkpoint time.
fn load_resume(
    paths: &CheckpointPaths,
    initial: &SectorVector,
    width: usize,
) -> Result<Option<(SectorVector, Vec<Sample>)>> {
    if !paths.state.exists() || !paths.rows.exists() {
        return Ok(None);
    }
    let (state, time) = SectorVector::read_checkpoint(fs::File::open(&paths.state)?, initial.basis().clone())?;
    let text = fs::read_to_string(&paths.rows)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        match parse_row(line, width) {
            Some(s) if s.t <= time + 1e-9 => rows.push(s),
            Some(_) => break,
            None => break,
        }
    }
    match rows.last() {
        Some(last) if (last.t - time).abs() < 1e-9 => Ok(Some((state, rows))),
        _ => Ok(None),
    }
}

/// Evolves `initial` to `cfg.t_final`, measuring `schedule` every `cfg.dt`.
/// With `checkpoint`, progress is saved every `cfg.checkpoint_every` time
/// units and an interrupted run resumes from the last checkpoint.
pub fn evolve_and_measure(
    kernel: &HamiltonianKernel,
    initial: &SectorVector,
    schedule: &[ObservableSpec],
    cfg: &KrylovConfig,
    state_name: &str,
    checkpoint: Option<&CheckpointPaths>,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if schedule.is_empty() {
        return Err(Error::Config("empty observable schedule".into()));
    }
    if !initial.basis().same_space(kernel.basis()) {
        return Err(Error::Usage("initial state does not belong to the Hamiltonian's basis".into()));
    }
    if (initial.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Usage("initial state must be normalized".into()));
    }
    let len = initial.basis().sites() as f64;
    let hv = kernel.apply_slice(initial.amplitudes());
    let e0 = dot(initial.amplitudes(), &hv).re;
    let h2_0 = dot(&hv, &hv).re;
    let epsilon = e0 / len;
    let variance = h2_0 / len - len * epsilon * epsilon;
    let meas = Measurement::new(kernel.params(), initial, epsilon, schedule)?;
    let width = schedule.len();

    let observe = |v: &SectorVector, t: f64| -> Result<Sample> {
        let hv = kernel.apply_slice(v.amplitudes());
        let e = dot(v.amplitudes(), &hv).re;
        let h2 = dot(&hv, &hv).re;
        Ok(Sample {
            t,
            values: meas.measure_all(v)?,
            drift: [
                (v.norm() - 1.0).abs(),
                (e - e0).abs() / e0.abs().max(1.0),
                (h2 - h2_0).abs() / h2_0.abs().max(1.0),
            ],
        })
    };

    let n_steps = cfg.sample_count()?;
    let ckpt_stride = ((cfg.checkpoint_every / cfg.dt).round() as usize).max(1);
    let resumed = match checkpoint {
        Some(p) => load_resume(p, initial, width)?,
        None => None,
    };
    let (mut state, mut samples, start) = match resumed {
        Some((s, rows)) => {
            let start = rows.len() - 1;
            (s, rows, start)
        }
        None => (initial.clone(), vec![observe(initial, 0.0)?], 0),
    };
    let mut row_file = match checkpoint {
        Some(p) => {
            if let Some(dir) = p.rows.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut f = BufWriter::new(fs::File::create(&p.rows)?);
            for s in &samples {
                writeln!(f, "{}", row_line(s))?;
            }
            f.flush()?;
            Some(f)
        }
        None => None,
    };

    let mut status = TrajectoryStatus::Complete;
    let mut max_m = 0;
    let mut max_err = 0.0f64;
    for i in start + 1..=n_steps {
        let t = i as f64 * cfg.dt;
        let step = lanczos_exp_step(|x| kernel.apply_slice(x), &state, cfg.dt, cfg);
        let (next, report) = match step {
            Ok(r) => r,
            Err(e) => {
                status = TrajectoryStatus::Aborted { time: t - cfg.dt, reason: e.to_string() };
                break;
            }
        };
        max_m = max_m.max(report.subspace_dim);
        max_err = max_err.max(report.error_estimate);
        state = next;
        let sample = observe(&state, t)?;
        if let Some(f) = row_file.as_mut() {
            writeln!(f, "{}", row_line(&sample))?;
        }
        samples.push(sample);
        if let (Some(p), Some(f)) = (checkpoint, row_file.as_mut()) {
            if i % ckpt_stride == 0 && i < n_steps {
                f.flush()?;
                let tmp = p.state.with_extension("ckpt.tmp");
                state.write_checkpoint(BufWriter::new(fs::File::create(&tmp)?), t)?;
                fs::rename(&tmp, &p.state)?;
            }
        }
    }
    if let Some(mut f) = row_file {
        f.flush()?;
    }

    Ok(TrajectoryRecord {
        state: state_name.to_string(),
        sites: initial.basis().sites(),
        sector: initial.basis().sector(),
        params: kernel.params(),
        config: *cfg,
        observables: schedule.iter().map(|s| s.id().to_string()).collect(),
        epsilon,
        variance,
        times: samples.iter().map(|s| s.t).collect(),
        norm_drift: samples.iter().map(|s| s.drift[0]).collect(),
        energy_drift: samples.iter().map(|s| s.drift[1]).collect(),
        variance_drift: samples.iter().map(|s| s.drift[2]).collect(),
        values: samples.into_iter().map(|s| s.values).collect(),
        max_subspace_dim: max_m,
        max_error_estimate: max_err,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_sector_basis, RingGeometry, SymmetryBasis};
    use crate::bloch::{build_bloch_state, sample_sector_random_state, BlochParams};
    use crate::linalg::max_abs_diff;
    use std::sync::Arc;

    fn sector(l: usize) -> Arc<SymmetryBasis> {
        Arc::new(build_sector_basis(RingGeometry::new(l).unwrap(), SectorSpec::ZERO_EVEN).unwrap())
    }

    #[test]
    fn zero_step_is_identity() {
        let b = sector(8);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let v = sample_sector_random_state(&b, 1).unwrap();
        let (w, _) = lanczos_exp_step(|x| k.apply_slice(x), &v, 0.0, &KrylovConfig::default()).unwrap();
        assert_eq!(w.amplitudes(), v.amplitudes());
    }

    #[test]
    fn step_matches_dense_propagator() {
        let b = sector(10);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let dense = DensePropagator::new(&k).unwrap();
        let v = sample_sector_random_state(&b, 2).unwrap();
        let (w, report) = lanczos_exp_step(|x| k.apply_slice(x), &v, 0.1, &KrylovConfig::default()).unwrap();
        let exact = dense.propagate(v.amplitudes(), 0.1);
        assert!(max_abs_diff(w.amplitudes(), &exact) < 1e-10);
        assert!((w.norm() - 1.0).abs() < 1e-12);
        assert!(report.error_estimate <= 1e-12);
    }

    #[test]
    fn eigenstate_only_acquires_phase() {
        let b = sector(8);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let dense = DensePropagator::new(&k).unwrap();
        let j = 3;
        let v = SectorVector::new(b.clone(), dense.eigenvector(j)).unwrap();
        let (w, _) = lanczos_exp_step(|x| k.apply_slice(x), &v, 0.1, &KrylovConfig::default()).unwrap();
        let phase = Complex64::from_polar(1.0, -dense.eigenvalues()[j] * 0.1);
        let want: Vec<Complex64> = v.amplitudes().iter().map(|c| c * phase).collect();
        assert!(max_abs_diff(w.amplitudes(), &want) < 1e-11);
    }

    #[test]
    fn long_step_is_split_and_still_accurate() {
        let b = sector(10);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let dense = DensePropagator::new(&k).unwrap();
        let v = sample_sector_random_state(&b, 4).unwrap();
        let cfg = KrylovConfig { m_max: 12, ..KrylovConfig::default() };
        let (w, report) = lanczos_exp_step(|x| k.apply_slice(x), &v, 2.0, &cfg).unwrap();
        assert!(report.substeps > 1);
        assert!(max_abs_diff(w.amplitudes(), &dense.propagate(v.amplitudes(), 2.0)) < 1e-10);
        let hopeless = KrylovConfig { m_max: 3, max_halvings: 1, ..KrylovConfig::default() };
        assert!(matches!(lanczos_exp_step(|x| k.apply_slice(x), &v, 2.0, &hopeless), Err(Error::Numerical(_))));
    }

    #[test]
    fn classical_state_is_frozen_without_transverse_field() {
        let b = sector(10);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::new(0.0, 0.5).unwrap());
        let v = build_bloch_state(BlochParams::new(0.0, 0.0), &b).unwrap();
        let cfg = KrylovConfig { t_final: 5.0, ..KrylovConfig::default() };
        let rec = evolve_and_measure(&k, &v, &["sz".parse().unwrap()], &cfg, "Z_+", None).unwrap();
        assert!(rec.values.iter().all(|r| (r[0] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sampling_step_does_not_change_results() {
        let b = sector(10);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let v = build_bloch_state(BlochParams::from_fractions(0.5, 0.5), &b).unwrap();
        let schedule: Vec<ObservableSpec> = vec!["C2".parse().unwrap(), "sx".parse().unwrap()];
        let fine = KrylovConfig { t_final: 10.0, ..KrylovConfig::default() };
        let coarse = KrylovConfig { dt: 0.5, ..fine };
        let a = evolve_and_measure(&k, &v, &schedule, &fine, "Y_+", None).unwrap();
        let c = evolve_and_measure(&k, &v, &schedule, &coarse, "Y_+", None).unwrap();
        for (i, t) in c.times.iter().enumerate() {
            let j = a.times.iter().position(|s| (s - t).abs() < 1e-9).unwrap();
            for col in 0..2 {
                assert!((a.values[j][col] - c.values[i][col]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let b = sector(8);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let v = build_bloch_state(BlochParams::from_fractions(0.4, 0.3), &b).unwrap();
        let schedule: Vec<ObservableSpec> = vec!["C1".parse().unwrap(), "S2".parse().unwrap()];
        let cfg = KrylovConfig { t_final: 6.0, checkpoint_every: 2.0, ..KrylovConfig::default() };
        let paths = CheckpointPaths::in_dir(dir.path(), "run");
        let full = evolve_and_measure(&k, &v, &schedule, &cfg, "s", None).unwrap();

        // a run stopped at t = 4.3 leaves a checkpoint at 4 and rows beyond it
        let short = KrylovConfig { t_final: 4.3, ..cfg };
        evolve_and_measure(&k, &v, &schedule, &short, "s", Some(&paths)).unwrap();
        let resumed = evolve_and_measure(&k, &v, &schedule, &cfg, "s", Some(&paths)).unwrap();
        let mut a = Vec::new();
        let mut c = Vec::new();
        full.write_csv(&mut a).unwrap();
        resumed.write_csv(&mut c).unwrap();
        assert_eq!(a, c);
    }
}
