//! Post-processing of measured time series: equilibrium averages, fluctuation
//! and deviation scaling, area-law extraction and relaxation fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::basis::SectorVector;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianKernel;
use crate::krylov::DensePropagator;
use crate::linalg::least_squares;
use num_complex::Complex64;

/// Samples of one observable along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub state: String,
    pub sites: usize,
    pub observable: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Usage("times and values differ in length".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Usage("times must be strictly increasing".into()));
        }
        Ok(Self { state: String::new(), sites: 0, observable: String::new(), times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumStats {
    pub o_bar: f64,
    pub delta_o2: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
}

/// Trapezoidal average over `[t_f - fraction (t_f - t_0), t_f]`.
fn trapezoid_mean<F: Fn(f64) -> f64>(t: &[f64], y: &[f64], f: F) -> f64 {
    let mut acc = 0.0;
    for i in 1..t.len() {
        acc += 0.5 * (f(y[i - 1]) + f(y[i])) * (t[i] - t[i - 1]);
    }
    acc / (t[t.len() - 1] - t[0])
}

/// Time average and mean squared fluctuation over the trailing `fraction` of the series.
pub fn equilibrium_stats(series: &TimeSeries, fraction: f64) -> Result<EquilibriumStats> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Usage(format!("averaging fraction {fraction}")));
    }
    let needed = (4.0 / fraction).ceil() as usize;
    if series.len() < needed {
        return Err(Error::Usage(format!("{} samples, need at least {needed}", series.len())));
    }
    let t0 = series.times[0];
    let tf = series.times[series.len() - 1];
    let start = tf - fraction * (tf - t0);
    let first = series.times.partition_point(|&t| t < start - 1e-9 * tf.abs().max(1.0));
    let t = &series.times[first..];
    let y = &series.values[first..];
    if t.len() < 2 {
        return Err(Error::Usage("averaging window is empty".into()));
    }
    let o_bar = trapezoid_mean(t, y, |v| v);
    let m2 = trapezoid_mean(t, y, |v| v * v);
    Ok(EquilibriumStats { o_bar, delta_o2: (m2 - o_bar * o_bar).max(0.0), t_start: t[0], t_end: tf, samples: t.len() })
}

/// Ordinary least squares line `y = a + b x` with slope standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub r2: f64,
    pub residual_rms: f64,
    pub n: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 3 {
        return Err(Error::Fit(format!("{n} points for a line fit")));
    }
    let design: Vec<Vec<f64>> = x.iter().map(|&xi| vec![1.0, xi]).collect();
    let beta = least_squares(&design, y)?;
    let (a, b) = (beta[0], beta[1]);
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|xi| (xi - mean_x).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|yi| (yi - mean_y).powi(2)).sum();
    Ok(LineFit {
        intercept: a,
        slope: b,
        slope_stderr: (ss_res / (n as f64 - 2.0) / sxx).sqrt(),
        r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        residual_rms: (ss_res / n as f64).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationFit {
    /// Slope of `log₂ δO²` against `S̃`.
    pub slope: f64,
    pub prefactor: f64,
    pub r2: f64,
}

/// Fits `log₂ δO² = slope S̃ + log₂ M` over `(S̃, δO²)` pairs from several sizes.
pub fn fluctuation_scaling(points: &[(f64, f64)]) -> Result<FluctuationFit> {
    if points.len() < 3 {
        return Err(Error::Fit("fluctuation scaling needs at least 3 sizes".into()));
    }
    if points.iter().any(|&(_, d)| !(d > 0.0)) {
        return Err(Error::Fit("fluctuations must be positive".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let line = fit_line(&x, &y)?;
    Ok(FluctuationFit { slope: line.slope, prefactor: line.intercept.exp2(), r2: line.r2 })
}

/// One state's equilibrium deviation from the thermal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    /// `(v - ṽ) / L`
    pub x: f64,
    /// `Ō - Õ`
    pub y: f64,
    pub state: String,
    pub sites: usize,
    pub observable: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EthFit {
    /// Estimate of `∂²_ε O` from `y = (x/2) slope`.
    pub slope: f64,
    pub residuals: Vec<f64>,
    pub residual_rms: f64,
}

/// Least squares through the origin for `y = (x / 2) * slope`.
pub fn eth_deviation_fit(points: &[DeviationPoint]) -> Result<EthFit> {
    if points.len() < 3 {
        return Err(Error::Fit("deviation fit needs at least 3 points".into()));
    }
    let sxx: f64 = points.iter().map(|p| p.x * p.x).sum();
    let xmax = points.iter().map(|p| p.x.abs()).fold(0.0, f64::max);
    if sxx <= 1e-24 || xmax == 0.0 {
        return Err(Error::Fit("no spread in (v - ṽ)/L".into()));
    }
    let sxy: f64 = points.iter().map(|p| p.x * p.y).sum();
    let slope = 2.0 * sxy / sxx;
    let residuals: Vec<f64> = points.iter().map(|p| p.y - 0.5 * p.x * slope).collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(EthFit { slope, residuals, residual_rms: rms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_rms: f64,
}

/// Fits `y = a x² + b x + c`.
pub fn entropy_deviation_fit(points: &[(f64, f64)]) -> Result<QuadraticFit> {
    if points.len() < 4 {
        return Err(Error::Fit("quadratic fit needs at least 4 points".into()));
    }
    let design: Vec<Vec<f64>> = points.iter().map(|&(x, _)| vec![x * x, x, 1.0]).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let beta = least_squares(&design, &y)?;
    let ss: f64 = points.iter().map(|&(x, yi)| (yi - beta[0] * x * x - beta[1] * x - beta[2]).powi(2)).sum();
    Ok(QuadraticFit { a: beta[0], b: beta[1], c: beta[2], residual_rms: (ss / points.len() as f64).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaLawResult {
    /// `(l, S̄_l - l S̃/L̃)`
    pub per_l: Vec<(usize, f64)>,
    pub g: f64,
    /// `max - min` of the per-`l` values.
    pub spread: f64,
    pub i_bar_11: f64,
    pub i_tilde_11: f64,
}

/// Area-law excess of equilibrium entropies over the thermal volume term.
pub fn area_law_extract(
    s_bar: &[(usize, f64)],
    thermal_entropy_per_site: f64,
    i_bar_11: f64,
    i_tilde_11: f64,
) -> Result<AreaLawResult> {
    if s_bar.is_empty() {
        return Err(Error::Usage("no cluster entropies".into()));
    }
    let per_l: Vec<(usize, f64)> = s_bar.iter().map(|&(l, s)| (l, s - l as f64 * thermal_entropy_per_site)).collect();
    let g = per_l.iter().map(|p| p.1).sum::<f64>() / per_l.len() as f64;
    let max = per_l.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let min = per_l.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(AreaLawResult { per_l, g, spread: max - min, i_bar_11, i_tilde_11 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxationOptions {
    pub r2_threshold: f64,
    /// Points with `|O - Ō|` below this multiple of the noise floor are left out of the fit.
    pub noise_factor: f64,
    /// The fit ends where the deviation stays under the floor this long
    /// (shorter dips are oscillation nodes and are only skipped).
    pub quiet_time: f64,
    pub confidence: f64,
}

impl Default for RelaxationOptions {
    fn default() -> Self {
        Self { r2_threshold: 0.8, noise_factor: 3.0, quiet_time: 2.0, confidence: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationFit {
    pub tau: f64,
    pub t_a: f64,
    /// Last point actually used (points under the noise floor are skipped).
    pub t_b: f64,
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub r2: f64,
    /// Regression confidence interval on `τ` (upper end infinite when the slope interval reaches 0).
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    pub accepted: bool,
}

/// Exponential decay time from a line through `(t, ln|O(t) - Ō|)` on `[t_a, t_b]`.
pub fn fit_relaxation_time(
    series: &TimeSeries,
    stats: &EquilibriumStats,
    window: (f64, f64),
    opts: &RelaxationOptions,
) -> Result<RelaxationFit> {
    let (t_a, t_b) = window;
    if !(t_a < t_b) {
        return Err(Error::Fit(format!("empty fit window [{t_a}, {t_b}]")));
    }
    if t_b > stats.t_start + 1e-9 {
        return Err(Error::Fit("fit window overlaps the averaging window".into()));
    }
    let scale = series.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let floor = stats.delta_o2.sqrt().max(10.0 * f64::EPSILON * scale);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut quiet_since: Option<f64> = None;
    for (&t, &v) in series.times.iter().zip(&series.values) {
        if t < t_a - 1e-12 {
            continue;
        }
        if t > t_b + 1e-12 {
            break;
        }
        let dev = (v - stats.o_bar).abs();
        if dev < opts.noise_factor * floor {
            let since = *quiet_since.get_or_insert(t);
            if t - since >= opts.quiet_time - 1e-12 {
                break;
            }
            continue;
        }
        quiet_since = None;
        xs.push(t);
        ys.push(dev.ln());
    }
    if xs.len() < 3 {
        return Err(Error::Fit(format!("{} usable points above the noise floor", xs.len())));
    }
    let line = fit_line(&xs, &ys)?;
    let dof = line.n as f64 - 2.0;
    let q = if dof >= 1.0 {
        StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Fit(e.to_string()))?.inverse_cdf(0.5 + opts.confidence / 2.0)
    } else {
        f64::INFINITY
    };
    let lo_slope = line.slope - q * line.slope_stderr;
    let hi_slope = line.slope + q * line.slope_stderr;
    let tau = -1.0 / line.slope;
    Ok(RelaxationFit {
        tau,
        t_a: xs[0],
        t_b: xs[xs.len() - 1],
        slope: line.slope,
        intercept: line.intercept,
        residual_rms: line.residual_rms,
        r2: line.r2,
        ci_lo: if lo_slope < 0.0 { -1.0 / lo_slope } else { 0.0 },
        ci_hi: if hi_slope < 0.0 { -1.0 / hi_slope } else { f64::INFINITY },
        n: line.n,
        accepted: tau > 0.0 && line.r2 >= opts.r2_threshold,
    })
}

/// Default fit window `[0.15 t_f, 0.75 t_f]`; the noise floor may shorten it.
pub fn default_fit_window(t_final: f64) -> (f64, f64) {
    (0.15 * t_final, 0.75 * t_final)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawProbe {
    pub slope: f64,
    pub intercept: f64,
    /// Quadratic term's share of the log-log variation over the window.
    pub curvature: f64,
    pub used: usize,
    pub excluded: usize,
    pub power_law_like: bool,
}

/// Log-log slope of `|O - Ō|` on a window (diagnostic only).
pub fn powerlaw_probe(series: &TimeSeries, o_bar: f64, window: (f64, f64)) -> Result<PowerLawProbe> {
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut excluded = 0;
    for (&t, &v) in series.times.iter().zip(&series.values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        let dev = (v - o_bar).abs();
        if t <= 0.0 || dev <= 0.0 {
            excluded += 1;
            continue;
        }
        u.push(t.ln());
        y.push(dev.ln());
    }
    if u.len() < 4 {
        return Err(Error::Fit(format!("{} usable points in the window", u.len())));
    }
    let line = fit_line(&u, &y)?;
    let design: Vec<Vec<f64>> = u.iter().map(|&x| vec![1.0, x, x * x]).collect();
    let quad = least_squares(&design, &y)?;
    let span = u[u.len() - 1] - u[0];
    let curvature = (quad[2] * span * span).abs() / (line.slope * span).abs().max(1e-300);
    Ok(PowerLawProbe {
        slope: line.slope,
        intercept: line.intercept,
        curvature,
        used: u.len(),
        excluded,
        power_law_like: curvature < 0.1,
    })
}

/// Largest ring for the long-horizon fidelity scan.
pub const HEISENBERG_MAX_SITES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAverage {
    pub window: f64,
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergScan {
    pub times: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub blocks: Vec<BlockAverage>,
    /// Mean fidelity over the second half of the run.
    pub plateau: f64,
    /// `Σ_j |c_j|⁴` from the dense spectrum.
    pub ipr: f64,
}

/// Non-overlapping block means of width `window`.
pub fn block_average(times: &[f64], values: &[f64], window: f64) -> BlockAverage {
    let mut centers = Vec::new();
    let mut means = Vec::new();
    let t0 = times.first().copied().unwrap_or(0.0);
    let mut start = 0;
    while start < times.len() {
        let edge = t0 + window * ((times[start] - t0) / window).floor() + window;
        let mut end = start;
        while end < times.len() && times[end] < edge - 1e-9 {
            end += 1;
        }
        let end = end.max(start + 1);
        let n = (end - start) as f64;
        centers.push(times[start..end].iter().sum::<f64>() / n);
        means.push(values[start..end].iter().sum::<f64>() / n);
        start = end;
    }
    BlockAverage { window, centers, values: means }
}

/// Fidelity `|<Ψ(0)|Ψ(t)>|²` sampled every `dt` to `t_final`, block-averaged,
/// with its late-time plateau compared to `Σ_j |c_j|⁴`.
///
/// Horizons here reach `10^5`, so the state is propagated spectrally: the
/// fidelity is `|Σ_j |c_j|² e^{-i E_j t}|²`, exact at every sample with no
/// accumulated step error.
pub fn heisenberg_scan(
    kernel: &HamiltonianKernel,
    initial: &SectorVector,
    t_final: f64,
    dt: f64,
    windows: &[f64],
) -> Result<HeisenbergScan> {
    let len = initial.basis().sites();
    if len > HEISENBERG_MAX_SITES {
        return Err(Error::Resource(format!("Heisenberg scan at L = {len} (limit {HEISENBERG_MAX_SITES})")));
    }
    if !(dt > 0.0) || !(t_final > dt) {
        return Err(Error::Usage("Heisenberg scan needs 0 < dt < t_final".into()));
    }
    let dense = DensePropagator::new(kernel)?;
    let weights: Vec<f64> = dense.overlaps(initial.amplitudes()).iter().map(|c| c.norm_sqr()).collect();
    let energies = dense.eigenvalues();
    let steps = (t_final / dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let fid: Vec<f64> = times
        .iter()
        .map(|&t| {
            let mut amp = Complex64::new(0.0, 0.0);
            for (w, e) in weights.iter().zip(energies) {
                amp += Complex64::from_polar(*w, -e * t);
            }
            amp.norm_sqr()
        })
        .collect();
    let half = times.partition_point(|&t| t < t_final / 2.0);
    let plateau = fid[half..].iter().sum::<f64>() / (fid.len() - half) as f64;
    let blocks = windows.iter().map(|&w| block_average(&times, &fid, w)).collect();
    let ipr = weights.iter().map(|w| w * w).sum();
    Ok(HeisenbergScan { times, fidelity: fid, blocks, plateau, ipr })
}
