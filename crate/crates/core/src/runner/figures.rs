//! Desk-scale figures rendered from a finished run.

use std::collections::BTreeMap;

use super::svg::{Plot, Series, Style};
use super::{cache_dir, cached_basis, RunConfig, RunOutcome, ThermalReference};
use crate::analysis::heisenberg_scan;
use crate::basis::{RingGeometry, SectorSpec};
use crate::bloch::build_bloch_state;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianKernel;
use crate::observables::{page_entropy, page_mutual_information, ObservableKind, ObservableSpec};

pub const FIGURE_IDS: [&str; 12] =
    ["fig1", "fig2a", "fig3a", "fig5a", "fig6a", "fig7", "fig8", "fig9", "fig10", "fig11", "fig12", "fig2b"];

pub fn check_ids(ids: &[String]) -> Result<()> {
    for id in ids {
        if !FIGURE_IDS.contains(&id.as_str()) {
            return Err(unknown(id));
        }
    }
    Ok(())
}

fn unknown(id: &str) -> Error {
    Error::Config(format!("unknown figure {id}; available: {}", FIGURE_IDS.join(", ")))
}

fn missing(id: &str, what: &[&str]) -> Error {
    Error::Usage(format!("{id} is missing inputs: {}", what.join("; ")))
}

/// Renders one figure to SVG text.
pub fn render(id: &str, run: &RunOutcome, config: &RunConfig) -> Result<String> {
    let plot = match id {
        "fig1" => fig1(run)?,
        "fig2a" => eth_scatter(run, "fig2a", "C2")?,
        "fig2b" => eth_scatter(run, "fig2b", "sz")?,
        "fig3a" => fig3a(run)?,
        "fig5a" => fig5a(run)?,
        "fig6a" => fig6a(run)?,
        "fig7" => fig7(run)?,
        "fig8" => fig8(run)?,
        "fig9" => fig9(run)?,
        "fig10" => fig10(run)?,
        "fig11" => fig11(run)?,
        "fig12" => fig12(config)?,
        other => return Err(unknown(other)),
    };
    Ok(plot.render())
}

fn thermal<'a>(run: &'a RunOutcome, id: &str) -> Result<&'a ThermalReference> {
    run.thermal.as_ref().ok_or_else(|| missing(id, &["thermal reference (thermal.enabled)"]))
}

fn first_series_observable(run: &RunOutcome) -> Option<String> {
    let t = run.trajectories.first()?;
    t.meta.observables.iter().find(|o| o.as_str() != "fid").cloned()
}

/// Observable time series against their thermal values.
fn fig1(run: &RunOutcome) -> Result<Plot> {
    let obs = first_series_observable(run).ok_or_else(|| missing("fig1", &["trajectories"]))?;
    let mut p = Plot::new(&format!("{obs}(t) relaxation"), "t", &obs);
    for (c, tr) in run.trajectories.iter().enumerate() {
        let Some(s) = tr.series(&obs) else { continue };
        let label = format!("{} L={}", tr.meta.state, tr.meta.sites);
        let pts: Vec<(f64, f64)> = s.times.iter().copied().zip(s.values.iter().copied()).collect();
        let (t0, t1) = (pts[0].0, pts[pts.len() - 1].0);
        p.push(Series::new(label, pts, Style::Line, Some(c)));
        if let Some(th) = &run.thermal {
            if let Some(v) = th.expectation(&obs.parse()?, tr.meta.epsilon)? {
                p.push(Series::new("thermal", vec![(t0, v), (t1, v)], Style::Dashed, Some(c)));
            }
        }
    }
    Ok(p)
}

/// `Ō − Õ` against `(v − ṽ)/L` with the thermal slope as guide.
fn eth_scatter(run: &RunOutcome, id: &str, obs: &str) -> Result<Plot> {
    thermal(run, id)?;
    let mut by_l: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in run.report.equilibrium.iter().filter(|r| r.observable == obs) {
        if let (Some(d), Some(vt)) = (r.deviation(), r.v_tilde) {
            by_l.entry(r.sites).or_default().push(((r.variance - vt) / r.sites as f64, d));
        }
    }
    if by_l.is_empty() {
        return Err(missing(id, &[&format!("equilibrium rows for {obs} with thermal values")]));
    }
    let mut p = Plot::new(&format!("ETH deviation, {obs}"), "(v - v~)/L", &format!("{obs} bar - {obs} thermal"));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (c, (l, pts)) in by_l.iter().enumerate() {
        for &(x, _) in pts {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        p.push(Series::new(format!("L={l}"), pts.clone(), Style::Markers, Some(c)));
    }
    if let Some(row) = run.report.eth.iter().filter(|e| e.observable == obs).max_by_key(|e| e.sites) {
        if let Some(d2) = row.thermal_d2 {
            p.push(Series::new("thermal slope", vec![(lo, lo * d2 / 2.0), (hi, hi * d2 / 2.0)], Style::Dashed, None));
        }
    }
    Ok(p)
}

/// `log₂ δO²` against the thermal entropy `S̃ = L s̃(ε)`.
fn fig3a(run: &RunOutcome) -> Result<Plot> {
    let th = thermal(run, "fig3a")?;
    let per_site = |eps: f64| -> Result<f64> { Ok(th.table.point(th.beta(eps)?).s_tilde / th.table.sites() as f64) };
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &run.report.equilibrium {
        if r.observable == "fid" || r.stats.delta_o2 <= 0.0 {
            continue;
        }
        let s = r.sites as f64 * per_site(r.epsilon)?;
        groups.entry((r.state.clone(), r.observable.clone())).or_default().push((s, r.stats.delta_o2.log2()));
    }
    if groups.is_empty() {
        return Err(missing("fig3a", &["equilibrium rows"]));
    }
    let mut p = Plot::new("Temporal fluctuations", "S~ (bits)", "log2 dO^2");
    for (c, ((state, obs), pts)) in groups.into_iter().enumerate() {
        p.push(Series::new(format!("{state} {obs}"), pts, Style::LineMarkers, Some(c)));
    }
    Ok(p)
}

/// Entropy deviation `S̄_l − S̃_l` against `(v − ṽ)/L`.
fn fig5a(run: &RunOutcome) -> Result<Plot> {
    thermal(run, "fig5a")?;
    let mut by_l: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &run.report.equilibrium {
        let spec: ObservableSpec = r.observable.parse()?;
        if let (ObservableKind::Entropy(l), Some(d), Some(vt)) = (spec.kind(), r.deviation(), r.v_tilde) {
            by_l.entry(*l).or_default().push(((r.variance - vt) / r.sites as f64, d));
        }
    }
    if by_l.is_empty() {
        return Err(missing("fig5a", &["equilibrium entropies S1..S3 with thermal values"]));
    }
    let mut p = Plot::new("Entropy deviation", "(v - v~)/L", "S bar - S thermal");
    for (c, (l, mut pts)) in by_l.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        p.push(Series::new(format!("l={l}"), pts, Style::Markers, Some(c)));
    }
    Ok(p)
}

/// Area-law excess per cluster size.
fn fig6a(run: &RunOutcome) -> Result<Plot> {
    if run.report.arealaw.is_empty() {
        return Err(missing("fig6a", &["equilibrium entropies with thermal reference"]));
    }
    let mut p = Plot::new("Area-law excess", "l", "S bar_l - l S~/L~");
    for (c, r) in run.report.arealaw.iter().enumerate() {
        let pts = r.per_l.iter().map(|&(l, x)| (l as f64, x)).collect();
        p.push(Series::new(format!("{} L={}", r.state, r.sites), pts, Style::LineMarkers, Some(c)));
        if let Some(i) = r.i_tilde_11 {
            let (a, b) = (r.per_l[0].0 as f64, r.per_l[r.per_l.len() - 1].0 as f64);
            p.push(Series::new("I~_11", vec![(a, i), (b, i)], Style::Dashed, Some(c)));
        }
    }
    Ok(p)
}

/// Cluster entropies over time with their Page values.
fn fig7(run: &RunOutcome) -> Result<Plot> {
    let mut p = Plot::new("Cluster entropies", "t", "S_l (bits)");
    let mut c = 0;
    for tr in &run.trajectories {
        for id in &tr.meta.observables {
            let spec: ObservableSpec = id.parse()?;
            let ObservableKind::Entropy(l) = spec.kind() else { continue };
            let s = tr.series(id).expect("listed");
            let pts: Vec<(f64, f64)> = s.times.iter().copied().zip(s.values.iter().copied()).collect();
            let (t0, t1) = (pts[0].0, pts[pts.len() - 1].0);
            p.push(Series::new(format!("{} L={} {id}", tr.meta.state, tr.meta.sites), pts, Style::Line, Some(c)));
            if let Ok(page) = page_entropy(*l, tr.meta.sites) {
                p.push(Series::new("Page", vec![(t0, page), (t1, page)], Style::Dashed, Some(c)));
            }
            c += 1;
        }
    }
    if p.series.is_empty() {
        return Err(missing("fig7", &["trajectories measuring S_l"]));
    }
    Ok(p)
}

/// Equilibrium `Ī_{l,l}` against `l` with the Page baseline.
fn fig8(run: &RunOutcome) -> Result<Plot> {
    let mut groups: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &run.report.equilibrium {
        let spec: ObservableSpec = r.observable.parse()?;
        if let ObservableKind::MutualInformation(l, m) = spec.kind() {
            if l == m && r.stats.o_bar > 0.0 {
                groups.entry((r.state.clone(), r.sites)).or_default().push((*l as f64, r.stats.o_bar));
            }
        }
    }
    if groups.is_empty() {
        return Err(missing("fig8", &["equilibrium I_l_l"]));
    }
    let mut p = Plot::new("Mutual information", "l", "I_ll (bits)");
    p.log_y = true;
    for (c, ((state, sites), pts)) in groups.into_iter().enumerate() {
        let page: Vec<(f64, f64)> =
            pts.iter().filter_map(|&(l, _)| page_mutual_information(l as usize, sites).ok().map(|v| (l, v))).collect();
        p.push(Series::new(format!("{state} L={sites}"), pts, Style::LineMarkers, Some(c)));
        p.push(Series::new(format!("Page L={sites}"), page, Style::Dashed, Some(c)));
    }
    Ok(p)
}

/// Equilibrium correlators `C̄_r` against `r` with thermal dots.
fn fig9(run: &RunOutcome) -> Result<Plot> {
    type Points = Vec<(f64, f64)>;
    // (state, L) -> (measured, thermal)
    let mut groups: BTreeMap<(String, usize), (Points, Points)> = BTreeMap::new();
    for r in &run.report.equilibrium {
        let spec: ObservableSpec = r.observable.parse()?;
        if let ObservableKind::EnergyCorrelator(d) = spec.kind() {
            let g = groups.entry((r.state.clone(), r.sites)).or_default();
            g.0.push((*d as f64, r.stats.o_bar));
            if let Some(t) = r.o_tilde {
                g.1.push((*d as f64, t));
            }
        }
    }
    if groups.is_empty() {
        return Err(missing("fig9", &["equilibrium correlators C_r"]));
    }
    let mut p = Plot::new("Equilibrium correlators", "r", "C bar_r");
    for (c, ((state, sites), (mut bar, mut th))) in groups.into_iter().enumerate() {
        bar.sort_by(|a, b| a.0.total_cmp(&b.0));
        th.sort_by(|a, b| a.0.total_cmp(&b.0));
        p.push(Series::new(format!("{state} L={sites}"), bar, Style::Line, Some(c)));
        if !th.is_empty() {
            p.push(Series::new("thermal", th, Style::Markers, Some(c)));
        }
    }
    Ok(p)
}

fn accepted_tau(run: &RunOutcome) -> impl Iterator<Item = (&super::TauRow, f64)> {
    run.report.tau.iter().filter_map(|r| match &r.fit {
        Ok(f) if f.accepted => Some((r, f.tau)),
        _ => None,
    })
}

/// Relaxation time against system size.
fn fig10(run: &RunOutcome) -> Result<Plot> {
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for (r, tau) in accepted_tau(run) {
        groups.entry((r.state.clone(), r.observable.clone())).or_default().push((r.sites as f64, tau));
    }
    if groups.is_empty() {
        return Err(missing("fig10", &["accepted relaxation fits"]));
    }
    let mut p = Plot::new("Relaxation time", "L", "tau");
    for (c, ((state, obs), mut pts)) in groups.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        p.push(Series::new(format!("{state} {obs}"), pts, Style::LineMarkers, Some(c)));
    }
    Ok(p)
}

/// Relaxation time against energy density.
fn fig11(run: &RunOutcome) -> Result<Plot> {
    let eps: BTreeMap<(String, usize), f64> =
        run.trajectories.iter().map(|t| ((t.meta.state.clone(), t.meta.sites), t.meta.epsilon)).collect();
    let mut groups: BTreeMap<(usize, String), Vec<(f64, f64)>> = BTreeMap::new();
    for (r, tau) in accepted_tau(run) {
        if let Some(e) = eps.get(&(r.state.clone(), r.sites)) {
            groups.entry((r.sites, r.observable.clone())).or_default().push((*e, tau));
        }
    }
    if groups.is_empty() {
        return Err(missing("fig11", &["accepted relaxation fits"]));
    }
    let mut p = Plot::new("Relaxation time vs energy", "epsilon", "tau");
    for (c, ((sites, obs), mut pts)) in groups.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        p.push(Series::new(format!("L={sites} {obs}"), pts, Style::Markers, Some(c)));
    }
    Ok(p)
}

/// Block-averaged long-time fidelity for the configured states.
fn fig12(config: &RunConfig) -> Result<Plot> {
    let h = &config.analysis.heisenberg;
    if config.states.is_empty() || h.sizes.is_empty() {
        return Err(missing("fig12", &["states", "analysis.heisenberg.sizes"]));
    }
    let window = h.windows.iter().copied().fold(0.0, f64::max);
    let cache = cache_dir(&config.output);
    let mut p = Plot::new("Long-time fidelity", "t", "fidelity");
    p.log_x = true;
    p.log_y = true;
    let mut c = 0;
    for state in &config.states {
        for &l in &h.sizes {
            let (basis, _) = cached_basis(&cache, RingGeometry::new(l)?, SectorSpec::ZERO_EVEN)?;
            let psi = build_bloch_state(state.resolve()?, &basis)?;
            let kernel = HamiltonianKernel::new(basis, config.params);
            let scan = heisenberg_scan(&kernel, &psi, h.t_final, h.dt, &[window])?;
            let b = &scan.blocks[0];
            let pts = b.centers.iter().copied().zip(b.values.iter().copied()).collect();
            p.push(Series::new(format!("{} L={l}", state.name()), pts, Style::Line, Some(c)));
            p.push(Series::new("IPR", vec![(window, scan.ipr), (h.t_final, scan.ipr)], Style::Dashed, Some(c)));
            c += 1;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_id_lists_the_valid_ones() {
        let e = check_ids(&["fig4".to_string()]).unwrap_err().to_string();
        assert!(e.contains("fig4") && e.contains("fig2a") && e.contains("fig12"));
        assert!(check_ids(&["fig9".to_string()]).is_ok());
    }
}
