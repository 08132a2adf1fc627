//! Canonical ensemble from full diagonalization of every momentum sector.
//!
//! Each eigenstate contributes its energy, its diagonal expectations of the
//! registered observables and its reduced density matrix on `l_max` sites.
//! Sectors `k` and `L - k` are complex conjugates of each other (the
//! Hamiltonian is real), so only `k <= L/2` is diagonalized and the
//! remaining sectors enter through a multiplicity of 2 with the real part of
//! the density matrix.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_sector_basis, RingGeometry, SectorSpec, SymmetryBasis};
use crate::error::{Error, Result};
use crate::hamiltonian::{apply_string_accumulate, build_dense_hamiltonian, HamiltonianParams};
use crate::linalg::{dot, hermitian_eigen};
use crate::observables::{
    entanglement_entropy, partial_trace_full, ObservableKind, ObservableSpec, ReducedDensityMatrix,
};
use crate::pauli::{rotate, PauliString};

/// Default diagonalization size limit.
pub const DEFAULT_MAX_SITES: usize = 16;

const SPECTRUM_MAGIC: &[u8; 4] = b"THSP";
const SPECTRUM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalOptions {
    /// Cluster size of the stored per-eigenstate density matrices (0 disables them).
    pub l_max: usize,
    /// Diagonalize only `k <= L/2` and weight conjugate pairs by 2.
    pub pair_momenta: bool,
    pub max_sites: usize,
}

impl Default for ThermalOptions {
    fn default() -> Self {
        Self { l_max: 3, pair_momenta: true, max_sites: DEFAULT_MAX_SITES }
    }
}

/// Eigenvalues of one momentum sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSpectrum {
    pub momentum: usize,
    pub multiplicity: f64,
    pub energies: Vec<f64>,
}

/// Spectrum plus per-eigenstate diagonal data; backs every thermal average.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    sites: usize,
    params: HamiltonianParams,
    l_max: usize,
    sectors: Vec<SectorSpectrum>,
    energies: Vec<f64>,
    multiplicity: Vec<f64>,
    observables: Vec<String>,
    /// `columns[o][n]`: raw diagonal expectation of observable `o` in eigenstate `n`.
    columns: Vec<Vec<f64>>,
    /// Row-major `ρ_{l_max}` blocks, one per eigenstate.
    rdms: Vec<Complex64>,
}

/// Thermal-table observables: everything measurable from one eigenstate.
fn tabulated(specs: &[ObservableSpec], len: usize, l_max: usize) -> Result<Vec<ObservableSpec>> {
    let mut out = Vec::new();
    for s in specs {
        match s.kind() {
            ObservableKind::PauliAvg { .. } | ObservableKind::EnergyCorrelator(_) => {
                if s.extent() > len {
                    return Err(Error::Usage(format!("{} does not fit on a {len}-site ring", s.id())));
                }
                if !out.contains(s) {
                    out.push(s.clone());
                }
            }
            ObservableKind::Entropy(l) if *l <= l_max => {}
            ObservableKind::MutualInformation(l, r) if l + r <= l_max => {}
            ObservableKind::Entropy(_) | ObservableKind::MutualInformation(..) => {
                return Err(Error::Usage(format!("{} needs density matrices beyond l_max = {l_max}", s.id())));
            }
            ObservableKind::Fidelity => {
                return Err(Error::Usage("fidelity has no thermal counterpart".into()));
            }
        }
    }
    Ok(out)
}

/// Default registered set: single-site and nearest-neighbour Pauli averages and all correlators.
pub fn default_thermal_observables(len: usize) -> Vec<ObservableSpec> {
    let mut out: Vec<ObservableSpec> =
        ["sx", "sy", "sz", "sxsx01", "szsz01"].iter().map(|s| s.parse().unwrap()).collect();
    out.extend((0..=len / 2).map(ObservableSpec::correlator));
    out
}

/// Per-sector expansion map: full bitstring -> (sector index, `<s|a>`).
fn expansion_map(basis: &SymmetryBasis) -> Vec<Option<(u32, Complex64)>> {
    (0..1u32 << basis.sites()).map(|s| basis.lookup(s).map(|(a, ch)| (a as u32, ch / basis.norms()[a]))).collect()
}

struct EigenRow {
    values: Vec<f64>,
    rdm: Vec<Complex64>,
}

fn pauli_expectation(p: &PauliString, psi: &[Complex64]) -> f64 {
    let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
    apply_string_accumulate(p, Complex64::new(1.0, 0.0), psi, &mut out);
    dot(psi, &out).re
}

/// `<ψ|T^r χ>` with `(T^r χ)(rotate(s, r)) = χ(s)`.
fn shifted_overlap(chi: &[Complex64], r: usize, len: usize) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (s, c) in chi.iter().enumerate() {
        acc += chi[rotate(s as u32, r, len) as usize].conj() * c;
    }
    acc
}

fn eigen_row(
    psi: &[Complex64],
    len: usize,
    params: HamiltonianParams,
    specs: &[ObservableSpec],
    l_max: usize,
    conjugate_pair: bool,
) -> Result<EigenRow> {
    let rdm = if l_max > 0 {
        let rho = partial_trace_full(psi, len, l_max)?;
        if conjugate_pair { rho.real_part() } else { rho }.data().to_vec()
    } else {
        Vec::new()
    };
    // H_0 ψ and the translation eigenvalue, shared by every correlator
    let needs_chi = specs.iter().any(|s| matches!(s.kind(), ObservableKind::EnergyCorrelator(_)));
    let (chi, lambda) = if needs_chi {
        let bond = params.bond(0, len);
        let mut chi = vec![Complex64::new(0.0, 0.0); psi.len()];
        for (p, c) in bond.terms() {
            apply_string_accumulate(p, *c, psi, &mut chi);
        }
        (chi, shifted_overlap(psi, 1, len))
    } else {
        (Vec::new(), Complex64::new(1.0, 0.0))
    };
    let mut values = Vec::with_capacity(specs.len());
    for spec in specs {
        let v = match spec.kind() {
            ObservableKind::PauliAvg { letters, offsets } => {
                let p = PauliString::from_letters(letters, offsets)
                    .ok_or_else(|| Error::Config(format!("bad Pauli observable {}", spec.id())))?;
                // an odd number of Y flips sign under conjugation, so the pair cancels
                if conjugate_pair && p.y_count() % 2 == 1 {
                    0.0
                } else {
                    pauli_expectation(&p, psi)
                }
            }
            // <ψ|H_0 H_r|ψ> = conj(λ)^r <χ|T^r χ>; the real part is the Hermitian part
            ObservableKind::EnergyCorrelator(r) => (lambda.conj().powu(*r as u32) * shifted_overlap(&chi, *r, len)).re,
            _ => unreachable!("filtered by tabulated()"),
        };
        values.push(v);
    }
    Ok(EigenRow { values, rdm })
}

/// Diagonalizes every momentum sector and tabulates eigenstate data.
pub fn full_diagonalize(
    geometry: RingGeometry,
    params: HamiltonianParams,
    registered: &[ObservableSpec],
    options: &ThermalOptions,
) -> Result<SpectrumTable> {
    let len = geometry.sites;
    if len > options.max_sites {
        return Err(Error::Resource(format!("diagonalization at L = {len} exceeds the limit {}", options.max_sites)));
    }
    if options.l_max > len {
        return Err(Error::Usage(format!("l_max {} exceeds L = {len}", options.l_max)));
    }
    let specs = tabulated(registered, len, options.l_max)?;
    let momenta: Vec<(usize, f64)> = if options.pair_momenta {
        (0..=len / 2).map(|k| (k, if k == 0 || 2 * k == len { 1.0 } else { 2.0 })).collect()
    } else {
        (0..len).map(|k| (k, 1.0)).collect()
    };

    let mut sectors = Vec::new();
    let mut energies = Vec::new();
    let mut multiplicity = Vec::new();
    let mut columns = vec![Vec::new(); specs.len()];
    let mut rdms = Vec::new();
    for (k, mult) in momenta {
        let basis = Arc::new(build_sector_basis(geometry, SectorSpec::momentum(k))?);
        let eig = hermitian_eigen(&build_dense_hamiltonian(&basis, params)?)?;
        let map = expansion_map(&basis);
        let paired = mult == 2.0;
        let rows: Vec<Result<EigenRow>> = (0..basis.dim())
            .into_par_iter()
            .map(|j| {
                let col = eig.vectors.col(j);
                let psi: Vec<Complex64> = map
                    .iter()
                    .map(|e| match e {
                        Some((a, c)) => col[*a as usize] * c,
                        None => Complex64::new(0.0, 0.0),
                    })
                    .collect();
                eigen_row(&psi, len, params, &specs, options.l_max, paired)
            })
            .collect();
        for row in rows {
            let row = row?;
            for (c, v) in columns.iter_mut().zip(row.values) {
                c.push(v);
            }
            rdms.extend(row.rdm);
        }
        energies.extend_from_slice(&eig.values);
        multiplicity.extend(std::iter::repeat_n(mult, eig.values.len()));
        sectors.push(SectorSpectrum { momentum: k, multiplicity: mult, energies: eig.values });
    }
    Ok(SpectrumTable {
        sites: len,
        params,
        l_max: options.l_max,
        sectors,
        energies,
        multiplicity,
        observables: specs.iter().map(|s| s.id().to_string()).collect(),
        columns,
        rdms,
    })
}

/// Normalized Boltzmann weights at one `β`.
#[derive(Debug, Clone)]
pub struct Gibbs {
    pub beta: f64,
    pub weights: Vec<f64>,
    pub log_z: f64,
}

/// One point of the canonical curve (per-site quantities, entropy in bits).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPoint {
    pub beta: f64,
    pub epsilon: f64,
    pub v_tilde: f64,
    pub s_tilde: f64,
    pub log_z_per_site: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self { min: -3.0, max: 3.0, step: 1e-3 }
    }
}

impl BetaGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.max > self.min) {
            return Err(Error::Config("invalid beta grid".into()));
        }
        let n = ((self.max - self.min) / self.step).round() as usize;
        Ok((0..=n).map(|i| self.min + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalCurve {
    pub sites: usize,
    pub points: Vec<ThermalPoint>,
}

impl ThermalCurve {
    /// Linear interpolation of `S̃` in `β` on the grid.
    pub fn entropy_at(&self, beta: f64) -> Result<f64> {
        let p = &self.points;
        if p.is_empty() || beta < p[0].beta || beta > p[p.len() - 1].beta {
            return Err(Error::Domain(format!("β = {beta} outside the curve")));
        }
        let i = p.partition_point(|q| q.beta < beta).min(p.len() - 1).max(1);
        let (a, b) = (p[i - 1], p[i]);
        let w = (beta - a.beta) / (b.beta - a.beta);
        Ok(a.s_tilde + w * (b.s_tilde - a.s_tilde))
    }
}

/// Thermal density matrix on `l` sites with its entropy (bits).
#[derive(Debug, Clone)]
pub struct ThermalRdm {
    pub rho: ReducedDensityMatrix,
    pub entropy: f64,
}

impl SpectrumTable {
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn params(&self) -> HamiltonianParams {
        self.params
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn sectors(&self) -> &[SectorSpectrum] {
        &self.sectors
    }

    pub fn observables(&self) -> &[String] {
        &self.observables
    }

    /// Number of states counted with multiplicity (equals `2^L`).
    pub fn state_count(&self) -> f64 {
        self.multiplicity.iter().sum()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Multiplicity-weighted sum of a registered column.
    pub fn trace(&self, id: &str) -> Result<f64> {
        let c = self.column(id)?;
        Ok(c.iter().zip(&self.multiplicity).map(|(v, m)| v * m).sum())
    }

    fn column(&self, id: &str) -> Result<&[f64]> {
        self.observables
            .iter()
            .position(|o| o == id)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Usage(format!("observable {id} is not registered in the spectrum table")))
    }

    pub fn gibbs(&self, beta: f64) -> Gibbs {
        let shift = self.energies.iter().map(|&e| -beta * e).fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> =
            self.energies.iter().zip(&self.multiplicity).map(|(&e, &m)| m * (-beta * e - shift).exp()).collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        Gibbs { beta, weights, log_z: z.ln() + shift }
    }

    /// `<(H/L)^m>` for `m = 1..=3`.
    fn energy_moments(&self, g: &Gibbs) -> [f64; 3] {
        let l = self.sites as f64;
        let mut m = [0.0; 3];
        for (w, e) in g.weights.iter().zip(&self.energies) {
            let h = e / l;
            m[0] += w * h;
            m[1] += w * h * h;
            m[2] += w * h * h * h;
        }
        m
    }

    pub fn point(&self, beta: f64) -> ThermalPoint {
        let g = self.gibbs(beta);
        let l = self.sites as f64;
        let mut e = 0.0;
        for (w, en) in g.weights.iter().zip(&self.energies) {
            e += w * en;
        }
        let mut var = 0.0;
        for (w, en) in g.weights.iter().zip(&self.energies) {
            var += w * (en - e) * (en - e);
        }
        ThermalPoint {
            beta,
            epsilon: e / l,
            v_tilde: var / l,
            s_tilde: (g.log_z + beta * e) / std::f64::consts::LN_2,
            log_z_per_site: g.log_z / l,
        }
    }

    pub fn curve(&self, grid: &BetaGrid) -> Result<ThermalCurve> {
        let points = grid.points()?.into_par_iter().map(|b| self.point(b)).collect();
        Ok(ThermalCurve { sites: self.sites, points })
    }

    /// Gibbs average of the raw registered column.
    pub fn raw_expectation(&self, id: &str, beta: f64) -> Result<f64> {
        let c = self.column(id)?;
        let g = self.gibbs(beta);
        Ok(g.weights.iter().zip(c).map(|(w, v)| w * v).sum())
    }

    /// `Õ(β)`; correlators are connected with `ε(β)`.
    pub fn thermal_expectation(&self, spec: &ObservableSpec, beta: f64) -> Result<f64> {
        match spec.kind() {
            ObservableKind::EnergyCorrelator(_) => {
                let eps = self.point(beta).epsilon;
                Ok(self.raw_expectation(spec.id(), beta)? - eps * eps)
            }
            ObservableKind::Entropy(l) => Ok(self.thermal_rdm(beta, *l)?.entropy),
            ObservableKind::MutualInformation(l, r) => self.thermal_mutual_information(beta, *l, *r),
            _ => self.raw_expectation(spec.id(), beta),
        }
    }

    pub fn thermal_rdm(&self, beta: f64, l: usize) -> Result<ThermalRdm> {
        if l == 0 || l > self.l_max {
            return Err(Error::Usage(format!("cluster size {l} beyond cached l_max = {}", self.l_max)));
        }
        let g = self.gibbs(beta);
        let block = 1usize << (2 * self.l_max);
        let mut acc = vec![Complex64::new(0.0, 0.0); block];
        for (n, w) in g.weights.iter().enumerate() {
            let src = &self.rdms[n * block..(n + 1) * block];
            for (a, b) in acc.iter_mut().zip(src) {
                *a += b * w;
            }
        }
        let rho = ReducedDensityMatrix::from_row_major(self.l_max, acc)?.trace_high(self.l_max - l);
        let entropy = entanglement_entropy(&rho)?;
        Ok(ThermalRdm { rho, entropy })
    }

    /// `S̃_l + S̃_r - S̃_{l+r}` for adjacent clusters.
    pub fn thermal_mutual_information(&self, beta: f64, l: usize, r: usize) -> Result<f64> {
        let joint = self.thermal_rdm(beta, l + r)?;
        let s_l = entanglement_entropy(&joint.rho.trace_high(r))?;
        let s_r = entanglement_entropy(&joint.rho.trace_low(l))?;
        Ok(s_l + s_r - joint.entropy)
    }

    /// `β` with `ε(β) = target`, by safeguarded Newton with `dε/dβ = -ṽ`.
    pub fn solve_beta(&self, target: f64, curve: Option<&ThermalCurve>) -> Result<f64> {
        let l = self.sites as f64;
        let e_min = self.energies.iter().copied().fold(f64::INFINITY, f64::min) / l;
        let e_max = self.energies.iter().copied().fold(f64::NEG_INFINITY, f64::max) / l;
        if !(target > e_min && target < e_max) {
            return Err(Error::Domain(format!(
                "energy density {target} outside the spectrum interior ({e_min}, {e_max})"
            )));
        }
        // bracket: ε decreases with β
        let (mut lo, mut hi) = match curve {
            Some(c) if !c.points.is_empty() => {
                let i = c.points.partition_point(|p| p.epsilon > target);
                match i {
                    0 => (c.points[0].beta - 1.0, c.points[0].beta),
                    n if n == c.points.len() => (c.points[n - 1].beta, c.points[n - 1].beta + 1.0),
                    _ => (c.points[i - 1].beta, c.points[i].beta),
                }
            }
            _ => (-1.0, 1.0),
        };
        while self.point(lo).epsilon < target {
            hi = lo;
            lo -= 2.0 * (hi - lo).abs().max(1.0);
        }
        while self.point(hi).epsilon > target {
            lo = hi;
            hi += 2.0 * (hi - lo).abs().max(1.0);
        }
        let mut beta = if lo <= 0.0 && 0.0 <= hi { 0.0 } else { 0.5 * (lo + hi) };
        for _ in 0..200 {
            let p = self.point(beta);
            let f = p.epsilon - target;
            if f == 0.0 {
                return Ok(beta);
            }
            if f > 0.0 {
                lo = beta;
            } else {
                hi = beta;
            }
            let mut next = beta + f / p.v_tilde;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - beta).abs() <= 1e-15 * beta.abs().max(1.0) {
                return Ok(next);
            }
            beta = next;
            if f.abs() < 1e-14 {
                return Ok(beta);
            }
        }
        let f = self.point(beta).epsilon - target;
        if f.abs() < 1e-10 {
            Ok(beta)
        } else {
            Err(Error::Numerical(format!("β solve stalled with residual {f:e}")))
        }
    }

    /// `∂²_ε Õ` at the `β` matching `epsilon`, from thermal moments of `h = H/L`.
    /// Correlators are differentiated in their raw form `<H_0 H_r>`.
    pub fn thermal_second_derivative(&self, spec: &ObservableSpec, epsilon: f64) -> Result<f64> {
        let beta = self.solve_beta(epsilon, None)?;
        self.second_derivative_at(spec, beta)
    }

    pub fn second_derivative_at(&self, spec: &ObservableSpec, beta: f64) -> Result<f64> {
        let g = self.gibbs(beta);
        let [m1, m2, m3] = self.energy_moments(&g);
        let l = self.sites as f64;
        let v_tilde = l * (m2 - m1 * m1);
        if !(v_tilde > 1e-12) {
            return Err(Error::Domain(format!("thermal variance {v_tilde:e} vanishes at β = {beta}")));
        }
        let (o, ho, h2o) = match spec.kind() {
            ObservableKind::PauliAvg { .. } | ObservableKind::EnergyCorrelator(_) => {
                let c = self.column(spec.id())?;
                let mut acc = [0.0; 3];
                for ((w, e), v) in g.weights.iter().zip(&self.energies).zip(c) {
                    let h = e / l;
                    acc[0] += w * v;
                    acc[1] += w * h * v;
                    acc[2] += w * h * h * v;
                }
                (acc[0], acc[1], acc[2])
            }
            _ => return Err(Error::Usage(format!("no second derivative for {}", spec.id()))),
        };
        Ok(second_derivative_formula(l / v_tilde, m1, m3, o, ho, h2o))
    }
}

/// `(L/ṽ)³(<h³>-ε³)(ε<O>-<hO>) + (L/ṽ)²(<h²O>+ε<hO>-2ε²<O>) - (L/ṽ)<O>`.
fn second_derivative_formula(k: f64, eps: f64, h3: f64, o: f64, ho: f64, h2o: f64) -> f64 {
    k.powi(3) * (h3 - eps.powi(3)) * (eps * o - ho) + k * k * (h2o + eps * ho - 2.0 * eps * eps * o) - k * o
}

impl SpectrumTable {
    /// Binary cache: magic, version, `L`, params, `l_max`, sector spectra,
    /// observable names, columns and density matrices, little endian.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SPECTRUM_MAGIC)?;
        w.write_u32::<LittleEndian>(SPECTRUM_VERSION)?;
        w.write_u16::<LittleEndian>(self.sites as u16)?;
        w.write_f64::<LittleEndian>(self.params.h_x)?;
        w.write_f64::<LittleEndian>(self.params.h_z)?;
        w.write_u16::<LittleEndian>(self.l_max as u16)?;
        w.write_u32::<LittleEndian>(self.sectors.len() as u32)?;
        for s in &self.sectors {
            w.write_u16::<LittleEndian>(s.momentum as u16)?;
            w.write_f64::<LittleEndian>(s.multiplicity)?;
            w.write_u64::<LittleEndian>(s.energies.len() as u64)?;
            for e in &s.energies {
                w.write_f64::<LittleEndian>(*e)?;
            }
        }
        w.write_u32::<LittleEndian>(self.observables.len() as u32)?;
        for (name, col) in self.observables.iter().zip(&self.columns) {
            w.write_u16::<LittleEndian>(name.len() as u16)?;
            w.write_all(name.as_bytes())?;
            for v in col {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.write_u64::<LittleEndian>(self.rdms.len() as u64)?;
        for c in &self.rdms {
            w.write_f64::<LittleEndian>(c.re)?;
            w.write_f64::<LittleEndian>(c.im)?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<SpectrumTable> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SPECTRUM_MAGIC || r.read_u32::<LittleEndian>()? != SPECTRUM_VERSION {
            return Err(Error::Format("not a spectrum cache of this version".into()));
        }
        let sites = r.read_u16::<LittleEndian>()? as usize;
        let params = HamiltonianParams::new(r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?)?;
        let l_max = r.read_u16::<LittleEndian>()? as usize;
        let n_sectors = r.read_u32::<LittleEndian>()? as usize;
        let mut sectors = Vec::with_capacity(n_sectors);
        let mut energies = Vec::new();
        let mut multiplicity = Vec::new();
        for _ in 0..n_sectors {
            let momentum = r.read_u16::<LittleEndian>()? as usize;
            let mult = r.read_f64::<LittleEndian>()?;
            let n = r.read_u64::<LittleEndian>()? as usize;
            let mut es = Vec::with_capacity(n);
            for _ in 0..n {
                es.push(r.read_f64::<LittleEndian>()?);
            }
            energies.extend_from_slice(&es);
            multiplicity.extend(std::iter::repeat_n(mult, n));
            sectors.push(SectorSpectrum { momentum, multiplicity: mult, energies: es });
        }
        let n_obs = r.read_u32::<LittleEndian>()? as usize;
        let mut observables = Vec::with_capacity(n_obs);
        let mut columns = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            let n = r.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name)?;
            observables.push(String::from_utf8(name).map_err(|_| Error::Format("bad observable name".into()))?);
            let mut col = Vec::with_capacity(energies.len());
            for _ in 0..energies.len() {
                col.push(r.read_f64::<LittleEndian>()?);
            }
            columns.push(col);
        }
        let n_rdm = r.read_u64::<LittleEndian>()? as usize;
        if n_rdm != energies.len() * if l_max > 0 { 1 << (2 * l_max) } else { 0 } {
            return Err(Error::Format("density matrix block has the wrong size".into()));
        }
        let mut rdms = Vec::with_capacity(n_rdm);
        for _ in 0..n_rdm {
            let re = r.read_f64::<LittleEndian>()?;
            let im = r.read_f64::<LittleEndian>()?;
            rdms.push(Complex64::new(re, im));
        }
        Ok(SpectrumTable { sites, params, l_max, sectors, energies, multiplicity, observables, columns, rdms })
    }

    /// Cache file name keyed by size, fields, `l_max` and format version.
    pub fn cache_name(sites: usize, params: HamiltonianParams, l_max: usize) -> String {
        format!(
            "spectrum_L{sites}_hx{:016x}_hz{:016x}_l{l_max}_v{SPECTRUM_VERSION}.bin",
            params.h_x.to_bits(),
            params.h_z.to_bits()
        )
    }

    /// Loads a cached table covering `registered`, or builds and stores one.
    pub fn load_or_build(
        dir: Option<&Path>,
        geometry: RingGeometry,
        params: HamiltonianParams,
        registered: &[ObservableSpec],
        options: &ThermalOptions,
    ) -> Result<SpectrumTable> {
        let needed = tabulated(registered, geometry.sites, options.l_max)?;
        if let Some(dir) = dir {
            let path = dir.join(Self::cache_name(geometry.sites, params, options.l_max));
            if path.exists() {
                if let Ok(t) = Self::read_cache(BufReader::new(fs::File::open(&path)?)) {
                    if needed.iter().all(|s| t.observables.iter().any(|o| o == s.id())) {
                        return Ok(t);
                    }
                }
            }
            let table = full_diagonalize(geometry, params, registered, options)?;
            fs::create_dir_all(dir)?;
            let tmp = path.with_extension("tmp");
            {
                let mut w = BufWriter::new(fs::File::create(&tmp)?);
                table.write_cache(&mut w)?;
                w.flush()?;
            }
            fs::rename(tmp, &path)?;
            return Ok(table);
        }
        full_diagonalize(geometry, params, registered, options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{full_space_dense, SectorOperator};
    use crate::linalg::hermitian_eigenvalues;
    use crate::observables::bond_product;
    use approx::assert_abs_diff_eq;

    const H: HamiltonianParams = HamiltonianParams::BENCHMARK;

    fn table(l: usize, pair: bool) -> SpectrumTable {
        let opts = ThermalOptions { pair_momenta: pair, ..ThermalOptions::default() };
        full_diagonalize(RingGeometry::new(l).unwrap(), H, &default_thermal_observables(l), &opts).unwrap()
    }

    #[test]
    fn spectrum_matches_brute_force() {
        let t = table(4, false);
        let mut got = t.energies().to_vec();
        got.sort_by(|a, b| a.total_cmp(b));
        let want = hermitian_eigenvalues(&full_space_dense(&H.total(4), 4).unwrap()).unwrap();
        assert_eq!(got.len(), 16);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_and_traces() {
        let t = table(8, true);
        assert_eq!(t.state_count(), 256.0);
        assert_abs_diff_eq!(t.trace("sz").unwrap(), 0.0, epsilon = 1e-10);
        for p in t.sectors() {
            assert!(p.energies.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn paired_momenta_agree_with_full_set() {
        let a = table(8, true);
        let b = table(8, false);
        for beta in [-0.7, 0.0, 0.3, 1.1] {
            for id in ["sx", "sy", "sz", "szsz01", "C0", "C1", "C3"] {
                assert_abs_diff_eq!(
                    a.raw_expectation(id, beta).unwrap(),
                    b.raw_expectation(id, beta).unwrap(),
                    epsilon = 1e-12
                );
            }
            let (ra, rb) = (a.thermal_rdm(beta, 3).unwrap(), b.thermal_rdm(beta, 3).unwrap());
            assert!(crate::linalg::max_abs_diff(ra.rho.data(), rb.rho.data()) < 1e-12);
        }
    }

    #[test]
    fn eigenstate_correlators_match_sector_kernel() {
        // k = 2 eigenstates at L = 8 against the translation-averaged operator
        let l = 8;
        let basis = Arc::new(build_sector_basis(RingGeometry::new(l).unwrap(), SectorSpec::momentum(2)).unwrap());
        let eig = hermitian_eigen(&build_dense_hamiltonian(&basis, H).unwrap()).unwrap();
        let map = expansion_map(&basis);
        let specs: Vec<ObservableSpec> = (0..=4).map(ObservableSpec::correlator).collect();
        for j in [0, 5, basis.dim() - 1] {
            let v = eig.vector(j);
            let psi: Vec<Complex64> =
                map.iter().map(|e| e.map_or(Complex64::new(0.0, 0.0), |(a, c)| v[a as usize] * c)).collect();
            let row = eigen_row(&psi, l, H, &specs, 0, false).unwrap();
            for r in 0..=4 {
                let op = SectorOperator::translation_averaged(basis.clone(), &bond_product(H, r, l)).unwrap();
                assert_abs_diff_eq!(row.values[r], op.expectation_slice(&v), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn infinite_temperature_anchors() {
        let t = table(8, true);
        let p = t.point(0.0);
        assert_abs_diff_eq!(p.v_tilde, 1.0 + H.h_x * H.h_x + H.h_z * H.h_z, epsilon = 1e-10);
        assert_abs_diff_eq!(p.s_tilde, 8.0, epsilon = 1e-12);
        assert!(t.solve_beta(0.0, None).unwrap().abs() < 1e-12);
        for r in 2..=4 {
            assert_abs_diff_eq!(
                t.thermal_expectation(&ObservableSpec::correlator(r), 0.0).unwrap(),
                0.0,
                epsilon = 1e-12
            );
        }
        let rho = t.thermal_rdm(0.0, 2).unwrap();
        assert_abs_diff_eq!(rho.entropy, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.thermal_mutual_information(0.0, 1, 1).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn thermal_rdm_matches_full_space_gibbs_state() {
        let l = 8;
        let t = table(l, true);
        let full = hermitian_eigen(&full_space_dense(&H.total(l), l).unwrap()).unwrap();
        for beta in [-0.44, 0.2] {
            let z: f64 = full.values.iter().map(|e| (-beta * e).exp()).sum();
            let mut rho = ReducedDensityMatrix::zeros(3);
            for (j, e) in full.values.iter().enumerate() {
                let part = partial_trace_full(&full.vector(j), l, 3).unwrap();
                rho.add_scaled((-beta * e).exp() / z, &part);
            }
            let got = t.thermal_rdm(beta, 3).unwrap();
            assert!(crate::linalg::max_abs_diff(got.rho.data(), rho.data()) < 1e-12);
            let mi = 2.0 * entanglement_entropy(&rho.trace_high(2)).unwrap()
                - entanglement_entropy(&rho.trace_high(1)).unwrap();
            assert_abs_diff_eq!(t.thermal_mutual_information(beta, 1, 1).unwrap(), mi, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_has_zero_curvature() {
        let t = table(8, true);
        let g = t.gibbs(0.4);
        let [m1, m2, m3] = t.energy_moments(&g);
        let k = 8.0 / (8.0 * (m2 - m1 * m1));
        assert_abs_diff_eq!(second_derivative_formula(k, m1, m3, 1.0, m1, m2), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn correlators_sum_to_variance() {
        let l = 10;
        let t = table(l, true);
        for beta in [-1.0, -0.2, 0.0, 0.4, 1.5] {
            let total: f64 = (0..=l / 2)
                .map(|r| {
                    crate::observables::correlator_weight(r, l)
                        * t.thermal_expectation(&ObservableSpec::correlator(r), beta).unwrap()
                })
                .sum();
            assert_abs_diff_eq!(total, t.point(beta).v_tilde, epsilon = 1e-10);
        }
    }

    #[test]
    fn curve_monotone_and_entropy_by_direct_sum() {
        let t = table(8, true);
        let c = t.curve(&BetaGrid { min: -2.0, max: 2.0, step: 0.01 }).unwrap();
        assert!(c.points.windows(2).all(|w| w[1].epsilon < w[0].epsilon));
        assert!(c.points.iter().all(|p| p.v_tilde > 0.0));
        // independent Boltzmann sum over the full spectrum
        let all = hermitian_eigenvalues(&full_space_dense(&H.total(8), 8).unwrap()).unwrap();
        let beta = 0.37;
        let z: f64 = all.iter().map(|e| (-beta * e).exp()).sum();
        let s: f64 = all
            .iter()
            .map(|e| {
                let p = (-beta * e).exp() / z;
                -p * p.log2()
            })
            .sum();
        assert_abs_diff_eq!(t.point(beta).s_tilde, s, epsilon = 1e-10);
        assert!(t.point(40.0).s_tilde < 0.01);
    }

    #[test]
    fn beta_solve_round_trip_and_domain() {
        let t = table(8, true);
        let c = t.curve(&BetaGrid::default()).unwrap();
        for beta in [-0.9, -0.2044, 0.3, 1.7] {
            let eps = t.point(beta).epsilon;
            let got = t.solve_beta(eps, Some(&c)).unwrap();
            assert!((t.point(got).epsilon - eps).abs() < 1e-10);
            assert_abs_diff_eq!(got, beta, epsilon = 1e-8);
        }
        assert!(matches!(t.solve_beta(5.0, Some(&c)), Err(Error::Domain(_))));
    }

    /// `L²κ(H,H,O)/V² - L²Cov(H,O)κ₃(H)/V³` with `V = Var(H)`.
    fn cumulant_form(t: &SpectrumTable, beta: f64, id: &str) -> f64 {
        let g = t.gibbs(beta);
        let o = t.column(id).unwrap();
        let avg = |f: &dyn Fn(usize) -> f64| -> f64 { (0..o.len()).map(|n| g.weights[n] * f(n)).sum() };
        let e = &t.energies;
        let mh = avg(&|n| e[n]);
        let mo = avg(&|n| o[n]);
        let var = avg(&|n| (e[n] - mh).powi(2));
        let k3 = avg(&|n| (e[n] - mh).powi(3));
        let cov = avg(&|n| (e[n] - mh) * (o[n] - mo));
        let khho = avg(&|n| (e[n] - mh).powi(2) * (o[n] - mo));
        let l2 = (t.sites as f64).powi(2);
        l2 * khho / var.powi(2) - l2 * cov * k3 / var.powi(3)
    }

    #[test]
    fn correlator_second_derivatives_sum_to_energy_curvature() {
        let t = table(8, true);
        let sum: f64 = (0..=4).map(|r| crate::observables::correlator_weight(r, 8)).sum();
        assert_eq!(sum, 8.0);
        // Σ_r w_r <H_0 H_r> = <H²>/L, whose second ε-derivative is 2L + ∂²ṽ
        for beta in [-0.3, 0.0, 0.6] {
            let total: f64 = (0..=4)
                .map(|r| {
                    crate::observables::correlator_weight(r, 8)
                        * t.second_derivative_at(&ObservableSpec::correlator(r), beta).unwrap()
                })
                .sum();
            let d = 1e-3;
            let p: Vec<ThermalPoint> = [-d, 0.0, d].iter().map(|x| t.point(beta + x)).collect();
            let (h1, h2) = (p[1].epsilon - p[0].epsilon, p[2].epsilon - p[1].epsilon);
            let d2v =
                2.0 * (h1 * (p[2].v_tilde - p[1].v_tilde) - h2 * (p[1].v_tilde - p[0].v_tilde)) / (h1 * h2 * (h1 + h2));
            assert!((total - (16.0 + d2v)).abs() < 1e-3 * total.abs(), "{total} vs {}", 16.0 + d2v);
        }
    }

    #[test]
    fn second_derivative_matches_cumulants_and_differences() {
        let t = table(10, true);
        let fd_second = |beta: f64, spec: &ObservableSpec| {
            // centered second difference of Õ_raw against ε on a small β stencil
            let d = 1e-3;
            let (pa, pb, pc) = (t.point(beta - d), t.point(beta), t.point(beta + d));
            let (oa, ob, oc) = (
                t.raw_expectation(spec.id(), beta - d).unwrap(),
                t.raw_expectation(spec.id(), beta).unwrap(),
                t.raw_expectation(spec.id(), beta + d).unwrap(),
            );
            let (h1, h2) = (pb.epsilon - pa.epsilon, pc.epsilon - pb.epsilon);
            2.0 * (h1 * (oc - ob) - h2 * (ob - oa)) / (h1 * h2 * (h1 + h2))
        };
        for beta in [-0.5, 0.0, 0.5] {
            for id in ["C2", "sx", "szsz01"] {
                let spec: ObservableSpec = id.parse().unwrap();
                let exact = t.second_derivative_at(&spec, beta).unwrap();
                let fd = fd_second(beta, &spec);
                let cm = cumulant_form(&t, beta, id);
                assert!((exact - cm).abs() < 1e-9 * exact.abs().max(1.0), "{id} β={beta}: {exact} vs {cm}");
                assert!((exact - fd).abs() < 1e-4 * exact.abs().max(1e-2), "{id} β={beta}: {exact} vs {fd}");
            }
        }
    }

    #[test]
    fn cache_round_trip() {
        let t = table(6, true);
        let mut buf = Vec::new();
        t.write_cache(&mut buf).unwrap();
        let back = SpectrumTable::read_cache(buf.as_slice()).unwrap();
        assert_eq!(back.energies(), t.energies());
        assert_eq!(back.observables(), t.observables());
        assert_eq!(back.raw_expectation("C1", 0.3).unwrap(), t.raw_expectation("C1", 0.3).unwrap());
    }

    #[test]
    fn guards() {
        let opts = ThermalOptions { max_sites: 6, ..ThermalOptions::default() };
        assert!(matches!(full_diagonalize(RingGeometry::new(8).unwrap(), H, &[], &opts), Err(Error::Resource(_))));
        let t = table(6, true);
        assert!(t.thermal_rdm(0.0, 4).is_err());
        assert!(t.raw_expectation("sxsx03", 0.0).is_err());
    }
}
