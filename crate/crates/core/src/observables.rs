//! Measurements on translation-invariant sector states: averaged Pauli
//! strings, bond-energy correlators, reduced density matrices, entropies and
//! fidelity, plus Page baselines for random states.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{SectorVector, SymmetryBasis};
use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianParams, SectorOperator};
use crate::linalg::{dot, hermitian_eigen_rows};
use crate::pauli::{PauliString, PauliSum};

/// Largest cluster measured by Pauli tomography; larger clusters use the partial trace.
pub const TOMOGRAPHY_MAX_SITES: usize = 3;

/// Largest ring expanded to the full `2^L` space for partial traces.
pub const EXPANSION_MAX_SITES: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservableKind {
    /// Translation average of a Pauli string with `letters[i]` on site `offsets[i]`.
    PauliAvg { letters: String, offsets: Vec<usize> },
    /// Connected bond-energy correlator at distance `r`.
    EnergyCorrelator(usize),
    /// Von Neumann entropy (bits) of a contiguous cluster.
    Entropy(usize),
    /// `S_l + S_r - S_{l+r}` for adjacent clusters.
    MutualInformation(usize, usize),
    /// `|<Ψ(0)|Ψ(t)>|²`.
    Fidelity,
}

/// A named observable; the identifier is also the CSV column name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObservableSpec {
    kind: ObservableKind,
    id: String,
}

impl ObservableSpec {
    pub fn kind(&self) -> &ObservableKind {
        &self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pauli(letters: &str, offsets: &[usize]) -> Result<Self> {
        let letters = letters.to_ascii_lowercase();
        if letters.is_empty() || letters.len() != offsets.len() {
            return Err(Error::Config("Pauli observable needs one offset per letter".into()));
        }
        if letters.chars().any(|c| !"xyz".contains(c)) {
            return Err(Error::Config(format!("bad Pauli letters {letters:?}")));
        }
        let mut sorted = offsets.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != offsets.len() || offsets.iter().any(|&o| o > 9) {
            return Err(Error::Config("Pauli offsets must be distinct digits".into()));
        }
        let id = if letters.len() == 1 && offsets[0] == 0 {
            format!("s{letters}")
        } else {
            let mut id = String::new();
            for c in letters.chars() {
                id.push('s');
                id.push(c);
            }
            for o in offsets {
                id.push_str(&o.to_string());
            }
            id
        };
        Ok(Self { kind: ObservableKind::PauliAvg { letters, offsets: offsets.to_vec() }, id })
    }

    pub fn correlator(r: usize) -> Self {
        Self { kind: ObservableKind::EnergyCorrelator(r), id: format!("C{r}") }
    }

    pub fn entropy(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::Config("cluster size must be at least 1".into()));
        }
        Ok(Self { kind: ObservableKind::Entropy(l), id: format!("S{l}") })
    }

    pub fn mutual_information(l: usize, r: usize) -> Result<Self> {
        if l == 0 || r == 0 {
            return Err(Error::Config("cluster sizes must be at least 1".into()));
        }
        Ok(Self { kind: ObservableKind::MutualInformation(l, r), id: format!("I_{l}_{r}") })
    }

    pub fn fidelity() -> Self {
        Self { kind: ObservableKind::Fidelity, id: "fid".into() }
    }

    /// Sites touched relative to the cluster origin (for ring-size checks).
    pub fn extent(&self) -> usize {
        match &self.kind {
            ObservableKind::PauliAvg { offsets, .. } => offsets.iter().max().map_or(0, |m| m + 1),
            ObservableKind::EnergyCorrelator(r) => r + 2,
            ObservableKind::Entropy(l) => *l,
            ObservableKind::MutualInformation(l, r) => l + r,
            ObservableKind::Fidelity => 0,
        }
    }

    /// Local Hermitian operator whose translation average is measured, if any.
    pub fn local_operator(&self, params: HamiltonianParams, len: usize) -> Result<Option<PauliSum>> {
        if self.extent() > len {
            return Err(Error::Usage(format!("{} does not fit on a {len}-site ring", self.id)));
        }
        Ok(match &self.kind {
            ObservableKind::PauliAvg { letters, offsets } => {
                let p = PauliString::from_letters(letters, offsets)
                    .ok_or_else(|| Error::Config(format!("bad Pauli observable {}", self.id)))?;
                Some(PauliSum::from_string(1.0, p))
            }
            ObservableKind::EnergyCorrelator(r) => Some(bond_product(params, *r, len)),
            _ => None,
        })
    }

    /// Default trajectory schedule for an `len`-site ring.
    pub fn default_schedule(len: usize) -> Vec<ObservableSpec> {
        let mut out = vec![
            Self::pauli("x", &[0]).unwrap(),
            Self::pauli("z", &[0]).unwrap(),
            Self::pauli("xx", &[0, 1]).unwrap(),
            Self::pauli("zz", &[0, 1]).unwrap(),
        ];
        out.extend((0..=len / 2).map(Self::correlator));
        out.extend((1..=3.min(len / 2)).map(|l| Self::entropy(l).unwrap()));
        if len >= 2 {
            out.push(Self::mutual_information(1, 1).unwrap());
        }
        out.push(Self::fidelity());
        out
    }
}

/// Hermitian part of `H_0 H_r`.
pub fn bond_product(params: HamiltonianParams, r: usize, len: usize) -> PauliSum {
    params.bond(0, len).mul(&params.bond(r % len, len)).hermitian_part()
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown observable {s:?}"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        if s == "fid" {
            return Ok(Self::fidelity());
        }
        if let Some(rest) = s.strip_prefix("I_") {
            let (l, r) = rest.split_once('_').ok_or_else(bad)?;
            return Self::mutual_information(num(l)?, num(r)?);
        }
        if let Some(rest) = s.strip_prefix('C') {
            return Ok(Self::correlator(num(rest)?));
        }
        if let Some(rest) = s.strip_prefix('S') {
            return Self::entropy(num(rest)?);
        }
        // s<a> or s<a>s<b>...<offsets>
        let mut letters = String::new();
        let mut rest = s;
        while let Some(tail) = rest.strip_prefix('s') {
            let c = tail.chars().next().ok_or_else(bad)?;
            if !"xyz".contains(c) {
                return Err(bad());
            }
            letters.push(c);
            rest = &tail[1..];
        }
        if letters.is_empty() {
            return Err(bad());
        }
        let offsets: Vec<usize> = if rest.is_empty() && letters.len() == 1 {
            vec![0]
        } else {
            rest.chars().map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(bad)).collect::<Result<_>>()?
        };
        let spec = Self::pauli(&letters, &offsets)?;
        if spec.id != s {
            return Err(bad());
        }
        Ok(spec)
    }
}

impl TryFrom<String> for ObservableSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ObservableSpec> for String {
    fn from(s: ObservableSpec) -> String {
        s.id
    }
}

/// Density matrix of `l` contiguous sites; row index bit `m` is site `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDensityMatrix {
    l: usize,
    data: Vec<Complex64>,
}

impl ReducedDensityMatrix {
    pub fn from_row_major(l: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != 1 << (2 * l) {
            return Err(Error::Usage(format!("{} entries for a {l}-site density matrix", data.len())));
        }
        Ok(Self { l, data })
    }

    pub fn maximally_mixed(l: usize) -> Self {
        let d = 1 << l;
        let mut data = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            data[i * d + i] = Complex64::new(1.0 / d as f64, 0.0);
        }
        Self { l, data }
    }

    pub fn sites(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        1 << self.l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim() + j]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        let rows: Vec<Vec<Complex64>> = (0..d).map(|i| self.data[i * d..(i + 1) * d].to_vec()).collect();
        Ok(hermitian_eigen_rows(&rows)?.values)
    }

    /// Traces out the highest `drop` sites, keeping sites `0..l-drop`.
    pub fn trace_high(&self, drop: usize) -> Self {
        let keep = self.l - drop;
        let dk = 1usize << keep;
        let d = self.dim();
        let mut out = vec![Complex64::new(0.0, 0.0); dk * dk];
        for high in 0..(1usize << drop) {
            let off = high << keep;
            for i in 0..dk {
                for j in 0..dk {
                    out[i * dk + j] += self.data[(off + i) * d + off + j];
                }
            }
        }
        Self { l: keep, data: out }
    }

    /// Traces out the lowest `drop` sites, keeping sites `drop..l` (relabelled from 0).
    pub fn trace_low(&self, drop: usize) -> Self {
        let keep = self.l - drop;
        let dk = 1usize << keep;
        let d = self.dim();
        let mut out = vec![Complex64::new(0.0, 0.0); dk * dk];
        for low in 0..(1usize << drop) {
            for i in 0..dk {
                for j in 0..dk {
                    out[i * dk + j] += self.data[((i << drop) + low) * d + (j << drop) + low];
                }
            }
        }
        Self { l: keep, data: out }
    }

    /// Weighted accumulation `self += w * other`.
    pub fn add_scaled(&mut self, w: f64, other: &ReducedDensityMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * w;
        }
    }

    /// `(ρ + conj ρ) / 2`.
    pub fn real_part(&self) -> Self {
        Self { l: self.l, data: self.data.iter().map(|c| Complex64::new(c.re, 0.0)).collect() }
    }

    pub fn zeros(l: usize) -> Self {
        Self { l, data: vec![Complex64::new(0.0, 0.0); 1 << (2 * l)] }
    }

    pub fn scaled(&self, w: f64) -> Self {
        Self { l: self.l, data: self.data.iter().map(|c| c * w).collect() }
    }
}

/// Von Neumann entropy in bits; eigenvalues are clipped at 0.
pub fn entanglement_entropy(rho: &ReducedDensityMatrix) -> Result<f64> {
    Ok(entropy_of_spectrum(&rho.eigenvalues()?))
}

pub fn entropy_of_spectrum(values: &[f64]) -> f64 {
    values.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum::<f64>().max(0.0)
}

/// `ρ_l` of sites `0..l` from a full-space vector.
pub fn partial_trace_full(psi: &[Complex64], len: usize, l: usize) -> Result<ReducedDensityMatrix> {
    if psi.len() != 1 << len || l > len {
        return Err(Error::Usage("vector length does not match the ring".into()));
    }
    let d = 1usize << l;
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    for block in psi.chunks_exact(d) {
        for i in 0..d {
            let a = block[i];
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += a * block[j].conj();
            }
        }
    }
    ReducedDensityMatrix::from_row_major(l, out)
}

/// Partial trace of a sector vector after expansion to the full space.
pub fn rdm_partial_trace(v: &SectorVector, l: usize) -> Result<ReducedDensityMatrix> {
    let len = v.basis().sites();
    if len > EXPANSION_MAX_SITES {
        return Err(Error::Resource(format!("full-space expansion at L = {len}")));
    }
    partial_trace_full(&v.expand_full(), len, l)
}

/// Translation-averaged Pauli strings covering one cluster, for tomography.
pub struct Tomography {
    l: usize,
    strings: Vec<(PauliString, SectorOperator)>,
}

impl Tomography {
    pub fn new(basis: Arc<SymmetryBasis>, l: usize) -> Result<Self> {
        if l == 0 || l > TOMOGRAPHY_MAX_SITES || l > basis.sites() {
            return Err(Error::Usage(format!("tomography cluster size {l}")));
        }
        let mask = (1u32 << l) - 1;
        let mut strings = Vec::with_capacity((1 << (2 * l)) - 1);
        for x in 0..=mask {
            for z in 0..=mask {
                if x == 0 && z == 0 {
                    continue;
                }
                let p = PauliString { x, z };
                let op = SectorOperator::translation_averaged(basis.clone(), &PauliSum::from_string(1.0, p))?;
                strings.push((p, op));
            }
        }
        Ok(Self { l, strings })
    }

    pub fn sites(&self) -> usize {
        self.l
    }

    pub fn rdm(&self, v: &[Complex64]) -> Result<ReducedDensityMatrix> {
        let d = 1usize << self.l;
        let w = 1.0 / d as f64;
        let mut data = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            data[i * d + i] = Complex64::new(w, 0.0);
        }
        for (p, op) in &self.strings {
            let e = op.expectation_slice(v) * w;
            for col in 0..d as u32 {
                let (ph, row) = p.apply(col);
                data[row as usize * d + col as usize] += ph * e;
            }
        }
        ReducedDensityMatrix::from_row_major(self.l, data)
    }
}

/// `ρ_l` for a translation-invariant sector state: tomography for small
/// clusters, partial trace otherwise.
pub fn reduced_density_matrix(v: &SectorVector, l: usize) -> Result<ReducedDensityMatrix> {
    if l <= TOMOGRAPHY_MAX_SITES {
        Tomography::new(v.basis().clone(), l)?.rdm(v.amplitudes())
    } else {
        rdm_partial_trace(v, l)
    }
}

/// `S_l + S_r - S_{l+r}` for adjacent clusters (location is immaterial for
/// translation-invariant states).
pub fn mutual_information_from_rdm(rho: &ReducedDensityMatrix, l: usize, r: usize) -> Result<f64> {
    if l + r != rho.sites() {
        return Err(Error::Usage(format!("need a {}-site density matrix", l + r)));
    }
    let s_l = entanglement_entropy(&rho.trace_high(r))?;
    let s_r = entanglement_entropy(&rho.trace_low(l))?;
    Ok(s_l + s_r - entanglement_entropy(rho)?)
}

pub fn mutual_information(v: &SectorVector, l: usize, r: usize) -> Result<f64> {
    mutual_information_from_rdm(&reduced_density_matrix(v, l + r)?, l, r)
}

pub fn fidelity(initial: &SectorVector, current: &SectorVector) -> Result<f64> {
    Ok(initial.inner(current)?.norm_sqr().min(1.0))
}

/// `H_N - H_n` for harmonic numbers.
fn harmonic_difference(big: u64, small: u64) -> f64 {
    const DIRECT: u64 = 1 << 16;
    fn asymptotic(n: f64) -> f64 {
        let inv = 1.0 / n;
        let inv2 = inv * inv;
        n.ln() + 0.577_215_664_901_532_9 + 0.5 * inv - inv2 / 12.0 + inv2 * inv2 / 120.0 - inv2 * inv2 * inv2 / 252.0
    }
    if big - small <= DIRECT {
        // sum smallest terms first
        return (small + 1..=big).rev().map(|k| 1.0 / k as f64).sum();
    }
    asymptotic(big as f64) - asymptotic(small as f64)
}

/// Average entanglement entropy (bits) of `l` sites in a Haar-random state of `len` qubits.
pub fn page_entropy(l: usize, len: usize) -> Result<f64> {
    if l > len || len > 62 {
        return Err(Error::Domain(format!("Page entropy for l = {l}, L = {len}")));
    }
    let small = l.min(len - l);
    let m = 1u64 << small;
    let n = 1u64 << (len - small);
    let nats = harmonic_difference(m * n, n) - (m - 1) as f64 / (2.0 * n as f64);
    Ok(nats / std::f64::consts::LN_2)
}

/// Leading form `l - 2^{2l-L} / (2 ln 2)`.
pub fn page_entropy_asymptotic(l: usize, len: usize) -> f64 {
    l as f64 - 2f64.powi(2 * l as i32 - len as i32) / (2.0 * std::f64::consts::LN_2)
}

/// `2 P_l - P_{2l}` from the exact Page averages.
pub fn page_mutual_information(l: usize, len: usize) -> Result<f64> {
    if 2 * l > len {
        return Err(Error::Domain(format!("Page mutual information for l = {l}, L = {len}")));
    }
    Ok(2.0 * page_entropy(l, len)? - page_entropy(2 * l, len)?)
}

/// Leading form `2^{4l-L} / (2 ln 2)`.
pub fn page_mutual_information_asymptotic(l: usize, len: usize) -> f64 {
    2f64.powi(4 * l as i32 - len as i32) / (2.0 * std::f64::consts::LN_2)
}

/// Everything needed to evaluate a fixed observable schedule on one trajectory.
pub struct Measurement {
    basis: Arc<SymmetryBasis>,
    specs: Vec<ObservableSpec>,
    operators: Vec<Option<SectorOperator>>,
    tomography: Option<Tomography>,
    rdm_sites: usize,
    epsilon: f64,
    initial: SectorVector,
}

impl Measurement {
    /// `epsilon` is the conserved `<H>/L` of the trajectory; it is subtracted in correlators.
    pub fn new(
        params: HamiltonianParams,
        initial: &SectorVector,
        epsilon: f64,
        specs: &[ObservableSpec],
    ) -> Result<Self> {
        let basis = initial.basis().clone();
        let len = basis.sites();
        let mut seen = std::collections::HashSet::new();
        let mut operators = Vec::with_capacity(specs.len());
        let mut rdm_sites = 0;
        for spec in specs {
            if !seen.insert(spec.id()) {
                return Err(Error::Config(format!("duplicate observable {}", spec.id())));
            }
            let op = match spec.local_operator(params, len)? {
                Some(local) => Some(SectorOperator::translation_averaged(basis.clone(), &local)?),
                None => None,
            };
            operators.push(op);
            match spec.kind() {
                ObservableKind::Entropy(l) => rdm_sites = rdm_sites.max(*l),
                ObservableKind::MutualInformation(l, r) => rdm_sites = rdm_sites.max(l + r),
                _ => {}
            }
        }
        let tomography = if rdm_sites > 0 && rdm_sites <= TOMOGRAPHY_MAX_SITES {
            Some(Tomography::new(basis.clone(), rdm_sites)?)
        } else {
            None
        };
        Ok(Self { basis, specs: specs.to_vec(), operators, tomography, rdm_sites, epsilon, initial: initial.clone() })
    }

    pub fn specs(&self) -> &[ObservableSpec] {
        &self.specs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn rdm(&self, v: &SectorVector) -> Result<ReducedDensityMatrix> {
        match &self.tomography {
            Some(t) => t.rdm(v.amplitudes()),
            None => rdm_partial_trace(v, self.rdm_sites),
        }
    }

    /// Values in schedule order.
    pub fn measure_all(&self, v: &SectorVector) -> Result<Vec<f64>> {
        if !v.basis().same_space(&self.basis) {
            return Err(Error::Usage("state does not belong to the measurement basis".into()));
        }
        let rho = if self.rdm_sites > 0 { Some(self.rdm(v)?) } else { None };
        let mut out = Vec::with_capacity(self.specs.len());
        for (spec, op) in self.specs.iter().zip(&self.operators) {
            let value = match spec.kind() {
                ObservableKind::PauliAvg { .. } => op.as_ref().unwrap().expectation_slice(v.amplitudes()),
                ObservableKind::EnergyCorrelator(_) => {
                    op.as_ref().unwrap().expectation_slice(v.amplitudes()) - self.epsilon * self.epsilon
                }
                ObservableKind::Entropy(l) => {
                    let rho = rho.as_ref().unwrap();
                    entanglement_entropy(&rho.trace_high(rho.sites() - l))?
                }
                ObservableKind::MutualInformation(l, r) => {
                    let rho = rho.as_ref().unwrap();
                    mutual_information_from_rdm(&rho.trace_high(rho.sites() - l - r), *l, *r)?
                }
                ObservableKind::Fidelity => dot(self.initial.amplitudes(), v.amplitudes()).norm_sqr().min(1.0),
            };
            out.push(value);
        }
        Ok(out)
    }
}

/// Single measurement with a throwaway context.
pub fn measure(
    spec: &ObservableSpec,
    v: &SectorVector,
    params: HamiltonianParams,
    epsilon: f64,
    initial: &SectorVector,
) -> Result<f64> {
    Ok(Measurement::new(params, initial, epsilon, std::slice::from_ref(spec))?.measure_all(v)?[0])
}

/// Weight of `C_r` in the ring sum rule: `r = 0` and `r = L/2` once, others twice.
pub fn correlator_weight(r: usize, len: usize) -> f64 {
    if r == 0 || 2 * r == len {
        1.0
    } else {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_sector_basis, RingGeometry, SectorSpec};
    use crate::bloch::{bloch_variance_density, build_bloch_state, sample_sector_random_state, BlochParams};
    use crate::hamiltonian::{full_space_apply, HamiltonianKernel};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const H: HamiltonianParams = HamiltonianParams::BENCHMARK;

    fn sector(l: usize) -> Arc<SymmetryBasis> {
        Arc::new(build_sector_basis(RingGeometry::new(l).unwrap(), SectorSpec::ZERO_EVEN).unwrap())
    }

    fn energy_density(v: &SectorVector) -> f64 {
        let k = HamiltonianKernel::new(v.basis().clone(), H);
        dot(v.amplitudes(), &k.apply_slice(v.amplitudes())).re / v.basis().sites() as f64
    }

    #[test]
    fn identifiers_round_trip() {
        for id in ["sx", "sz", "sy", "sxsx01", "szsz01", "szsz03", "C0", "C7", "S1", "S3", "I_1_1", "I_2_3", "fid"] {
            let spec: ObservableSpec = id.parse().unwrap();
            assert_eq!(spec.id(), id);
        }
        for bad in ["", "sq", "C", "Sx", "I_1", "sxsx00", "s", "foo"] {
            assert!(bad.parse::<ObservableSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn identity_string_leaves_vector_unchanged() {
        let b = sector(8);
        let v = sample_sector_random_state(&b, 3).unwrap();
        let op = SectorOperator::translation_averaged(b.clone(), &PauliSum::identity()).unwrap();
        assert!(crate::linalg::max_abs_diff(&op.apply_slice(v.amplitudes()), v.amplitudes()) < 1e-14);
    }

    #[test]
    fn bloch_initial_correlators() {
        let b = sector(12);
        let yp = BlochParams::from_fractions(0.5, 0.5);
        let v = build_bloch_state(yp, &b).unwrap();
        let eps = energy_density(&v);
        let d = bloch_variance_density(yp, H);
        let c0 = measure(&ObservableSpec::correlator(0), &v, H, eps, &v).unwrap();
        assert_abs_diff_eq!(c0, d.c0, epsilon = 1e-12);
        let c1 = measure(&ObservableSpec::correlator(1), &v, H, eps, &v).unwrap();
        assert_abs_diff_eq!(c1, d.c1, epsilon = 1e-12);
        for r in 2..=6 {
            let c = measure(&ObservableSpec::correlator(r), &v, H, eps, &v).unwrap();
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
        }
        let zp = build_bloch_state(BlochParams::new(0.0, 0.0), &b).unwrap();
        let sz = measure(&"sz".parse().unwrap(), &zp, H, 1.5, &zp).unwrap();
        assert_abs_diff_eq!(sz, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn pauli_average_matches_full_space() {
        let b = sector(10);
        let v = sample_sector_random_state(&b, 11).unwrap();
        let full = v.expand_full();
        for id in ["sz", "sx", "sxsx01", "szsz01"] {
            let spec: ObservableSpec = id.parse().unwrap();
            let local = spec.local_operator(H, 10).unwrap().unwrap();
            let direct = dot(&full, &full_space_apply(&local, &full)).re;
            assert_abs_diff_eq!(measure(&spec, &v, H, 0.0, &v).unwrap(), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn sum_rule_on_random_state() {
        let l = 10;
        let b = sector(l);
        let v = sample_sector_random_state(&b, 5).unwrap();
        let k = HamiltonianKernel::new(b.clone(), H);
        let hv = k.apply_slice(v.amplitudes());
        let eps = dot(v.amplitudes(), &hv).re / l as f64;
        let var = dot(&hv, &hv).re / l as f64 - l as f64 * eps * eps;
        let specs: Vec<_> = (0..=l / 2).map(ObservableSpec::correlator).collect();
        let m = Measurement::new(H, &v, eps, &specs).unwrap();
        let values = m.measure_all(&v).unwrap();
        let total: f64 = values.iter().enumerate().map(|(r, c)| correlator_weight(r, l) * c).sum();
        assert_abs_diff_eq!(total, var, epsilon = 1e-10);
    }

    #[test]
    fn tomography_matches_partial_trace() {
        let b = sector(12);
        let v = sample_sector_random_state(&b, 9).unwrap();
        for l in 1..=3 {
            let a = Tomography::new(b.clone(), l).unwrap().rdm(v.amplitudes()).unwrap();
            let c = rdm_partial_trace(&v, l).unwrap();
            assert!(crate::linalg::max_abs_diff(a.data(), c.data()) < 1e-10, "l = {l}");
            assert_abs_diff_eq!(a.trace().re, 1.0, epsilon = 1e-12);
            assert!(a.hermiticity_error() < 1e-12);
            assert!(a.eigenvalues().unwrap()[0] > -1e-10);
        }
    }

    #[test]
    fn product_state_is_pure() {
        let b = sector(8);
        let v = build_bloch_state(BlochParams::new(0.0, 0.0), &b).unwrap();
        for l in 1..=4 {
            let rho = reduced_density_matrix(&v, l).unwrap();
            assert_abs_diff_eq!(rho.get((1 << l) - 1, (1 << l) - 1).re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(entanglement_entropy(&rho).unwrap(), 0.0, epsilon = 1e-10);
        }
        let tilted = build_bloch_state(BlochParams::new(1.1, 0.4), &b).unwrap();
        assert_abs_diff_eq!(mutual_information(&tilted, 1, 2).unwrap(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(
            entanglement_entropy(&ReducedDensityMatrix::maximally_mixed(3)).unwrap(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cluster_traces_are_consistent() {
        let b = sector(9);
        let v = sample_sector_random_state(&b, 13).unwrap();
        let rho3 = rdm_partial_trace(&v, 3).unwrap();
        let rho2 = rdm_partial_trace(&v, 2).unwrap();
        assert!(crate::linalg::max_abs_diff(rho3.trace_high(1).data(), rho2.data()) < 1e-12);
        // translation invariance: the upper pair equals the lower pair
        assert!(crate::linalg::max_abs_diff(rho3.trace_low(1).data(), rho2.data()) < 1e-12);
    }

    #[test]
    fn fidelity_bounds() {
        let b = sector(8);
        let a = sample_sector_random_state(&b, 1).unwrap();
        let c = sample_sector_random_state(&b, 2).unwrap();
        assert_abs_diff_eq!(fidelity(&a, &a).unwrap(), 1.0, epsilon = 1e-14);
        let f = fidelity(&a, &c).unwrap();
        assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn page_limits() {
        assert!((page_entropy(1, 20).unwrap() - 1.0).abs() < 1e-5);
        assert_abs_diff_eq!(page_entropy(0, 10).unwrap(), 0.0, epsilon = 1e-14);
        // symmetric under l <-> L - l
        assert_abs_diff_eq!(page_entropy(3, 10).unwrap(), page_entropy(7, 10).unwrap(), epsilon = 1e-14);
        // direct and asymptotic harmonic sums agree across the switch
        let n = 1u64 << 10;
        let direct: f64 = (n + 1..=n << 7).map(|k| 1.0 / k as f64).sum();
        assert_abs_diff_eq!(harmonic_difference(n << 7, n), direct, epsilon = 1e-12);
        assert!((page_entropy(4, 16).unwrap() - page_entropy_asymptotic(4, 16)).abs() < 2f64.powi(4 - 16));
    }

    #[test]
    fn page_entropy_matches_haar_sampling() {
        // unitary-invariant draws on the full 2^L space
        let len = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples = 300;
        let mut acc = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..samples {
            let mut psi: Vec<Complex64> = (0..1 << len)
                .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                .collect();
            let nrm = crate::linalg::norm(&psi);
            psi.iter_mut().for_each(|c| *c /= nrm);
            let rho = partial_trace_full(&psi, len, 3).unwrap();
            for l in 1..=3 {
                acc[l - 1].push(entanglement_entropy(&rho.trace_high(3 - l)).unwrap());
            }
        }
        for l in 1..=3 {
            let xs = &acc[l - 1];
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            let se = (var / xs.len() as f64).sqrt();
            assert!((mean - page_entropy(l, len).unwrap()).abs() < 3.0 * se + 1e-12, "l = {l}");
        }
    }

    #[test]
    fn sector_sampler_matches_projected_haar_oracle() {
        // Mean S_3 of the footnote sampler against projected Gaussian draws on the full space.
        let len = 12;
        let b = sector(len);
        let n = 200;
        let footnote: Vec<f64> = (0..n)
            .map(|seed| {
                let v = sample_sector_random_state(&b, seed as u64).unwrap();
                entanglement_entropy(&rdm_partial_trace(&v, 3).unwrap()).unwrap()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let oracle: Vec<f64> = (0..n)
            .map(|_| {
                let full: Vec<Complex64> = (0..1 << len)
                    .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                    .collect();
                let mut v = SectorVector::project_full(b.clone(), &full).unwrap();
                v.normalize().unwrap();
                entanglement_entropy(&rdm_partial_trace(&v, 3).unwrap()).unwrap()
            })
            .collect();
        let stats = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            (m, v / xs.len() as f64)
        };
        let (ma, va) = stats(&footnote);
        let (mb, vb) = stats(&oracle);
        assert!((ma - mb).abs() < 3.0 * (va + vb).sqrt(), "{ma} vs {mb}");
    }

    #[test]
    fn random_state_magnetization_averages_out() {
        let b = sector(10);
        let spec: ObservableSpec = "sz".parse().unwrap();
        let xs: Vec<f64> = (0..100)
            .map(|s| {
                let v = sample_sector_random_state(&b, 1000 + s).unwrap();
                measure(&spec, &v, H, 0.0, &v).unwrap()
            })
            .collect();
        let m = xs.iter().sum::<f64>() / 100.0;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!(m.abs() < 3.0 * sd / 10.0);
    }

    #[test]
    fn oversized_observable_rejected() {
        let spec = ObservableSpec::correlator(9);
        assert!(matches!(spec.local_operator(H, 8), Err(Error::Usage(_))));
    }
}
