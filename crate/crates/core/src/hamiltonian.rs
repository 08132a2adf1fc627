//! Mixed-field Ising Hamiltonian and translation-averaged operators acting
//! directly on sector amplitudes.
//!
//! Every kernel here is a gather over output indices: for a Hermitian,
//! symmetry-commuting operator `O` with `O|b_rep> = Σ_t c_t |s_t>` and
//! `s_t` on the orbit of `a_t`,
//!
//! ```text
//! (O v)_b = Σ_t (norm_b / norm_{a_t}) conj(c_t) χ(h_t) v_{a_t}
//! ```
//!
//! where `χ(h_t)` is the character returned by [`SymmetryBasis::lookup`].

use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{read_header, write_header, PayloadKind, SectorVector, SymmetryBasis};
use crate::error::{Error, Result};
use crate::pauli::{bond_energy, i_pow, rotate, PauliString, PauliSum};

/// Largest sector dimension for dense storage.
pub const DENSE_DIM_GUARD: usize = 40_000;

/// Below this dimension kernels run sequentially.
const PAR_THRESHOLD: usize = 8192;

/// Largest number of stored entries for a compiled sparse operator.
pub const SPARSE_ENTRY_BUDGET: usize = 16_000_000;

/// Row-compressed sector matrix.
#[derive(Debug, Clone)]
pub struct SparseRows {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
}

impl SparseRows {
    fn build<F>(dim: usize, mut row: F) -> Self
    where
        F: FnMut(usize, &mut Vec<(u32, Complex64)>),
    {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut scratch = Vec::new();
        row_ptr.push(0);
        for r in 0..dim {
            scratch.clear();
            row(r, &mut scratch);
            for &(c, v) in &scratch {
                if v.re != 0.0 || v.im != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    fn row_dot(&self, r: usize, v: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += self.vals[j] * v[self.cols[j] as usize];
        }
        acc
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        gather(self.row_ptr.len() - 1, |r| self.row_dot(r, v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub h_x: f64,
    pub h_z: f64,
}

impl HamiltonianParams {
    pub const BENCHMARK: HamiltonianParams = HamiltonianParams { h_x: -1.05, h_z: 0.5 };

    pub fn new(h_x: f64, h_z: f64) -> Result<Self> {
        if !h_x.is_finite() || !h_z.is_finite() {
            return Err(Error::Config("Hamiltonian fields must be finite".into()));
        }
        Ok(Self { h_x, h_z })
    }

    /// Bond operator `H_bond` as a Pauli sum on an `len`-site ring.
    pub fn bond(&self, bond: usize, len: usize) -> PauliSum {
        bond_energy(self.h_x, self.h_z, bond, len)
    }

    /// Full ring Hamiltonian as a Pauli sum.
    pub fn total(&self, len: usize) -> PauliSum {
        let mut h = PauliSum::new();
        for j in 0..len {
            h.add(&self.bond(j, len));
        }
        h.pruned(1e-15)
    }

    /// Diagonal energy of a computational basis state.
    #[inline]
    pub fn diagonal_energy(&self, state: u32, len: usize) -> f64 {
        let domain_walls = (state ^ rotate(state, 1, len)).count_ones() as f64;
        let up = state.count_ones() as f64;
        (len as f64 - 2.0 * domain_walls) + self.h_z * (2.0 * up - len as f64)
    }
}

impl Default for HamiltonianParams {
    fn default() -> Self {
        Self::BENCHMARK
    }
}

fn gather<F>(dim: usize, f: F) -> Vec<Complex64>
where
    F: Fn(usize) -> Complex64 + Sync,
{
    if dim >= PAR_THRESHOLD {
        (0..dim).into_par_iter().map(&f).collect()
    } else {
        (0..dim).map(f).collect()
    }
}

/// Matrix-free `H v` on a symmetry sector.
pub struct HamiltonianKernel {
    basis: Arc<SymmetryBasis>,
    params: HamiltonianParams,
    diagonal: Vec<f64>,
    sparse: Option<SparseRows>,
}

impl HamiltonianKernel {
    pub fn new(basis: Arc<SymmetryBasis>, params: HamiltonianParams) -> Self {
        let len = basis.sites();
        let diagonal = basis.representatives().iter().map(|&s| params.diagonal_energy(s, len)).collect();
        let mut kernel = Self { basis, params, diagonal, sparse: None };
        if kernel.basis.dim() * (len + 1) <= SPARSE_ENTRY_BUDGET {
            let sparse = SparseRows::build(kernel.basis.dim(), |r, out| kernel.row_entries(r, out));
            kernel.sparse = Some(sparse);
        }
        kernel
    }

    fn row_entries(&self, row: usize, out: &mut Vec<(u32, Complex64)>) {
        let b = &*self.basis;
        let rep = b.representatives()[row];
        out.push((row as u32, Complex64::new(self.diagonal[row], 0.0)));
        if self.params.h_x != 0.0 {
            for site in 0..b.sites() {
                if let Some((a, ch)) = b.lookup(rep ^ (1 << site)) {
                    out.push((a as u32, ch * (self.params.h_x * b.norms()[row] / b.norms()[a])));
                }
            }
        }
    }

    pub fn basis(&self) -> &Arc<SymmetryBasis> {
        &self.basis
    }

    /// Drops the compiled rows, forcing the matrix-free path.
    pub fn matrix_free(mut self) -> Self {
        self.sparse = None;
        self
    }

    pub fn params(&self) -> HamiltonianParams {
        self.params
    }

    /// Raw amplitude kernel (no basis checks).
    pub fn apply_slice(&self, v: &[Complex64]) -> Vec<Complex64> {
        if let Some(sp) = &self.sparse {
            return sp.apply(v);
        }
        let b = &*self.basis;
        let len = b.sites();
        let reps = b.representatives();
        let norms = b.norms();
        let hx = self.params.h_x;
        gather(b.dim(), |row| {
            let rep = reps[row];
            let mut acc = v[row] * self.diagonal[row];
            if hx != 0.0 {
                let mut off = Complex64::new(0.0, 0.0);
                for site in 0..len {
                    if let Some((a, ch)) = b.lookup(rep ^ (1 << site)) {
                        off += ch * v[a] / norms[a];
                    }
                }
                acc += off * (hx * norms[row]);
            }
            acc
        })
    }

    pub fn apply(&self, v: &SectorVector) -> Result<SectorVector> {
        if !v.basis().same_space(&self.basis) {
            return Err(Error::Usage("vector does not belong to the Hamiltonian's basis".into()));
        }
        SectorVector::new(self.basis.clone(), self.apply_slice(v.amplitudes()))
    }

    /// Dense Hermitian sector matrix.
    pub fn to_dense(&self) -> Result<Mat<Complex64>> {
        let b = &*self.basis;
        let dim = b.dim();
        if dim > DENSE_DIM_GUARD {
            return Err(Error::Resource(format!("sector dimension {dim} exceeds dense guard {DENSE_DIM_GUARD}")));
        }
        let mut m = Mat::<Complex64>::zeros(dim, dim);
        let mut entries = Vec::new();
        for row in 0..dim {
            entries.clear();
            self.row_entries(row, &mut entries);
            for &(a, c) in &entries {
                m[(row, a as usize)] += c;
            }
        }
        Ok(m)
    }
}

/// `H v` for a vector on `basis`.
pub fn apply_hamiltonian(
    basis: &Arc<SymmetryBasis>,
    params: HamiltonianParams,
    v: &SectorVector,
) -> Result<SectorVector> {
    HamiltonianKernel::new(basis.clone(), params).apply(v)
}

/// Dense sector Hamiltonian (diagonalization and oracle tests only).
pub fn build_dense_hamiltonian(basis: &Arc<SymmetryBasis>, params: HamiltonianParams) -> Result<Mat<Complex64>> {
    if basis.dim() > DENSE_DIM_GUARD {
        return Err(Error::Resource(format!("sector dimension {} exceeds dense guard {DENSE_DIM_GUARD}", basis.dim())));
    }
    HamiltonianKernel::new(basis.clone(), params).to_dense()
}

/// Dense matrix cache: shared header, then `dim` and row-major `(re, im)` pairs.
pub fn write_dense_cache<W: std::io::Write>(mut w: W, basis: &SymmetryBasis, m: &Mat<Complex64>) -> Result<()> {
    use byteorder::{LittleEndian, WriteBytesExt};
    write_header(&mut w, basis.geometry(), basis.sector(), PayloadKind::DenseMatrix)?;
    w.write_u64::<LittleEndian>(m.nrows() as u64)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let c = m[(i, j)];
            w.write_f64::<LittleEndian>(c.re)?;
            w.write_f64::<LittleEndian>(c.im)?;
        }
    }
    Ok(())
}

pub fn read_dense_cache<R: std::io::Read>(mut r: R, basis: &SymmetryBasis) -> Result<Mat<Complex64>> {
    use byteorder::{LittleEndian, ReadBytesExt};
    let (geometry, sector, kind) = read_header(&mut r)?;
    if kind != PayloadKind::DenseMatrix || geometry != basis.geometry() || sector != basis.sector() {
        return Err(Error::Format("dense cache does not match the basis".into()));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n != basis.dim() {
        return Err(Error::Format(format!("dense cache has dimension {n}, basis {}", basis.dim())));
    }
    let mut m = Mat::<Complex64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let re = r.read_f64::<LittleEndian>()?;
            let im = r.read_f64::<LittleEndian>()?;
            m[(i, j)] = Complex64::new(re, im);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
struct FlipGroup {
    x: u32,
    terms: Vec<(u32, Complex64)>,
}

/// Translation average `(1/L) Σ_j T^j O T^{-j}` of a local Hermitian operator,
/// additionally reflection-symmetrized on parity sectors. Its expectation in a
/// translation (and reflection) invariant state equals that of `O` itself.
#[derive(Debug, Clone)]
pub struct SectorOperator {
    basis: Arc<SymmetryBasis>,
    groups: Vec<FlipGroup>,
    sparse: Option<SparseRows>,
}

impl SectorOperator {
    pub fn translation_averaged(basis: Arc<SymmetryBasis>, local: &PauliSum) -> Result<Self> {
        let len = basis.sites();
        if !local.is_hermitian(1e-12) {
            return Err(Error::Usage("translation-averaged operators must be Hermitian".into()));
        }
        if len < 32 && local.support() >> len != 0 {
            return Err(Error::Usage(format!("operator support exceeds the {len}-site ring")));
        }
        let mut avg = PauliSum::new();
        for shift in 0..len {
            avg.add(&local.translated(shift, len));
        }
        let mut avg = avg.scaled(1.0 / len as f64);
        if basis.has_reflection() {
            let mut sym = avg.reflected(len);
            sym.add(&avg);
            avg = sym.scaled(0.5);
        }
        let avg = avg.pruned(1e-15);
        Ok(Self::compiled(basis, group_by_flip(&avg)))
    }

    /// A translation-invariant operator given in full (no averaging).
    pub fn invariant(basis: Arc<SymmetryBasis>, op: &PauliSum) -> Result<Self> {
        if !op.is_hermitian(1e-12) {
            return Err(Error::Usage("operator must be Hermitian".into()));
        }
        Ok(Self::compiled(basis, group_by_flip(op)))
    }

    fn compiled(basis: Arc<SymmetryBasis>, groups: Vec<FlipGroup>) -> Self {
        let mut op = Self { basis, groups, sparse: None };
        if op.basis.dim() * op.groups.len() <= SPARSE_ENTRY_BUDGET {
            let sparse = SparseRows::build(op.basis.dim(), |r, out| op.row_entries(r, out));
            op.sparse = Some(sparse);
        }
        op
    }

    fn row_entries(&self, row: usize, out: &mut Vec<(u32, Complex64)>) {
        let b = &*self.basis;
        let rep = b.representatives()[row];
        for g in &self.groups {
            let amp = Self::row_amplitude(&g.terms, rep);
            if amp.re == 0.0 && amp.im == 0.0 {
                continue;
            }
            if let Some((a, ch)) = b.lookup(rep ^ g.x) {
                out.push((a as u32, amp.conj() * ch * (b.norms()[row] / b.norms()[a])));
            }
        }
    }

    pub fn basis(&self) -> &Arc<SymmetryBasis> {
        &self.basis
    }

    #[inline]
    fn row_amplitude(terms: &[(u32, Complex64)], rep: u32) -> Complex64 {
        let mut amp = Complex64::new(0.0, 0.0);
        for &(z, c) in terms {
            if (z & !rep).count_ones() & 1 == 1 {
                amp -= c;
            } else {
                amp += c;
            }
        }
        amp
    }

    pub fn apply_slice(&self, v: &[Complex64]) -> Vec<Complex64> {
        if let Some(sp) = &self.sparse {
            return sp.apply(v);
        }
        let b = &*self.basis;
        let reps = b.representatives();
        let norms = b.norms();
        gather(b.dim(), |row| {
            let rep = reps[row];
            let mut acc = Complex64::new(0.0, 0.0);
            for g in &self.groups {
                let amp = Self::row_amplitude(&g.terms, rep);
                if amp.re == 0.0 && amp.im == 0.0 {
                    continue;
                }
                if let Some((a, ch)) = b.lookup(rep ^ g.x) {
                    acc += amp.conj() * ch * v[a] / norms[a];
                }
            }
            acc * norms[row]
        })
    }

    pub fn apply(&self, v: &SectorVector) -> Result<SectorVector> {
        if !v.basis().same_space(&self.basis) {
            return Err(Error::Usage("vector does not belong to the operator's basis".into()));
        }
        SectorVector::new(self.basis.clone(), self.apply_slice(v.amplitudes()))
    }

    /// `<v|O|v>` (real for Hermitian `O`).
    pub fn expectation_slice(&self, v: &[Complex64]) -> f64 {
        match &self.sparse {
            Some(sp) => (0..v.len()).map(|r| (v[r].conj() * sp.row_dot(r, v)).re).sum(),
            None => crate::linalg::dot(v, &self.apply_slice(v)).re,
        }
    }

    /// Drops the compiled rows, forcing the matrix-free path.
    pub fn matrix_free(mut self) -> Self {
        self.sparse = None;
        self
    }

    pub fn expectation(&self, v: &SectorVector) -> Result<f64> {
        if !v.basis().same_space(&self.basis) {
            return Err(Error::Usage("vector does not belong to the operator's basis".into()));
        }
        Ok(self.expectation_slice(v.amplitudes()))
    }

    pub fn to_dense(&self) -> Result<Mat<Complex64>> {
        let b = &*self.basis;
        let dim = b.dim();
        if dim > DENSE_DIM_GUARD {
            return Err(Error::Resource(format!("dimension {dim} exceeds dense guard")));
        }
        let mut m = Mat::<Complex64>::zeros(dim, dim);
        let mut entries = Vec::new();
        for row in 0..dim {
            entries.clear();
            self.row_entries(row, &mut entries);
            for &(a, c) in &entries {
                m[(row, a as usize)] += c;
            }
        }
        Ok(m)
    }
}

fn group_by_flip(op: &PauliSum) -> Vec<FlipGroup> {
    let mut groups: Vec<FlipGroup> = Vec::new();
    for (p, c) in op.terms() {
        // fold the i^{#Y} of the canonical string into the coefficient
        let coef = c * i_pow(p.y_count());
        match groups.iter_mut().find(|g| g.x == p.x) {
            Some(g) => g.terms.push((p.z, coef)),
            None => groups.push(FlipGroup { x: p.x, terms: vec![(p.z, coef)] }),
        }
    }
    groups.sort_by_key(|g| g.x);
    groups
}

/// Dense matrix of a Pauli sum on the full `2^L` space (oracles only).
pub fn full_space_dense(op: &PauliSum, len: usize) -> Result<Mat<Complex64>> {
    let dim = 1usize << len;
    if dim > 1 << 14 {
        return Err(Error::Resource(format!("full-space dense matrix for L = {len}")));
    }
    let mut m = Mat::<Complex64>::zeros(dim, dim);
    for (p, c) in op.terms() {
        for col in 0..dim as u32 {
            let (ph, row) = p.apply(col);
            m[(row as usize, col as usize)] += c * ph;
        }
    }
    Ok(m)
}

/// Applies a Pauli sum to a full-space vector.
pub fn full_space_apply(op: &PauliSum, psi: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
    for (p, c) in op.terms() {
        apply_string_accumulate(p, *c, psi, &mut out);
    }
    out
}

#[inline]
pub(crate) fn apply_string_accumulate(p: &PauliString, c: Complex64, psi: &[Complex64], out: &mut [Complex64]) {
    let base = c * i_pow(p.y_count());
    for (s, amp) in psi.iter().enumerate() {
        let s = s as u32;
        let sign = if (p.z & !s).count_ones() & 1 == 1 { -base } else { base };
        out[(s ^ p.x) as usize] += sign * amp;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{all_sectors, build_sector_basis, RingGeometry, SectorSpec};
    use crate::linalg::{dot, hermitian_eigenvalues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..dim).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    #[test]
    fn dense_cache_round_trip() {
        let b = basis(6, SectorSpec::momentum(1));
        let m = build_dense_hamiltonian(&b, HamiltonianParams::BENCHMARK).unwrap();
        let mut buf = Vec::new();
        write_dense_cache(&mut buf, &b, &m).unwrap();
        let back = read_dense_cache(buf.as_slice(), &b).unwrap();
        assert_eq!(back, m);
        let other = basis(6, SectorSpec::momentum(2));
        assert!(matches!(read_dense_cache(buf.as_slice(), &other), Err(Error::Format(_))));
    }

    fn basis(l: usize, sector: SectorSpec) -> Arc<SymmetryBasis> {
        Arc::new(build_sector_basis(RingGeometry::new(l).unwrap(), sector).unwrap())
    }

    #[test]
    fn kernel_is_hermitian_on_every_sector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sector in all_sectors(&RingGeometry::new(8).unwrap(), true) {
            let b = basis(8, sector);
            let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
            let u = random_vec(b.dim(), &mut rng);
            let v = random_vec(b.dim(), &mut rng);
            let lhs = dot(&u, &k.apply_slice(&v));
            let rhs = dot(&v, &k.apply_slice(&u)).conj();
            assert!((lhs - rhs).norm() < 1e-12, "{sector}");
        }
    }

    #[test]
    fn compiled_and_matrix_free_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 9;
        let b = basis(l, SectorSpec::ZERO_EVEN);
        let v = random_vec(b.dim(), &mut rng);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let a = k.apply_slice(&v);
        let c = k.matrix_free().apply_slice(&v);
        assert!(crate::linalg::max_abs_diff(&a, &c) < 1e-12);
        let params = HamiltonianParams::BENCHMARK;
        let local = params.bond(0, l).mul(&params.bond(1, l)).hermitian_part();
        let op = SectorOperator::translation_averaged(b.clone(), &local).unwrap();
        let a = op.apply_slice(&v);
        let e = op.expectation_slice(&v);
        let op = op.matrix_free();
        assert!(crate::linalg::max_abs_diff(&a, &op.apply_slice(&v)) < 1e-12);
        assert!((e - op.expectation_slice(&v)).abs() < 1e-12);
    }

    #[test]
    fn dense_matches_matrix_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = basis(10, SectorSpec::ZERO_EVEN);
        let k = HamiltonianKernel::new(b.clone(), HamiltonianParams::BENCHMARK);
        let m = k.to_dense().unwrap();
        for _ in 0..20 {
            let v = random_vec(b.dim(), &mut rng);
            let hv = k.apply_slice(&v);
            for row in 0..b.dim() {
                let mut acc = Complex64::new(0.0, 0.0);
                for col in 0..b.dim() {
                    acc += m[(row, col)] * v[col];
                }
                assert!((acc - hv[row]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sector_spectra_reassemble_full_spectrum() {
        let l = 4;
        let params = HamiltonianParams::BENCHMARK;
        let full = full_space_dense(&params.total(l), l).unwrap();
        let mut want = hermitian_eigenvalues(&full).unwrap();
        let mut got = Vec::new();
        let mut trace = 0.0;
        for sector in all_sectors(&RingGeometry::new(l).unwrap(), false) {
            let m = build_dense_hamiltonian(&basis(l, sector), params).unwrap();
            trace += (0..m.nrows()).map(|i| m[(i, i)].re).sum::<f64>();
            got.extend(hermitian_eigenvalues(&m).unwrap());
        }
        got.sort_by(|a, b| a.total_cmp(b));
        want.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(got.len(), 16);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(trace.abs() < 1e-12);
    }

    #[test]
    fn averaged_operator_matches_full_space_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = 7;
        let b = basis(l, SectorSpec::ZERO_EVEN);
        let local = PauliSum::from_string(1.0, PauliString::from_letters("xz", &[0, 1]).unwrap());
        let op = SectorOperator::translation_averaged(b.clone(), &local).unwrap();
        let mut v = SectorVector::new(b.clone(), random_vec(b.dim(), &mut rng)).unwrap();
        v.normalize().unwrap();
        let full = v.expand_full();
        let direct = dot(&full, &full_space_apply(&local, &full)).re;
        assert!((op.expectation(&v).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn averaged_operator_stays_in_sector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = 8;
        let b = basis(l, SectorSpec::ZERO_EVEN);
        let params = HamiltonianParams::BENCHMARK;
        let local = params.bond(0, l).mul(&params.bond(2, l)).hermitian_part();
        let op = SectorOperator::translation_averaged(b.clone(), &local).unwrap();
        let mut v = SectorVector::new(b.clone(), random_vec(b.dim(), &mut rng)).unwrap();
        v.normalize().unwrap();
        let ov = op.apply(&v).unwrap();
        // full-space reference: average of translated copies applied to the expanded vector
        let full = v.expand_full();
        let mut reference = vec![Complex64::new(0.0, 0.0); full.len()];
        for shift in 0..l {
            let t = full_space_apply(&local.translated(shift, l), &full);
            crate::linalg::axpy(Complex64::new(1.0 / l as f64, 0.0), &t, &mut reference);
        }
        let reflected: Vec<Complex64> = {
            let mut r = vec![Complex64::new(0.0, 0.0); full.len()];
            for shift in 0..l {
                let t = full_space_apply(&local.reflected(l).translated(shift, l), &full);
                crate::linalg::axpy(Complex64::new(1.0 / l as f64, 0.0), &t, &mut r);
            }
            r
        };
        let sym: Vec<Complex64> = reference.iter().zip(&reflected).map(|(a, b)| (a + b) * 0.5).collect();
        let expanded = ov.expand_full();
        assert!(crate::linalg::max_abs_diff(&expanded, &sym) < 1e-12);
    }

    #[test]
    fn non_hermitian_or_oversized_operators_rejected() {
        let b = basis(4, SectorSpec::ZERO_EVEN);
        let params = HamiltonianParams::BENCHMARK;
        let raw = params.bond(0, 4).mul(&params.bond(1, 4));
        assert!(SectorOperator::translation_averaged(b.clone(), &raw).is_err());
        let wide = PauliSum::from_string(1.0, PauliString::from_letters("z", &[5]).unwrap());
        assert!(matches!(SectorOperator::translation_averaged(b, &wide), Err(Error::Usage(_))));
    }
}
