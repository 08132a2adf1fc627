//! Momentum/reflection adapted bases of the spin-1/2 ring.
//!
//! For a sector with character `χ` of the symmetry group `G` (translations,
//! plus the ring reflection when a parity is selected) the basis state built
//! on representative `a` is
//!
//! ```text
//! |a> = (1/sqrt(|orbit(a)|)) Σ_{s in orbit(a)} conj(χ(g_s)) |s>,   s = g_s(a)
//! ```
//!
//! and satisfies `g|a> = χ(g)|a>` for every `g`. The representative is the
//! smallest bitstring of its orbit. `norms[a] = sqrt(|orbit(a)|)`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{reflect, rotate};

/// Largest ring for which the full `2^L` lookup table is materialized.
pub const MAX_LOOKUP_SITES: usize = 26;

pub const CACHE_MAGIC: &[u8; 4] = b"THLB";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingGeometry {
    pub sites: usize,
}

impl RingGeometry {
    pub fn new(sites: usize) -> Result<Self> {
        if sites < 2 {
            return Err(Error::Config(format!("ring needs at least 2 sites, got {sites}")));
        }
        if sites > 31 {
            return Err(Error::Resource(format!("{sites} sites exceed 31-bit bitstrings")));
        }
        Ok(Self { sites })
    }

    pub fn hilbert_dim(&self) -> usize {
        1usize << self.sites
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reflection {
    Even,
    Odd,
    None,
}

impl Reflection {
    pub fn code(&self) -> i8 {
        match self {
            Reflection::Even => 1,
            Reflection::Odd => -1,
            Reflection::None => 0,
        }
    }

    pub fn from_code(code: i8) -> Result<Self> {
        match code {
            1 => Ok(Reflection::Even),
            -1 => Ok(Reflection::Odd),
            0 => Ok(Reflection::None),
            other => Err(Error::Format(format!("bad reflection code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SectorSpec {
    pub momentum: usize,
    pub reflection: Reflection,
}

impl SectorSpec {
    /// The sector the translation- and reflection-invariant product states live in.
    pub const ZERO_EVEN: SectorSpec = SectorSpec { momentum: 0, reflection: Reflection::Even };

    pub fn momentum(k: usize) -> Self {
        Self { momentum: k, reflection: Reflection::None }
    }

    pub fn validate(&self, geometry: &RingGeometry) -> Result<()> {
        let l = geometry.sites;
        if self.momentum >= l {
            return Err(Error::Config(format!("momentum index {} not in [0, {l})", self.momentum)));
        }
        let reflection_allowed = self.momentum == 0 || 2 * self.momentum == l;
        if self.reflection != Reflection::None && !reflection_allowed {
            return Err(Error::Config(format!(
                "reflection parity only defined at k = 0 or k = L/2, got k = {} for L = {l}",
                self.momentum
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.reflection {
            Reflection::Even => write!(f, "k={},R=+", self.momentum),
            Reflection::Odd => write!(f, "k={},R=-", self.momentum),
            Reflection::None => write!(f, "k={}", self.momentum),
        }
    }
}

/// All sectors that together cover the ring's Hilbert space.
pub fn all_sectors(geometry: &RingGeometry, split_reflection: bool) -> Vec<SectorSpec> {
    let l = geometry.sites;
    let mut out = Vec::new();
    for k in 0..l {
        if split_reflection && (k == 0 || 2 * k == l) {
            out.push(SectorSpec { momentum: k, reflection: Reflection::Even });
            out.push(SectorSpec { momentum: k, reflection: Reflection::Odd });
        } else {
            out.push(SectorSpec::momentum(k));
        }
    }
    out
}

const NO_INDEX: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct SymmetryBasis {
    geometry: RingGeometry,
    sector: SectorSpec,
    representatives: Vec<u32>,
    norms: Vec<f64>,
    /// Per bitstring: index of its representative in this sector, or `NO_INDEX`.
    lookup_index: Vec<u32>,
    /// Per bitstring: the group element mapping it onto its representative.
    lookup_element: Vec<u16>,
    /// `χ(g)` for every group element `g = T^r R^p`, encoded as `r + p L`.
    characters: Vec<Complex64>,
}

impl SymmetryBasis {
    pub fn geometry(&self) -> RingGeometry {
        self.geometry
    }

    pub fn sector(&self) -> SectorSpec {
        self.sector
    }

    pub fn sites(&self) -> usize {
        self.geometry.sites
    }

    pub fn dim(&self) -> usize {
        self.representatives.len()
    }

    pub fn representatives(&self) -> &[u32] {
        &self.representatives
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn group_order(&self) -> usize {
        self.characters.len()
    }

    pub fn has_reflection(&self) -> bool {
        self.sector.reflection != Reflection::None
    }

    /// Maps a bitstring to `(representative index, χ(h))` where `h` carries the
    /// bitstring onto the representative; `<s|a> = χ(h) / norms[a]`.
    #[inline]
    pub fn lookup(&self, state: u32) -> Option<(usize, Complex64)> {
        let idx = self.lookup_index[state as usize];
        if idx == NO_INDEX {
            None
        } else {
            Some((idx as usize, self.characters[self.lookup_element[state as usize] as usize]))
        }
    }

    /// Index of a representative bitstring, if it is one of this sector's.
    pub fn index_of(&self, representative: u32) -> Option<usize> {
        self.representatives.binary_search(&representative).ok()
    }

    /// Same geometry and sector (bases are deterministic functions of both).
    pub fn same_space(&self, other: &SymmetryBasis) -> bool {
        self.geometry == other.geometry && self.sector == other.sector
    }

    #[inline]
    fn apply_element(element: usize, state: u32, len: usize) -> u32 {
        let (shift, parity) = (element % len, element / len);
        let s = if parity == 1 { reflect(state, len) } else { state };
        rotate(s, shift, len)
    }

    /// Writes the documented binary layout: header, `u8` payload kind 0,
    /// `u64` dimension, representatives (`u32`) and norms (`f64`), all little endian.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, self.geometry, self.sector, PayloadKind::Basis)?;
        w.write_u64::<LittleEndian>(self.dim() as u64)?;
        for &r in &self.representatives {
            w.write_u32::<LittleEndian>(r)?;
        }
        for &n in &self.norms {
            w.write_f64::<LittleEndian>(n)?;
        }
        Ok(())
    }

    /// Reads a basis cache and checks it against a fresh construction.
    pub fn read_cache<R: Read>(mut r: R) -> Result<SymmetryBasis> {
        let (geometry, sector, kind) = read_header(&mut r)?;
        if kind != PayloadKind::Basis {
            return Err(Error::Format("not a basis cache".into()));
        }
        let dim = r.read_u64::<LittleEndian>()? as usize;
        let mut reps = Vec::with_capacity(dim);
        for _ in 0..dim {
            reps.push(r.read_u32::<LittleEndian>()?);
        }
        let mut norms = Vec::with_capacity(dim);
        for _ in 0..dim {
            norms.push(r.read_f64::<LittleEndian>()?);
        }
        let basis = build_sector_basis(geometry, sector)?;
        if basis.representatives != reps || basis.norms != norms {
            return Err(Error::Format("basis cache does not match this build's conventions".into()));
        }
        Ok(basis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Basis = 0,
    DenseMatrix = 1,
    StateVector = 2,
}

/// Header `{magic "THLB", version u32, L u16, k u16, reflection i8}` followed by a payload kind byte.
pub fn write_header<W: Write>(w: &mut W, geometry: RingGeometry, sector: SectorSpec, kind: PayloadKind) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION)?;
    w.write_u16::<LittleEndian>(geometry.sites as u16)?;
    w.write_u16::<LittleEndian>(sector.momentum as u16)?;
    w.write_i8(sector.reflection.code())?;
    w.write_u8(kind as u8)?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<(RingGeometry, SectorSpec, PayloadKind)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let geometry = RingGeometry::new(r.read_u16::<LittleEndian>()? as usize)?;
    let momentum = r.read_u16::<LittleEndian>()? as usize;
    let reflection = Reflection::from_code(r.read_i8()?)?;
    let kind = match r.read_u8()? {
        0 => PayloadKind::Basis,
        1 => PayloadKind::DenseMatrix,
        2 => PayloadKind::StateVector,
        other => return Err(Error::Format(format!("bad payload kind {other}"))),
    };
    let sector = SectorSpec { momentum, reflection };
    sector.validate(&geometry)?;
    Ok((geometry, sector, kind))
}

/// Enumerates the orbits of the sector and builds the bitstring lookup table.
pub fn build_sector_basis(geometry: RingGeometry, sector: SectorSpec) -> Result<SymmetryBasis> {
    sector.validate(&geometry)?;
    let len = geometry.sites;
    if len > MAX_LOOKUP_SITES {
        return Err(Error::Resource(format!("lookup table for L = {len} exceeds the {MAX_LOOKUP_SITES}-site guard")));
    }
    let with_reflection = sector.reflection != Reflection::None;
    let order = if with_reflection { 2 * len } else { len };
    let kmom = 2.0 * PI * sector.momentum as f64 / len as f64;
    let sigma = match sector.reflection {
        Reflection::Odd => -1.0,
        _ => 1.0,
    };
    let characters: Vec<Complex64> = (0..order)
        .map(|e| {
            let (r, p) = (e % len, e / len);
            let ph = Complex64::from_polar(1.0, kmom * r as f64);
            if p == 1 {
                ph * sigma
            } else {
                ph
            }
        })
        .collect();

    let full = geometry.hilbert_dim();
    let mut lookup_index = vec![NO_INDEX; full];
    let mut lookup_element = vec![0u16; full];
    let mut representatives = Vec::new();
    let mut norms = Vec::new();

    for s in 0..full as u32 {
        let mut best = s;
        let mut best_e = 0usize;
        let mut t = s;
        for r in 0..len {
            if t < best {
                best = t;
                best_e = r;
            }
            t = rotate(t, 1, len);
        }
        if with_reflection {
            let mut t = reflect(s, len);
            for r in 0..len {
                if t < best {
                    best = t;
                    best_e = r + len;
                }
                t = rotate(t, 1, len);
            }
        }
        lookup_element[s as usize] = best_e as u16;
        if best == s {
            let mut char_sum = Complex64::new(0.0, 0.0);
            let mut stabilizer = 0usize;
            for (e, ch) in characters.iter().enumerate() {
                if SymmetryBasis::apply_element(e, s, len) == s {
                    char_sum += ch;
                    stabilizer += 1;
                }
            }
            // χ restricted to the stabilizer is either trivial (sum = |Stab|) or sums to zero.
            if char_sum.norm() > 0.5 {
                lookup_index[s as usize] = representatives.len() as u32;
                representatives.push(s);
                norms.push(((order / stabilizer) as f64).sqrt());
            }
        } else {
            lookup_index[s as usize] = lookup_index[best as usize];
        }
    }

    Ok(SymmetryBasis { geometry, sector, representatives, norms, lookup_index, lookup_element, characters })
}

/// Complex amplitudes over a [`SymmetryBasis`].
#[derive(Debug, Clone)]
pub struct SectorVector {
    basis: Arc<SymmetryBasis>,
    amplitudes: Vec<Complex64>,
}

impl SectorVector {
    pub fn new(basis: Arc<SymmetryBasis>, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::Usage(format!(
                "{} amplitudes for a basis of dimension {}",
                amplitudes.len(),
                basis.dim()
            )));
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::Numerical("non-finite amplitude".into()));
        }
        Ok(Self { basis, amplitudes })
    }

    pub fn zeros(basis: Arc<SymmetryBasis>) -> Self {
        let n = basis.dim();
        Self { basis, amplitudes: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn basis(&self) -> &Arc<SymmetryBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.amplitudes)
    }

    pub fn normalize(&mut self) -> Result<f64> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numerical("cannot normalize a zero vector".into()));
        }
        crate::linalg::scale(&mut self.amplitudes, Complex64::new(1.0 / n, 0.0));
        Ok(n)
    }

    pub fn check_same_basis(&self, other: &SectorVector) -> Result<()> {
        if !self.basis.same_space(&other.basis) {
            return Err(Error::Usage(format!(
                "vectors live in different spaces (L={} {} vs L={} {})",
                self.basis.sites(),
                self.basis.sector(),
                other.basis.sites(),
                other.basis.sector()
            )));
        }
        Ok(())
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &SectorVector) -> Result<Complex64> {
        self.check_same_basis(other)?;
        Ok(crate::linalg::dot(&self.amplitudes, &other.amplitudes))
    }

    /// Amplitudes in the computational basis of the full `2^L` space.
    pub fn expand_full(&self) -> Vec<Complex64> {
        let b = &self.basis;
        (0..b.geometry.hilbert_dim() as u32)
            .map(|s| match b.lookup(s) {
                Some((a, ch)) => self.amplitudes[a] * ch / b.norms[a],
                None => Complex64::new(0.0, 0.0),
            })
            .collect()
    }

    /// Projects a full-space vector onto the sector (no renormalization).
    pub fn project_full(basis: Arc<SymmetryBasis>, full: &[Complex64]) -> Result<SectorVector> {
        if full.len() != basis.geometry.hilbert_dim() {
            return Err(Error::Usage("full vector has the wrong length".into()));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.dim()];
        for (s, psi) in full.iter().enumerate() {
            if let Some((a, ch)) = basis.lookup(s as u32) {
                amps[a] += ch.conj() / basis.norms[a] * psi;
            }
        }
        SectorVector::new(basis, amps)
    }

    /// Checkpoint layout: basis header, payload kind 2, `u64` dim, `f64` time, then `(re, im)` pairs.
    pub fn write_checkpoint<W: Write>(&self, mut w: W, time: f64) -> Result<()> {
        write_header(&mut w, self.basis.geometry, self.basis.sector, PayloadKind::StateVector)?;
        w.write_u64::<LittleEndian>(self.amplitudes.len() as u64)?;
        w.write_f64::<LittleEndian>(time)?;
        for a in &self.amplitudes {
            w.write_f64::<LittleEndian>(a.re)?;
            w.write_f64::<LittleEndian>(a.im)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R, basis: Arc<SymmetryBasis>) -> Result<(SectorVector, f64)> {
        let (geometry, sector, kind) = read_header(&mut r)?;
        if kind != PayloadKind::StateVector || geometry != basis.geometry || sector != basis.sector {
            return Err(Error::Format("checkpoint does not belong to this basis".into()));
        }
        let dim = r.read_u64::<LittleEndian>()? as usize;
        let time = r.read_f64::<LittleEndian>()?;
        let mut amps = Vec::with_capacity(dim);
        for _ in 0..dim {
            let re = r.read_f64::<LittleEndian>()?;
            let im = r.read_f64::<LittleEndian>()?;
            amps.push(Complex64::new(re, im));
        }
        Ok((SectorVector::new(basis, amps)?, time))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(l: usize) -> RingGeometry {
        RingGeometry::new(l).unwrap()
    }

    #[test]
    fn invalid_reflection_sector_rejected() {
        let err = build_sector_basis(geom(6), SectorSpec { momentum: 1, reflection: Reflection::Even });
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(build_sector_basis(geom(6), SectorSpec { momentum: 3, reflection: Reflection::Odd }).is_ok());
        assert!(matches!(build_sector_basis(geom(6), SectorSpec::momentum(6)), Err(Error::Config(_))));
    }

    #[test]
    fn momentum_sectors_complete() {
        for l in 2..=14 {
            let total: usize =
                (0..l).map(|k| build_sector_basis(geom(l), SectorSpec::momentum(k)).unwrap().dim()).sum();
            assert_eq!(total, 1 << l, "L = {l}");
            let split: usize =
                all_sectors(&geom(l), true).into_iter().map(|s| build_sector_basis(geom(l), s).unwrap().dim()).sum();
            assert_eq!(split, 1 << l, "L = {l} with parity split");
        }
    }

    #[test]
    fn representatives_are_orbit_minima_and_norms_positive() {
        let b = build_sector_basis(geom(9), SectorSpec::ZERO_EVEN).unwrap();
        for (&r, &n) in b.representatives().iter().zip(b.norms()) {
            assert!(n > 0.0);
            for shift in 0..9 {
                assert!(rotate(r, shift, 9) >= r);
                assert!(rotate(reflect(r, 9), shift, 9) >= r);
            }
        }
        assert!(b.representatives().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn expand_then_project_round_trips() {
        let b = Arc::new(build_sector_basis(geom(8), SectorSpec::momentum(3)).unwrap());
        let amps: Vec<Complex64> =
            (0..b.dim()).map(|i| Complex64::new((i as f64).sin(), (2.0 * i as f64).cos())).collect();
        let v = SectorVector::new(b.clone(), amps).unwrap();
        let full = v.expand_full();
        let norm_full: f64 = full.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm_full - v.norm()).abs() < 1e-12);
        let back = SectorVector::project_full(b, &full).unwrap();
        for (x, y) in back.amplitudes().iter().zip(v.amplitudes()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn expanded_states_carry_the_sector_quantum_numbers() {
        let l = 6;
        for sector in all_sectors(&geom(l), true) {
            let b = Arc::new(build_sector_basis(geom(l), sector).unwrap());
            let kmom = 2.0 * PI * sector.momentum as f64 / l as f64;
            for a in 0..b.dim() {
                let mut amps = vec![Complex64::new(0.0, 0.0); b.dim()];
                amps[a] = Complex64::new(1.0, 0.0);
                let full = SectorVector::new(b.clone(), amps).unwrap().expand_full();
                // T|s> = |rotate(s)> and T psi = e^{iK} psi, so psi(rotate(s)) = e^{-iK} psi(s)
                for s in 0..(1u32 << l) {
                    let lhs = full[rotate(s, 1, l) as usize];
                    let rhs = Complex64::from_polar(1.0, -kmom) * full[s as usize];
                    assert!((lhs - rhs).norm() < 1e-12);
                    if sector.reflection != Reflection::None {
                        let sign = if sector.reflection == Reflection::Even { 1.0 } else { -1.0 };
                        assert!((full[reflect(s, l) as usize] - full[s as usize] * sign).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn basis_cache_round_trip() {
        let b = build_sector_basis(geom(10), SectorSpec::ZERO_EVEN).unwrap();
        let mut bytes = Vec::new();
        b.write_cache(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"THLB");
        assert_eq!(bytes.len(), 4 + 4 + 2 + 2 + 1 + 1 + 8 + b.dim() * 12);
        let back = SymmetryBasis::read_cache(&bytes[..]).unwrap();
        assert_eq!(back.representatives(), b.representatives());
    }
}
