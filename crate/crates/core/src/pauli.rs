//! Pauli strings on an `L`-site ring and sums of them.
//!
//! A string is stored as a pair of bit masks `(x, z)` and denotes the
//! Hermitian operator `i^{|x & z|} X^x Z^z`, with `Z^z` acting first.
//! Bit `j` is site `j`; spin up is bit 1 and has `σ^z = +1`.

use std::collections::BTreeMap;

use num_complex::Complex64;

/// Cyclic shift of an `len`-bit word moving site `j` to site `j + shift`.
#[inline]
pub fn rotate(bits: u32, shift: usize, len: usize) -> u32 {
    let shift = shift % len;
    if shift == 0 {
        return bits;
    }
    let mask = low_mask(len);
    ((bits << shift) | (bits >> (len - shift))) & mask
}

/// Ring reflection `j -> -j mod len` (site 0 is fixed).
#[inline]
pub fn reflect(bits: u32, len: usize) -> u32 {
    let reversed = bits.reverse_bits() >> (32 - len);
    rotate(reversed, 1, len)
}

#[inline]
pub fn low_mask(len: usize) -> u32 {
    if len >= 32 {
        u32::MAX
    } else {
        (1u32 << len) - 1
    }
}

const I_POWERS: [Complex64; 4] =
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, -1.0)];

#[inline]
pub fn i_pow(exp: u32) -> Complex64 {
    I_POWERS[(exp & 3) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliString {
    pub x: u32,
    pub z: u32,
}

impl PauliString {
    pub const IDENTITY: PauliString = PauliString { x: 0, z: 0 };

    pub fn single(op: char, site: usize) -> Option<Self> {
        let bit = 1u32 << site;
        match op.to_ascii_lowercase() {
            'i' => Some(Self::IDENTITY),
            'x' => Some(Self { x: bit, z: 0 }),
            'y' => Some(Self { x: bit, z: bit }),
            'z' => Some(Self { x: 0, z: bit }),
            _ => None,
        }
    }

    /// Builds a string from letters placed at the given sites.
    pub fn from_letters(letters: &str, sites: &[usize]) -> Option<Self> {
        if letters.chars().count() != sites.len() {
            return None;
        }
        let mut out = Self::IDENTITY;
        for (c, &s) in letters.chars().zip(sites) {
            if s >= 32 {
                return None;
            }
            let p = Self::single(c, s)?;
            if (out.x | out.z) & ((p.x | p.z) & (1 << s)) != 0 {
                return None;
            }
            out.x |= p.x;
            out.z |= p.z;
        }
        Some(out)
    }

    #[inline]
    pub fn support(&self) -> u32 {
        self.x | self.z
    }

    #[inline]
    pub fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    /// Action on a computational basis state: returns `(phase, flipped state)`.
    #[inline]
    pub fn apply(&self, state: u32) -> (Complex64, u32) {
        let neg = (self.z & !state).count_ones();
        (i_pow(self.y_count() + 2 * neg), state ^ self.x)
    }

    /// Product `self * other = i^k * result`; returns `(k mod 4, result)`.
    pub fn mul(&self, other: &PauliString) -> (u32, PauliString) {
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        let exp = self.y_count() as i64 + other.y_count() as i64 + 2 * (self.z & other.x).count_ones() as i64
            - (x & z).count_ones() as i64;
        (exp.rem_euclid(4) as u32, PauliString { x, z })
    }

    pub fn translated(&self, shift: usize, len: usize) -> Self {
        Self { x: rotate(self.x, shift, len), z: rotate(self.z, shift, len) }
    }

    pub fn reflected(&self, len: usize) -> Self {
        Self { x: reflect(self.x, len), z: reflect(self.z, len) }
    }

    /// Dense `2^n x 2^n` matrix on the first `n` sites (row = output state).
    pub fn dense(&self, n: usize) -> Vec<Vec<Complex64>> {
        let dim = 1usize << n;
        let mut m = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
        for col in 0..dim as u32 {
            let (ph, row) = self.apply(col);
            m[row as usize][col as usize] = ph;
        }
        m
    }
}

/// Linear combination of Pauli strings with complex coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PauliSum {
    terms: BTreeMap<PauliString, Complex64>,
}

impl PauliSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        let mut s = Self::new();
        s.add_term(Complex64::new(1.0, 0.0), PauliString::IDENTITY);
        s
    }

    pub fn from_string(coef: f64, p: PauliString) -> Self {
        let mut s = Self::new();
        s.add_term(Complex64::new(coef, 0.0), p);
        s
    }

    pub fn add_term(&mut self, coef: Complex64, p: PauliString) {
        *self.terms.entry(p).or_insert(Complex64::new(0.0, 0.0)) += coef;
    }

    pub fn add(&mut self, other: &PauliSum) {
        for (p, c) in &other.terms {
            self.add_term(*c, *p);
        }
    }

    pub fn scaled(&self, factor: f64) -> PauliSum {
        PauliSum { terms: self.terms.iter().map(|(p, c)| (*p, c * factor)).collect() }
    }

    pub fn mul(&self, other: &PauliSum) -> PauliSum {
        let mut out = PauliSum::new();
        for (pa, ca) in &self.terms {
            for (pb, cb) in &other.terms {
                let (k, p) = pa.mul(pb);
                out.add_term(ca * cb * i_pow(k), p);
            }
        }
        out.pruned(1e-15)
    }

    /// `(O + O†) / 2`; every string is Hermitian so only real parts survive.
    pub fn hermitian_part(&self) -> PauliSum {
        PauliSum { terms: self.terms.iter().map(|(p, c)| (*p, Complex64::new(c.re, 0.0))).collect() }.pruned(1e-15)
    }

    pub fn pruned(mut self, tol: f64) -> PauliSum {
        self.terms.retain(|_, c| c.norm() > tol);
        self
    }

    pub fn translated(&self, shift: usize, len: usize) -> PauliSum {
        let mut out = PauliSum::new();
        for (p, c) in &self.terms {
            out.add_term(*c, p.translated(shift, len));
        }
        out
    }

    pub fn reflected(&self, len: usize) -> PauliSum {
        let mut out = PauliSum::new();
        for (p, c) in &self.terms {
            out.add_term(*c, p.reflected(len));
        }
        out
    }

    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, &Complex64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn support(&self) -> u32 {
        self.terms.keys().fold(0, |acc, p| acc | p.support())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.terms.values().all(|c| c.im.abs() <= tol)
    }
}

/// Bond energy operator `H_j = Z_j Z_{j+1} + (h_x/2)(X_j + X_{j+1}) + (h_z/2)(Z_j + Z_{j+1})`.
pub fn bond_energy(h_x: f64, h_z: f64, bond: usize, len: usize) -> PauliSum {
    let a = bond % len;
    let b = (bond + 1) % len;
    let mut s = PauliSum::new();
    let one = Complex64::new(1.0, 0.0);
    s.add_term(one, PauliString { x: 0, z: (1 << a) | (1 << b) });
    for site in [a, b] {
        s.add_term(one * (h_x / 2.0), PauliString { x: 1 << site, z: 0 });
        s.add_term(one * (h_z / 2.0), PauliString { x: 0, z: 1 << site });
    }
    s.pruned(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matmul(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let n = a.len();
        let mut c = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    #[test]
    fn single_site_matrices() {
        let y = PauliString::single('y', 0).unwrap().dense(1);
        // basis index 1 = spin up; Y|up> = i|down>
        assert_eq!(y[0][1], Complex64::new(0.0, 1.0));
        assert_eq!(y[1][0], Complex64::new(0.0, -1.0));
        let z = PauliString::single('z', 0).unwrap().dense(1);
        assert_eq!(z[1][1].re, 1.0);
        assert_eq!(z[0][0].re, -1.0);
    }

    #[test]
    fn product_phase_matches_dense() {
        let letters = ['i', 'x', 'y', 'z'];
        for a in 0..16 {
            for b in 0..16 {
                let pa = PauliString::from_letters(&format!("{}{}", letters[a % 4], letters[a / 4]), &[0, 1]).unwrap();
                let pb = PauliString::from_letters(&format!("{}{}", letters[b % 4], letters[b / 4]), &[0, 1]).unwrap();
                let (k, p) = pa.mul(&pb);
                let lhs = matmul(&pa.dense(2), &pb.dense(2));
                let rhs = p.dense(2);
                for i in 0..4 {
                    for j in 0..4 {
                        assert!((lhs[i][j] - rhs[i][j] * i_pow(k)).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn reflection_fixes_site_zero() {
        assert_eq!(reflect(0b0001, 5), 0b0001);
        assert_eq!(reflect(0b0010, 5), 0b10000);
        assert_eq!(reflect(reflect(0b10110, 5), 5), 0b10110);
        assert_eq!(rotate(0b10000, 1, 5), 0b00001);
    }

    #[test]
    fn bond_product_hermitian_part_is_real() {
        let h0 = bond_energy(-1.05, 0.5, 0, 6);
        let h1 = bond_energy(-1.05, 0.5, 1, 6);
        let prod = h0.mul(&h1);
        assert!(!prod.is_hermitian(1e-12));
        assert!(prod.hermitian_part().is_hermitian(0.0));
    }
}
