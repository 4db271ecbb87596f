//! Dense complex linear algebra at desk scale.
//!
//! Matrices are square, row-major and always have a power-of-two dimension, since
//! every operator here acts on a register of qubits. Nothing is sparse; the
//! largest operator a protocol ever materializes is 2^6 on a side.

use std::fmt;
use std::ops::{Index, Mul};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Complex = Complex64;

/// Tolerance for unitarity checks and amplitude equality throughout the crate.
pub const UNITARY_TOL: f64 = 1e-10;

pub const ZERO: Complex = Complex::new(0.0, 0.0);
pub const ONE: Complex = Complex::new(1.0, 0.0);

/// Returns `log2(dim)` if `dim` is a power of two of at least 2.
pub fn qubit_count(dim: usize) -> Result<usize> {
    if dim >= 2 && dim.is_power_of_two() {
        Ok(dim.trailing_zeros() as usize)
    } else {
        Err(Error::NotPowerOfTwo(dim))
    }
}

pub(crate) fn all_finite(values: &[Complex]) -> bool {
    values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// A dense square complex matrix acting on `log2(dim)` qubits.
///
/// Unitarity is not a type-level guarantee: an unnormalized
/// Hadamard has to be representable so that [`is_unitary`] can reject it.
/// Every place that requires a unitary (block constructors, gate tables)
/// checks it explicitly.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<Complex>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Result<Self> {
        qubit_count(dim)?;
        Ok(Self {
            dim,
            data: vec![ZERO; dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        Ok(m)
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex) -> Result<Self> {
        qubit_count(dim)?;
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite("matrix".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: Vec<Vec<Complex>>) -> Result<Self> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::NotSquare {
                rows: dim,
                cols: bad.len(),
            });
        }
        qubit_count(dim)?;
        let data: Vec<Complex> = rows.into_iter().flatten().collect();
        if !all_finite(&data) {
            return Err(Error::NonFinite("matrix".into()));
        }
        Ok(Self { dim, data })
    }

    /// Convenience for real-valued literals.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| Complex::new(x, 0.0)).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of qubits the matrix acts on.
    pub fn qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    pub fn row(&self, r: usize) -> &[Complex] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn scale(&self, factor: Complex) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn adjoint(&self) -> Matrix {
        let n = self.dim;
        let mut data = vec![ZERO; n * n];
        for r in 0..n {
            for c in 0..n {
                data[c * n + r] = self.data[r * n + c].conj();
            }
        }
        Matrix { dim: n, data }
    }

    /// Matrix product. Panics if the dimensions differ.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut data = vec![ZERO; n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == ZERO {
                    continue;
                }
                let other_row = &other.data[k * n..(k + 1) * n];
                let out = &mut data[r * n..(r + 1) * n];
                for (o, b) in out.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        Matrix { dim: n, data }
    }

    pub fn mul_vec(&self, v: &[Complex]) -> Result<Vec<Complex>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok((0..self.dim)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (n, m) = (self.dim, other.dim);
        let dim = n * m;
        let mut data = vec![ZERO; dim * dim];
        for r1 in 0..n {
            for c1 in 0..n {
                let a = self.data[r1 * n + c1];
                if a == ZERO {
                    continue;
                }
                for r2 in 0..m {
                    let row = (r1 * m + r2) * dim + c1 * m;
                    for c2 in 0..m {
                        data[row + c2] = a * other.data[r2 * m + c2];
                    }
                }
            }
        }
        Matrix { dim, data }
    }

    /// Largest entrywise modulus of `self - other`; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.dim != other.dim {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &Matrix, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        is_unitary(self, tol)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = Complex;

    fn index(&self, (r, c): (usize, usize)) -> &Complex {
        assert!(r < self.dim && c < self.dim, "matrix index out of range");
        &self.data[r * self.dim + c]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix({}x{}) [", self.dim, self.dim)?;
        for r in 0..self.dim {
            let row: Vec<String> = self
                .row(r)
                .iter()
                .map(|z| format!("{:+.4}{:+.4}i", z.re, z.im))
                .collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

// JSON form: row-major nested arrays of [re, im] pairs.
impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.dim)
            .map(|r| self.row(r).iter().map(|z| [z.re, z.im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(deserializer)?;
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| Complex::new(re, im)).collect())
            .collect();
        Matrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kron(b)
}

/// `max |(m† m - I)_{rc}| <= tol`.
pub fn is_unitary(m: &Matrix, tol: f64) -> bool {
    let gram = m.adjoint().matmul(m);
    let n = m.dim();
    (0..n).all(|r| {
        (0..n).all(|c| {
            let expected = if r == c { ONE } else { ZERO };
            (gram[(r, c)] - expected).norm() <= tol
        })
    })
}

/// Haar-distributed unitary, deterministic in `seed`.
pub fn haar_random_unitary(dim: usize, seed: u64) -> Result<Matrix> {
    haar_random_unitary_with(dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Haar-distributed unitary drawn from `rng`.
///
/// Orthonormalizes the columns of a complex Ginibre matrix. Gram-Schmidt
/// yields the QR factor whose `R` has a positive real diagonal, which is
/// exactly the phase correction that makes `Q` Haar distributed. Each column
/// is projected twice to keep orthogonality at machine precision.
pub fn haar_random_unitary_with<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Matrix> {
    qubit_count(dim)?;
    let mut columns: Vec<Vec<Complex>> = (0..dim)
        .map(|_| (0..dim).map(|_| gaussian(rng)).collect())
        .collect();

    for k in 0..dim {
        let (done, rest) = columns.split_at_mut(k);
        let col = &mut rest[0];
        for _ in 0..2 {
            for q in done.iter() {
                let overlap: Complex = q.iter().zip(col.iter()).map(|(a, b)| a.conj() * b).sum();
                for (c, a) in col.iter_mut().zip(q) {
                    *c -= overlap * a;
                }
            }
        }
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for c in col.iter_mut() {
            *c /= norm;
        }
    }

    Matrix::from_fn(dim, |r, c| columns[c][r])
}

/// One standard complex Gaussian sample (each part N(0, 1/2)).
pub(crate) fn gaussian<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex {
        Complex::new(re, 0.0)
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    fn det(m: &Matrix) -> Complex {
        let n = m.dim();
        let mut a: Vec<Vec<Complex>> = (0..n).map(|r| m.row(r).to_vec()).collect();
        let mut det = ONE;
        for k in 0..n {
            let pivot = (k..n)
                .max_by(|&i, &j| a[i][k].norm().partial_cmp(&a[j][k].norm()).unwrap())
                .unwrap();
            if a[pivot][k].norm() == 0.0 {
                return ZERO;
            }
            if pivot != k {
                a.swap(pivot, k);
                det = -det;
            }
            det *= a[k][k];
            let pivot_row = a[k].clone();
            for row in a.iter_mut().skip(k + 1) {
                let f = row[k] / pivot_row[k];
                for (x, &p) in row.iter_mut().zip(&pivot_row).skip(k) {
                    *x -= f * p;
                }
            }
        }
        det
    }

    fn cnot_truth_table() -> Matrix {
        // |c t> -> |c, t xor c>
        Matrix::from_fn(4, |r, col| {
            let (ctrl, tgt) = (col >> 1, col & 1);
            if r == (ctrl << 1 | (tgt ^ ctrl)) {
                ONE
            } else {
                ZERO
            }
        })
        .unwrap()
    }

    #[test]
    fn identity_kron_identity() {
        let i2 = Matrix::identity(2).unwrap();
        assert_eq!(kron(&i2, &i2), Matrix::identity(4).unwrap());
    }

    #[test]
    fn cnot_from_projector_terms() {
        let p0 = Matrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        let p1 = Matrix::from_real_rows(&[&[0.0, 0.0], &[0.0, 1.0]]).unwrap();
        let i2 = Matrix::identity(2).unwrap();
        let x = Matrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let a = kron(&p0, &i2);
        let b = kron(&p1, &x);
        let sum = Matrix::from_fn(4, |r, col| a[(r, col)] + b[(r, col)]).unwrap();
        assert_eq!(sum, cnot_truth_table());
    }

    #[test]
    fn zz_fixes_bell_state() {
        let z = Matrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = vec![c(s), ZERO, ZERO, c(s)];
        let out = kron(&z, &z).mul_vec(&phi).unwrap();
        for (o, p) in out.iter().zip(&phi) {
            assert!((o - p).norm() < 1e-15);
        }
    }

    #[test]
    fn hadamard_normalization() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = Matrix::from_real_rows(&[&[s, s], &[s, -s]]).unwrap();
        assert!(is_unitary(&h, UNITARY_TOL));
        let raw = Matrix::from_real_rows(&[&[1.0, 1.0], &[1.0, -1.0]]).unwrap();
        assert!(!is_unitary(&raw, UNITARY_TOL));
        // raw^dagger raw = 2 I
        let gram = raw.adjoint().matmul(&raw);
        assert!(gram.approx_eq(&Matrix::identity(2).unwrap().scale(c(2.0)), 0.0));
    }

    #[test]
    fn haar_is_deterministic_and_unitary() {
        let a = haar_random_unitary(2, 17).unwrap();
        let b = haar_random_unitary(2, 17).unwrap();
        assert_eq!(a, b);
        assert!(is_unitary(&a, 1e-10));
        assert_ne!(a, haar_random_unitary(2, 18).unwrap());
    }

    #[test]
    fn haar_samples_over_seeds() {
        for seed in 0..120u64 {
            for dim in [2usize, 4, 8, 16] {
                let u = haar_random_unitary(dim, seed).unwrap();
                assert!(is_unitary(&u, 1e-10), "seed {seed} dim {dim}");
                for col in 0..dim {
                    let norm: f64 = (0..dim).map(|r| u[(r, col)].norm_sqr()).sum();
                    assert!((norm.sqrt() - 1.0).abs() < 1e-10);
                }
                assert!((det(&u).norm() - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn haar_first_entry_is_not_biased_to_real_axis() {
        // A naive QR without phase fixing would leave a sign pattern; the
        // Gram-Schmidt route gives a uniformly distributed phase on entry (0,0).
        let mut mean = ZERO;
        let n = 4000;
        for seed in 0..n {
            let u = haar_random_unitary(2, seed).unwrap();
            mean += u[(0, 0)] / u[(0, 0)].norm();
        }
        mean /= n as f64;
        assert!(mean.norm() < 0.05, "mean phase {mean}");
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(haar_random_unitary(3, 0), Err(Error::NotPowerOfTwo(3)));
        assert_eq!(haar_random_unitary(1, 0), Err(Error::NotPowerOfTwo(1)));
        assert!(matches!(
            Matrix::from_rows(vec![vec![ONE, ZERO]]),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_entries() {
        let r = Matrix::from_real_rows(&[&[f64::NAN, 0.0], &[0.0, 1.0]]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn json_shape() {
        let x = Matrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let json = serde_json::to_string(&x).unwrap();
        assert_eq!(json, "[[[0.0,0.0],[1.0,0.0]],[[1.0,0.0],[0.0,0.0]]]");
        let back: Matrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, x);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kron_is_associative(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
                let a = haar_random_unitary(2, s1).unwrap();
                let b = haar_random_unitary(4, s2).unwrap();
                let c = haar_random_unitary(2, s3).unwrap();
                let left = kron(&kron(&a, &b), &c);
                let right = kron(&a, &kron(&b, &c));
                // Each entry is the same triple product, possibly associated differently.
                prop_assert!(left.max_abs_diff(&right) < 1e-15);
            }

            #[test]
            fn kron_preserves_unitarity(s1 in any::<u64>(), s2 in any::<u64>()) {
                let a = haar_random_unitary(4, s1).unwrap();
                let b = haar_random_unitary(2, s2).unwrap();
                prop_assert!(is_unitary(&kron(&a, &b), UNITARY_TOL));
            }
        }
    }
}
