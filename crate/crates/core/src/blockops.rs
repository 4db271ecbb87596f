//! Block-structured nonlocal operators.
//!
//! Every operator here has the shape
//!
//! ```text
//! U = Σ_i |p(i)⟩⟨i| ⊗ u_i
//! ```
//!
//! where the control register holds `N` qubits, `p` permutes its `2^N` basis
//! states and each block `u_i` is a `2^M × 2^M` unitary. The diagonal family
//! has `p = id`, the offdiagonal family has `N = 1` and `p(i) = i ⊕ 1`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Complex, Matrix, ONE, UNITARY_TOL, ZERO};

/// A permutation of the `2^width` basis states of a register, stored as
/// `map[i] = p(i)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    width: usize,
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let width = linalg::qubit_count(map.len())?;
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::NotBijective(map.len()));
            }
        }
        Ok(Self { width, map })
    }

    pub fn identity(width: usize) -> Result<Self> {
        Self::new((0..1usize << width).collect())
    }

    /// `i ↦ i ⊕ mask`, i.e. a tensor product of `I`/`X` factors.
    pub fn xor_mask(width: usize, mask: usize) -> Result<Self> {
        if mask >= 1usize << width {
            return Err(Error::NotBijective(1usize << width));
        }
        Self::new((0..1usize << width).map(|i| i ^ mask).collect())
    }

    pub fn random<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Result<Self> {
        let mut map: Vec<usize> = (0..1usize << width).collect();
        map.shuffle(rng);
        Self::new(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &p) in self.map.iter().enumerate() {
            inv[p] = i;
        }
        Permutation {
            width: self.width,
            map: inv,
        }
    }

    /// The mask `c` with `p(i) = i ⊕ c` for every `i`, if one exists.
    pub fn as_xor_mask(&self) -> Option<usize> {
        let c = self.map[0];
        self.map.iter().enumerate().all(|(i, &p)| p == i ^ c).then_some(c)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Permutation::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

/// `R = Σ_i |p(i)⟩⟨i|` as a 0/1 matrix.
pub fn permutation_operator(p: &Permutation) -> Matrix {
    Matrix::from_fn(1usize << p.width, |r, c| if p.map[c] == r { ONE } else { ZERO })
        .expect("permutation width is at least one qubit")
}

/// True iff `R(p)` factors as a tensor product of single-qubit `I`/`X`.
pub fn is_product_of_single_qubit(p: &Permutation) -> bool {
    p.as_xor_mask().is_some()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Diagonal,
    Offdiagonal,
    Permutation,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Diagonal => "diagonal",
            BlockKind::Offdiagonal => "offdiagonal",
            BlockKind::Permutation => "permutation",
        })
    }
}

/// `Σ_i |p(i)⟩⟨i| ⊗ u_i` with validated unitary blocks of a common size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBlockOperation", into = "RawBlockOperation")]
pub struct BlockOperation {
    kind: BlockKind,
    control_width: usize,
    blocks: Vec<Matrix>,
    perm: Permutation,
}

#[derive(Serialize, Deserialize)]
struct RawBlockOperation {
    kind: BlockKind,
    control_width: usize,
    blocks: Vec<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perm: Option<Permutation>,
}

impl TryFrom<RawBlockOperation> for BlockOperation {
    type Error = Error;

    fn try_from(raw: RawBlockOperation) -> Result<Self> {
        BlockOperation::new(raw.kind, raw.control_width, raw.blocks, raw.perm)
    }
}

impl From<BlockOperation> for RawBlockOperation {
    fn from(op: BlockOperation) -> Self {
        RawBlockOperation {
            kind: op.kind,
            control_width: op.control_width,
            blocks: op.blocks,
            perm: Some(op.perm),
        }
    }
}

impl BlockOperation {
    /// General validating constructor. `perm` may be omitted for the
    /// diagonal and offdiagonal kinds, whose permutation is implied.
    pub fn new(
        kind: BlockKind,
        control_width: usize,
        blocks: Vec<Matrix>,
        perm: Option<Permutation>,
    ) -> Result<Self> {
        if control_width == 0 {
            return Err(Error::InvalidOperation("control_width must be at least 1".into()));
        }
        let count = 1usize << control_width;
        if blocks.len() != count {
            return Err(Error::InvalidOperation(format!(
                "expected {count} blocks for control_width {control_width}, found {}",
                blocks.len()
            )));
        }
        let block_dim = blocks[0].dim();
        for (i, b) in blocks.iter().enumerate() {
            if b.dim() != block_dim {
                return Err(Error::InvalidOperation(format!(
                    "blocks[{i}] has dimension {}, blocks[0] has {block_dim}",
                    b.dim()
                )));
            }
            if !b.is_unitary(UNITARY_TOL) {
                return Err(Error::NotUnitary(format!("blocks[{i}]")));
            }
        }

        let implied = match kind {
            BlockKind::Diagonal => Some(Permutation::identity(control_width)?),
            BlockKind::Offdiagonal => {
                if control_width != 1 {
                    return Err(Error::InvalidOperation(
                        "offdiagonal operations have control_width 1".into(),
                    ));
                }
                Some(Permutation::xor_mask(1, 1)?)
            }
            BlockKind::Permutation => None,
        };
        let perm = match (perm, implied) {
            (Some(p), Some(q)) if p != q => {
                return Err(Error::InvalidOperation(format!(
                    "perm {:?} is inconsistent with kind {kind}",
                    p.map()
                )))
            }
            (Some(p), _) => p,
            (None, Some(q)) => q,
            (None, None) => {
                return Err(Error::InvalidOperation(
                    "permutation operations need an explicit perm".into(),
                ))
            }
        };
        if perm.width() != control_width {
            return Err(Error::InvalidOperation(format!(
                "perm acts on {} qubits, control_width is {control_width}",
                perm.width()
            )));
        }

        Ok(Self {
            kind,
            control_width,
            blocks,
            perm,
        })
    }

    /// `Σ_i |i⟩⟨i| ⊗ u_i`.
    pub fn diagonal(blocks: Vec<Matrix>) -> Result<Self> {
        let n = control_width_for(blocks.len())?;
        Self::new(BlockKind::Diagonal, n, blocks, None)
    }

    /// `Σ_i |i⊕1⟩⟨i| ⊗ u_i` with a single control qubit.
    pub fn offdiagonal(blocks: Vec<Matrix>) -> Result<Self> {
        Self::new(BlockKind::Offdiagonal, 1, blocks, None)
    }

    /// `Σ_i |p(i)⟩⟨i| ⊗ u_i`.
    pub fn permutation(perm: Permutation, blocks: Vec<Matrix>) -> Result<Self> {
        let n = perm.width();
        Self::new(BlockKind::Permutation, n, blocks, Some(perm))
    }

    /// Haar-random blocks on `block_width` qubits; permutation kinds get a
    /// uniformly random permutation.
    pub fn random<R: Rng + ?Sized>(
        kind: BlockKind,
        control_width: usize,
        block_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..1usize << control_width)
            .map(|_| linalg::haar_random_unitary_with(1usize << block_width, rng))
            .collect::<Result<Vec<_>>>()?;
        let perm = match kind {
            BlockKind::Permutation => Some(Permutation::random(control_width, rng)?),
            _ => None,
        };
        Self::new(kind, control_width, blocks, perm)
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn control_width(&self) -> usize {
        self.control_width
    }

    /// Number of qubits each block acts on.
    pub fn block_width(&self) -> usize {
        self.blocks[0].qubits()
    }

    pub fn block_dim(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn total_width(&self) -> usize {
        self.control_width + self.block_width()
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    /// Dense matrix of the whole operator, control register most significant.
    pub fn build_matrix(&self) -> Matrix {
        let b = self.block_dim();
        let dim = b << self.control_width;
        Matrix::from_fn(dim, |r, c| {
            let (i, bc) = (c / b, c % b);
            let (ri, br) = (r / b, r % b);
            if self.perm.apply(i) == ri {
                self.blocks[i][(br, bc)]
            } else {
                ZERO
            }
        })
        .expect("block operation dimension is a power of two")
    }

    /// Splits a one-control diagonal operator as `(I ⊗ u_0) · CU` with
    /// `CU = |0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ u_0† u_1`. Returns `(u_0, CU)`.
    pub fn control_u_decomposition(&self) -> Result<(Matrix, Matrix)> {
        if self.kind != BlockKind::Diagonal || self.control_width != 1 {
            return Err(Error::InvalidOperation(
                "control-U decomposition needs a diagonal operation with one control qubit".into(),
            ));
        }
        let u0 = self.blocks[0].clone();
        let relative = u0.adjoint().matmul(&self.blocks[1]);
        let identity = Matrix::identity(u0.dim())?;
        let controlled = BlockOperation::diagonal(vec![identity, relative])?.build_matrix();
        Ok((u0, controlled))
    }
}

fn control_width_for(block_count: usize) -> Result<usize> {
    linalg::qubit_count(block_count)
        .map_err(|_| Error::InvalidOperation(format!("block count {block_count} is not a power of two >= 2")))
}

/// The fixed gates the protocols use for local steps and corrections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    X,
    Z,
    H,
    #[serde(rename = "CNOT")]
    Cnot,
}

impl Gate {
    pub fn name(self) -> &'static str {
        match self {
            Gate::X => "X",
            Gate::Z => "Z",
            Gate::H => "H",
            Gate::Cnot => "CNOT",
        }
    }

    pub fn matrix(self) -> Matrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rows: &[&[f64]] = match self {
            Gate::X => &[&[0.0, 1.0], &[1.0, 0.0]],
            Gate::Z => &[&[1.0, 0.0], &[0.0, -1.0]],
            Gate::H => &[&[s, s], &[s, -s]],
            Gate::Cnot => &[
                &[1.0, 0.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0],
                &[0.0, 0.0, 1.0, 0.0],
            ],
        };
        Matrix::from_real_rows(rows).expect("static gate table")
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" => Ok(Gate::X),
            "Z" => Ok(Gate::Z),
            "H" => Ok(Gate::H),
            "CNOT" => Ok(Gate::Cnot),
            other => Err(Error::UnknownGate(other.to_string())),
        }
    }
}

pub fn named_gate(name: &str) -> Result<Matrix> {
    Ok(name.parse::<Gate>()?.matrix())
}

/// `c · I` on `dim`.
pub fn scalar_block(dim: usize, c: Complex) -> Result<Matrix> {
    Ok(Matrix::identity(dim)?.scale(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_random_unitary, kron};

    fn i2() -> Matrix {
        Matrix::identity(2).unwrap()
    }

    fn cnot_truth_table() -> Matrix {
        Matrix::from_fn(4, |r, c| {
            let (ctrl, tgt) = (c >> 1, c & 1);
            if r == (ctrl << 1 | (tgt ^ ctrl)) {
                ONE
            } else {
                ZERO
            }
        })
        .unwrap()
    }

    #[test]
    fn diagonal_identity_x_is_cnot() {
        let op = BlockOperation::diagonal(vec![i2(), Gate::X.matrix()]).unwrap();
        assert_eq!(op.build_matrix(), cnot_truth_table());
        assert_eq!(Gate::Cnot.matrix(), cnot_truth_table());
    }

    #[test]
    fn scalar_blocks_give_single_qubit_diagonal() {
        let c0 = Complex::from_polar(1.0, 0.3);
        let c1 = Complex::from_polar(1.0, -1.1);
        let op = BlockOperation::diagonal(vec![scalar_block(2, c0).unwrap(), scalar_block(2, c1).unwrap()])
            .unwrap();
        let d = Matrix::from_fn(2, |r, c| match (r, c) {
            (0, 0) => c0,
            (1, 1) => c1,
            _ => ZERO,
        })
        .unwrap();
        assert!(op.build_matrix().approx_eq(&kron(&d, &i2()), 0.0));
    }

    #[test]
    fn offdiagonal_identities_is_x_kron_i() {
        let op = BlockOperation::offdiagonal(vec![i2(), i2()]).unwrap();
        assert_eq!(op.build_matrix(), kron(&Gate::X.matrix(), &i2()));
        assert_eq!(op.perm().map(), [1, 0]);
    }

    #[test]
    fn permutation_operator_examples() {
        assert_eq!(
            permutation_operator(&Permutation::identity(2).unwrap()),
            Matrix::identity(4).unwrap()
        );
        let swap = Permutation::new(vec![1, 0]).unwrap();
        assert_eq!(permutation_operator(&swap), Gate::X.matrix());
        let p = Permutation::new(vec![1, 0, 3, 2]).unwrap();
        assert_eq!(permutation_operator(&p), kron(&i2(), &Gate::X.matrix()));
        assert_eq!(Permutation::new(vec![0, 0]), Err(Error::NotBijective(2)));
        assert_eq!(Permutation::new(vec![0, 3]), Err(Error::NotBijective(2)));
    }

    #[test]
    fn xor_mask_detection() {
        assert_eq!(Permutation::identity(2).unwrap().as_xor_mask(), Some(0));
        let flip_all = Permutation::new(vec![3, 2, 1, 0]).unwrap();
        assert_eq!(flip_all.as_xor_mask(), Some(0b11));
        let middle_swap = Permutation::new(vec![0, 2, 1, 3]).unwrap();
        assert!(!is_product_of_single_qubit(&middle_swap));
        // brute force: no mask c in 0..4 reproduces it
        assert!((0..4).all(|c| (0..4).any(|i| middle_swap.apply(i) != i ^ c)));
    }

    #[test]
    fn control_u_examples() {
        let op = BlockOperation::diagonal(vec![i2(), Gate::X.matrix()]).unwrap();
        let (local, cu) = op.control_u_decomposition().unwrap();
        assert_eq!(local, i2());
        assert_eq!(cu, Gate::Cnot.matrix());

        let u = haar_random_unitary(2, 9).unwrap();
        let op = BlockOperation::diagonal(vec![u.clone(), u.clone()]).unwrap();
        let (local, cu) = op.control_u_decomposition().unwrap();
        assert_eq!(local, u);
        assert!(cu.approx_eq(&Matrix::identity(4).unwrap(), UNITARY_TOL));

        let off = BlockOperation::offdiagonal(vec![i2(), i2()]).unwrap();
        assert!(off.control_u_decomposition().is_err());
    }

    #[test]
    fn named_gates() {
        assert_eq!(
            named_gate("X").unwrap(),
            Matrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
        );
        assert_eq!(
            named_gate("Z").unwrap(),
            Matrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap()
        );
        let h = named_gate("H").unwrap();
        assert!(h.matmul(&h).approx_eq(&i2(), UNITARY_TOL));
        assert_eq!(named_gate("Y"), Err(Error::UnknownGate("Y".into())));
    }

    #[test]
    fn construction_errors() {
        let raw_h = Matrix::from_real_rows(&[&[1.0, 1.0], &[1.0, -1.0]]).unwrap();
        assert_eq!(
            BlockOperation::diagonal(vec![i2(), raw_h]),
            Err(Error::NotUnitary("blocks[1]".into()))
        );
        assert!(BlockOperation::diagonal(vec![i2(), Matrix::identity(4).unwrap()]).is_err());
        assert!(BlockOperation::diagonal(vec![i2(), i2(), i2()]).is_err());
        assert!(BlockOperation::permutation(Permutation::identity(2).unwrap(), vec![i2(), i2()]).is_err());
        assert!(BlockOperation::new(
            BlockKind::Diagonal,
            1,
            vec![i2(), i2()],
            Some(Permutation::xor_mask(1, 1).unwrap())
        )
        .is_err());
    }

    #[test]
    fn json_schema() {
        let op = BlockOperation::diagonal(vec![i2(), Gate::X.matrix()]).unwrap();
        let v = serde_json::to_value(&op).unwrap();
        assert_eq!(v["kind"], "diagonal");
        assert_eq!(v["control_width"], 1);
        assert_eq!(v["perm"], serde_json::json!([0, 1]));
        let back: BlockOperation = serde_json::from_value(v).unwrap();
        assert_eq!(back, op);

        let no_perm = r#"{"kind":"offdiagonal","control_width":1,
            "blocks":[[[[1,0],[0,0]],[[0,0],[1,0]]],[[[1,0],[0,0]],[[0,0],[1,0]]]]}"#;
        let off: BlockOperation = serde_json::from_str(no_perm).unwrap();
        assert_eq!(off.perm().map(), [1, 0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn build_matrix_is_unitary(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let op = BlockOperation::random(BlockKind::Permutation, n, m, &mut rng).unwrap();
                prop_assert!(op.build_matrix().is_unitary(UNITARY_TOL));
            }

            #[test]
            fn diagonal_is_block_diagonal(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let op = BlockOperation::random(BlockKind::Diagonal, n, m, &mut rng).unwrap();
                let u = op.build_matrix();
                let b = op.block_dim();
                for r in 0..u.dim() {
                    for c in 0..u.dim() {
                        if r / b != c / b {
                            prop_assert_eq!(u[(r, c)], ZERO);
                        }
                    }
                }
            }

            #[test]
            fn permutation_times_inverse_is_identity(seed in any::<u64>(), n in 1usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = Permutation::random(n, &mut rng).unwrap();
                let prod = permutation_operator(&p).matmul(&permutation_operator(&p.inverse()));
                prop_assert_eq!(prod, Matrix::identity(1 << n).unwrap());
            }

            #[test]
            fn control_u_reconstructs(seed in any::<u64>(), m in 1usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let op = BlockOperation::random(BlockKind::Diagonal, 1, m, &mut rng).unwrap();
                let (local, cu) = op.control_u_decomposition().unwrap();
                let lifted = kron(&i2(), &local);
                prop_assert!(lifted.matmul(&cu).approx_eq(&op.build_matrix(), UNITARY_TOL));
            }

            #[test]
            fn xor_masks_factor_into_x_and_identity(n in 1usize..5, mask in 0usize..16) {
                let mask = mask % (1 << n);
                let p = Permutation::xor_mask(n, mask).unwrap();
                prop_assert!(is_product_of_single_qubit(&p));
                let factors = (0..n).map(|q| {
                    if (mask >> (n - 1 - q)) & 1 == 1 { Gate::X.matrix() } else { i2() }
                });
                let product = factors.reduce(|a, b| kron(&a, &b)).unwrap();
                prop_assert_eq!(permutation_operator(&p), product);
            }
        }
    }
}
