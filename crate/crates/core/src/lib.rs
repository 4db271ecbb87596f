//! Local implementation of nonlocal block-form unitaries.
//!
//! A unitary of the form `U = Σ_i |p(i)⟩⟨i| ⊗ u_i`, whose control register
//! lives with one party and whose blocks act on another party's qubits, can
//! be carried out with local operations, one Bell pair per control qubit and
//! two classical bits per Bell pair, provided the device for `U` sits with
//! the block-side party. This crate simulates those protocols on labeled
//! state vectors and checks them branch by branch against a direct
//! application of `U`.
//!
//! * [`linalg`]: dense complex matrices, Kronecker products, Haar sampling.
//! * [`statevec`]: labeled pure states with branch-explicit measurement.
//! * [`blockops`]: diagonal, offdiagonal and permutation block operators.
//! * [`protocol`]: the LOCC schedules, event logs and resource ledgers.
//! * [`verify`]: the independent oracle and per-step closed-form checks.
//! * [`selftest`]: the full verification grid behind `locc-blocks --selftest`.
//!
//! ```
//! use locc_blocks::blockops::{BlockOperation, Gate};
//! use locc_blocks::linalg::Matrix;
//! use locc_blocks::protocol::{enumerate_branches, ProtocolKind, ResourceLedger};
//! use locc_blocks::statevec::StateVector;
//! use locc_blocks::verify::oracle_apply;
//!
//! // CNOT written as the diagonal block operation |0⟩⟨0|⊗I + |1⟩⟨1|⊗X.
//! let op = BlockOperation::diagonal(vec![Matrix::identity(2)?, Gate::X.matrix()])?;
//! let psi0 = StateVector::basis(&["A", "B"], 0b10)?;
//!
//! let traces = enumerate_branches(ProtocolKind::BipartiteDiagonal, &op, &psi0, &Default::default())?;
//! assert_eq!(traces.len(), 4);
//! for t in &traces {
//!     assert!(t.final_state.max_amplitude_diff(&oracle_apply(&op, &psi0)?)? < 1e-10);
//!     assert_eq!(t.ledger, ResourceLedger::bipartite(1));
//! }
//! # Ok::<(), locc_blocks::Error>(())
//! ```

pub mod blockops;
pub mod error;
pub mod linalg;
pub mod protocol;
pub mod selftest;
pub mod statevec;
pub mod verify;

pub use error::{Error, Result};

// The README's and the guide's code listings are compiled and run as
// doc-tests.
#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/states.md")]
    mod states {}
    #[doc = include_str!("../../../book/src/block-operations.md")]
    mod block_operations {}
    #[doc = include_str!("../../../book/src/bipartite.md")]
    mod bipartite {}
    #[doc = include_str!("../../../book/src/multiqubit.md")]
    mod multiqubit {}
    #[doc = include_str!("../../../book/src/three-party.md")]
    mod three_party {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
