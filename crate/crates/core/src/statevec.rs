//! Labeled pure-state simulator.
//!
//! Amplitudes are indexed by the basis string read in label order, with the
//! first label as the most significant bit. A register `Y1 Y2` holding
//! `|m⟩` in the decimal convention therefore sits at index `m`.
//!
//! Measurement is branch-explicit: the caller names the outcome and gets
//! back the renormalized post-measurement state (with the measured qubit
//! removed) together with the outcome's probability.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Complex, Matrix, ONE, UNITARY_TOL, ZERO};

/// Branches with weight below this are reported as impossible.
pub const IMPOSSIBLE_BRANCH_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    labels: Vec<String>,
    amps: Vec<Complex>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    pub qubit: String,
    pub bit: u8,
    pub probability: f64,
}

fn check_labels<S: AsRef<str>>(labels: &[S]) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    for l in labels {
        let l = l.as_ref();
        if out.iter().any(|o| o == l) {
            return Err(Error::DuplicateLabel(l.to_string()));
        }
        out.push(l.to_string());
    }
    Ok(out)
}

impl StateVector {
    /// Validating constructor: unique labels, `2^n` finite amplitudes, unit norm.
    pub fn new<S: AsRef<str>>(labels: &[S], amps: Vec<Complex>) -> Result<Self> {
        let state = Self::unnormalized(labels, amps)?;
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > UNITARY_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(state)
    }

    /// Like [`StateVector::new`] but rescales the amplitudes to unit norm.
    pub fn normalized<S: AsRef<str>>(labels: &[S], amps: Vec<Complex>) -> Result<Self> {
        let mut state = Self::unnormalized(labels, amps)?;
        let norm = state.norm_sqr().sqrt();
        if norm < IMPOSSIBLE_BRANCH_TOL {
            return Err(Error::NotNormalized(0.0));
        }
        for a in &mut state.amps {
            *a /= norm;
        }
        Ok(state)
    }

    fn unnormalized<S: AsRef<str>>(labels: &[S], amps: Vec<Complex>) -> Result<Self> {
        let labels = check_labels(labels)?;
        if labels.is_empty() {
            return Err(Error::InvalidOperation("a state needs at least one qubit".into()));
        }
        let expected = 1usize << labels.len();
        if amps.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: amps.len(),
            });
        }
        if !linalg::all_finite(&amps) {
            return Err(Error::NonFinite("state amplitudes".into()));
        }
        Ok(Self { labels, amps })
    }

    /// Computational basis state `|index⟩` over `labels`.
    pub fn basis<S: AsRef<str>>(labels: &[S], index: usize) -> Result<Self> {
        let dim = 1usize << labels.len();
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: index,
            });
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Self::new(labels, amps)
    }

    /// `(|00⟩ + |11⟩)/√2` on `(first, second)`.
    pub fn bell_pair(first: &str, second: &str) -> Result<Self> {
        let s = Complex::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::new(&[first, second], vec![s, ZERO, ZERO, s])
    }

    /// Haar-random pure state (normalized complex Gaussian vector).
    pub fn random<S: AsRef<str>, R: Rng + ?Sized>(labels: &[S], rng: &mut R) -> Result<Self> {
        let amps = (0..1usize << labels.len())
            .map(|_| linalg::gaussian(rng))
            .collect();
        Self::normalized(labels, amps)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn amps(&self) -> &[Complex] {
        &self.amps
    }

    pub fn num_qubits(&self) -> usize {
        self.labels.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    fn shift_of(&self, label: &str) -> Result<usize> {
        Ok(self.labels.len() - 1 - self.position(label)?)
    }

    fn target_shifts<S: AsRef<str>>(&self, targets: &[S]) -> Result<Vec<usize>> {
        check_labels(targets)?;
        targets.iter().map(|t| self.shift_of(t.as_ref())).collect()
    }

    /// `self ⊗ other` over the concatenated labels.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        let labels: Vec<&String> = self.labels.iter().chain(&other.labels).collect();
        let labels = check_labels(&labels)?;
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| a * b))
            .collect();
        Ok(StateVector { labels, amps })
    }

    /// Applies `gate` to `targets`; the first target is the gate's most
    /// significant index bit.
    pub fn apply_gate<S: AsRef<str>>(&self, gate: &Matrix, targets: &[S]) -> Result<StateVector> {
        let k = targets.len();
        if gate.dim() != 1usize << k {
            return Err(Error::DimensionMismatch {
                expected: 1usize << k,
                found: gate.dim(),
            });
        }
        let shifts = self.target_shifts(targets)?;
        let offsets = sub_offsets(&shifts);
        let mask: usize = shifts.iter().map(|s| 1usize << s).sum();

        let mut amps = self.amps.clone();
        let mut gathered = vec![ZERO; offsets.len()];
        for base in (0..self.amps.len()).filter(|i| i & mask == 0) {
            for (g, off) in gathered.iter_mut().zip(&offsets) {
                *g = self.amps[base + off];
            }
            for (r, off) in offsets.iter().enumerate() {
                amps[base + off] = gate.row(r).iter().zip(&gathered).map(|(a, b)| a * b).sum();
            }
        }
        Ok(StateVector {
            labels: self.labels.clone(),
            amps,
        })
    }

    /// Applies the basis permutation `|j⟩ ↦ |map[j]⟩` on `targets`.
    pub fn apply_basis_permutation<S: AsRef<str>>(
        &self,
        map: &[usize],
        targets: &[S],
    ) -> Result<StateVector> {
        let dim = 1usize << targets.len();
        if map.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: map.len(),
            });
        }
        let shifts = self.target_shifts(targets)?;
        let offsets = sub_offsets(&shifts);
        let mask: usize = shifts.iter().map(|s| 1usize << s).sum();

        let mut amps = vec![ZERO; self.amps.len()];
        for base in (0..self.amps.len()).filter(|i| i & mask == 0) {
            for (j, &to) in map.iter().enumerate() {
                amps[base + offsets[to]] = self.amps[base + offsets[j]];
            }
        }
        Ok(StateVector {
            labels: self.labels.clone(),
            amps,
        })
    }

    /// Probability of reading `bit` on `qubit`.
    pub fn probability(&self, qubit: &str, bit: u8) -> Result<f64> {
        let shift = self.shift_of(qubit)?;
        let want = usize::from(bit & 1);
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| (i >> shift) & 1 == want)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Projects `qubit` onto `|bit⟩`, renormalizes and drops the qubit.
    pub fn measure_branch(&self, qubit: &str, bit: u8) -> Result<(StateVector, MeasurementOutcome)> {
        if bit > 1 {
            return Err(Error::InvalidBranch(format!("measurement bit {bit}")));
        }
        let pos = self.position(qubit)?;
        let probability = self.probability(qubit, bit)?;
        if probability < IMPOSSIBLE_BRANCH_TOL {
            return Err(Error::ImpossibleBranch {
                qubit: qubit.to_string(),
                bit,
                probability,
            });
        }
        if self.labels.len() == 1 {
            return Err(Error::InvalidOperation(
                "cannot measure away the last qubit of a state".into(),
            ));
        }

        let shift = self.labels.len() - 1 - pos;
        let low = (1usize << shift) - 1;
        let scale = probability.sqrt();
        let half = self.amps.len() / 2;
        let amps = (0..half)
            .map(|i| {
                let full = ((i & !low) << 1) | (usize::from(bit) << shift) | (i & low);
                self.amps[full] / scale
            })
            .collect();
        let mut labels = self.labels.clone();
        labels.remove(pos);

        Ok((
            StateVector { labels, amps },
            MeasurementOutcome {
                qubit: qubit.to_string(),
                bit,
                probability,
            },
        ))
    }

    /// Same state with qubits listed in `labels` order.
    pub fn reorder<S: AsRef<str>>(&self, labels: &[S]) -> Result<StateVector> {
        let labels = check_labels(labels)?;
        if labels.len() != self.labels.len() || labels.iter().any(|l| !self.contains(l)) {
            return Err(Error::LabelSetMismatch {
                left: self.labels.clone(),
                right: labels,
            });
        }
        let n = labels.len();
        // new position p holds old position old_pos[p]
        let old_shift: Vec<usize> = labels.iter().map(|l| self.shift_of(l)).collect::<Result<_>>()?;
        let amps = (0..self.amps.len())
            .map(|new_idx| {
                let old_idx = (0..n)
                    .filter(|p| (new_idx >> (n - 1 - p)) & 1 == 1)
                    .map(|p| 1usize << old_shift[p])
                    .sum::<usize>();
                self.amps[old_idx]
            })
            .collect();
        Ok(StateVector { labels, amps })
    }

    /// `⟨self|other⟩` after aligning `other` to this state's label order.
    pub fn inner(&self, other: &StateVector) -> Result<Complex> {
        let other = other.reorder(&self.labels)?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// Largest amplitude difference after label alignment (phase-sensitive).
    pub fn max_amplitude_diff(&self, other: &StateVector) -> Result<f64> {
        let other = other.reorder(&self.labels)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

/// Offsets of the `2^k` sub-basis states spanned by bits at `shifts`,
/// with `shifts[0]` as the most significant sub-index bit.
fn sub_offsets(shifts: &[usize]) -> Vec<usize> {
    let k = shifts.len();
    (0..1usize << k)
        .map(|j| {
            shifts
                .iter()
                .enumerate()
                .filter(|(t, _)| (j >> (k - 1 - t)) & 1 == 1)
                .map(|(_, s)| 1usize << s)
                .sum()
        })
        .collect()
}

/// Tensor product of disjoint parts, in order.
pub fn product_state(parts: &[StateVector]) -> Result<StateVector> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::InvalidOperation("empty product".into()))?;
    rest.iter().try_fold(first.clone(), |acc, p| acc.tensor(p))
}

/// `|⟨s|t⟩|²` with amplitudes aligned by label.
pub fn fidelity(s: &StateVector, t: &StateVector) -> Result<f64> {
    Ok(s.inner(t)?.norm_sqr())
}

#[derive(Serialize, Deserialize)]
struct RawState {
    labels: Vec<String>,
    amps: Vec<[f64; 2]>,
}

impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RawState {
            labels: self.labels.clone(),
            amps: self.amps.iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawState::deserialize(deserializer)?;
        let amps = raw.amps.iter().map(|&[re, im]| Complex::new(re, im)).collect();
        StateVector::new(&raw.labels, amps).map_err(serde::de::Error::custom)
    }
}
