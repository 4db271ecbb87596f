//! LOCC schedules for the block-operation protocols.
//!
//! Each run starts from a caller-supplied state on the data qubits, appends
//! the shared Bell pairs, then replays the five-step schedule. Every local
//! action goes through a [`Session`], which refuses gates on qubits the
//! acting party does not own and logs every gate, measurement, message and
//! correction in order. Measurement outcomes come either from an explicit
//! branch (exhaustive verification) or from a seeded RNG (sampling).
//!
//! The bipartite engine covers the diagonal, offdiagonal and general
//! permutation families: the first two are the permutation family with
//! `p = id` and `p = (1 0)` respectively, so the only difference is whether
//! Alice's step-5 `R` is trivial. The three-party engine handles a device at
//! Charlie controlled by one qubit each at Alice and Bob.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::blockops::{BlockKind, BlockOperation, Gate, Permutation};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::statevec::{MeasurementOutcome, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
    Charlie,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Alice => "Alice",
            Party::Bob => "Bob",
            Party::Charlie => "Charlie",
        })
    }
}

/// Which party holds which qubit, and who holds the device for `U`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeLayout {
    owns: BTreeMap<String, Party>,
    device_holder: Party,
}

impl NodeLayout {
    pub fn new(device_holder: Party) -> Self {
        Self {
            owns: BTreeMap::new(),
            device_holder,
        }
    }

    pub fn assign(&mut self, qubit: &str, party: Party) -> Result<()> {
        if self.owns.insert(qubit.to_string(), party).is_some() {
            return Err(Error::DuplicateLabel(qubit.to_string()));
        }
        Ok(())
    }

    pub fn owner(&self, qubit: &str) -> Option<Party> {
        self.owns.get(qubit).copied()
    }

    pub fn device_holder(&self) -> Party {
        self.device_holder
    }

    pub fn qubits_of(&self, party: Party) -> impl Iterator<Item = &str> {
        self.owns
            .iter()
            .filter(move |(_, &p)| p == party)
            .map(|(q, _)| q.as_str())
    }
}

/// Schedule step an event belongs to. `Setup` is the Bell-pair distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Step {
    #[serde(rename = "setup")]
    Setup,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "1'")]
    OnePrime,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "5")]
    Five,
    #[serde(rename = "5'")]
    FivePrime,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Setup => "setup",
            Step::One => "1",
            Step::OnePrime => "1'",
            Step::Two => "2",
            Step::Three => "3",
            Step::Four => "4",
            Step::Five => "5",
            Step::FivePrime => "5'",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassicalMessage {
    pub from: Party,
    pub to: Party,
    pub payload: u8,
    pub step: Step,
    /// The measured qubit whose result this message carries.
    pub about: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SharePair {
        step: Step,
        qubits: [String; 2],
        parties: [Party; 2],
    },
    Gate {
        step: Step,
        party: Party,
        gate: String,
        targets: Vec<String>,
    },
    Measure {
        step: Step,
        party: Party,
        qubit: String,
        bit: u8,
        probability: f64,
    },
    Message(ClassicalMessage),
    /// Pauli correction conditioned on the message at event index `message`.
    Correction {
        step: Step,
        party: Party,
        gate: Gate,
        target: String,
        message: usize,
        applied: bool,
    },
}

impl Event {
    pub fn step(&self) -> Step {
        match self {
            Event::SharePair { step, .. }
            | Event::Gate { step, .. }
            | Event::Measure { step, .. }
            | Event::Correction { step, .. } => *step,
            Event::Message(m) => m.step,
        }
    }
}

/// Entanglement and classical communication consumed by a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResourceLedger {
    /// Keyed by the unordered pair, stored smaller party first.
    ebits: BTreeMap<(Party, Party), usize>,
    /// Keyed by (from, to).
    cbits: BTreeMap<(Party, Party), usize>,
}

impl ResourceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_ebit(&mut self, a: Party, b: Party) {
        *self.ebits.entry((a.min(b), a.max(b))).or_default() += 1;
    }

    pub fn add_cbit(&mut self, from: Party, to: Party) {
        *self.cbits.entry((from, to)).or_default() += 1;
    }

    pub fn ebits_between(&self, a: Party, b: Party) -> usize {
        self.ebits.get(&(a.min(b), a.max(b))).copied().unwrap_or(0)
    }

    pub fn cbits(&self, from: Party, to: Party) -> usize {
        self.cbits.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn total_ebits(&self) -> usize {
        self.ebits.values().sum()
    }

    pub fn total_cbits(&self) -> usize {
        self.cbits.values().sum()
    }

    /// `n` ebits, `n` cbits Alice→Bob and `n` cbits Bob→Alice.
    pub fn bipartite(n: usize) -> Self {
        let mut l = Self::new();
        for _ in 0..n {
            l.add_ebit(Party::Alice, Party::Bob);
            l.add_cbit(Party::Alice, Party::Bob);
            l.add_cbit(Party::Bob, Party::Alice);
        }
        l
    }

    /// One ebit and one cbit each way between Charlie and each of Alice, Bob.
    pub fn three_party() -> Self {
        let mut l = Self::new();
        for p in [Party::Alice, Party::Bob] {
            l.add_ebit(p, Party::Charlie);
            l.add_cbit(p, Party::Charlie);
            l.add_cbit(Party::Charlie, p);
        }
        l
    }
}

impl fmt::Display for ResourceLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ebits, {} cbits", self.total_ebits(), self.total_cbits())
    }
}

impl Serialize for ResourceLedger {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Pair {
            parties: [Party; 2],
            count: usize,
        }
        #[derive(Serialize)]
        struct Directed {
            from: Party,
            to: Party,
            count: usize,
        }
        let ebits: Vec<Pair> = self
            .ebits
            .iter()
            .map(|(&(a, b), &count)| Pair {
                parties: [a, b],
                count,
            })
            .collect();
        let cbits: Vec<Directed> = self
            .cbits
            .iter()
            .map(|(&(from, to), &count)| Directed { from, to, count })
            .collect();
        let mut s = serializer.serialize_struct("ResourceLedger", 4)?;
        s.serialize_field("total_ebits", &self.total_ebits())?;
        s.serialize_field("total_cbits", &self.total_cbits())?;
        s.serialize_field("ebits", &ebits)?;
        s.serialize_field("cbits", &cbits)?;
        s.end()
    }
}

/// Qubit roles in a run, shared by every protocol family: the controls are
/// the data qubits at the non-device parties, the targets are the device
/// holder's data qubits, and each control `i` is paired with a Bell pair
/// `(sender_ancillas[i], receiver_ancillas[i])`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Registers {
    pub control: Vec<String>,
    pub target: Vec<String>,
    pub sender_ancillas: Vec<String>,
    pub receiver_ancillas: Vec<String>,
}

/// State checkpoints taken at the end of each schedule step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Stage {
    AfterStep1,
    AfterStep2,
    AfterStep3,
    AfterStep4,
    AfterStep5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    BipartiteDiagonal,
    BipartiteOffdiagonal,
    BipartiteMultiqubit,
    ThreeParty,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            Stage::AfterStep1 => 1,
            Stage::AfterStep2 => 2,
            Stage::AfterStep3 => 3,
            Stage::AfterStep4 => 4,
            Stage::AfterStep5 => 5,
        };
        write!(f, "after step {n}")
    }
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [
        ProtocolKind::BipartiteDiagonal,
        ProtocolKind::BipartiteOffdiagonal,
        ProtocolKind::BipartiteMultiqubit,
        ProtocolKind::ThreeParty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::BipartiteDiagonal => "bipartite-diagonal",
            ProtocolKind::BipartiteOffdiagonal => "bipartite-offdiagonal",
            ProtocolKind::BipartiteMultiqubit => "bipartite-multiqubit",
            ProtocolKind::ThreeParty => "three-party",
        }
    }

    /// Rejects operations this protocol cannot run.
    pub fn check_operation(self, op: &BlockOperation) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidOperation(format!("{}: {msg}", self.name())));
        match self {
            ProtocolKind::BipartiteDiagonal => {
                if op.kind() != BlockKind::Diagonal || op.control_width() != 1 {
                    return bad("needs a diagonal operation with one control qubit");
                }
            }
            ProtocolKind::BipartiteOffdiagonal => {
                if op.kind() != BlockKind::Offdiagonal {
                    return bad("needs an offdiagonal operation");
                }
            }
            ProtocolKind::BipartiteMultiqubit => {}
            ProtocolKind::ThreeParty => {
                if op.control_width() != 2 {
                    return bad("needs exactly two control qubits (one at Alice, one at Bob)");
                }
                // Only an R that factors into per-party I/X can be applied
                // without a joint operation on Alice's and Bob's qubits.
                if op.perm().as_xor_mask().is_none() {
                    return bad("the control permutation is not a product of single-qubit I/X factors");
                }
            }
        }
        Ok(())
    }

    /// Number of measurement bits in a branch.
    pub fn branch_len(self, op: &BlockOperation) -> usize {
        match self {
            ProtocolKind::ThreeParty => 4,
            _ => 2 * op.control_width(),
        }
    }

    /// Conventional labels for the data qubits: controls first, then targets.
    pub fn default_labels(self, op: &BlockOperation) -> Vec<String> {
        let m = op.block_width();
        let numbered = |prefix: &str, count: usize| -> Vec<String> {
            (1..=count).map(|i| format!("{prefix}{i}")).collect()
        };
        let register = |name: &str| -> Vec<String> {
            if m == 1 {
                vec![name.to_string()]
            } else {
                numbered(&format!("{name}_"), m)
            }
        };
        match self {
            ProtocolKind::BipartiteDiagonal | ProtocolKind::BipartiteOffdiagonal => {
                let mut labels = vec!["A".to_string()];
                labels.extend(register("B"));
                labels
            }
            ProtocolKind::BipartiteMultiqubit => {
                let mut labels = numbered("Y", op.control_width());
                labels.extend(numbered("Z", m));
                labels
            }
            ProtocolKind::ThreeParty => {
                let mut labels = vec!["A".to_string(), "B".to_string()];
                labels.extend(register("C"));
                labels
            }
        }
    }

    pub fn expected_ledger(self, op: &BlockOperation) -> ResourceLedger {
        match self {
            ProtocolKind::ThreeParty => ResourceLedger::three_party(),
            _ => ResourceLedger::bipartite(op.control_width()),
        }
    }

    /// Runs one explicit branch.
    pub fn run(
        self,
        op: &BlockOperation,
        psi0: &StateVector,
        branch: &[u8],
        options: &ProtocolOptions,
    ) -> Result<ProtocolTrace> {
        if branch.len() != self.branch_len(op) {
            return Err(Error::InvalidBranch(format!(
                "{} expects {} measurement bits, got {}",
                self.name(),
                self.branch_len(op),
                branch.len()
            )));
        }
        if let Some(b) = branch.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidBranch(format!("bit value {b}")));
        }
        self.execute(op, psi0, &mut FixedOutcomes(branch), options)
    }

    /// Runs one branch with outcomes drawn from `rng` by the Born rule.
    pub fn sample(
        self,
        op: &BlockOperation,
        psi0: &StateVector,
        rng: &mut dyn RngCore,
        options: &ProtocolOptions,
    ) -> Result<ProtocolTrace> {
        self.execute(op, psi0, &mut SampledOutcomes(rng), options)
    }

    fn execute(
        self,
        op: &BlockOperation,
        psi0: &StateVector,
        outcomes: &mut dyn OutcomeSource,
        options: &ProtocolOptions,
    ) -> Result<ProtocolTrace> {
        self.check_operation(op)?;
        if psi0.num_qubits() != op.total_width() {
            return Err(Error::DimensionMismatch {
                expected: op.total_width(),
                found: psi0.num_qubits(),
            });
        }
        match self {
            ProtocolKind::ThreeParty => run_three_party(self, op, psi0, outcomes, options),
            _ => run_bipartite(self, op, psi0, outcomes, options),
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown protocol `{s}`"))
    }
}

/// Order of Alice's step-5 corrections in the bipartite engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionOrder {
    /// `R` first, then the conditional `Z`s on the permuted register.
    #[default]
    PermutationFirst,
    /// Deliberately wrong order, kept to demonstrate that it matters.
    ZFirst,
}

/// When Alice applies her unconditional `R` (the `X` of the offdiagonal
/// case). Bipartite protocols only; three-party runs always use step 5.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationTiming {
    #[default]
    Step5,
    /// Immediately after her step-1 measurements.
    AfterStep1,
}

/// Which non-device party goes first in the three-party step 1 / 1'.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstMover {
    #[default]
    Alice,
    Bob,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolOptions {
    pub correction_order: CorrectionOrder,
    pub permutation_timing: PermutationTiming,
    pub first_mover: FirstMover,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolTrace {
    pub protocol: ProtocolKind,
    /// Outcomes in branch order (see [`ProtocolKind::branch_len`]).
    pub branch: Vec<MeasurementOutcome>,
    pub events: Vec<Event>,
    pub ledger: ResourceLedger,
    pub layout: NodeLayout,
    pub registers: Registers,
    /// Data qubits only, in the initial state's label order.
    pub final_state: StateVector,
    pub snapshots: BTreeMap<Stage, StateVector>,
    /// The options the run was made with.
    pub options: ProtocolOptions,
}

impl ProtocolTrace {
    pub fn branch_bits(&self) -> Vec<u8> {
        self.branch.iter().map(|o| o.bit).collect()
    }

    pub fn branch_probability(&self) -> f64 {
        self.branch.iter().map(|o| o.probability).product()
    }

    pub fn snapshot(&self, stage: Stage) -> Option<&StateVector> {
        self.snapshots.get(&stage)
    }

    pub fn messages(&self) -> impl Iterator<Item = &ClassicalMessage> {
        self.events.iter().filter_map(|e| match e {
            Event::Message(m) => Some(m),
            _ => None,
        })
    }
}

// Snapshots are an in-memory verification aid and stay out of the JSON.
impl Serialize for ProtocolTrace {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ProtocolTrace", 8)?;
        s.serialize_field("protocol", &self.protocol)?;
        s.serialize_field("options", &self.options)?;
        s.serialize_field("branch", &self.branch)?;
        s.serialize_field("events", &self.events)?;
        s.serialize_field("ledger", &self.ledger)?;
        s.serialize_field("layout", &self.layout)?;
        s.serialize_field("registers", &self.registers)?;
        s.serialize_field("final_state", &self.final_state)?;
        s.end()
    }
}

trait OutcomeSource {
    /// Outcome for measurement number `slot` of `qubit` in `state`.
    fn outcome(&mut self, state: &StateVector, qubit: &str, slot: usize) -> Result<u8>;
}

struct FixedOutcomes<'a>(&'a [u8]);

impl OutcomeSource for FixedOutcomes<'_> {
    fn outcome(&mut self, _: &StateVector, _: &str, slot: usize) -> Result<u8> {
        Ok(self.0[slot])
    }
}

struct SampledOutcomes<'a>(&'a mut dyn RngCore);

impl OutcomeSource for SampledOutcomes<'_> {
    fn outcome(&mut self, state: &StateVector, qubit: &str, _: usize) -> Result<u8> {
        let p0 = state.probability(qubit, 0)?;
        let draw = (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        Ok(u8::from(draw >= p0))
    }
}

/// Mutable context of one run; every action is locality-checked and logged.
struct Session<'a> {
    state: StateVector,
    layout: NodeLayout,
    events: Vec<Event>,
    ledger: ResourceLedger,
    outcomes: &'a mut dyn OutcomeSource,
    branch: Vec<Option<MeasurementOutcome>>,
    snapshots: BTreeMap<Stage, StateVector>,
}

impl<'a> Session<'a> {
    fn new(
        psi0: &StateVector,
        layout: NodeLayout,
        outcomes: &'a mut dyn OutcomeSource,
        branch_len: usize,
    ) -> Self {
        Self {
            state: psi0.clone(),
            layout,
            events: Vec::new(),
            ledger: ResourceLedger::new(),
            outcomes,
            branch: vec![None; branch_len],
            snapshots: BTreeMap::new(),
        }
    }

    fn check_owned(&self, party: Party, qubits: &[&str]) -> Result<()> {
        for q in qubits {
            if self.layout.owner(q) != Some(party) {
                return Err(Error::LocalityViolation {
                    party,
                    qubit: q.to_string(),
                });
            }
        }
        Ok(())
    }

    fn share_pair(&mut self, first: (&str, Party), second: (&str, Party)) -> Result<()> {
        self.check_owned(first.1, &[first.0])?;
        self.check_owned(second.1, &[second.0])?;
        self.state = self.state.tensor(&StateVector::bell_pair(first.0, second.0)?)?;
        self.ledger.add_ebit(first.1, second.1);
        self.events.push(Event::SharePair {
            step: Step::Setup,
            qubits: [first.0.to_string(), second.0.to_string()],
            parties: [first.1, second.1],
        });
        Ok(())
    }

    fn gate(&mut self, step: Step, party: Party, name: &str, m: &Matrix, targets: &[&str]) -> Result<()> {
        self.check_owned(party, targets)?;
        self.state = self.state.apply_gate(m, targets)?;
        self.log_gate(step, party, name, targets);
        Ok(())
    }

    fn permute(
        &mut self,
        step: Step,
        party: Party,
        name: &str,
        p: &Permutation,
        targets: &[&str],
    ) -> Result<()> {
        self.check_owned(party, targets)?;
        self.state = self.state.apply_basis_permutation(p.map(), targets)?;
        self.log_gate(step, party, name, targets);
        Ok(())
    }

    fn log_gate(&mut self, step: Step, party: Party, name: &str, targets: &[&str]) {
        self.events.push(Event::Gate {
            step,
            party,
            gate: name.to_string(),
            targets: targets.iter().map(|t| t.to_string()).collect(),
        });
    }

    fn measure(&mut self, step: Step, party: Party, qubit: &str, slot: usize) -> Result<u8> {
        self.check_owned(party, &[qubit])?;
        let bit = self.outcomes.outcome(&self.state, qubit, slot)?;
        let (next, outcome) = self.state.measure_branch(qubit, bit)?;
        self.state = next;
        self.events.push(Event::Measure {
            step,
            party,
            qubit: qubit.to_string(),
            bit,
            probability: outcome.probability,
        });
        self.branch[slot] = Some(outcome);
        Ok(bit)
    }

    /// Logs a message and returns its event index.
    fn send(&mut self, step: Step, from: Party, to: Party, payload: u8, about: &str) -> usize {
        self.ledger.add_cbit(from, to);
        self.events.push(Event::Message(ClassicalMessage {
            from,
            to,
            payload,
            step,
            about: about.to_string(),
        }));
        self.events.len() - 1
    }

    /// Applies `gate` to `target` iff the referenced message carries a 1.
    fn correct(&mut self, step: Step, party: Party, gate: Gate, target: &str, message: usize) -> Result<()> {
        self.check_owned(party, &[target])?;
        let payload = match &self.events[message] {
            Event::Message(m) if m.to == party => m.payload,
            _ => {
                return Err(Error::InvalidOperation(format!(
                    "event {message} is not a message to {party}"
                )))
            }
        };
        let applied = payload == 1;
        if applied {
            self.state = self.state.apply_gate(&gate.matrix(), &[target])?;
        }
        self.events.push(Event::Correction {
            step,
            party,
            gate,
            target: target.to_string(),
            message,
            applied,
        });
        Ok(())
    }

    fn snapshot(&mut self, stage: Stage) {
        self.snapshots.insert(stage, self.state.clone());
    }

    fn finish(
        self,
        protocol: ProtocolKind,
        registers: Registers,
        psi0: &StateVector,
        options: &ProtocolOptions,
    ) -> Result<ProtocolTrace> {
        let final_state = self.state.reorder(psi0.labels())?;
        let branch = self
            .branch
            .into_iter()
            .map(|o| o.ok_or_else(|| Error::InvalidBranch("unmeasured slot".into())))
            .collect::<Result<_>>()?;
        Ok(ProtocolTrace {
            protocol,
            branch,
            events: self.events,
            ledger: self.ledger,
            layout: self.layout,
            registers,
            final_state,
            snapshots: self.snapshots,
            options: *options,
        })
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn ancilla_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Alice holds the first `N` data qubits, Bob the rest and the device.
fn run_bipartite(
    kind: ProtocolKind,
    op: &BlockOperation,
    psi0: &StateVector,
    outcomes: &mut dyn OutcomeSource,
    options: &ProtocolOptions,
) -> Result<ProtocolTrace> {
    let n = op.control_width();
    let (control, target) = psi0.labels().split_at(n);
    let registers = Registers {
        control: control.to_vec(),
        target: target.to_vec(),
        sender_ancillas: ancilla_names("A", n),
        receiver_ancillas: ancilla_names("B", n),
    };

    let mut layout = NodeLayout::new(Party::Bob);
    for q in registers.control.iter().chain(&registers.sender_ancillas) {
        layout.assign(q, Party::Alice)?;
    }
    for q in registers.target.iter().chain(&registers.receiver_ancillas) {
        layout.assign(q, Party::Bob)?;
    }

    let ys = strs(&registers.control);
    let zs = strs(&registers.target);
    let a_anc = strs(&registers.sender_ancillas);
    let b_anc = strs(&registers.receiver_ancillas);

    let mut s = Session::new(psi0, layout, outcomes, 2 * n);
    for i in 0..n {
        s.share_pair((a_anc[i], Party::Alice), (b_anc[i], Party::Bob))?;
    }

    // Step 1: copy each control onto its half of a Bell pair, measure, report.
    let cnot = Gate::Cnot.matrix();
    for i in 0..n {
        s.gate(Step::One, Party::Alice, "CNOT", &cnot, &[ys[i], a_anc[i]])?;
    }
    let mut a_msgs = Vec::with_capacity(n);
    for (slot, &anc) in a_anc.iter().enumerate() {
        let a = s.measure(Step::One, Party::Alice, anc, slot)?;
        a_msgs.push(s.send(Step::One, Party::Alice, Party::Bob, a, anc));
    }

    let perm = op.perm();
    let r_name = if n == 1 && !perm.is_identity() { "X" } else { "R" };
    let apply_r = |s: &mut Session, step: Step| -> Result<()> {
        if perm.is_identity() {
            Ok(())
        } else {
            s.permute(step, Party::Alice, r_name, perm, &ys)
        }
    };
    if options.permutation_timing == PermutationTiming::AfterStep1 {
        apply_r(&mut s, Step::One)?;
    }
    s.snapshot(Stage::AfterStep1);

    // Step 2: Bob undoes the flips so B_i holds a copy of the control basis.
    for i in 0..n {
        s.correct(Step::Two, Party::Bob, Gate::X, b_anc[i], a_msgs[i])?;
    }
    s.snapshot(Stage::AfterStep2);

    // Step 3: the device, with the B_i standing in for Alice's register.
    let device_targets: Vec<&str> = b_anc.iter().chain(&zs).copied().collect();
    s.gate(Step::Three, Party::Bob, "U", &op.build_matrix(), &device_targets)?;
    s.snapshot(Stage::AfterStep3);

    // Step 4: erase the copies in the X basis and report the outcomes.
    let h = Gate::H.matrix();
    for b in &b_anc {
        s.gate(Step::Four, Party::Bob, "H", &h, &[b])?;
    }
    let mut b_msgs = Vec::with_capacity(n);
    for (i, &anc) in b_anc.iter().enumerate() {
        let b = s.measure(Step::Four, Party::Bob, anc, n + i)?;
        b_msgs.push(s.send(Step::Four, Party::Bob, Party::Alice, b, anc));
    }
    s.snapshot(Stage::AfterStep4);

    // Step 5: the phase kickback sits on the permuted basis, so R goes first.
    let z_corrections = |s: &mut Session| -> Result<()> {
        for i in 0..n {
            s.correct(Step::Five, Party::Alice, Gate::Z, ys[i], b_msgs[i])?;
        }
        Ok(())
    };
    match (options.permutation_timing, options.correction_order) {
        (PermutationTiming::AfterStep1, _) => z_corrections(&mut s)?,
        (PermutationTiming::Step5, CorrectionOrder::PermutationFirst) => {
            apply_r(&mut s, Step::Five)?;
            z_corrections(&mut s)?;
        }
        (PermutationTiming::Step5, CorrectionOrder::ZFirst) => {
            z_corrections(&mut s)?;
            apply_r(&mut s, Step::Five)?;
        }
    }
    s.snapshot(Stage::AfterStep5);

    s.finish(kind, registers, psi0, options)
}

/// Alice and Bob each hold one control qubit; Charlie holds the targets and
/// the device. Branch order is `[a, b, c1, c2]`.
fn run_three_party(
    kind: ProtocolKind,
    op: &BlockOperation,
    psi0: &StateVector,
    outcomes: &mut dyn OutcomeSource,
    options: &ProtocolOptions,
) -> Result<ProtocolTrace> {
    let labels = psi0.labels();
    let registers = Registers {
        control: labels[..2].to_vec(),
        target: labels[2..].to_vec(),
        sender_ancillas: vec!["A1".into(), "B1".into()],
        receiver_ancillas: vec!["C1".into(), "C2".into()],
    };
    let senders = [Party::Alice, Party::Bob];
    let (send_step, fix_step) = ([Step::One, Step::OnePrime], [Step::Five, Step::FivePrime]);

    let mut layout = NodeLayout::new(Party::Charlie);
    for (i, &p) in senders.iter().enumerate() {
        layout.assign(&registers.control[i], p)?;
        layout.assign(&registers.sender_ancillas[i], p)?;
    }
    for q in registers.target.iter().chain(&registers.receiver_ancillas) {
        layout.assign(q, Party::Charlie)?;
    }

    let ctrl = strs(&registers.control);
    let zs = strs(&registers.target);
    let s_anc = strs(&registers.sender_ancillas);
    let c_anc = strs(&registers.receiver_ancillas);

    let mut s = Session::new(psi0, layout, outcomes, 4);
    for i in 0..2 {
        s.share_pair((s_anc[i], senders[i]), (c_anc[i], Party::Charlie))?;
    }

    // Steps 1 and 1' touch disjoint parties and may run in either order.
    let order = match options.first_mover {
        FirstMover::Alice => [0, 1],
        FirstMover::Bob => [1, 0],
    };
    let cnot = Gate::Cnot.matrix();
    let mut up_msgs = [0usize; 2];
    for i in order {
        s.gate(send_step[i], senders[i], "CNOT", &cnot, &[ctrl[i], s_anc[i]])?;
        let bit = s.measure(send_step[i], senders[i], s_anc[i], i)?;
        up_msgs[i] = s.send(send_step[i], senders[i], Party::Charlie, bit, s_anc[i]);
    }
    s.snapshot(Stage::AfterStep1);

    for i in 0..2 {
        s.correct(Step::Two, Party::Charlie, Gate::X, c_anc[i], up_msgs[i])?;
    }
    s.snapshot(Stage::AfterStep2);

    let device_targets: Vec<&str> = c_anc.iter().chain(&zs).copied().collect();
    s.gate(
        Step::Three,
        Party::Charlie,
        "U",
        &op.build_matrix(),
        &device_targets,
    )?;
    s.snapshot(Stage::AfterStep3);

    let h = Gate::H.matrix();
    for c in &c_anc {
        s.gate(Step::Four, Party::Charlie, "H", &h, &[c])?;
    }
    let mut down_msgs = [0usize; 2];
    for i in 0..2 {
        let bit = s.measure(Step::Four, Party::Charlie, c_anc[i], 2 + i)?;
        down_msgs[i] = s.send(Step::Four, Party::Charlie, senders[i], bit, c_anc[i]);
    }
    s.snapshot(Stage::AfterStep4);

    // R = X^{c_A} ⊗ X^{c_B}: each party flips its own control, then fixes the phase.
    let mask = op
        .perm()
        .as_xor_mask()
        .expect("checked by ProtocolKind::check_operation");
    let x = Gate::X.matrix();
    for i in 0..2 {
        if (mask >> (1 - i)) & 1 == 1 {
            s.gate(fix_step[i], senders[i], "X", &x, &[ctrl[i]])?;
        }
        s.correct(fix_step[i], senders[i], Gate::Z, ctrl[i], down_msgs[i])?;
    }
    s.snapshot(Stage::AfterStep5);

    s.finish(kind, registers, psi0, options)
}

/// Bits of branch number `index`, most significant first.
pub fn branch_bits(index: usize, len: usize) -> Vec<u8> {
    (0..len).map(|k| ((index >> (len - 1 - k)) & 1) as u8).collect()
}

/// Runs every branch; impossible branches are skipped.
pub fn enumerate_branches(
    kind: ProtocolKind,
    op: &BlockOperation,
    psi0: &StateVector,
    options: &ProtocolOptions,
) -> Result<Vec<ProtocolTrace>> {
    let len = kind.branch_len(op);
    let mut traces = Vec::with_capacity(1 << len);
    for index in 0..1usize << len {
        match kind.run(op, psi0, &branch_bits(index, len), options) {
            Ok(trace) => traces.push(trace),
            Err(e) if e.is_impossible_branch() => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(traces)
}

pub fn run_bipartite_diagonal(
    op: &BlockOperation,
    psi0: &StateVector,
    branch: &[u8],
) -> Result<ProtocolTrace> {
    ProtocolKind::BipartiteDiagonal.run(op, psi0, branch, &ProtocolOptions::default())
}

pub fn run_bipartite_offdiagonal(
    op: &BlockOperation,
    psi0: &StateVector,
    branch: &[u8],
) -> Result<ProtocolTrace> {
    ProtocolKind::BipartiteOffdiagonal.run(op, psi0, branch, &ProtocolOptions::default())
}

pub fn run_bipartite_multiqubit(
    op: &BlockOperation,
    psi0: &StateVector,
    branch: &[u8],
) -> Result<ProtocolTrace> {
    ProtocolKind::BipartiteMultiqubit.run(op, psi0, branch, &ProtocolOptions::default())
}

pub fn run_three_party_diagonal(
    op: &BlockOperation,
    psi0: &StateVector,
    branch: &[u8],
) -> Result<ProtocolTrace> {
    ProtocolKind::ThreeParty.run(op, psi0, branch, &ProtocolOptions::default())
}
