//! The full verification grid: ten criteria covering every protocol family,
//! the control-U factorization, LOCC structure and branch statistics.
//!
//! Each criterion draws its random inputs from its own seeded stream, so a
//! report is reproducible from `(seed, grid)` alone, and restricting the grid
//! does not shift the draws of unrelated criteria.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blockops::{scalar_block, BlockKind, BlockOperation, Gate, Permutation};
use crate::error::Result;
use crate::linalg::{kron, Complex, Matrix, UNITARY_TOL};
use crate::protocol::{
    enumerate_branches, CorrectionOrder, FirstMover, PermutationTiming, ProtocolKind, ProtocolOptions,
    ProtocolTrace,
};
use crate::statevec::StateVector;
use crate::verify::{audit_locality, check_branch, max_probability_deviation};

/// Which register sizes the multiqubit criterion covers, and optionally a
/// uniform override of the per-criterion case counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Grid {
    pub control_widths: Vec<usize>,
    pub block_widths: Vec<usize>,
    pub cases: Option<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            control_widths: vec![1, 2, 3],
            block_widths: vec![1, 2],
            cases: None,
        }
    }
}

impl Grid {
    /// Largest `N + M` the multiqubit sweep will run.
    pub const MAX_TOTAL_WIDTH: usize = 5;

    fn cases(&self, default: usize) -> usize {
        self.cases.unwrap_or(default)
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.control_widths {
            for &m in &self.block_widths {
                if n + m <= Self::MAX_TOTAL_WIDTH {
                    out.push((n, m));
                }
            }
        }
        out
    }
}

/// `n=1,2;m=1;cases=10`; omitted keys keep their defaults, `default` or
/// an empty string is the full grid.
impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut grid = Grid::default();
        let s = s.trim();
        if s.is_empty() || s == "default" {
            return Ok(grid);
        }
        let widths = |v: &str| -> std::result::Result<Vec<usize>, String> {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&w| w >= 1)
                        .ok_or_else(|| format!("bad width `{x}` in grid"))
                })
                .collect()
        };
        for part in s.split(';').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("grid entry `{part}` is not key=value"))?;
            match key.trim().to_ascii_lowercase().as_str() {
                "n" => grid.control_widths = widths(value)?,
                "m" => grid.block_widths = widths(value)?,
                "cases" => {
                    grid.cases = Some(
                        value
                            .trim()
                            .parse()
                            .ok()
                            .filter(|&c: &usize| c >= 1)
                            .ok_or_else(|| format!("bad case count `{value}`"))?,
                    )
                }
                other => return Err(format!("unknown grid key `{other}`")),
            }
        }
        Ok(grid)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SelftestOptions {
    pub seed: u64,
    pub grid: Grid,
    /// Runs the multiqubit sweep with the step-5 corrections swapped. The
    /// sweep is expected to fail; this checks that the harness notices.
    pub corrupt_correction_order: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub cases: usize,
    pub branches: usize,
    /// Largest amplitude (or matrix entry) error seen; for the
    /// order-sensitivity check, the smallest per-case detected deviation.
    pub max_error: f64,
    pub passed: bool,
    pub failure: Option<String>,
    #[serde(skip)]
    pub elapsed: Duration,
    #[serde(skip)]
    pub time_limit: Option<Duration>,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2}: {:<44} cases={:<4} branches={:<5} max_err={:.2e} ({:.2?})",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.cases,
            self.branches,
            self.max_error,
            self.elapsed,
        )?;
        if let Some(why) = &self.failure {
            write!(f, "\n       {why}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub schema: u32,
    pub seed: u64,
    pub grid: Grid,
    pub criteria: Vec<CriterionReport>,
    pub passed: bool,
}

impl SelftestReport {
    pub fn first_failure(&self) -> Option<&CriterionReport> {
        self.criteria.iter().find(|c| !c.passed)
    }
}

/// Accumulates what the structural criteria (9, 10) need from every trace.
#[derive(Default)]
struct Ledger {
    traces: usize,
    gate_events: usize,
    corrections: usize,
    violations: Vec<String>,
    worst_probability: f64,
}

impl Ledger {
    fn observe(&mut self, trace: &ProtocolTrace, context: &str) {
        self.traces += 1;
        let audit = audit_locality(trace);
        self.gate_events += audit.gate_events;
        self.corrections += audit.corrections;
        for v in audit.violations {
            self.violations.push(format!("{context}: {v}"));
        }
        self.worst_probability = self.worst_probability.max(max_probability_deviation(trace));
    }
}

/// Outcome of one criterion body before timing and identity are attached.
struct Tally {
    cases: usize,
    branches: usize,
    max_error: f64,
    failure: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Self {
            cases: 0,
            branches: 0,
            max_error: 0.0,
            failure: None,
        }
    }

    fn error(&mut self, e: f64) {
        self.max_error = self.max_error.max(e);
    }

    fn fail(&mut self, why: impl FnOnce() -> String) {
        if self.failure.is_none() {
            self.failure = Some(why());
        }
    }
}

fn rng_for(seed: u64, criterion: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(criterion));
    rng
}

fn bits_str(bits: &[u8]) -> String {
    bits.iter().map(|b| char::from(b'0' + b)).collect()
}

fn diff(a: &StateVector, b: &StateVector) -> f64 {
    a.max_amplitude_diff(b).unwrap_or(f64::INFINITY)
}

/// Runs `kind` on every branch and checks each against the oracle, the
/// step-by-step closed forms, the expected ledger and the locality audit.
fn sweep(
    tally: &mut Tally,
    ledger: &mut Ledger,
    kind: ProtocolKind,
    op: &BlockOperation,
    psi0: &StateVector,
    options: &ProtocolOptions,
    case: usize,
) -> Result<Vec<ProtocolTrace>> {
    let traces = enumerate_branches(kind, op, psi0, options)?;
    let expected = 1usize << kind.branch_len(op);
    if traces.len() != expected {
        tally.fail(|| {
            format!(
                "{kind} case {case}: {} branches, expected {expected}",
                traces.len()
            )
        });
    }
    for t in &traces {
        let report = check_branch(t, op, psi0, true)?;
        tally.branches += 1;
        tally.error(report.max_amplitude_error);
        if let Some(s) = report
            .steps
            .iter()
            .flatten()
            .map(|a| a.max_error)
            .reduce(f64::max)
        {
            tally.error(s);
        }
        if let Some(why) = report.first_failure() {
            tally.fail(|| format!("{kind} case {case} branch {}: {why}", bits_str(&report.bits)));
        }
        ledger.observe(
            t,
            &format!("{kind} case {case} branch {}", bits_str(&report.bits)),
        );
    }
    Ok(traces)
}

fn random_psi0<R: Rng>(kind: ProtocolKind, op: &BlockOperation, rng: &mut R) -> Result<StateVector> {
    StateVector::random(&kind.default_labels(op), rng)
}

fn bipartite_diagonal(opts: &SelftestOptions, ledger: &mut Ledger) -> Result<Tally> {
    let mut t = Tally::new();
    let mut rng = rng_for(opts.seed, 1);
    let kind = ProtocolKind::BipartiteDiagonal;
    for case in 0..opts.grid.cases(100) {
        let op = BlockOperation::random(BlockKind::Diagonal, 1, 1, &mut rng)?;
        let psi0 = random_psi0(kind, &op, &mut rng)?;
        sweep(&mut t, ledger, kind, &op, &psi0, &Default::default(), case)?;
        t.cases += 1;
    }
    Ok(t)
}

fn cnot_specialization(ledger: &mut Ledger) -> Result<Tally> {
    let mut t = Tally::new();
    let op = BlockOperation::diagonal(vec![Matrix::identity(2)?, Gate::X.matrix()])?;
    let kind = ProtocolKind::BipartiteDiagonal;
    for input in 0..4usize {
        let psi0 = StateVector::basis(&["A", "B"], input)?;
        let (c, tgt) = (input >> 1, input & 1);
        let want = StateVector::basis(&["A", "B"], c << 1 | (tgt ^ c))?;
        for trace in sweep(&mut t, ledger, kind, &op, &psi0, &Default::default(), input)? {
            let e = diff(&trace.final_state, &want);
            t.error(e);
            if e > UNITARY_TOL {
                t.fail(|| {
                    format!(
                        "input |{c}{tgt}> branch {}: off by {e:.3e}",
                        bits_str(&trace.branch_bits())
                    )
                });
            }
        }
        t.cases += 1;
    }
    Ok(t)
}

fn offdiagonal(opts: &SelftestOptions, ledger: &mut Ledger) -> Result<Tally> {
    let mut t = Tally::new();
    let mut rng = rng_for(opts.seed, 3);
    let kind = ProtocolKind::BipartiteOffdiagonal;
    let early = ProtocolOptions {
        permutation_timing: PermutationTiming::AfterStep1,
        ..Default::default()
    };
    for case in 0..opts.grid.cases(100) {
        let op = BlockOperation::random(BlockKind::Offdiagonal, 1, 1, &mut rng)?;
        let psi0 = random_psi0(kind, &op, &mut rng)?;
        let late_traces = sweep(&mut t, ledger, kind, &op, &psi0, &Default::default(), case)?;
        let early_traces = sweep(&mut t, ledger, kind, &op, &psi0, &early, case)?;
        for (late, early) in late_traces.iter().zip(&early_traces) {
            let e = diff(&late.final_state, &early.final_state);
            t.error(e);
            if e > UNITARY_TOL || late.branch_bits() != early.branch_bits() {
                t.fail(|| {
                    format!(
                        "case {case} branch {}: early and late X placement differ by {e:.3e}",
                        bits_str(&late.branch_bits())
                    )
                });
            }
        }
        t.cases += 1;
    }
    Ok(t)
}

fn scalar_phase_reduction(opts: &SelftestOptions, ledger: &mut Ledger) -> Result<Tally> {
    let mut t = Tally::new();
    let mut rng = rng_for(opts.seed, 4);
    let kind = ProtocolKind::BipartiteDiagonal;
    for case in 0..opts.grid.cases(50) {
        let theta: [f64; 2] = [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)];
        let phases = theta.map(|th| Complex::from_polar(1.0, th));
        let op = BlockOperation::diagonal(vec![scalar_block(2, phases[0])?, scalar_block(2, phases[1])?])?;
        let psi0 = random_psi0(kind, &op, &mut rng)?;
        // (Σ e^{iθ_i}|i⟩⟨i| ⊗ I)|psi0⟩: phase by Alice's bit only.
        let want: Vec<Complex> = psi0
            .amps()
            .iter()
            .enumerate()
            .map(|(idx, a)| a * phases[idx >> 1])
            .collect();
        let want = StateVector::new(psi0.labels(), want)?;
        for trace in sweep(&mut t, ledger, kind, &op, &psi0, &Default::default(), case)? {
            let e = diff(&trace.final_state, &want);
            t.error(e);
            if e > UNITARY_TOL {
                t.fail(|| {
                    format!(
                        "case {case} branch {}: off by {e:.3e}",
                        bits_str(&trace.branch_bits())
                    )
                });
            }
        }
        t.cases += 1;
    }
    Ok(t)
}

fn multiqubit(opts: &SelftestOptions, ledger: &mut Ledger) -> Result<Tally> {
    let mut t = Tally::new();
    let mut rng = rng_for(opts.seed, 5);
    let kind = ProtocolKind::BipartiteMultiqubit;
    let options = ProtocolOptions {
        correction_order: if opts.corrupt_correction_order {
            CorrectionOrder::ZFirst
        } else {
            CorrectionOrder::PermutationFirst
        },
        ..Default::default()
    };
    for (n, m) in opts.grid.shapes() {
        for case in 0..opts.grid.cases(25) {
            let op = BlockOperation::random(BlockKind::Permutation, n, m, &mut rng)?;
            let psi0 = random_psi0(kind, &op, &mut rng)?;
            let mut local = Tally::new();
            sweep(&mut local, ledger, kind, &op, &psi0, &options, case)?;
            t.branches += local.branches;
            t.error(local.max_error);
            if let Some(why) = local.failure {
                t.fail(|| format!("N={n} M={m} perm {:?}: {why}", op.perm().map()));
            }
            t.cases += 1;
        }
    }
    Ok(t)
}

fn correction_order(opts: &SelftestOptions, ledger: &mut Ledger) -> Result<Tally> {
    let mut t = Tally::new();
    let mut rng = rng_for(opts.seed, 6);
    let kind = ProtocolKind::BipartiteMultiqubit;
    let swapped = ProtocolOptions {
        correction_order: CorrectionOrder::ZFirst,
        ..Default::default()
    };
    let mut weakest = f64::INFINITY;
    for case in 0..opts.grid.cases(10) {
        let perm = loop {
            let p = Permutation::random(2, &mut rng)?;
            if p.as_xor_mask().is_none() {
                break p;
            }
        };
        let blocks = (0..4)
            .map(|_| crate::linalg::haar_random_unitary_with(2, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let op = BlockOperation::permutation(perm, blocks)?;
        let psi0 = random_psi0(kind, &op, &mut rng)?;
        let oracle = crate::verify::oracle_apply(&op, &psi0)?;
        let traces = enumerate_branches(kind, &op, &psi0, &swapped)?;
        let mut worst = 0.0f64;
        for trace in &traces {
            ledger.observe(trace, &format!("swapped-order case {case}"));
            worst = worst.max(diff(&trace.final_state, &oracle));
        }
        t.branches += traces.len();
        weakest = weakest.min(worst);
        if worst <= UNITARY_TOL {
            t.fail(|| {
                format!(
                    "case {case} perm {:?}: swapped order still matches the oracle",
                    op.perm().map()
                )
            });
        }
        t.cases += 1;
    }
    t.max_error = weakest;
    Ok(t)
}

fn three_party(opts: &SelftestOptions, ledger: &mut Ledger) -> Result<Tally> {
    let mut t = Tally::new();
    let mut rng = rng_for(opts.seed, 7);
    let kind = ProtocolKind::ThreeParty;
    let bob_first = ProtocolOptions {
        first_mover: FirstMover::Bob,
        ..Default::default()
    };
    for case in 0..opts.grid.cases(50) {
        let op = BlockOperation::random(BlockKind::Diagonal, 2, 1, &mut rng)?;
        let psi0 = random_psi0(kind, &op, &mut rng)?;
        let a_first = sweep(&mut t, ledger, kind, &op, &psi0, &Default::default(), case)?;
        let b_first = sweep(&mut t, ledger, kind, &op, &psi0, &bob_first, case)?;
        for (x, y) in a_first.iter().zip(&b_first) {
            let e = diff(&x.final_state, &y.final_state);
            t.error(e);
            if e > UNITARY_TOL || x.branch_bits() != y.branch_bits() {
                t.fail(|| {
                    format!(
                        "case {case} branch {}: step 1/1' order changes the result",
                        bits_str(&x.branch_bits())
                    )
                });
            }
        }
        t.cases += 1;
    }
    Ok(t)
}

fn control_u(opts: &SelftestOptions) -> Result<Tally> {
    let mut t = Tally::new();
    let mut rng = rng_for(opts.seed, 8);
    for case in 0..opts.grid.cases(100) {
        let m = 1 + case % 2;
        let op = BlockOperation::random(BlockKind::Diagonal, 1, m, &mut rng)?;
        let (local, controlled) = op.control_u_decomposition()?;
        let rebuilt = kron(&Matrix::identity(2)?, &local).matmul(&controlled);
        let e = rebuilt.max_abs_diff(&op.build_matrix());
        t.error(e);
        if e > UNITARY_TOL {
            t.fail(|| format!("case {case} (M={m}): reconstruction off by {e:.3e}"));
        }
        t.cases += 1;
    }
    Ok(t)
}

const TITLES: [&str; 10] = [
    "bipartite diagonal, all branches",
    "CNOT specialization",
    "offdiagonal, early vs late X",
    "scalar blocks reduce to a remote phase",
    "multiqubit permutation blocks + steps",
    "step-5 correction order matters",
    "three-party, step 1/1' order",
    "control-U factorization",
    "structural LOCC audit",
    "branch probabilities are 1/2",
];

/// Runs the whole grid. Library errors inside a criterion become failures.
pub fn run(opts: &SelftestOptions) -> SelftestReport {
    let mut ledger = Ledger::default();
    let mut criteria = Vec::with_capacity(10);

    let mut record = |id: u8, limit: Option<Duration>, body: &mut dyn FnMut() -> Result<Tally>| {
        let start = Instant::now();
        let result = body();
        let elapsed = start.elapsed();
        let mut tally = result.unwrap_or_else(|e| {
            let mut t = Tally::new();
            t.fail(|| format!("library error: {e}"));
            t
        });
        if let Some(limit) = limit {
            if elapsed > limit {
                tally.fail(|| format!("took {elapsed:.2?}, limit {limit:.0?}"));
            }
        }
        criteria.push(CriterionReport {
            id,
            title: TITLES[usize::from(id) - 1],
            cases: tally.cases,
            branches: tally.branches,
            max_error: tally.max_error,
            passed: tally.failure.is_none(),
            failure: tally.failure,
            elapsed,
            time_limit: limit,
        });
    };

    record(1, Some(Duration::from_secs(5)), &mut || {
        bipartite_diagonal(opts, &mut ledger)
    });
    record(2, None, &mut || cnot_specialization(&mut ledger));
    record(3, None, &mut || offdiagonal(opts, &mut ledger));
    record(4, None, &mut || scalar_phase_reduction(opts, &mut ledger));
    record(5, Some(Duration::from_secs(60)), &mut || {
        multiqubit(opts, &mut ledger)
    });
    record(6, None, &mut || correction_order(opts, &mut ledger));
    record(7, None, &mut || three_party(opts, &mut ledger));
    record(8, None, &mut || control_u(opts));

    record(9, None, &mut || {
        let mut t = Tally::new();
        t.cases = ledger.traces;
        t.branches = ledger.gate_events;
        if let Some(v) = ledger.violations.first() {
            let total = ledger.violations.len();
            t.fail(|| format!("{total} violations; first: {v}"));
        }
        if ledger.traces == 0 {
            t.fail(|| "no traces were audited".into());
        }
        Ok(t)
    });
    record(10, None, &mut || {
        let mut t = Tally::new();
        t.cases = ledger.traces;
        t.max_error = ledger.worst_probability;
        if ledger.worst_probability > UNITARY_TOL {
            let w = ledger.worst_probability;
            t.fail(|| format!("a measurement probability deviates from 1/2 by {w:.3e}"));
        }
        Ok(t)
    });

    let passed = criteria.iter().all(|c| c.passed);
    SelftestReport {
        schema: 1,
        seed: opts.seed,
        grid: opts.grid.clone(),
        criteria,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!("".parse::<Grid>().unwrap(), Grid::default());
        let g: Grid = "n=1;m=1,2;cases=3".parse().unwrap();
        assert_eq!(g.control_widths, [1]);
        assert_eq!(g.block_widths, [1, 2]);
        assert_eq!(g.cases, Some(3));
        assert!("n=0".parse::<Grid>().is_err());
        assert!("k=1".parse::<Grid>().is_err());
        assert!("n".parse::<Grid>().is_err());
    }

    #[test]
    fn shapes_respect_width_cap() {
        let g = Grid::default();
        assert_eq!(g.shapes(), [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2)]);
        let wide = Grid {
            control_widths: vec![4],
            block_widths: vec![1, 2],
            cases: None,
        };
        assert_eq!(wide.shapes(), [(4, 1)]);
    }

    #[test]
    fn small_grid_passes() {
        let report = run(&SelftestOptions {
            seed: 3,
            grid: "n=1,2;m=1;cases=2".parse().unwrap(),
            corrupt_correction_order: false,
        });
        for c in &report.criteria {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn corrupted_order_fails_the_multiqubit_criterion() {
        let report = run(&SelftestOptions {
            seed: 3,
            grid: "n=2;m=1;cases=3".parse().unwrap(),
            corrupt_correction_order: true,
        });
        let first = report.first_failure().expect("corruption must be detected");
        assert_eq!(first.id, 5);
        assert!(first.failure.as_deref().unwrap().contains("after step 5"));
    }
}
