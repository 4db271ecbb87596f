//! The JSON run report. Nothing time- or host-dependent goes in, so a fixed
//! config and seed always produce the same bytes.

use locc_blocks::blockops::BlockOperation;
use locc_blocks::protocol::{enumerate_branches, ProtocolTrace, ResourceLedger};
use locc_blocks::statevec::StateVector;
use locc_blocks::verify::{check_branch, oracle_apply, BranchReport};
use serde::Serialize;

use crate::config::{rng, stream, Mode, RunConfig};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Branch {
    #[serde(flatten)]
    pub report: BranchReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<ProtocolTrace>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub branches: usize,
    pub failed: usize,
    pub total_probability: f64,
    pub max_amplitude_error: f64,
    pub min_fidelity: f64,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub protocol: String,
    pub mode: &'static str,
    pub seed: u64,
    pub operation: BlockOperation,
    pub initial_state: StateVector,
    pub expected_state: StateVector,
    pub resources: ResourceLedger,
    pub branches: Vec<Branch>,
    pub summary: Summary,
    pub passed: bool,
}

impl RunReport {
    pub fn first_failure(&self) -> Option<(&Branch, &str)> {
        self.branches
            .iter()
            .find_map(|b| b.failure.as_deref().map(|f| (b, f)))
    }
}

pub fn run(cfg: &RunConfig) -> locc_blocks::Result<RunReport> {
    let op = &cfg.operation;
    let psi0 = &cfg.initial_state;
    let traces = match cfg.mode {
        Mode::Enumerate | Mode::Verify => enumerate_branches(cfg.protocol, op, psi0, &cfg.options)?,
        Mode::Sample => {
            let mut rng = rng(cfg.seed, stream::SAMPLING);
            (0..cfg.samples)
                .map(|_| cfg.protocol.sample(op, psi0, &mut rng, &cfg.options))
                .collect::<locc_blocks::Result<Vec<_>>>()?
        }
    };

    let with_steps = cfg.mode == Mode::Verify;
    let mut branches = Vec::with_capacity(traces.len());
    for trace in traces {
        let report = check_branch(&trace, op, psi0, with_steps)?;
        branches.push(Branch {
            failure: report.first_failure(),
            report,
            trace: (!with_steps).then_some(trace),
        });
    }

    let summary = Summary {
        branches: branches.len(),
        failed: branches.iter().filter(|b| !b.report.passed()).count(),
        total_probability: branches.iter().map(|b| b.report.probability).sum(),
        max_amplitude_error: branches
            .iter()
            .map(|b| b.report.max_amplitude_error)
            .fold(0.0, f64::max),
        min_fidelity: branches.iter().map(|b| b.report.fidelity).fold(1.0, f64::min),
    };
    Ok(RunReport {
        schema: SCHEMA,
        protocol: cfg.protocol.name().to_string(),
        mode: cfg.mode.name(),
        seed: cfg.seed,
        operation: op.clone(),
        initial_state: psi0.clone(),
        expected_state: oracle_apply(op, psi0)?,
        resources: cfg.protocol.expected_ledger(op),
        passed: summary.failed == 0,
        summary,
        branches,
    })
}
