//! Run configuration: the JSON file behind `--config`.
//!
//! ```json
//! {
//!   "protocol": "bipartite-diagonal",
//!   "operation": { "kind": "diagonal", "control_width": 1, "blocks": [...] },
//!   "initial_state": "random",
//!   "mode": "verify",
//!   "seed": 7
//! }
//! ```
//!
//! `operation` may instead be `{"random": {"kind", "control_width",
//! "block_width"}}`, and `initial_state` may be `"random"`, `{"basis": k}`
//! or an explicit `{"labels", "amps"}` state. Random parts are drawn from the
//! run seed, so a config plus a seed fully determines the run.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use locc_blocks::blockops::{BlockKind, BlockOperation};
use locc_blocks::protocol::{ProtocolKind, ProtocolOptions};
use locc_blocks::statevec::StateVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Run every measurement branch and report full traces.
    Enumerate,
    /// Draw branches by the Born rule from the seed.
    Sample,
    /// Run every branch with per-step checks; traces are omitted.
    Verify,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Enumerate => "enumerate",
            Mode::Sample => "sample",
            Mode::Verify => "verify",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    protocol: String,
    operation: Value,
    #[serde(default = "random_state")]
    initial_state: Value,
    mode: Option<Mode>,
    seed: Option<u64>,
    samples: Option<usize>,
    #[serde(default)]
    options: Option<Value>,
    output: Option<PathBuf>,
}

fn random_state() -> Value {
    Value::String("random".into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomOperation {
    kind: BlockKind,
    control_width: usize,
    block_width: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A fully resolved run.
#[derive(Debug)]
pub struct RunConfig {
    pub protocol: ProtocolKind,
    pub operation: BlockOperation,
    pub initial_state: StateVector,
    pub mode: Mode,
    pub seed: u64,
    pub samples: usize,
    pub options: ProtocolOptions,
    pub output: Option<PathBuf>,
}

/// Independent random streams derived from the run seed.
pub(crate) mod stream {
    pub const OPERATION: u64 = 1;
    pub const STATE: u64 = 2;
    pub const SAMPLING: u64 = 3;
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn field(name: &str) -> impl Fn(String) -> CliError + '_ {
    move |msg| CliError::Config(format!("{name}: {msg}"))
}

impl RunConfig {
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: Overrides) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;

        let protocol: ProtocolKind = raw.protocol.parse().map_err(field("protocol"))?;
        let seed = overrides.seed.or(raw.seed).unwrap_or(0);
        let mode = overrides.mode.or(raw.mode).unwrap_or(Mode::Verify);

        let operation = parse_operation(raw.operation, seed).map_err(field("operation"))?;
        protocol
            .check_operation(&operation)
            .map_err(|e| field("operation")(e.to_string()))?;

        let initial_state =
            parse_state(raw.initial_state, protocol, &operation, seed).map_err(field("initial_state"))?;

        let options = match raw.options {
            Some(v) => serde_json::from_value(v).map_err(|e| field("options")(e.to_string()))?,
            None => ProtocolOptions::default(),
        };

        let samples = raw.samples.unwrap_or(1);
        if samples == 0 {
            return Err(field("samples")("must be at least 1".into()));
        }

        Ok(Self {
            protocol,
            operation,
            initial_state,
            mode,
            seed,
            samples,
            options,
            output: overrides.out.or(raw.output),
        })
    }
}

fn parse_operation(value: Value, seed: u64) -> Result<BlockOperation, String> {
    if let Some(spec) = value.get("random") {
        let spec: RandomOperation =
            serde_json::from_value(spec.clone()).map_err(|e| format!("random: {e}"))?;
        if spec.control_width == 0 || spec.block_width == 0 {
            return Err("random: widths must be at least 1".into());
        }
        if spec.control_width + spec.block_width > 10 {
            return Err("random: at most 10 qubits in total".into());
        }
        let mut rng = rng(seed, stream::OPERATION);
        return BlockOperation::random(spec.kind, spec.control_width, spec.block_width, &mut rng)
            .map_err(|e| e.to_string());
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

fn parse_state(
    value: Value,
    protocol: ProtocolKind,
    op: &BlockOperation,
    seed: u64,
) -> Result<StateVector, String> {
    let labels = protocol.default_labels(op);
    let state = match &value {
        Value::String(s) if s == "random" => {
            StateVector::random(&labels, &mut rng(seed, stream::STATE)).map_err(|e| e.to_string())?
        }
        Value::Object(map) if map.contains_key("basis") => {
            let index = map["basis"]
                .as_u64()
                .ok_or("basis must be a non-negative integer")?;
            StateVector::basis(&labels, index as usize).map_err(|e| e.to_string())?
        }
        _ => serde_json::from_value(value).map_err(|e| e.to_string())?,
    };
    if state.num_qubits() != op.total_width() {
        return Err(format!(
            "{} qubits, the operation acts on {}",
            state.num_qubits(),
            op.total_width()
        ));
    }
    Ok(state)
}
