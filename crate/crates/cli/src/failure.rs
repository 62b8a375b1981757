//! Error-to-exit-code mapping.

use std::fmt;

use h4vdm::bitstream::BitstreamError;
use h4vdm::checkpoint::CheckpointError;
use h4vdm::dataset::DatasetError;
use h4vdm::eval::EvalError;
use h4vdm::gop_store::GopStoreError;
use h4vdm::model::ModelError;
use h4vdm::nn::NnError;
use h4vdm::train::TrainError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_UNEXPECTED: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_MISMATCH: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_DATA: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(EXIT_CONFIG, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(EXIT_DATA, anyhow::anyhow!("{msg}"))
    }

    pub fn context(mut self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(ctx);
        self
    }
}

pub type CmdResult<T> = Result<T, Failure>;

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::InputMismatch(_) | ModelError::DimensionMismatch(..) => EXIT_MISMATCH,
        ModelError::Nn(NnError::InvalidConfig(_)) => EXIT_CONFIG,
        ModelError::Nn(_) => EXIT_UNEXPECTED,
    }
}

fn checkpoint_code(e: &CheckpointError) -> u8 {
    match e {
        CheckpointError::Model(m) => model_code(m),
        _ => EXIT_DATA,
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Io { .. } => EXIT_UNEXPECTED,
        _ => EXIT_DATA,
    }
}

impl From<BitstreamError> for Failure {
    fn from(e: BitstreamError) -> Self {
        Self::new(EXIT_PARSE, e)
    }
}

impl From<GopStoreError> for Failure {
    fn from(e: GopStoreError) -> Self {
        let code = match e {
            GopStoreError::ShortGop { .. } | GopStoreError::SmallFrame { .. } => EXIT_MISMATCH,
            GopStoreError::Exists(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        Self::new(code, e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Self::new(model_code(&e), e)
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Self::new(EXIT_DATA, e)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Self::new(eval_code(&e), e)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Self::new(checkpoint_code(&e), e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::DataUnavailable(_) | TrainError::NonFiniteLoss { .. } => EXIT_DATA,
            TrainError::Config(_) => EXIT_CONFIG,
            TrainError::Model(m) => model_code(m),
            TrainError::Checkpoint(c) => checkpoint_code(c),
            TrainError::Eval(v) => eval_code(v),
            TrainError::Nn(_) | TrainError::Io { .. } => EXIT_UNEXPECTED,
        };
        Self::new(code, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_UNEXPECTED, e)
    }
}
