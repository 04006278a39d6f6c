use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Nn(#[from] loadinv_nn::NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
