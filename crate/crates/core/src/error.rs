use thiserror::Error;

use crate::economy::OptionId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("report repair did not settle within {0} rounds")]
    RepairDiverged(usize),

    #[error("{file}:{row}: {message}")]
    Row {
        file: String,
        row: usize,
        message: String,
    },

    #[error("score columns differ for student {student}; serial dictatorship needs one common score")]
    ScoreColumnsDiffer { student: u32 },

    #[error("belief cutoff profile is required by the belief-skip reporting model")]
    MissingBeliefs,

    #[error("local sample for pair ({j},{k}) has an empty {side} side")]
    EmptySide {
        j: OptionId,
        k: OptionId,
        side: &'static str,
    },

    #[error("union closure exceeds {cap} sets; use a coarser regime or raise min_local_n")]
    ClosureTooLarge { cap: usize },

    #[error("UMAS relation was computed for a different cutoff profile")]
    StaleUmas,

    /// The containment inequalities admit no distribution: the behavioral
    /// assumptions are rejected by the data.
    #[error("identified set is empty: {0}")]
    Falsified(String),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("zero denominator: no local observation contains pair ({0},{1})")]
    ZeroDenominator(OptionId, OptionId),

    #[error("lower bound on the share of the pair is zero; bounds are uninformative")]
    ZeroShare,

    #[error("outcome support has {found} values, above the cap of {cap}")]
    OutcomeSupportTooLarge { found: usize, cap: usize },

    #[error("partition is invalid: {0}")]
    NotAPartition(String),

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for errors that signal rejection of the model rather than bad input.
    pub fn is_falsification(&self) -> bool {
        matches!(self, Error::Falsified(_))
    }
}
