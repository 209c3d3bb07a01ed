//! Blinded rating studies: disjoint subset plans, sessions that only ever
//! show the next item, an append-only journal and the HTTP API raters use.

pub mod http;
pub mod journal;
pub mod plan;
pub mod service;

pub use plan::{plan_subsets, PoolEntry};
pub use service::StudyService;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("unknown study {0:?}")]
    UnknownStudy(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown snippet {0:?}")]
    UnknownSnippet(String),
    #[error("pool holds {available} snippets, plan needs {needed}")]
    PoolTooSmall { available: usize, needed: usize },
    #[error("snippet {got:?} is not the current item")]
    OutOfOrder { got: String },
    #[error("snippet {0:?} is already labelled in this session")]
    AlreadyLabelled(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("media for {0:?} differs between studies; name the study")]
    AmbiguousMedia(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
