use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("campaign {0} has no journal (empty campaign)")]
    EmptyCampaign(String),
    #[error("campaign {0} already exists")]
    AlreadyExists(String),
    #[error("corrupt {}: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("batch log gap: missing {}", fmt_range(*from, *to))]
    Gap { from: u64, to: u64 },
    #[error("no snapshot for epoch {0}")]
    NoSnapshot(u64),
    #[error(transparent)]
    Campaign(#[from] armada_core::Error),
}

fn fmt_range(from: u64, to: u64) -> String {
    if from == to {
        format!("epoch {from}")
    } else {
        format!("epochs {from}..={to}")
    }
}

impl StoreError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
