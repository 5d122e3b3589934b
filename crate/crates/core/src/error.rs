use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid pose for frame {frame}: {reason}")]
    InvalidPose { frame: u32, reason: String },

    #[error("cannot fuse an empty cluster")]
    EmptyCluster,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("frames out of order: frame {found} follows frame {previous}")]
    FrameOrder { previous: u32, found: u32 },

    #[error("no pose for frame {0}")]
    MissingPose(u32),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
