use std::io;

use thiserror::Error;

/// Broad classification of a [`LockError`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration values (core out of range, malformed environment).
    Configuration,
    /// The operating system refused something (affinity, thread spawn).
    Environment,
    /// The API was used against its contract.
    Usage,
    /// A critical section panicked earlier.
    Poisoned,
}

#[derive(Debug, Error)]
pub enum LockError {
    #[error("core {core} is out of range (machine has {available} CPUs)")]
    CoreOutOfRange { core: usize, available: usize },

    #[error("cannot pin to core {core}: {source}")]
    Affinity { core: usize, source: io::Error },

    #[error("failed to spawn executor thread: {0}")]
    Spawn(io::Error),

    #[error("invalid MBS_SYNC_CORES value {value:?}: {reason}")]
    BadEnvironment { value: String, reason: String },

    #[error("core {0} is already claimed by another synchronization core")]
    CoreClaimed(usize),

    #[error("synchronization core {0} is shut down")]
    ShutDown(usize),

    #[error("synchronization core {0} still has a holder or queued requests")]
    Busy(usize),

    #[error("lock is already held by the calling thread")]
    AlreadyHeld,

    #[error("calling thread does not hold the lock")]
    NotHolder,

    #[error("lock order violation: requested core {requested} while holding core {held}")]
    NestingOrder { held: usize, requested: usize },

    #[error("critical section panicked: {0}")]
    Poisoned(String),
}

impl LockError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            LockError::CoreOutOfRange { .. } | LockError::BadEnvironment { .. } => {
                ErrorKind::Configuration
            }
            LockError::Affinity { .. } | LockError::Spawn(_) => ErrorKind::Environment,
            LockError::Poisoned(_) => ErrorKind::Poisoned,
            _ => ErrorKind::Usage,
        }
    }
}

pub type Result<T, E = LockError> = std::result::Result<T, E>;
