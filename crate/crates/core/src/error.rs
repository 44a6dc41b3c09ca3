use alloc::string::String;

use crate::allocator::ArmId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid arm id {0:?}: must be 1-64 chars of [A-Za-z0-9_.-]")]
    InvalidArmId(String),
    #[error("campaign has no arms")]
    EmptyArmSet,
    #[error("arm {0} already exists")]
    DuplicateArm(ArmId),
    #[error("unknown arm {0}")]
    UnknownArm(ArmId),
    #[error("every arm is blacklisted; at least one arm must stay live")]
    AllArmsBlacklisted,
    #[error("floor {floor} is infeasible for {active_arms} active arms (active_arms * floor > 1)")]
    InfeasibleFloor { floor: f64, active_arms: usize },
    #[error("invalid floor schedule: {0}")]
    InvalidSchedule(String),
    #[error("batch log gap: expected epoch {expected}, found {found}")]
    EpochGap { expected: u64, found: u64 },
}
