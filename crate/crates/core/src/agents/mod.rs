//! Symbolic oracle agents, neural speaker and listener, and their training.

mod neural;
mod oracle;
mod train;

pub use neural::{
    ArchConfig, Judgement, NeuralListener, NeuralSpeaker, Rollout, RowEncoder, TokenPolicy,
    MESSAGE_PREFIXES, REASONING_PREFIXES,
};
pub use oracle::{
    extract_rules, Fallback, OracleCodebook, OracleListener, OracleSpeaker, TokenLayout,
};
pub use train::{
    joint_train, joint_train_resume, listener_accuracy, pair_accuracy, pretrain_speaker,
    reward_baseline, token_accuracy, train_listener, Curve, CurvePoint, JointState, PretrainReport,
    RewardBaseline, TrainConfig, TrainError,
};
