//! Learned controller: state rendering, the dueling Q-network, replay, and
//! DQN training.

pub mod checkpoint;
pub mod dqn;
pub mod net;
pub mod replay;
pub mod state;

pub use checkpoint::{Checkpoint, RngSnapshot};
pub use dqn::{
    compute_rewards, contrast_score, epsilon_at, select_actions, td_targets, DqnConfig, Learner, RewardWeights,
};
pub use net::{Architecture, QOutput, Workspace};
pub use replay::{ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};
pub use state::{render_state, AgentState, CompactState, RenderInput};
