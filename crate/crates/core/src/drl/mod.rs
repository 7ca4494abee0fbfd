//! Demonstration-guided recurrent deep-Q learning: network, schedules,
//! losses, replay, and the training loop with its ablation modes.

pub mod loss;
pub mod opt;
pub mod qnet;
pub mod replay;
pub mod schedule;
pub mod train;

pub use loss::{
    combined_loss_grad, combined_loss_value, demonstration_loss, dummy_policy, nstep_return,
    CeDirection, LossSample, NStepMode, NStepTarget,
};
pub use opt::{clip_grad_norm, Adam};
pub use qnet::{Dims, Hidden, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use schedule::{anneal_factor, argmax, epsilon_schedule, select_action};
pub use train::{
    load_checkpoints, save_checkpoints, train, GreedyPolicy, Hyperparams, TrainError, TrainLogRow,
    TrainMode, TrainOutput, TrainedAgent,
};
