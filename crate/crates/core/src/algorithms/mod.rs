//! SAC-N, EDAC and LB-SAC updates: clipped ensemble targets, critic
//! regression with optional diversity penalty, reparameterised actor update
//! and automatic temperature tuning.

mod agent;
mod config;
mod losses;

pub use agent::{Agent, StepReport};
pub use config::{Algorithm, Diversity, TrainConfig};
pub use losses::{
    actor_loss, actor_objective, critic_loss, critic_objective, critic_target, temperature_loss,
    ActorObjective, CriticLoss, CriticObjective, COSINE_EPS,
};
