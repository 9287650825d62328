//! Imitation learning on a pixel four-rooms task: adversarial imitation with
//! a behavior-cloned, frozen global encoder and penalized discriminator
//! rewards, plus the plain, bottlenecked and latent-code variants.

pub mod demogen;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod navenv;
pub mod trainers;
