//! Query generation: which inputs to send to the API each round.

mod adversarial;
mod kcenter;
mod mixing;
mod selection;

pub use adversarial::{
    gen_adversarial, gen_adversarial_cw, gen_adversarial_pgd, AdversarialConfig, AttackMethod,
};
pub use kcenter::kcenter_greedy;
pub use mixing::{mix_batch, MixedItem, Ratio};
pub use selection::random_select;
