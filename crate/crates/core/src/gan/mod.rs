//! Adversarially trained spectrogram-to-signal reconstruction.

mod augment;
mod losses;
mod nets;
mod norm;
mod spectrum;
mod train;

pub use augment::{augment_phase, rotate_phase};
pub use losses::{loss_i, loss_i_on_tape, loss_u, loss_u_on_tape, loss_v, loss_v_on_tape};
pub use nets::{
    default_generator_specs, pool_condition, DiscriminatorConfig, DiscriminatorNet,
    DiscriminatorOutput, GeneratorNet, CONDITION,
};
pub use norm::{denormalize, from_channels, normalize, to_channels, NormStats, MIN_STD};
pub use spectrum::{expand_spectrum, reduce_spectrum, HERMITIAN_TOL};
pub use train::{
    discriminator_forward, evaluate, generator_forward, loss_log_csv, train, warm_start,
    write_loss_log, EvalSummary, LossRecord, ModelBundle, NeuralReconstruction, TrainConfig,
    TrainOutcome,
};
