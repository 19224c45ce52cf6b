//! Unpaired benign → malignant image translation.

mod checkpoint;
mod losses;
mod networks;
mod synthesis;
mod trainer;

pub use checkpoint::{from_container, load_checkpoint, save_checkpoint, to_container};
pub use losses::*;
pub use networks::*;
pub use synthesis::{synthesize_minority, translate, Direction};
pub use trainer::{
    train_cyclegan, train_step, train_until, write_history_csv, CycleGanConfig, CycleGanState, EpochLosses, StepLosses,
    StepOptions,
};
