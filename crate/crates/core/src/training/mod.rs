//! Contrastive training: mining, triplet loss, Adam, one-cycle LR and the loop.

mod calibrate;
mod loss;
mod mining;
mod optim;
mod schedule;
mod trainer;

pub use calibrate::{matched_threshold, CALIBRATION_SAMPLE};
pub use loss::{triplet_loss, TripletLossOutput};
pub use mining::{mine_dynamic, mine_random, verify_triplets, DynamicMining, MiningMode, MiningPhase, Triplet};
pub use optim::{AdamHyper, OptimizerState};
pub use schedule::{one_cycle_lr, DIV_FACTOR, FINAL_DIV_FACTOR, WARMUP_FRACTION};
pub use trainer::{
    train, train_to_dir, train_with, StepRecord, TrainConfig, TrainOutcome, FINAL_CHECKPOINT, MANIFEST_FILE,
    TRAIN_LOG_FILE,
};
