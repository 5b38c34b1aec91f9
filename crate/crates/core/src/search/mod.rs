//! Factored objective weighting, dev-head meta-gradients and the training
//! loops built on them.

mod factors;
mod meta;
mod run;

pub use factors::{
    logit, primitive_key, sample_objectives, sigmoid, softmax, total_loss, FactorSnapshot, FactorWeights,
};
pub use meta::{
    bidirectional_mask, combine_gradients, meta_gradients, train_dev_head, validation_gradient, DevHeadConfig,
    DevHeadFit,
};
pub use run::{
    evaluate, run_end_task_only, run_search, run_single_objective, run_static_multitask, RunKind, RunReport,
    SearchConfig, SearchSetup, StepRecord,
};
