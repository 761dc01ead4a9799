//! Multinomial multiple correspondence analysis: a low-rank multinomial
//! logit model for categorical tables, fitted by majorization with a
//! nuclear-norm penalty on the interaction.

mod diagnostics;
mod majorize;
mod model;
mod report;
mod solver;

pub use diagnostics::{biplot_coords, centroid_bias, predict_log_proba, predict_proba, BiplotCoords, BiplotScaling};
pub use majorize::{block_deviance, deviance_gradient_block, hessian_block, majorizer_value};
pub use model::{
    deviance, linear_predictor, log_sum_exp, penalized_deviance, softmax_in_place, softmax_probs, ModelParams,
    ProbabilityMatrix,
};
pub use report::{FitReport, VariableLabels, FORMAT_VERSION};
pub use solver::{
    build_working_matrix, fit, log_margins, mm_step, soft_threshold, FitConfig, FitResult, Init, DEFAULT_EPSILON,
    DEFAULT_MAX_ITER,
};
