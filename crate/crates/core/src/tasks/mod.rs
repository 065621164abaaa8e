//! Training and evaluation harnesses with their metrics.

mod data;
mod forecast;
mod metrics;
mod train;
mod transfer;

pub use data::{draw_hidden, mask_expression, write_matrix_csv, ExpressionDataset, FrameSet, Split, LABEL_COLUMN};
pub use forecast::{
    init_recurrent, last_value_mse, train_forecast_recurrent, train_forecast_simultaneous, windows, ForecastReport,
    LstmCell, RNN_PREFIX,
};
pub use metrics::{imputation_loss, macro_auc, masked_mse, mean_series_pcc, mse, pcc};
pub use train::{
    class_probabilities, train_classification, train_imputation, ClassificationReport, ImputationProbe,
    ImputationReport, TrainConfig, TrainReport,
};
pub use transfer::{pretrain_finetune, select_alpha, AlphaSelection, ALPHA_GRID};
