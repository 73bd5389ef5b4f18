//! Forecasting baselines: ARIMA on monthly cost per vehicle and
//! next-job sequence models.

pub mod arima;
pub mod cost;
pub mod sequence;

pub use arima::{
    arima_fit, arima_forecast, naive_rmse, rolling_origin_eval, select_order, write_forecast_csv, ArimaFit, ArimaSpec,
    ForecastPoint, HorizonEval, RollingEval,
};
pub use cost::{build_cost_series, CostSeries, Grouping};
pub use sequence::{fit_sequence_model, perplexity, SequenceModel, SequenceVariant};
