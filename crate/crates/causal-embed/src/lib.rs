//! Data-driven forecasting of chaotic systems with a recurrent conjugate
//! network: a tanh reservoir whose input is analytically recoverable from
//! consecutive states, a learned map from state pairs back to inputs, and a
//! closed loop that alternates the two to continue a series past its end.
//!
//! The crate is organized along the experiment pipeline:
//!
//! * [`systems`] — chaotic source systems and observation models
//! * [`reservoir`] — the driven system, its inversion, and validity gates
//! * [`readout`] — PCA compression, training pairs, MLP and ridge readouts
//! * [`forecast`] — the closed loop, full-state reconstruction, horizons
//! * [`metrics`] — densities, laminar statistics, correlation diagnostics
//! * [`pipeline`] — configuration, orchestration, artifacts, figures

pub mod error;
pub mod forecast;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod readout;
pub mod reservoir;
pub mod seeds;
pub mod series;
pub mod systems;

pub use error::{Error, Result};
pub use forecast::{closed_loop, delay_embed, reconstruct_full, valid_time, EscapeGuard, ForecastRun, Gamma};
pub use metrics::{
    density_distance, estimate_density, estimate_density_on_edges, injectivity_test,
    laminar_stats, pearson, rv_coefficient, DensityEstimate, EvalReport, LaminarStats,
};
pub use pipeline::{
    fit_readout, run_pipeline, ExperimentConfig, ForecastConfig, InjectivityConfig, LaminarConfig,
    MetricsConfig, PipelineRun, ReconstructionSummary, ReservoirConfig, SystemConfig,
    TrainingConfig,
};
pub use readout::{
    fit_pca, fit_ridge, make_dataset, train_regressor, Architecture, OptimizerConfig, PcaBasis,
    ReadoutModel, Regressor, TargetKind, TrainSet,
};
pub use reservoir::{build, Reservoir, StateTrajectory, UspReport};
pub use series::{CsvContents, Phase, SeriesMeta, TimeSeries};
pub use systems::{generate, observe, snr_db, ObservationMode, ObservationSpec, SystemKind, SystemSpec};
