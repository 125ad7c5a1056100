//! Timestamp simulation for single-photon LiDAR under detector dead time.
//!
//! Two simulators share one set of types:
//!
//! * [`oracle`]: the conventional photon-by-photon dead-time culling scan,
//!   used as ground truth and to generate training labels.
//! * [`fast_sim`]: draws a registration count from the Gaussian
//!   [`count_model`] and samples timestamps from the registration PDF
//!   predicted by the [`net`] autoencoder, skipping the sequential scan.

pub mod arrival;
pub mod bench;
pub mod count_model;
pub mod dataset;
pub mod error;
pub mod fast_sim;
mod format;
pub mod grid;
pub mod net;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod stats;

pub use arrival::{
    inverse_transform_sample, sample_poisson_count, simulate_arrivals, InverseCdf, TimestampBatch,
};
pub use bench::{run_benchmark, BenchReport};
pub use count_model::{energy_loss_fn, estimate_count, expected_loss, sample_count, CountEstimate};
pub use dataset::{Dataset, DatasetConfig, HeldOutMetrics, Split};
pub use error::{Result, SimError};
pub use fast_sim::{
    estimate_depth, fast_simulate, simulate_image, write_runtime_report, DepthMap, Engine,
    ImageResult, SceneSpec,
};
pub use grid::{arrival_pdf, build_flux, DiscretizedFunction, TimeGrid};
pub use net::{predict_pdf, AeModel};
pub use oracle::{
    empirical_pdf, run_oracle, simulate_registrations, EmpiricalPdf, RegistrationResult,
};
pub use params::{Config, EnvParams, Sbr, SystemParams};
pub use rng::RngHandle;
