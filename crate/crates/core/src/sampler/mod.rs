//! Exact and approximate realizations of the field and its auxiliary
//! processes, all driven by reproducible per-replica random streams.

pub mod charline;
pub mod exact;
pub mod export;
pub mod rng;
pub mod walsh;

pub use charline::{char_increment_variance, increment_coefficients, sample_char_line, sample_y_path, CharLineSample, LineSampler};
pub use exact::{cholesky_with_jitter, sample_exact, ExactSampler};
pub use export::FieldSample;
pub use rng::SeedSpec;
pub use walsh::{sample_grid_walsh, GridSpec, NoiseGrid, WalshProbe, WalshSampler};
