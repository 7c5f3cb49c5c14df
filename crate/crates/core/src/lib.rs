pub mod data;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod oracles;
pub mod scalar;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations of the generic types.
pub type ProbVector64 = transport::ProbVector<f64>;
pub type CostMatrix64 = transport::CostMatrix<f64>;
pub type SinkhornConfig64 = transport::SinkhornConfig<f64>;
pub type TransportResult64 = transport::TransportResult<f64>;
pub type ScoreConfig64 = geometry::ScoreConfig<f64>;
pub type Mlp64 = model::Mlp<f64>;
