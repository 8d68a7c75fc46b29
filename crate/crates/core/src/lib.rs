pub mod attention;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod explainer;
pub mod fusion;
pub mod model;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod tensor;
pub mod text;
pub mod trainer;
pub mod transport;

pub use checkpoint::{BoundParams, ParamStore};
pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
