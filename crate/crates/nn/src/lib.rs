pub mod backend;
pub mod blocks;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use backend::{Backend, Eager, Val};
pub use error::{NnError, Result};
pub use graph::Graph;
pub use model::{FuseModel, ModelConfig};
pub use params::{BufferId, Buffers, Param, ParamId, ParamRole, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
