//! Reverse-mode autodiff engine: a per-step tape over flat row-major buffers,
//! providing exactly the primitives the critic needs, plus AdamW and a binary
//! checkpoint format.
//!
//! Everything is generic over the float type: gradient checks run in f64,
//! training runs in f32.

mod adamw;
pub(crate) mod kernels;
mod params;
mod tape;

pub use adamw::{adamw_step, AdamW};
pub use params::{
    load_checkpoint, save_checkpoint, CheckpointTensor, ParamTensor,
};
pub use tape::{GruWeights, NodeId, Tape};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Float scalar the engine is generic over. Implemented for f32 and f64 only.
pub trait Scalar:
    Float + NumAssignOps + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
