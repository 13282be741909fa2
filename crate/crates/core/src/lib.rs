//! Deep matrix factorization for matrix completion.
//!
//! The crate is `no_std` (with `alloc`) and carries the numeric parts of the
//! toolkit: a small reverse-mode differentiation engine, sparse rating storage
//! with splits and extendability areas, the two-branch cosine model, the
//! annealed soft quantizer, the trainer, and evaluation metrics. File formats
//! and the command-line driver live in the `dmf` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod quantizer;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{Area, AreaSplit, Features, Rating, RatingMatrix, Scaling, SplitFractions, SplitSets};
pub use error::{Error, Result};
pub use model::{Activation, BranchConfig, DmfModel};
pub use quantizer::{LambdaSchedule, Quantizer};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{SparseRows, Tensor};
pub use train::{Mode, TrainConfig, TrainReport, Trainer};
