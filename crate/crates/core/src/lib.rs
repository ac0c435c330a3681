#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Level-2 rough path calculus on finite grids.

pub mod crp;
pub mod drivers;
pub mod error;
pub mod fields;
pub mod grid;
pub mod hoelder;
pub mod io;
pub mod linalg;
pub mod rde;
pub mod sensitivity;
pub mod sewing;
pub mod stats;
pub mod tensor;
pub mod verify;
pub mod young;

pub use error::{Error, Result};
pub use grid::{ControlFn, DiscretePath, Grid};
pub use tensor::{RoughPath, Tensor2};
