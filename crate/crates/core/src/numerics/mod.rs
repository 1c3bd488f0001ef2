//! Dense numerics shared by every other module: frame matrices, small dense
//! linear algebra, Gaussian log densities, seeded randomness and a
//! finite-difference gradient oracle.

mod conv;
mod frame;
mod gaussian;
mod grad;
mod linalg;
mod rng;

pub use conv::{
    conv1d_backward, conv1d_forward, matmul_frames, matmul_frames_transposed, outer_frames,
};
pub use frame::FrameMatrix;
pub use gaussian::{gaussian_log_density, unit_gaussian_log_density, LOG_NORM_CONST};
pub use grad::{finite_diff_grad, relative_error};
pub use linalg::{logabsdet, LuDecomposition, SquareMatrix, SINGULARITY_TOLERANCE};
pub use rng::{sample_standard_normal, SeededRng};
