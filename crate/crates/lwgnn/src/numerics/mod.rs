//! Dense and sparse linear algebra with analytic gradients, an
//! adaptive-moment optimizer, and a finite-difference gradient checker.

pub mod dense;
pub mod gradcheck;
pub mod params;
pub mod sparse;

pub use dense::{
    dense_matmul, dense_matmul_backward, dense_matmul_nt, dense_matmul_tn, masked_cross_entropy,
    maxpool_stack, maxpool_stack_backward, relu, relu_backward, row_argmax, row_softmax,
    row_softmax_backward, DenseMatrix, LOG_EPS,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GradCheckWorst};
pub use params::{Optimizer, ParameterStore};
pub use sparse::SparseMatrix;
