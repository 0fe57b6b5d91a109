//! Dense and sparse kernels, symmetric eigendecomposition and thin QR.

mod dense;
mod eigen;
mod qr;
mod sparse;

pub(crate) use dense::gemm_slices;
pub use dense::{gemm_into, Matrix};
pub use eigen::{eig_sym, EigenSystem};
pub use qr::thin_q;
pub use sparse::StructureMatrix;
