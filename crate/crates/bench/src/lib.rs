//! Fixtures shared by the criterion benches.

use gpcn_core::graph::{laplacian, make_tube};
use gpcn_core::{Matrix, StructureMatrix};

/// Laplacian of the desk-scale lattice, `Tube(rings, 13, 3)`.
pub fn lattice_laplacian(rings: usize) -> StructureMatrix {
    laplacian(&make_tube(rings, 13, 3, 1.0).expect("valid tube"))
}

/// Deterministic dense matrix with entries in `[-1, 1)`.
pub fn pseudo_random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let data = (0..rows * cols)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}
