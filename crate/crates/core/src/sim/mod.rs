//! Harmonic mass-spring microtubule simulator and dataset generation.

pub mod dataset;
pub mod geometry;
pub mod integrator;
pub mod potential;

pub use dataset::{
    generate_dataset, Dataset, Frame, FrameLayout, Normalization, NormalizationMode, ParamGrid,
    RunSummary,
};
pub use geometry::{
    build_geometry, Angle, AngleKind, Bond, BondKind, LatticeShape, MtModel, StrengthParam,
};
pub use integrator::{run_simulation, SimConfig, SimState, Simulator};
pub use potential::{evaluate, Evaluation, Strengths};

/// Unit system: lengths in nm, times in ns, masses in attograms (1e-21 kg).
/// Derived: energy in zJ (1e-21 J), force in pN (1e-12 N).
///
/// A 50 Da monomer is 8.3027e-26 kg, i.e. 8.3027e-5 ag.
pub mod units {
    pub const DALTON_IN_AG: f64 = 1.660_539_066_6e-6;
    pub const MONOMER_MASS: f64 = 50.0 * DALTON_IN_AG;

    /// Rest lengths (nm) and angles (degrees) of the reference lattice.
    pub const LAT_REST: f64 = 5.15639;
    pub const LONG_REST: f64 = 5.0;
    pub const LAT_ANGLE_DEG: f64 = 153.023;
    pub const QUAD_ACUTE_DEG: f64 = 77.0694;
    pub const QUAD_OBTUSE_DEG: f64 = 102.931;

    /// Bond stiffness at strength 1, zJ/nm².
    pub const BOND_K: f64 = 1.0;
    /// Angle stiffness at strength 1, zJ/rad².
    pub const ANGLE_K: f64 = 25.0;

    /// Newtons to pN.
    pub const NEWTON: f64 = 1e12;
    /// Peak end load per particle, pN.
    pub const MAX_FORCE: f64 = 3e-15 * NEWTON;

    /// ns.
    pub const DT: f64 = 2e-4;
}
