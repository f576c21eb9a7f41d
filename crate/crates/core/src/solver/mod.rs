//! Fitting the CNR objective: design matrices, ADMM and a Newton reference.

mod admm;
mod design;
mod reference;

pub use admm::{admm_fit, z_update, AdmmConfig, FitDiagnostics, WStep};
pub use design::{assemble, DesignMatrices, SparseRows};
pub use reference::{
    feasible_start, reference_fit, reference_fit_design, ReferenceFit, ReferenceOptions,
};
