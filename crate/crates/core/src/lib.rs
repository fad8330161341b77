//! Numerical ergodic theory toolkit: chaotic maps, Ulam transfer operators,
//! first-return towers, ensemble estimators and an empirical checker for the
//! variance bound `var(K) ≤ D · Σ_j L_j²` on separately Hölder observables.

pub mod devroye;
pub mod error;
pub mod maps;
pub mod montecarlo;
pub mod observables;
pub mod plot;
mod stats;
pub mod tower;
pub mod transfer;

pub use error::{Error, Result};
pub use maps::{BitExpansion, Domain, DynamicalSystem, MapKind, Point, SymbolicMap, Trajectory};
pub use observables::{estimate_holder_constant, ConstantsSource, Observable, SiteFunction};
pub use transfer::{SpectralGap, Stationary, StochasticMatrix, UlamOperator};
pub use montecarlo::{EnsembleSpec, EstimateWithCI, KsResult, Method, SeedDistribution};
pub use stats::linear_fit;
pub use tower::{build_first_return_tower, Dyadic, Separation, SymbolicPoint, TowerModel};
pub use devroye::{devroye_ratio, estimate_constant_d, inequality_report, DevroyeReport, FamilySpec, SweepSummary};
