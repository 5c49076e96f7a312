//! `C^1` linearization: the conjugacies `h_m` with derivatives and
//! inverses, the stable foliation by fiber contraction, and the global
//! extension of a local conjugacy through fundamental domains.

mod conjugacy;
mod extension;
mod foliation;
mod green;

pub use conjugacy::{
    square_grid, verify_conjugacy, ConjugacyEvaluator, ConjugacyOptions, IndexResidual, PicardStats,
    ResidualReport, ResidualRow,
};
pub use extension::{extend_by_fundamental_domains, Extended, FundamentalDomain};
pub use foliation::{solve_foliation_point, FoliationOptions, FoliationRates, FoliationSolveResult};
