//! Conic problem representation and the localization relaxations built on it.

mod builder;
mod ir;

pub use builder::{
    build_esdp, build_esdp_anchor_uncertain, build_fullsdp, build_fullsdp_anchor_uncertain,
    edge_objective_term, epigraph_block, lifted_var, nonnegative_block, AnchorPrior,
    CoefficientMode,
};
pub use ir::{
    AnchorVariant, BlockEntry, BlockRole, ConicProblem, Equality, Formulation, LiftedLayout,
    LinearForm, PsdBlock, VarId, VarLabel,
};
