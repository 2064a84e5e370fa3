//! Model explanations: correlation matrices, a surrogate regression tree,
//! exact Shapley attributions with pairwise interactions, a synergy graph,
//! and dependence and surface grids.
//!
//! Every explainer takes the model as a [`RiskModel`](crate::discriminator::RiskModel)
//! and only calls it in eval mode.

mod correlation;
mod grids;
mod shapley;
mod surrogate;
mod synergy;

pub use correlation::{correlations, CorrelationMatrices, CORRELATION_LABELS};
pub use grids::{
    background_medians, dependence_grid, dependence_csv, surface_csv, surface_grid, DependenceRow,
    SurfacePoint, SURFACE_STEPS,
};
pub use shapley::{
    global_importance, mean_abs_interactions, AttributionReport, GlobalImportance,
    ShapleyExplainer, NUM_COALITIONS,
};
pub use surrogate::{fit_surrogate, MdiImportance, SurrogateConfig, SurrogateTree, TreeNode};
pub use synergy::{SynergyEdge, SynergyGraph, SynergyNode};
