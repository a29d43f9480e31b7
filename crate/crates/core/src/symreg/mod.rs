//! Closed-form regression of the trained decoupler networks.

mod discover;
pub mod expr;
mod fit;
mod kmeans;
pub(crate) mod library;
pub(crate) mod search;

pub use discover::{
    assemble_rhs, regress_decoupler, Backend, DiscoveredModel, ExprRecord, Provenance, RefitConfig,
    RegressConfig,
};
pub use expr::{BinaryOp, Expr, Program, UnaryOp};
pub use fit::{fit_constants, ConstantFit};
pub use kmeans::kmeans_sample;
pub use library::{linear_combination, lstsq, sparse_regress, FunctionLibrary, Samples};
pub use search::{additive_terms, linear_parts, search_regress, Candidate, SearchConfig};
