//! Structure learning for continuous-variable Bayesian networks.
//!
//! `idealbn` learns directed acyclic graphical models over real-valued
//! variables with Gaussian-noise conditional densities (linear or sigmoid
//! link). Instead of scoring every candidate edge with a full parameter
//! refit, the search constructs an *ideal parent profile* for each family —
//! the hypothetical parent values that would predict the child perfectly —
//! and ranks candidates by closed-form similarity to that profile. Only the
//! top-ranked candidates receive exact scoring. The same profiles drive
//! hidden-variable discovery (a small eigenproblem yields the best shared
//! parent for a cluster of children) and plug into a structural EM loop for
//! missing data and latent variables.
//!
//! Entry points:
//! - [`search::greedy_search`] — hill climbing over fully observed data,
//!   exhaustive or profile-guided.
//! - [`sem::structural_em`] — EM-wrapped search for missing values and
//!   two-layer latent models.
//! - [`hidden::agglomerate_clusters`] — where should a new hidden variable
//!   attach, and what values should it take?
//! - The `idealbn` binary wraps these as `learn`, `sample`, `synth`,
//!   `evaluate`, and `bench` subcommands.
//!
//! The guide under `book/` walks through the concepts; its code snippets
//! compile and run as part of `cargo test`.

pub mod cli;
pub mod cpd;
pub mod error;
pub mod hidden;
pub mod ideal;
pub mod io;
pub mod model;
pub mod search;
pub mod sem;

pub use error::{Error, Result};

// The guide's code blocks double as doc-tests so the book can never drift
// from the API.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/similarity.md")]
    mod similarity {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/hidden-variables.md")]
    mod hidden_variables {}
    #[doc = include_str!("../../../book/src/missing-data.md")]
    mod missing_data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
