//! Net survival estimation when the disease-specific and other-cause failure
//! times are dependent, with the dependence encoded by an Archimedean copula.

pub mod baseline_pp;
pub mod copulas;
pub mod inference;
pub mod lifetable;
pub mod likelihood;
pub mod marginals;
pub mod optim;
pub mod simulate;

// The guide's code blocks run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/marginals.md")]
    mod marginals {}
    #[doc = include_str!("../../../book/src/copulas.md")]
    mod copulas {}
    #[doc = include_str!("../../../book/src/life-tables.md")]
    mod life_tables {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/pohar-perme.md")]
    mod pohar_perme {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
