//! Simulation of nonautonomous delay differential systems with dominated
//! diagonal decay, nonnegative delayed coupling, and nonmonotone birth
//! terms — plus grid certification of the structural inequalities behind
//! uniform persistence and permanence.
//!
//! The pieces:
//!
//! * [`timefn`] — time-varying coefficients as closed expression trees;
//! * [`system`] — the system class itself: kernels, birth shapes,
//!   envelopes, rescaling, and the cooperative lower companion;
//! * [`integrator`] — fixed-step method-of-steps integration with
//!   cubic-Hermite dense output;
//! * [`hypotheses`] — linear-programming certificates for the decay- and
//!   birth-dominance inequalities, and the persistence/permanence verdict;
//! * [`experiments`] — residual oracles, ensemble permanence estimation,
//!   comparison runs, decay fits, extinction checks;
//! * [`models`] — the built-in model catalogue and fixture suite;
//! * [`schema`] — the versioned JSON spec-file format.
//!
//! A narrative guide with runnable snippets lives in `book/`; its code
//! blocks are compiled as doc-tests of this crate.

pub mod experiments;
pub mod hypotheses;
pub mod integrator;
pub(crate) mod lp;
pub mod models;
pub(crate) mod numerics;
pub(crate) mod quad;
pub mod schema;
pub mod system;
pub mod timefn;

// Keep the book's code examples compiling: each chapter is attached as a
// doc-test module.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/integration.md")]
    mod integration {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
