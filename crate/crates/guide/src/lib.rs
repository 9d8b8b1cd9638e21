//! Book snippets compiled as doc-tests.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core-sets.md")]
pub mod core_sets {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/rollouts.md")]
pub mod rollouts {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/planners.md")]
pub mod planners {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/parameters.md")]
pub mod parameters {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/environments.md")]
pub mod environments {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
