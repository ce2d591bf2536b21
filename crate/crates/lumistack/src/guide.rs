//! The long-form guide, one module per chapter. The chapter sources live in
//! `book/` and render with mdbook; including them here runs every code
//! example as a doc test, so the guide cannot drift from the API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/images.md")]
pub mod images {}

#[doc = include_str!("../../../book/src/warps-and-alignment.md")]
pub mod warps_and_alignment {}

#[doc = include_str!("../../../book/src/factorization.md")]
pub mod factorization {}

#[doc = include_str!("../../../book/src/sun-azimuth.md")]
pub mod sun_azimuth {}

#[doc = include_str!("../../../book/src/synthetic-scenes.md")]
pub mod synthetic_scenes {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
