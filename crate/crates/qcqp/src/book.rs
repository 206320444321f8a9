//! Compiles every Rust snippet in the guide (`book/src/*.md`) as a doc-test,
//! so the book cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub struct Introduction;

#[doc = include_str!("../../../book/src/model.md")]
pub struct Model;

#[doc = include_str!("../../../book/src/encoding.md")]
pub struct Encoding;

#[doc = include_str!("../../../book/src/refinement.md")]
pub struct Refinement;

#[doc = include_str!("../../../book/src/networks.md")]
pub struct Networks;

#[doc = include_str!("../../../book/src/solver.md")]
pub struct Solver;

#[doc = include_str!("../../../book/src/datasets.md")]
pub struct Datasets;

#[doc = include_str!("../../../book/src/counterexamples.md")]
pub struct Counterexamples;

#[doc = include_str!("../../../book/src/cli.md")]
pub struct Cli;

#[doc = include_str!("../../../book/src/formats.md")]
pub struct Formats;
