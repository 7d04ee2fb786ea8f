//! Runs the code listings of the mdbook guide in `book/src` as doc-tests.
//!
//! One module per chapter so a failing listing points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
mod ch00_introduction {}
#[doc = include_str!("../../../book/src/configuration.md")]
mod ch01_configuration {}
#[doc = include_str!("../../../book/src/losses.md")]
mod ch02_losses {}
#[doc = include_str!("../../../book/src/networks.md")]
mod ch03_networks {}
#[doc = include_str!("../../../book/src/data.md")]
mod ch04_data {}
#[doc = include_str!("../../../book/src/training.md")]
mod ch05_training {}
#[doc = include_str!("../../../book/src/metrics.md")]
mod ch06_metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
mod ch07_cli {}
