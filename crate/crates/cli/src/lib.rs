//! Library half of the `pbgeom` command-line tool: configuration, grids,
//! output bookkeeping and the subcommands themselves.

pub mod commands;
pub mod config;
pub mod grid;
pub mod output;
