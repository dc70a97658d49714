//! Library surface of the `ibrsim` command-line tool.

pub mod commands;
pub mod manifest;
pub mod svg;
