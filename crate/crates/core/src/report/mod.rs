//! Output tables, figures, configuration and the command-line interface.

pub mod cli;
pub mod config;
pub mod figures;
pub mod io;
pub mod stages;
pub mod svg;
