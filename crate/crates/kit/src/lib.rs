//! Filesystem side of the lesion toolkit: NIfTI-1 volumes, paired
//! statistics, report files, configuration and the `lesionkit` CLI.

pub mod cli;
pub mod config;
pub mod nifti;
pub mod report;
pub mod stats;
