//! Normality testing for spatially indexed functional data.
//!
//! The pipeline estimates the spectral density operator of a functional
//! random field, extracts spatial functional principal component (SFPC)
//! score fields whose levels are mutually uncorrelated at every lag, and
//! combines skewness and kurtosis of each level, standardized by long-run
//! variances, into a statistic that is asymptotically chi-squared with
//! `2p` degrees of freedom under Gaussianity.

pub mod basis;
pub mod cli;
pub mod error;
pub mod field;
pub mod io;
pub mod normtest;
pub mod numcore;
pub mod pipeline;
pub mod sfpca;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
