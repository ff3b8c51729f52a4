//! Stochastic-gradient Langevin samplers for convolutional classifiers.
//!
//! The crate trains a small CNN with SGD, fixed-rate SGD, SGLD, RMSprop-preconditioned
//! SGLD and K-FAC-preconditioned SGLD, then evaluates the sampled ensembles: test
//! accuracy, FGSM robustness, out-of-distribution confidence and chain mixing.
//!
//! ```no_run
//! use langevin::config::load_config;
//! use langevin::harness::run_experiment;
//!
//! let cfg = load_config("configs/quick.toml".as_ref())?;
//! let summary = run_experiment(&cfg)?;
//! println!("test accuracy {:.3}", summary.final_test_accuracy);
//! # Ok::<(), langevin::Error>(())
//! ```

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod harness;
pub mod kfac;
pub mod net;
pub mod plots;
pub mod rng;
pub mod samplers;
pub mod tensor;

pub use error::{Error, Result};
