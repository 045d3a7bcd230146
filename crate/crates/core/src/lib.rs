//! Monte Carlo estimation of familywise error rates for cluster-level
//! inference on synthetic null multi-subject imaging data.
//!
//! The crate is organized as a pipeline:
//!
//! * [`volcore`]: volumes, masks, clustering, smoothing and file I/O
//! * [`acf`]: spatial autocorrelation models and smoothness estimation
//! * [`synth`]: synthetic null subjects with controllable noise structure
//! * [`design`]: task paradigms, HRF convolution and design matrices
//! * [`firstlevel`]: per-subject GLM, nuisance cleanup, Yeo-Johnson
//! * [`paramthresh`]: random-field and Monte Carlo cluster thresholds
//! * [`nonparam`]: permutation and sign-flipping group inference
//! * [`harness`]: repeated null analyses, FWE estimates, prevalence and PCA
//! * [`biblio`]: bibliometric estimate of studies using a lax CDT

pub mod acf;
pub mod biblio;
pub mod cli;
pub mod design;
pub mod error;
pub mod firstlevel;
pub mod harness;
pub mod nonparam;
pub mod paramthresh;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod volcore;

pub use error::{Error, Result};
