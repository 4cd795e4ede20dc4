//! Crowd density maps and Gaussian-prior pseudo-label reconstruction.
//!
//! The crate covers the non-neural half of a domain-adaptive crowd counting
//! pipeline:
//!
//! * [`density`] builds the discrete Gaussian window and stamps head
//!   annotations into density maps.
//! * [`gpr`] turns a coarse predicted density map back into head positions by
//!   greedy kernel matching, then re-stamps them into a standardized pseudo
//!   label.
//! * [`metrics`] holds the counting errors, PSNR/SSIM and the forward values
//!   of the adversarial/consistency losses used during adaptation.
//! * [`dataset`] models synthetic scene metadata and the scene filter presets.
//! * [`io`] reads and writes the on-disk formats (DMAP v1 rasters, head CSV,
//!   scene JSONL, PGM).
//!
//! Rasters are 0-indexed and row-major; a point `(x, y)` is column `x`,
//! row `y`, origin top-left.

pub mod bench;
pub mod dataset;
pub mod density;
mod error;
pub mod gpr;
pub mod io;
pub mod metrics;
pub mod synth;

pub use density::{
    crop_window, generate_density_map, make_window, BorderPolicy, DensityMap, GaussianWindow,
    HeadList, Point,
};
pub use error::{Error, Location, Result};
pub use gpr::{
    probability_map, reconstruct, refresh_region, select_candidate, GreedyExtractor, Mode,
    ProbabilityMap, ReconstructionResult, Region, TraceEntry,
};

/// Window side used for pseudo labels unless configured otherwise.
pub const DEFAULT_K: usize = 15;
/// Window standard deviation in pixels unless configured otherwise.
pub const DEFAULT_SIGMA: f64 = 4.0;
