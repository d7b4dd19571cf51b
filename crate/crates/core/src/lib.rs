//! Structured-light reconstruction of colour-varying surfaces with per-channel
//! lateral chromatic aberration (LCA) correction and minimum-variance fusion of
//! the red, green and blue phase estimates.
//!
//! Pipeline stages, in reconstruction order:
//!
//! 1. [`cam_lca`] — seven-parameter camera LCA model; resamples R and B onto G.
//! 2. [`phase`] — N-step phase shifting, gray-code unwrapping, column scaling.
//! 3. [`prj_lca`] — depth-linear projector LCA lookup tables and plug-in correction.
//! 4. [`noise`] + [`fusion`] — Poisson–Gaussian phase variance, outlier gating,
//!    inverse-variance channel fusion.
//! 5. [`geometry`] — triangulation against the projector column.
//!
//! [`simulator`] renders synthetic captures with injected aberrations and noise,
//! and [`eval`] runs the pipeline variants and plane-fit metrics. File formats
//! live in [`io`].

pub mod cam_lca;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod noise;
pub mod phase;
pub mod prj_lca;
pub mod raster;
pub mod simulator;

use serde::{Deserialize, Serialize};

pub use geometry::{PixelCoord, StereoCalibration};
pub use raster::{ChannelRaster, Image, Raster, Roi};

/// Colour channel of the camera (and of the projector light that feeds it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    /// Storage order used by every per-channel array in this crate.
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::R => "R",
            Channel::G => "G",
            Channel::B => "B",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
