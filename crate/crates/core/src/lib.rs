//! Variable interscan time analysis (VISTA) for OCT angiography.
//!
//! The crate turns repeated-B-scan OCT volumes into flow-speed surrogate maps:
//!
//! 1. [`octa`] computes unnormalized and normalized OCTA at every effective
//!    interscan time and registers adjacent B-scans.
//! 2. [`layers`] segments retinal surfaces and cuts vascular slabs.
//! 3. [`vessels`] identifies capillary segments (2D vesselness, skeleton graph,
//!    3D optimally oriented flux mask) and labels voxels with segment IDs.
//! 4. [`fit`] compiles normalized OCTA per segment and fits
//!    `β(1 − exp(−ατ))`.
//! 5. [`pulse`] estimates cardiac pulsatility and compensates α.
//! 6. [`render`] and [`analysis`] produce images and quantitative reports.
//!
//! [`phantom`] generates synthetic volumes with known ground truth and is the
//! reference every stage is tested against. [`pipeline`] wires the stages
//! together from a single [`config::PipelineConfig`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod container;
pub mod error;
pub mod fft;
pub mod filters;
pub mod fit;
pub mod layers;
pub mod octa;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod protocol;
pub mod pulse;
pub mod render;
pub mod rng;
pub mod vessels;
pub mod volume;

pub use error::{Error, Result};
pub use protocol::ScanProtocol;
pub use volume::{Grid, OctVolume, OctaStack, Samples, Volume};
