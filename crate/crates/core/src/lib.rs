//! Benchmarking toolkit for retrieval-based visual localization.
//!
//! The crate covers the three ways a ranked list of database images can be
//! turned into a query pose:
//!
//! * pose approximation from the poses of the top-k images ([`approximation`]),
//! * pose estimation against a map triangulated on the fly from the top-k
//!   images ([`localization::localize_local_sfm`]),
//! * pose estimation against a pre-built global map
//!   ([`localization::localize_global`]),
//!
//! together with the retrieval metrics used to correlate them ([`retrieval`]),
//! the dataset formats ([`io`]), a deterministic synthetic scene generator
//! ([`synthetic`]) and the benchmark driver ([`bench`]).

pub mod approximation;
pub mod bench;
pub mod geometry;
pub mod io;
pub mod localization;
pub mod retrieval;
pub mod synthetic;

/// Image identifiers are opaque strings; they may contain `/` but not `,`.
pub type ImageId = String;
