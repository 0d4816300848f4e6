//! Zero-shot scoring of 6D pose hypotheses from RGB-D observations.
//!
//! A pose hypothesis is judged by projecting the object's sampled model
//! points into the observation and comparing, point by point, depth, color
//! and surface normal against what the sensor saw. The resulting unordered
//! set of point differences is scored by a small point-set network trained
//! with an expected-pose-error selection loss, so the same weights apply to
//! objects never seen in training.
//!
//! Modules:
//!
//! 1. **geom** – rigid transforms, pinhole projection, HSV, depth normals, voxel grids.
//! 2. **objmodel** – PLY/OBJ loading, surface sampling, model preparation, symmetries.
//! 3. **render** – z-buffer rasterizer, synthetic cluttered scenes, dataset files.
//! 4. **hypo** – point-pair-feature voting, pose clustering, oriented-pair poses, ICP.
//! 5. **featurize** – point-difference sets for each hypothesis.
//! 6. **net** – tensors, layers with analytic gradients, PointNet++/PointNet scorers.
//! 7. **train** – ADD/ADD-S targets, selection loss, Adam, color jitter, training loop.
//! 8. **metrics** – VSD, MSSD, MSPD and average recall.

pub mod error;
pub mod featurize;
pub mod geom;
pub mod hypo;
pub mod metrics;
pub mod net;
pub mod objmodel;
pub mod render;
pub mod shapes;
pub mod train;

pub use error::{Error, Result};
