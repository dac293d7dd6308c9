//! Differentiable expected-depth renderer: orthographic cameras on a
//! Fibonacci sphere, Gaussian splatting into an occupancy grid and
//! front-to-back ray termination.

mod camera;
mod pfm;
mod splat;

pub use camera::{make_camera_rig, CameraPose, CameraRig};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use splat::{
    render_depth, render_on_tape, render_points, render_rig, termination_mass, truncation_margin,
    view_loss, view_loss_on_tape, DepthImage, RenderConfig, RenderOp,
};
