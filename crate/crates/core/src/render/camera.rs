use crate::geometry::Point3;

/// Orthographic camera looking at the origin. `(right, up, view)` is a
/// right-handed orthonormal triad: `right = up x view`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub view: Point3,
    pub up: Point3,
    pub right: Point3,
}

/// Ordered set of camera poses.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub poses: Vec<CameraPose>,
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalized(a: Point3) -> Point3 {
    let n = dot(&a, &a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl CameraPose {
    /// Pose with the given viewing direction; `up` is the global z axis made
    /// orthogonal to `view`, or the x axis when `view` is within 1e-9 of a
    /// pole.
    pub fn from_view(view: Point3) -> Self {
        let view = normalized(view);
        let z = [0.0, 0.0, 1.0];
        let reference = if dot(&view, &z).abs() > 1.0 - 1e-9 {
            [1.0, 0.0, 0.0]
        } else {
            z
        };
        let along = dot(&reference, &view);
        let up = normalized([
            reference[0] - along * view[0],
            reference[1] - along * view[1],
            reference[2] - along * view[2],
        ]);
        let right = cross(&up, &view);
        Self { view, up, right }
    }
}

/// `n_views` cameras on the Fibonacci sphere lattice, each looking from its
/// lattice point toward the origin.
pub fn make_camera_rig(n_views: usize) -> CameraRig {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let poses = (0..n_views)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n_views as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let position = [r * phi.cos(), r * phi.sin(), z];
            CameraPose::from_view([-position[0], -position[1], -position[2]])
        })
        .collect();
    CameraRig { poses }
}
