//! Coordinate conventions and the shell surface.

pub mod pose;
pub mod shell;

pub use pose::{normalize_angle, pose_rotation, BodyParams, Dof, Mat3, Pose, Vec3};
pub use shell::{
    closest_point_on_triangle, shell_build, surface_query, ContactKind, Half, Region, ShellMesh,
    ShellParams, SurfaceHit, TouchCell, Triangle,
};
