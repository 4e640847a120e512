#![allow(dead_code)]

use std::sync::OnceLock;

use pel::geometry::{BodyParams, ShellParams};
use pel::landscape::{BeamParams, Scene};

/// Default scene, built once per test binary.
pub fn scene() -> &'static Scene {
    static SCENE: OnceLock<Scene> = OnceLock::new();
    SCENE.get_or_init(|| Scene::build(&ShellParams::default(), &BeamParams::default(), BodyParams::default(), 138.0).unwrap())
}

/// Default geometry with both beams sharing the left calibration, so the
/// scene is mirror-symmetric about y = 0.
pub fn symmetric_scene() -> &'static Scene {
    static SCENE: OnceLock<Scene> = OnceLock::new();
    SCENE.get_or_init(|| {
        let mut s = scene().clone();
        s.beams[1].k = s.beams[0].k;
        s.beams[1].tau = s.beams[0].tau;
        s
    })
}
