//! Shared fixtures for the benchmarks.

use gserase::scene::{gen_synthetic_scene, GeneratedScene, SceneSpec};

/// The mirror-sphere preset at `size`² pixels.
pub fn mirror_sphere(size: usize) -> GeneratedScene {
    let mut spec = SceneSpec::mirror_sphere(7);
    spec.width = size;
    spec.height = size;
    gen_synthetic_scene(&spec).expect("preset is valid")
}
