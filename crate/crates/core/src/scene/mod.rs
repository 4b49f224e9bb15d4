//! Scene data model: Gaussian primitives with PBR attributes, pinhole
//! cameras, the cube-map environment and optional per-view references.

mod camera;
mod envmap;
mod generator;
mod io;

pub use camera::Camera;
pub use envmap::{CubeFace, EnvKind, EnvironmentMap};
pub use generator::{gen_synthetic_scene, GeneratedScene, ObjectSpec, SceneSpec, Shape};
pub use io::{load_scene, save_scene, ATTRIBUTE_FIELDS};

use std::fmt;

use crate::image::{Image, Mask};
use crate::math::{self, Mat3, Vec3};

/// One anisotropic 3D Gaussian with appearance and material attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: [f32; 3],
    /// Per-axis standard deviations.
    pub scale: [f32; 3],
    /// Unit quaternion (w, x, y, z).
    pub rotation: [f32; 4],
    /// Post-activation opacity.
    pub opacity: f32,
    /// Base radiance (band-0 SH value) in linear RGB.
    pub color: [f32; 3],
    /// Higher SH bands, `sh_rest_count(degree)` entries.
    pub sh_rest: Vec<[f32; 3]>,
    pub diffuse: [f32; 3],
    pub fresnel0: [f32; 3],
    pub roughness: f32,
    /// Object membership of the removal target.
    pub label: f32,
    /// 1 = rough (Lambertian), 0 = glossy.
    pub region: f32,
    pub normal: [f32; 3],
}

impl Default for GaussianPrimitive {
    fn default() -> Self {
        GaussianPrimitive {
            position: [0.0; 3],
            scale: [0.05; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 0.9,
            color: [0.5; 3],
            sh_rest: Vec::new(),
            diffuse: [0.5; 3],
            fresnel0: [0.04; 3],
            roughness: 0.5,
            label: 0.0,
            region: 1.0,
            normal: [0.0, 0.0, 1.0],
        }
    }
}

impl GaussianPrimitive {
    pub fn mean(&self) -> Vec3 {
        math::vec3(self.position)
    }

    pub fn covariance(&self) -> Mat3 {
        math::covariance(self.scale, self.rotation)
    }
}

/// Optional supervision attached to a camera.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewData {
    /// Reference color image.
    pub rgb: Option<Image>,
    /// Object mask of the removal target.
    pub mask_obj: Option<Mask>,
    /// Region segmentation, set on glossy pixels.
    pub mask_region: Option<Mask>,
    /// Reference world-space normals.
    pub normal: Option<Image>,
}

impl ViewData {
    pub fn is_empty(&self) -> bool {
        self.rgb.is_none() && self.mask_obj.is_none() && self.mask_region.is_none() && self.normal.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub sh_degree: u32,
    pub env: EnvironmentMap,
    pub cameras: Vec<Camera>,
    /// Either empty or one entry per camera.
    pub views: Vec<ViewData>,
}

/// A broken invariant, reported as data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn unit_range(v: f32) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Checks every type invariant; an empty result means the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let sh_count = math::sh_rest_count(scene.sh_degree);
    if scene.sh_degree > 3 {
        out.push(Violation {
            location: "scene".into(),
            message: format!("sh_degree {} exceeds 3", scene.sh_degree),
        });
    }
    for (i, g) in scene.primitives.iter().enumerate() {
        let mut push = |m: String| {
            out.push(Violation {
                location: format!("primitive {i}"),
                message: m,
            })
        };
        let finite = g
            .position
            .iter()
            .chain(&g.scale)
            .chain(&g.rotation)
            .chain(&g.color)
            .chain(&g.diffuse)
            .chain(&g.fresnel0)
            .chain(&g.normal)
            .chain([g.opacity, g.roughness, g.label, g.region].iter())
            .chain(g.sh_rest.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            push("attribute not finite".into());
            continue;
        }
        if g.scale.iter().any(|s| *s <= 0.0) {
            push("scale not positive".into());
        }
        let qn = g.rotation.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            push(format!("rotation not unit (norm {qn:.6})"));
        }
        if !(g.opacity > 0.0 && g.opacity < 1.0) {
            push(format!("opacity {} outside (0,1)", g.opacity));
        }
        if !g.diffuse.iter().all(|v| unit_range(*v)) {
            push("diffuse outside [0,1]".into());
        }
        if !g.fresnel0.iter().all(|v| unit_range(*v)) {
            push("fresnel0 outside [0,1]".into());
        }
        if !unit_range(g.roughness) {
            push(format!("roughness {} outside [0,1]", g.roughness));
        }
        if !unit_range(g.label) {
            push(format!("label {} outside [0,1]", g.label));
        }
        if !unit_range(g.region) {
            push(format!("region {} outside [0,1]", g.region));
        }
        if g.color.iter().any(|v| *v < 0.0) {
            push("color negative".into());
        }
        let nn = math::vec3(g.normal).norm();
        if (nn - 1.0).abs() > 1e-4 {
            push(format!("normal not unit (norm {nn:.6})"));
        }
        if g.sh_rest.len() != sh_count {
            push(format!(
                "sh_rest has {} entries, degree {} needs {sh_count}",
                g.sh_rest.len(),
                scene.sh_degree
            ));
        }
        if qn > 0.0 && g.scale.iter().all(|s| *s > 0.0) {
            let eig = g.covariance().symmetric_eigenvalues();
            if eig.iter().any(|e| *e <= 0.0) {
                push("covariance not positive definite".into());
            }
        }
    }
    for (i, cam) in scene.cameras.iter().enumerate() {
        for m in cam.violations() {
            out.push(Violation {
                location: format!("camera {i}"),
                message: m,
            });
        }
    }
    out.extend(scene.env.violations());
    if !scene.views.is_empty() && scene.views.len() != scene.cameras.len() {
        out.push(Violation {
            location: "views".into(),
            message: format!("{} views for {} cameras", scene.views.len(), scene.cameras.len()),
        });
    }
    for (i, (v, cam)) in scene.views.iter().zip(&scene.cameras).enumerate() {
        let dims = |w: usize, h: usize| w == cam.width && h == cam.height;
        let mut bad = |what: &str| {
            out.push(Violation {
                location: format!("view {i}"),
                message: format!("{what} does not match camera resolution"),
            })
        };
        if let Some(img) = &v.rgb {
            if !dims(img.width, img.height) || img.channels != 3 {
                bad("rgb");
            }
        }
        if let Some(m) = &v.mask_obj {
            if !dims(m.width, m.height) {
                bad("mask_obj");
            }
        }
        if let Some(m) = &v.mask_region {
            if !dims(m.width, m.height) {
                bad("mask_region");
            }
        }
        if let Some(img) = &v.normal {
            if !dims(img.width, img.height) || img.channels != 3 {
                bad("normal");
            }
        }
    }
    out
}

impl Scene {
    /// Same scene without primitives for which `keep` is false.
    pub fn filtered(&self, keep: impl Fn(&GaussianPrimitive) -> bool) -> Scene {
        Scene {
            primitives: self.primitives.iter().filter(|g| keep(g)).cloned().collect(),
            sh_degree: self.sh_degree,
            env: self.env.clone(),
            cameras: self.cameras.clone(),
            views: self.views.clone(),
        }
    }

    pub fn view(&self, i: usize) -> Option<&ViewData> {
        self.views.get(i)
    }
}
