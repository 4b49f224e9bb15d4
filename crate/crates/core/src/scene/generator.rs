//! Procedural desk-scale scenes: a glossy ground plane with Gaussian-shell
//! objects on it, a camera ring and a procedural environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Camera, EnvKind, EnvironmentMap, GaussianPrimitive, Scene};
use crate::error::{Error, Result};
use crate::math::{quat_from_z_to, sh_rest_count, to_f32, Vec3};

/// Thickness (standard deviation along the normal) of every surfel.
pub const SURFEL_THICKNESS: f32 = 0.004;
/// Tangential standard deviation as a fraction of the sampling spacing.
pub const SURFEL_SPREAD: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub center: [f64; 3],
    pub color: [f32; 3],
    /// Surface sampling distance between neighbouring surfels.
    pub spacing: f64,
    pub opacity: f32,
    pub roughness: f32,
    /// Marks the removal target.
    pub target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub plane_half_extent: f64,
    pub plane_spacing: f64,
    pub plane_roughness: f32,
    pub plane_fresnel0: f32,
    pub plane_diffuse: [f32; 3],
    pub plane_opacity: f32,
    pub objects: Vec<ObjectSpec>,
    #[serde(skip, default = "default_env")]
    pub env: EnvKind,
    pub env_size: usize,
    pub env_levels: usize,
    pub camera_count: usize,
    pub camera_radius: f64,
    pub camera_height: f64,
    pub camera_target: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub fov_x_deg: f64,
    pub sh_degree: u32,
    pub seed: u64,
}

fn default_env() -> EnvKind {
    EnvKind::Gradient {
        ground: [0.25, 0.22, 0.2],
        horizon: [0.95, 0.95, 0.9],
        zenith: [0.55, 0.7, 1.0],
    }
}

impl SceneSpec {
    /// Names accepted by [`SceneSpec::preset`].
    pub const PRESETS: [&'static str; 2] = ["mirror-sphere", "sphere-and-box"];

    /// A red rough sphere resting on a near-mirror plane, 8 cameras.
    pub fn mirror_sphere(seed: u64) -> SceneSpec {
        SceneSpec {
            plane_half_extent: 1.2,
            plane_spacing: 0.05,
            plane_roughness: 0.01,
            plane_fresnel0: 0.9,
            plane_diffuse: [0.05, 0.05, 0.05],
            plane_opacity: 0.95,
            objects: vec![ObjectSpec {
                shape: Shape::Sphere { radius: 0.25 },
                center: [0.0, 0.0, 0.25],
                color: [0.8, 0.12, 0.1],
                spacing: 0.035,
                opacity: 0.95,
                roughness: 0.8,
                target: true,
            }],
            env: default_env(),
            env_size: 256,
            env_levels: 5,
            camera_count: 8,
            camera_radius: 2.2,
            camera_height: 1.3,
            camera_target: [0.0, 0.0, 0.1],
            width: 96,
            height: 96,
            fov_x_deg: 45.0,
            sh_degree: 0,
            seed,
        }
    }

    /// Mirror-sphere plus a non-target box beside it.
    pub fn sphere_and_box(seed: u64) -> SceneSpec {
        let mut s = Self::mirror_sphere(seed);
        s.objects.push(ObjectSpec {
            shape: Shape::Box { half: [0.15, 0.15, 0.15] },
            center: [0.6, 0.35, 0.15],
            color: [0.15, 0.35, 0.8],
            spacing: 0.04,
            opacity: 0.95,
            roughness: 0.7,
            target: false,
        });
        s
    }

    pub fn preset(name: &str, seed: u64) -> Option<SceneSpec> {
        match name {
            "mirror-sphere" => Some(Self::mirror_sphere(seed)),
            "sphere-and-box" => Some(Self::sphere_and_box(seed)),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if !(0.01..=0.25).contains(&self.plane_roughness) {
            return fail(format!("plane roughness {} outside [0.01, 0.25]", self.plane_roughness));
        }
        if !(self.plane_spacing > 0.0 && self.plane_half_extent > 0.0) {
            return fail("plane extent and spacing must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.plane_fresnel0) || !(self.plane_opacity > 0.0 && self.plane_opacity < 1.0) {
            return fail("plane fresnel0/opacity out of range".into());
        }
        if self.objects.iter().filter(|o| o.target).count() != 1 {
            return fail("exactly one object must be the removal target".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            let size_ok = match &o.shape {
                Shape::Sphere { radius } => *radius > 0.0,
                Shape::Box { half } => half.iter().all(|h| *h > 0.0),
            };
            if !size_ok || o.spacing <= 0.0 || !(o.opacity > 0.0 && o.opacity < 1.0) || !(0.0..=1.0).contains(&o.roughness) {
                return fail(format!("object {i} has invalid size, spacing, opacity or roughness"));
            }
        }
        if self.camera_count == 0 || self.width == 0 || self.height == 0 || self.camera_radius <= 0.0 {
            return fail("camera ring needs at least one camera with a positive radius and size".into());
        }
        if self.sh_degree > 3 {
            return fail(format!("sh_degree {} exceeds 3", self.sh_degree));
        }
        if self.env_levels == 0 || !self.env_size.is_multiple_of(1 << (self.env_levels - 1)) {
            return fail(format!("env size {} not divisible by 2^{}", self.env_size, self.env_levels.saturating_sub(1)));
        }
        Ok(())
    }
}

/// A generated scene and the same scene with the target object absent.
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub ground_truth: Scene,
}

fn surfel(position: Vec3, normal: Vec3, sigma: f64, sh: usize) -> GaussianPrimitive {
    GaussianPrimitive {
        position: to_f32(&position),
        scale: [sigma as f32, sigma as f32, SURFEL_THICKNESS],
        rotation: quat_from_z_to(&normal),
        normal: to_f32(&normal),
        sh_rest: vec![[0.0; 3]; sh],
        ..Default::default()
    }
}

fn plane_primitives(spec: &SceneSpec) -> Vec<GaussianPrimitive> {
    let n = (spec.plane_half_extent / spec.plane_spacing).round() as i64;
    let sigma = SURFEL_SPREAD * spec.plane_spacing;
    let sh = sh_rest_count(spec.sh_degree);
    let mut out = Vec::new();
    for j in -n..=n {
        for i in -n..=n {
            let p = Vec3::new(i as f64 * spec.plane_spacing, j as f64 * spec.plane_spacing, 0.0);
            let mut g = surfel(p, Vec3::z(), sigma, sh);
            g.rotation = [1.0, 0.0, 0.0, 0.0];
            g.opacity = spec.plane_opacity;
            g.color = spec.plane_diffuse;
            g.diffuse = spec.plane_diffuse;
            g.fresnel0 = [spec.plane_fresnel0; 3];
            g.roughness = spec.plane_roughness;
            g.label = 0.0;
            g.region = 0.0;
            out.push(g);
        }
    }
    out
}

/// Surface samples (point, outward normal) of an object shell.
fn shell_samples(obj: &ObjectSpec) -> Vec<(Vec3, Vec3)> {
    let c = Vec3::from(obj.center);
    match &obj.shape {
        Shape::Sphere { radius } => {
            let area = 4.0 * std::f64::consts::PI * radius * radius;
            let n = ((area / (obj.spacing * obj.spacing)).round() as usize).max(1);
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    let dir = Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
                    (c + dir * *radius, dir)
                })
                .collect()
        }
        Shape::Box { half } => {
            let h = Vec3::from(*half);
            let mut out = Vec::new();
            for axis in 0..3 {
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                let na = ((2.0 * h[a] / obj.spacing).round() as usize).max(1);
                let nb = ((2.0 * h[b] / obj.spacing).round() as usize).max(1);
                for sign in [-1.0, 1.0] {
                    let mut normal = Vec3::zeros();
                    normal[axis] = sign;
                    for ia in 0..na {
                        for ib in 0..nb {
                            let mut p = Vec3::zeros();
                            p[axis] = sign * h[axis];
                            p[a] = -h[a] + (ia as f64 + 0.5) * 2.0 * h[a] / na as f64;
                            p[b] = -h[b] + (ib as f64 + 0.5) * 2.0 * h[b] / nb as f64;
                            out.push((c + p, normal));
                        }
                    }
                }
            }
            out
        }
    }
}

fn object_primitives(obj: &ObjectSpec, sh_degree: u32, rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    let sigma = SURFEL_SPREAD * obj.spacing;
    let sh = sh_rest_count(sh_degree);
    shell_samples(obj)
        .into_iter()
        .map(|(p, n)| {
            let mut g = surfel(p, n, sigma, sh);
            let jitter: f32 = rng.random_range(-0.03..0.03);
            let color = obj.color.map(|c| (c + jitter).clamp(0.0, 1.0));
            g.opacity = obj.opacity;
            g.color = color;
            g.diffuse = color;
            g.fresnel0 = [0.04; 3];
            g.roughness = obj.roughness;
            g.label = if obj.target { 1.0 } else { 0.0 };
            g.region = 1.0;
            g
        })
        .collect()
}

fn camera_ring(spec: &SceneSpec) -> Vec<Camera> {
    let target = Vec3::from(spec.camera_target);
    (0..spec.camera_count)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / spec.camera_count as f64;
            let eye = Vec3::new(spec.camera_radius * a.cos(), spec.camera_radius * a.sin(), spec.camera_height);
            Camera::look_at(eye, target, Vec3::z(), spec.width, spec.height, spec.fov_x_deg)
        })
        .collect()
}

/// Builds the scene described by `spec` and its object-free counterpart.
///
/// The plane grid is complete, including underneath objects, so the
/// counterpart is exactly the scene minus the target's primitives.
pub fn gen_synthetic_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut primitives = plane_primitives(spec);
    for obj in &spec.objects {
        primitives.extend(object_primitives(obj, spec.sh_degree, &mut rng));
    }
    let scene = Scene {
        primitives,
        sh_degree: spec.sh_degree,
        env: EnvironmentMap::generate(&spec.env, spec.env_size, spec.env_levels),
        cameras: camera_ring(spec),
        views: Vec::new(),
    };
    let ground_truth = scene.filtered(|g| g.label < 0.5);
    Ok(GeneratedScene { scene, ground_truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::validate_scene;

    fn small(seed: u64) -> SceneSpec {
        let mut s = SceneSpec::mirror_sphere(seed);
        s.env_size = 16;
        s.plane_half_extent = 0.5;
        s
    }

    #[test]
    fn both_label_classes_present() {
        let g = gen_synthetic_scene(&small(7)).unwrap();
        assert!(validate_scene(&g.scene).is_empty(), "{:?}", validate_scene(&g.scene));
        assert_eq!(g.scene.cameras.len(), 8);
        assert!(g.scene.primitives.iter().any(|p| p.label == 1.0));
        assert!(g.scene.primitives.iter().any(|p| p.label == 0.0));
        for p in &g.scene.primitives {
            assert_eq!(p.region, if p.label == 1.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = gen_synthetic_scene(&small(7)).unwrap();
        let b = gen_synthetic_scene(&small(7)).unwrap();
        assert_eq!(a.scene, b.scene);
        let c = gen_synthetic_scene(&small(8)).unwrap();
        assert_ne!(a.scene, c.scene);
    }

    #[test]
    fn ground_truth_is_set_difference() {
        let g = gen_synthetic_scene(&small(3)).unwrap();
        let expected: Vec<_> = g.scene.primitives.iter().filter(|p| p.label == 0.0).cloned().collect();
        assert_eq!(g.ground_truth.primitives, expected);
        assert!(g.ground_truth.primitives.len() < g.scene.primitives.len());
    }

    #[test]
    fn roughness_outside_regime_is_rejected() {
        for r in [0.0, 0.3] {
            let mut s = small(1);
            s.plane_roughness = r;
            assert!(matches!(gen_synthetic_scene(&s), Err(Error::Spec(_))));
        }
    }

    #[test]
    fn box_preset_validates() {
        let mut s = SceneSpec::sphere_and_box(2);
        s.env_size = 16;
        let g = gen_synthetic_scene(&s).unwrap();
        assert!(validate_scene(&g.scene).is_empty());
    }
}
