//! Deferred shading: diffuse term, ideal specular reflection and the
//! region-blended final color.
//!
//! Convention: `w_o` points from the camera toward the surface.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::Vec3;
use crate::raster::{gbuffer::EMPTY_ALPHA, GBuffer};
use crate::scene::{Camera, EnvironmentMap, Scene};
use crate::tracer::{trace, Bvh, TraceResult};

/// Region-mask value separating glossy (below) from rough pixels.
pub const M_THRESH: f64 = 0.5;

/// Mirror reflection ω_r = ω_o − 2(ω_o·n)n.
pub fn reflect_dir(w_o: &Vec3, n: &Vec3) -> Vec3 {
    w_o - n * (2.0 * w_o.dot(n))
}

/// Schlick's approximation F = f₀ + (1 − f₀)(1 − cosθ)⁵; `cos_theta` is
/// clamped to [0, 1].
pub fn fresnel_schlick(f0: &Vec3, cos_theta: f64) -> Vec3 {
    let k = (1.0 - cos_theta.clamp(0.0, 1.0)).powi(5);
    f0.map(|f| f + (1.0 - f) * k)
}

/// Environment radiance toward `dir` at fractional mip `level`.
pub fn sample_env(env: &EnvironmentMap, dir: &Vec3, level: f64) -> Vec3 {
    env.sample(dir, level)
}

/// Mip level used for direct lighting at aggregated roughness `r`.
pub fn env_level(env: &EnvironmentMap, r: f64) -> f64 {
    r.clamp(0.0, 1.0) * (env.levels() as f64 - 1.0)
}

/// Counters for pixels whose specular term was not computed normally.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShadeDiagnostics {
    pub glossy: usize,
    pub degenerate_normal: usize,
    pub back_facing: usize,
}

/// Per-pixel ideal-specular components.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecularBuffers {
    pub fresnel: Image,
    pub l_ind: Image,
    pub l_dir: Image,
    pub v: Image,
    /// Label contribution E_i of the traced ray.
    pub e_i: Image,
    /// Pixels that were traced.
    pub glossy: Mask,
    /// cos θ used for Fresnel, per traced pixel.
    pub cos_theta: Image,
    /// Reflection directions of traced pixels (zero elsewhere).
    pub reflect: Vec<Vec3>,
    /// Traced ray details for the backward pass.
    pub traces: Vec<Option<TraceResult>>,
    pub diagnostics: ShadeDiagnostics,
}

enum PixelShade {
    Skip,
    Degenerate,
    Traced { cos: f64, dir: Vec3, f: Vec3, l_dir: Vec3, tr: TraceResult },
}

/// Traces one mirror ray per glossy pixel (M < [`M_THRESH`], surface
/// present, usable normal) and evaluates Fresnel and direct lighting.
pub fn shade_ideal_specular(gb: &GBuffer, env: &EnvironmentMap, bvh: &Bvh, scene: &Scene, cam: &Camera) -> SpecularBuffers {
    let (w, h) = (gb.width, gb.height);
    let eye = cam.center();
    let t_eps = bvh.opts().t_eps;
    let shaded: Vec<PixelShade> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            if gb.alpha.data[p] < EMPTY_ALPHA || gb.region.data[p] >= M_THRESH {
                return PixelShade::Skip;
            }
            let n = gb.normal.vec3_at(p);
            if n.norm() < 0.5 {
                return PixelShade::Degenerate;
            }
            let (u, v) = ((p % w) as f64, (p / w) as f64);
            let x = cam.unproject(u, v, gb.depth.data[p]);
            let w_o = (x - eye).normalize();
            let dir = reflect_dir(&w_o, &n).normalize();
            let cos = (-w_o.dot(&n)).clamp(0.0, 1.0);
            let f = fresnel_schlick(&gb.fresnel0.vec3_at(p), cos);
            let l_dir = sample_env(env, &dir, env_level(env, gb.roughness.data[p]));
            let tr = trace(bvh, scene, &(x + dir * t_eps), &dir);
            PixelShade::Traced { cos, dir, f, l_dir, tr }
        })
        .collect();

    let mut out = SpecularBuffers {
        fresnel: Image::new(w, h, 3),
        l_ind: Image::new(w, h, 3),
        l_dir: Image::new(w, h, 3),
        v: Image::new(w, h, 1),
        e_i: Image::new(w, h, 1),
        glossy: Mask::new(w, h),
        cos_theta: Image::new(w, h, 1),
        reflect: vec![Vec3::zeros(); w * h],
        traces: vec![None; w * h],
        diagnostics: ShadeDiagnostics::default(),
    };
    for (p, s) in shaded.into_iter().enumerate() {
        match s {
            PixelShade::Skip => {}
            PixelShade::Degenerate => out.diagnostics.degenerate_normal += 1,
            PixelShade::Traced { cos, dir, f, l_dir, tr } => {
                out.diagnostics.glossy += 1;
                if cos <= 0.0 {
                    out.diagnostics.back_facing += 1;
                }
                out.glossy.data[p] = true;
                out.cos_theta.data[p] = cos;
                out.reflect[p] = dir;
                out.fresnel.set_vec3(p, &f);
                out.l_dir.set_vec3(p, &l_dir);
                out.l_ind.set_vec3(p, &tr.l_ind);
                out.v.data[p] = tr.v;
                out.e_i.data[p] = tr.e_i;
                out.traces[p] = Some(tr);
            }
        }
    }
    out
}

/// Diffuse term D = (1 − M)·d^agg + M·c^agg: material diffuse on glossy
/// surfaces, view-dependent color on rough ones, blended by the soft mask.
pub fn diffuse_term(gb: &GBuffer) -> Image {
    Image::from_fn(gb.width, gb.height, 3, |x, y, c| {
        let p = y * gb.width + x;
        let m = gb.region.data[p];
        (1.0 - m) * gb.diffuse.data[3 * p + c] + m * gb.color.data[3 * p + c]
    })
}

/// C = D + (1 − M)·G.
pub fn compose_color(gb: &GBuffer, d: &Image, g: &Image) -> Result<Image> {
    if d.width != gb.width || d.height != gb.height || d.channels != 3 {
        return Err(Error::Dimension(format!("diffuse term is {}x{}x{}", d.width, d.height, d.channels)));
    }
    d.check_shape(g, "glossy term")?;
    Ok(Image::from_fn(gb.width, gb.height, 3, |x, y, c| {
        let p = y * gb.width + x;
        d.data[3 * p + c] + (1.0 - gb.region.data[p]) * g.data[3 * p + c]
    }))
}
