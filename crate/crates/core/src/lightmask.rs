//! Object-related reflection map E_obj and the lighting-aware mask M_r.

use crate::error::Result;
use crate::image::{Image, Mask};
use crate::raster::GBuffer;
use crate::render::Frame;
use crate::scene::{Camera, Scene};
use crate::shading::{shade_ideal_specular, SpecularBuffers};
use crate::ssfilter::{build_pyramid, fresnel_label, sample_filtered, translate_roughness, RoughnessTranslator};
use crate::tracer::Bvh;

/// Default reflection threshold τ.
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LightingMask {
    pub e_obj: Image,
    pub m_r: Mask,
    pub tau: f64,
    /// M_r ∪ Ω.
    pub combined: Mask,
}

/// E_obj = L[lum(F)·E_i, R]·(1 − M) from already shaded buffers.
pub fn reflection_map_from(gb: &GBuffer, spec: &SpecularBuffers, r_s: &Image) -> Image {
    let pyr = build_pyramid(&fresnel_label(spec));
    Image::from_fn(gb.width, gb.height, 1, |x, y, _| {
        let p = y * gb.width + x;
        sample_filtered(&pyr, x, y, r_s.data[p])[0] * (1.0 - gb.region.data[p])
    })
}

/// Traces the G-buffer's glossy pixels and builds E_obj.
pub fn object_reflection_map(scene: &Scene, cam: &Camera, gb: &GBuffer, bvh: &Bvh, tr: &RoughnessTranslator) -> Result<Image> {
    let spec = shade_ideal_specular(gb, &scene.env, bvh, scene, cam);
    let r_s = translate_roughness(&gb.roughness, &gb.depth, tr)?;
    Ok(reflection_map_from(gb, &spec, &r_s))
}

/// E_obj of a rendered frame.
pub fn frame_reflection_map(frame: &Frame) -> Image {
    reflection_map_from(&frame.gbuffer, &frame.specular, &frame.filtered.r_s)
}

/// M_r = E_obj > τ and its union with the object mask.
pub fn lighting_mask(e_obj: &Image, tau: f64, obj_mask: &Mask) -> LightingMask {
    let m_r = Mask::threshold(e_obj, tau);
    LightingMask {
        e_obj: e_obj.clone(),
        combined: m_r.or(obj_mask),
        m_r,
        tau,
    }
}
