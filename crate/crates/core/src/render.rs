//! Full forward pass: rasterize, shade, filter and compose.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::raster::{gbuffer::EMPTY_ALPHA, rasterize_gbuffer, GBuffer, RasterOpts};
use crate::scene::{Camera, Scene, ViewData};
use crate::shading::{compose_color, diffuse_term, shade_ideal_specular, SpecularBuffers, M_THRESH};
use crate::ssfilter::{filter_specular, FilterOutput, RoughnessTranslator};
use crate::tracer::{build_bvh, rough_region, Bvh, TraceOpts};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderOpts {
    pub raster: RasterOpts,
    pub trace: TraceOpts,
    pub translator: RoughnessTranslator,
}

/// Every buffer of one rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub gbuffer: GBuffer,
    pub specular: SpecularBuffers,
    pub filtered: FilterOutput,
    /// Diffuse term D.
    pub diffuse: Image,
    /// Final color C.
    pub color: Image,
}

impl Frame {
    /// Glossy term G.
    pub fn glossy(&self) -> &Image {
        &self.filtered.g
    }

    /// Object mask Ω thresholded at 0.5.
    pub fn object_mask(&self) -> Mask {
        Mask::threshold(&self.gbuffer.label, 0.5)
    }

    /// Pixels shaded as glossy surface (M < 0.5 with a surface present).
    pub fn glossy_mask(&self) -> Mask {
        let gb = &self.gbuffer;
        Mask::from_fn(gb.width, gb.height, |x, y| {
            let p = y * gb.width + x;
            gb.alpha.data[p] >= EMPTY_ALPHA && gb.region.data[p] < M_THRESH
        })
    }

    /// Writes C (PFM and 16-bit PNG) and optionally every component.
    pub fn export(&self, dir: &Path, stem: &str, components: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.color.write_pfm(&dir.join(format!("{stem}.pfm")))?;
        self.color.write_png16(&dir.join(format!("{stem}.png")))?;
        if components {
            let s = &self.specular;
            let parts: [(&str, &Image); 7] = [
                ("D", &self.diffuse),
                ("G", &self.filtered.g),
                ("F", &s.fresnel),
                ("L_ind", &s.l_ind),
                ("L_dir", &s.l_dir),
                ("V", &s.v),
                ("M", &self.gbuffer.region),
            ];
            for (name, img) in parts {
                img.write_pfm(&dir.join(format!("{stem}_{name}.pfm")))?;
            }
        }
        Ok(())
    }
}

/// BVH over the default traceable set.
pub fn scene_bvh(scene: &Scene, opts: &RenderOpts) -> Bvh {
    build_bvh(scene, rough_region, &opts.trace)
}

/// Renders `cam` using a prebuilt BVH.
pub fn render_with(scene: &Scene, bvh: &Bvh, cam: &Camera, opts: &RenderOpts) -> Result<Frame> {
    let gbuffer = rasterize_gbuffer(scene, cam, &opts.raster);
    let specular = shade_ideal_specular(&gbuffer, &scene.env, bvh, scene, cam);
    let filtered = filter_specular(&specular, &gbuffer.roughness, &gbuffer.depth, &opts.translator)?;
    let diffuse = diffuse_term(&gbuffer);
    let color = compose_color(&gbuffer, &diffuse, &filtered.g)?;
    Ok(Frame {
        gbuffer,
        specular,
        filtered,
        diffuse,
        color,
    })
}

pub fn render_view(scene: &Scene, cam: &Camera, opts: &RenderOpts) -> Result<Frame> {
    render_with(scene, &scene_bvh(scene, opts), cam, opts)
}

/// Supervision for every camera rendered from `scene`: color, object
/// mask (Ω > 0.5), region mask (glossy = inside) and world normals.
pub fn reference_views(scene: &Scene, opts: &RenderOpts) -> Result<Vec<ViewData>> {
    let bvh = scene_bvh(scene, opts);
    scene
        .cameras
        .iter()
        .map(|cam| {
            let f = render_with(scene, &bvh, cam, opts)?;
            Ok(ViewData {
                rgb: Some(f.color.clone()),
                mask_obj: Some(f.object_mask()),
                mask_region: Some(f.glossy_mask()),
                normal: Some(f.gbuffer.normal.clone()),
            })
        })
        .collect()
}
