use std::fs;
use std::path::Path;

use serde_json::json;

use super::{PixelAccum, RasterOpts};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::Camera;

/// Alpha below which a pixel counts as empty (zero normal).
pub const EMPTY_ALPHA: f64 = 1e-3;

/// One composited sample: primitive, blend weight, camera-space depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub prim: u32,
    pub weight: f64,
    pub depth: f64,
}

/// Per-pixel compositing lists in CSR layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Contributions {
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
}

impl Contributions {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Screen-space record of alpha-aggregated attributes.
///
/// Material channels hold the unnormalized sums Σ wᵢ·aᵢ; `depth` is the
/// weight-normalized mean camera depth and `normal` is renormalized (zero
/// where `alpha` < [`EMPTY_ALPHA`]).
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub normal: Image,
    pub diffuse: Image,
    pub fresnel0: Image,
    /// View-dependent (SH) color, aggregated like the material channels.
    pub color: Image,
    pub roughness: Image,
    pub depth: Image,
    pub region: Image,
    pub label: Image,
    pub alpha: Image,
    pub contributions: Contributions,
}

impl GBuffer {
    pub(crate) fn assemble(cam: &Camera, pixels: Vec<PixelAccum>) -> GBuffer {
        let (w, h) = (cam.width, cam.height);
        let mut gb = GBuffer {
            width: w,
            height: h,
            normal: Image::new(w, h, 3),
            diffuse: Image::new(w, h, 3),
            fresnel0: Image::new(w, h, 3),
            color: Image::new(w, h, 3),
            roughness: Image::new(w, h, 1),
            depth: Image::new(w, h, 1),
            region: Image::new(w, h, 1),
            label: Image::new(w, h, 1),
            alpha: Image::new(w, h, 1),
            contributions: Contributions::default(),
        };
        gb.contributions.offsets.reserve(w * h + 1);
        gb.contributions.offsets.push(0);
        for (p, acc) in pixels.into_iter().enumerate() {
            let n = acc.normal.norm();
            if acc.alpha >= EMPTY_ALPHA && n > 0.0 {
                gb.normal.set_vec3(p, &(acc.normal / n));
            }
            gb.diffuse.set_vec3(p, &acc.diffuse);
            gb.fresnel0.set_vec3(p, &acc.fresnel0);
            gb.color.set_vec3(p, &acc.color);
            gb.roughness.data[p] = acc.roughness;
            gb.depth.data[p] = if acc.alpha > 0.0 { acc.depth / acc.alpha } else { 0.0 };
            gb.region.data[p] = acc.region;
            gb.label.data[p] = acc.label;
            gb.alpha.data[p] = acc.alpha;
            gb.contributions.entries.extend(acc.contrib.into_iter().map(|(prim, weight, depth)| Contribution {
                prim,
                weight,
                depth,
            }));
            gb.contributions.offsets.push(gb.contributions.entries.len());
        }
        gb
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Channel images by export name.
    pub fn channels(&self) -> [(&'static str, &Image); 9] {
        [
            ("normal", &self.normal),
            ("diffuse", &self.diffuse),
            ("fresnel0", &self.fresnel0),
            ("color", &self.color),
            ("roughness", &self.roughness),
            ("depth", &self.depth),
            ("region", &self.region),
            ("label", &self.label),
            ("alpha", &self.alpha),
        ]
    }

    /// Writes one PFM per channel plus `gbuffer.json`.
    pub fn export(&self, dir: &Path, opts: &RasterOpts) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::new();
        for (name, img) in self.channels() {
            img.write_pfm(&dir.join(format!("{name}.pfm")))?;
            names.push(json!({ "name": name, "file": format!("{name}.pfm"), "channels": img.channels }));
        }
        let meta = json!({
            "width": self.width,
            "height": self.height,
            "channels": names,
            "raster_opts": opts,
            "aggregation": "weighted sums; depth normalized; normal renormalized",
        });
        let path = dir.join("gbuffer.json");
        fs::write(&path, serde_json::to_string_pretty(&meta).expect("json")).map_err(|e| Error::io(&path, e))
    }
}
