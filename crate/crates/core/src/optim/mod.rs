//! Material refinement: losses, analytic material gradients, a
//! finite-difference checker and the optimizer loop.

mod backward;
mod gradcheck;
pub mod losses;
mod refine;

pub use backward::{forward, render_grad_materials, scene_hash, ForwardCache};
pub use gradcheck::{gradcheck, GradCheckOpts, GradFailure, GradReport, GroupStats};
pub use refine::{refine, removal_targets, write_trace_csv, RefineOpts, RefineResult, TraceRow};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{Image, Mask};
use crate::removal::MaterialMaps;
use crate::render::{Frame, RenderOpts};
use crate::scene::{Camera, GaussianPrimitive, Scene, ViewData};
use losses::*;

/// Loss weights. `lambda_region` scales the region-mask term, which has
/// no published weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_dn: f64,
    pub lambda_n: f64,
    pub lambda_s: f64,
    pub lambda_omega: f64,
    pub lambda_region: f64,
    pub lambda_a: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 1000.0,
            lambda_dn: 0.05,
            lambda_n: 0.5,
            lambda_s: 0.05,
            lambda_omega: 1.0,
            lambda_region: 1.0,
            lambda_a: 0.2,
            lambda_m: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_d,
            self.lambda_dn,
            self.lambda_n,
            self.lambda_s,
            self.lambda_omega,
            self.lambda_region,
            self.lambda_a,
            self.lambda_m,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(crate::Error::Spec(format!("loss weights must be finite and >= 0: {self:?}")))
        }
    }
}

/// Attribute groups of the per-primitive parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Attr {
    Diffuse,
    Fresnel0,
    Roughness,
    Color,
    Label,
    Region,
    ShRest,
}

impl Attr {
    pub const ALL: [Attr; 7] = [Attr::Diffuse, Attr::Fresnel0, Attr::Roughness, Attr::Color, Attr::Label, Attr::Region, Attr::ShRest];

    pub fn name(self) -> &'static str {
        match self {
            Attr::Diffuse => "diffuse",
            Attr::Fresnel0 => "fresnel0",
            Attr::Roughness => "roughness",
            Attr::Color => "color",
            Attr::Label => "label",
            Attr::Region => "region",
            Attr::ShRest => "sh_rest",
        }
    }
}

/// Flat layout of a primitive's material parameters:
/// diffuse 0..3, fresnel0 3..6, roughness 6, color 7..10, label 10,
/// region 11, then sh_rest coefficients (3 per basis function).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub sh_rest: usize,
}

impl ParamLayout {
    pub const FIXED: usize = 12;

    pub fn new(sh_rest: usize) -> Self {
        ParamLayout { sh_rest }
    }

    pub fn len(&self) -> usize {
        Self::FIXED + 3 * self.sh_rest
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn attr(&self, j: usize) -> Attr {
        match j {
            0..=2 => Attr::Diffuse,
            3..=5 => Attr::Fresnel0,
            6 => Attr::Roughness,
            7..=9 => Attr::Color,
            10 => Attr::Label,
            11 => Attr::Region,
            _ => Attr::ShRest,
        }
    }

    pub fn get(&self, g: &GaussianPrimitive, j: usize) -> f32 {
        match j {
            0..=2 => g.diffuse[j],
            3..=5 => g.fresnel0[j - 3],
            6 => g.roughness,
            7..=9 => g.color[j - 7],
            10 => g.label,
            11 => g.region,
            _ => g.sh_rest[(j - 12) / 3][(j - 12) % 3],
        }
    }

    pub fn set(&self, g: &mut GaussianPrimitive, j: usize, v: f32) {
        match j {
            0..=2 => g.diffuse[j] = v,
            3..=5 => g.fresnel0[j - 3] = v,
            6 => g.roughness = v,
            7..=9 => g.color[j - 7] = v,
            10 => g.label = v,
            11 => g.region = v,
            _ => g.sh_rest[(j - 12) / 3][(j - 12) % 3] = v,
        }
    }
}

/// Gradients of a scalar loss with respect to every primitive's material
/// parameters, laid out per [`ParamLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialGrads {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl MaterialGrads {
    pub fn zeros(prims: usize, layout: ParamLayout) -> Self {
        MaterialGrads {
            layout,
            data: vec![0.0; prims * layout.len()],
        }
    }

    pub fn prim_count(&self) -> usize {
        self.data.len() / self.layout.len()
    }

    pub fn prim(&self, i: usize) -> &[f64] {
        let n = self.layout.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn prim_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.layout.len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn add(&mut self, other: &MaterialGrads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Supervision of one training view.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTargets {
    pub rgb: Image,
    /// Pixels left out of every term.
    pub exclude: Mask,
    /// Glossy region of the reference (M_gt).
    pub glossy_gt: Option<Mask>,
    pub normal_gt: Option<Image>,
    pub label_gt: Option<Mask>,
}

impl TrainTargets {
    pub fn from_view(view: &ViewData, exclude: Mask) -> Option<TrainTargets> {
        Some(TrainTargets {
            rgb: view.rgb.clone()?,
            exclude,
            glossy_gt: view.mask_region.clone(),
            normal_gt: view.normal.clone(),
            label_gt: view.mask_obj.clone(),
        })
    }
}

/// Inpainted maps and mask P of one reference view.
#[derive(Clone, Debug, PartialEq)]
pub struct InpaintTargets {
    pub view: usize,
    pub maps: MaterialMaps,
    pub mask: Mask,
}

/// Which terms of the objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TermSet {
    pub color: bool,
    pub distortion: bool,
    pub depth_normal: bool,
    pub normal: bool,
    pub smooth: bool,
    pub label: bool,
    pub region: bool,
    pub appearance: bool,
    pub material: bool,
}

impl TermSet {
    /// Terms applied to the sampled training view during refinement.
    pub const REFINE_TRAIN: TermSet = TermSet {
        color: true,
        distortion: true,
        depth_normal: true,
        normal: true,
        smooth: true,
        label: true,
        region: true,
        appearance: false,
        material: false,
    };
    /// L_inpaint on the sampled reference view.
    pub const REFINE_INPAINT: TermSet = TermSet {
        color: false,
        distortion: false,
        depth_normal: false,
        normal: false,
        smooth: false,
        label: false,
        region: false,
        appearance: true,
        material: true,
    };
    pub const ALL: TermSet = TermSet {
        color: true,
        distortion: true,
        depth_normal: true,
        normal: true,
        smooth: true,
        label: true,
        region: true,
        appearance: true,
        material: true,
    };
}

/// Unweighted term values and the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub color: f64,
    pub distortion: f64,
    pub depth_normal: f64,
    pub normal: f64,
    pub smooth: f64,
    pub label: f64,
    pub region: f64,
    pub appearance: f64,
    pub material: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const COLUMNS: [&'static str; 10] = [
        "color",
        "distortion",
        "depth_normal",
        "normal",
        "smooth",
        "label",
        "region",
        "appearance",
        "material",
        "total",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.color,
            self.distortion,
            self.depth_normal,
            self.normal,
            self.smooth,
            self.label,
            self.region,
            self.appearance,
            self.material,
            self.total,
        ]
    }
}

/// ∂L with respect to the frame's differentiable screen quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelAdjoints {
    /// Final color C.
    pub color: Image,
    /// Aggregated diffuse d^agg.
    pub diffuse: Image,
    /// Aggregated f₀^agg.
    pub fresnel: Image,
    /// Aggregated roughness r^agg.
    pub roughness: Image,
    /// Region mask M.
    pub region: Image,
    /// Label map Ω.
    pub label: Image,
}

impl PixelAdjoints {
    pub fn zeros(w: usize, h: usize) -> Self {
        PixelAdjoints {
            color: Image::new(w, h, 3),
            diffuse: Image::new(w, h, 3),
            fresnel: Image::new(w, h, 3),
            roughness: Image::new(w, h, 1),
            region: Image::new(w, h, 1),
            label: Image::new(w, h, 1),
        }
    }
}

/// Evaluates the active terms on `frame` and their pixel adjoints.
pub fn evaluate_view(
    frame: &Frame,
    cam: &Camera,
    train: Option<&TrainTargets>,
    inpaint: Option<&InpaintTargets>,
    terms: &TermSet,
    weights: &LossWeights,
) -> Result<(LossBreakdown, PixelAdjoints)> {
    let gb = &frame.gbuffer;
    let mut adj = PixelAdjoints::zeros(gb.width, gb.height);
    let mut b = LossBreakdown::default();
    if let Some(t) = train {
        let ex = Some(&t.exclude);
        if terms.color {
            b.color = loss_color(&frame.color, &t.rgb, ex, Some(&mut adj.color), 1.0)?;
            b.total += b.color;
        }
        if terms.distortion {
            b.distortion = loss_depth_distortion(gb, cam, ex);
            b.total += weights.lambda_d * b.distortion;
        }
        if terms.depth_normal {
            let nd = depth_normals(&gb.depth, &gb.alpha, cam);
            b.depth_normal = loss_depth_normal(&gb.normal, &nd, ex)?;
            b.total += weights.lambda_dn * b.depth_normal;
        }
        if let (true, Some(glossy)) = (terms.normal, &t.glossy_gt) {
            if let Some(n_gt) = &t.normal_gt {
                b.normal = loss_normal(&gb.normal, n_gt, glossy, ex)?;
                b.total += weights.lambda_n * b.normal;
            }
        }
        if let (true, Some(glossy)) = (terms.region, &t.glossy_gt) {
            b.region = loss_region(&gb.region, glossy, ex, Some(&mut adj.region), weights.lambda_region)?;
            b.total += weights.lambda_region * b.region;
        }
        if let (true, Some(glossy)) = (terms.smooth, &t.glossy_gt) {
            let m = Image::from_fn(gb.width, gb.height, 1, |x, y, _| {
                let p = y * gb.width + x;
                (glossy.data[p] && !t.exclude.data[p]) as u8 as f64
            });
            let s = weights.lambda_s;
            let nd = depth_normals(&gb.depth, &gb.alpha, cam);
            b.smooth = loss_smooth_map(&gb.fresnel0, &t.rgb, &m, Some(&mut adj.fresnel), s)?
                + loss_smooth_map(&gb.roughness, &t.rgb, &m, Some(&mut adj.roughness), s)?
                + loss_smooth(&[&gb.normal, &nd], &t.rgb, &m)?;
            b.total += s * b.smooth;
        }
        if let (true, Some(obj)) = (terms.label, &t.label_gt) {
            b.label = loss_label_bce(&gb.label, obj, ex, Some(&mut adj.label), weights.lambda_omega)?;
            b.total += weights.lambda_omega * b.label;
        }
    }
    if let Some(ip) = inpaint {
        let m_hat = &ip.maps.region;
        if terms.appearance {
            b.appearance = loss_appearance(&frame.color, &ip.maps.color, m_hat, &ip.mask, Some(&mut adj.color), weights.lambda_a)?;
            b.total += weights.lambda_a * b.appearance;
        }
        if terms.material {
            let rendered = MaterialViews {
                diffuse: &gb.diffuse,
                fresnel: &gb.fresnel0,
                roughness: &gb.roughness,
                normal: &gb.normal,
            };
            let target = MaterialViews {
                diffuse: &ip.maps.diffuse,
                fresnel: &ip.maps.fresnel,
                roughness: &ip.maps.roughness,
                normal: &ip.maps.normal,
            };
            let grads = MaterialGradViews {
                diffuse: &mut adj.diffuse,
                fresnel: &mut adj.fresnel,
                roughness: &mut adj.roughness,
            };
            b.material = loss_material(&rendered, &target, m_hat, &ip.mask, Some(grads), weights.lambda_m)?;
            b.total += weights.lambda_m * b.material;
        }
    }
    Ok((b, adj))
}

/// Renders `cam`, evaluates the active terms and returns the weighted total
/// with its material gradient.
pub fn view_objective(
    scene: &Scene,
    cam: &Camera,
    train: Option<&TrainTargets>,
    inpaint: Option<&InpaintTargets>,
    terms: &TermSet,
    weights: &LossWeights,
    opts: &RenderOpts,
) -> Result<(f64, MaterialGrads)> {
    let cache = forward(scene, cam, opts)?;
    let (b, adj) = evaluate_view(&cache.frame, cam, train, inpaint, terms, weights)?;
    Ok((b.total, render_grad_materials(scene, &cache, &adj)?))
}
