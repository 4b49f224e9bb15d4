//! Adam refinement of material attributes with frozen geometry.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{evaluate_view, forward, render_grad_materials, Attr, InpaintTargets, LossBreakdown, LossWeights, MaterialGrads, TermSet, TrainTargets};
use crate::error::{Error, Result};
use crate::removal::Removal;
use crate::render::RenderOpts;
use crate::scene::{Scene, ViewData};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineOpts {
    pub steps: usize,
    pub lr_material: f64,
    /// Learning rate of the SH color (base and higher bands).
    pub lr_sh: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Abort when the step loss exceeds this multiple of the first one.
    pub divergence: f64,
    #[serde(skip)]
    pub render: RenderOpts,
}

impl Default for RefineOpts {
    fn default() -> Self {
        RefineOpts {
            steps: 500,
            lr_material: 1e-2,
            lr_sh: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            weights: LossWeights::default(),
            divergence: 10.0,
            render: RenderOpts::default(),
        }
    }
}

/// Loss terms of one step, evaluated before its update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub view: Option<usize>,
    pub reference: Option<usize>,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct RefineResult {
    pub scene: Scene,
    pub trace: Vec<TraceRow>,
}

fn merge(a: &LossBreakdown, b: &LossBreakdown) -> LossBreakdown {
    LossBreakdown {
        color: a.color + b.color,
        distortion: a.distortion + b.distortion,
        depth_normal: a.depth_normal + b.depth_normal,
        normal: a.normal + b.normal,
        smooth: a.smooth + b.smooth,
        label: a.label + b.label,
        region: a.region + b.region,
        appearance: a.appearance + b.appearance,
        material: a.material + b.material,
        total: a.total + b.total,
    }
}

/// Keeps every attribute in its valid range.
fn clamp_attr(attr: Attr, v: f32) -> f32 {
    match attr {
        Attr::ShRest => v,
        _ => v.clamp(0.0, 1.0),
    }
}

/// Refines the material attributes of `scene`. `train[i]` supervises
/// camera i (views without targets are never sampled); `inpaint` holds the
/// completed reference views.
pub fn refine(scene: &Scene, train: &[Option<TrainTargets>], inpaint: &[InpaintTargets], opts: &RefineOpts) -> Result<RefineResult> {
    opts.weights.validate()?;
    let mut scene = scene.clone();
    let mut trace = Vec::with_capacity(opts.steps);
    if opts.steps == 0 {
        return Ok(RefineResult { scene, trace });
    }
    let views: Vec<usize> = (0..train.len()).filter(|&i| train[i].is_some()).collect();
    if views.is_empty() && inpaint.is_empty() {
        return Err(Error::Removal("refinement needs at least one training or reference view".into()));
    }
    for &i in views.iter().chain(inpaint.iter().map(|t| &t.view)) {
        if i >= scene.cameras.len() {
            return Err(Error::Removal(format!("view {i} has no camera")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut m1: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    let mut initial = None;
    for step in 0..opts.steps {
        let view = (!views.is_empty()).then(|| views[rng.random_range(0..views.len())]);
        let reference = (!inpaint.is_empty()).then(|| rng.random_range(0..inpaint.len()));
        let mut grads: Option<MaterialGrads> = None;
        let mut add = |g: MaterialGrads| match grads.as_mut() {
            Some(acc) => acc.add(&g),
            None => grads = Some(g),
        };
        let mut b_train = LossBreakdown::default();
        if let Some(i) = view {
            let cam = &scene.cameras[i];
            let cache = forward(&scene, cam, &opts.render)?;
            let (b, adj) = evaluate_view(&cache.frame, cam, train[i].as_ref(), None, &TermSet::REFINE_TRAIN, &opts.weights)?;
            add(render_grad_materials(&scene, &cache, &adj)?);
            b_train = b;
        }
        let mut b_inp = LossBreakdown::default();
        if let Some(r) = reference {
            let ip = &inpaint[r];
            let cam = &scene.cameras[ip.view];
            let cache = forward(&scene, cam, &opts.render)?;
            let (b, adj) = evaluate_view(&cache.frame, cam, None, Some(ip), &TermSet::REFINE_INPAINT, &opts.weights)?;
            add(render_grad_materials(&scene, &cache, &adj)?);
            b_inp = b;
        }
        let loss = merge(&b_train, &b_inp);
        let first = *initial.get_or_insert(loss.total);
        if loss.total > opts.divergence * first.max(1e-6) {
            return Err(Error::Diverged {
                step,
                loss: loss.total,
                initial: first,
            });
        }
        debug!("step {step}: total {:.6}", loss.total);
        trace.push(TraceRow {
            step,
            view,
            reference: reference.map(|r| inpaint[r].view),
            loss,
        });

        let g = grads.expect("at least one view per step");
        if m1.is_empty() {
            m1 = vec![0.0; g.data.len()];
            m2 = vec![0.0; g.data.len()];
        }
        let t = (step + 1) as i32;
        let (bc1, bc2) = (1.0 - opts.beta1.powi(t), 1.0 - opts.beta2.powi(t));
        let layout = g.layout;
        let n = layout.len();
        for (i, prim) in scene.primitives.iter_mut().enumerate() {
            for j in 0..n {
                let k = i * n + j;
                let gk = g.data[k];
                m1[k] = opts.beta1 * m1[k] + (1.0 - opts.beta1) * gk;
                m2[k] = opts.beta2 * m2[k] + (1.0 - opts.beta2) * gk * gk;
                if m1[k] == 0.0 {
                    continue;
                }
                let attr = layout.attr(j);
                let lr = match attr {
                    Attr::Color | Attr::ShRest => opts.lr_sh,
                    _ => opts.lr_material,
                };
                let upd = lr * (m1[k] / bc1) / ((m2[k] / bc2).sqrt() + opts.eps);
                let v = layout.get(prim, j) as f64 - upd;
                layout.set(prim, j, clamp_attr(attr, v as f32));
            }
        }
    }
    if let (Some(a), Some(b)) = (trace.first(), trace.last()) {
        info!("refined {} steps: loss {:.5} -> {:.5}", trace.len(), a.loss.total, b.loss.total);
    }
    Ok(RefineResult { scene, trace })
}

/// Training targets excluding the lighting-aware, object and inpaint masks
/// (grown by one pixel), plus the completed reference views of `removal`.
pub fn removal_targets(removal: &Removal, views: &[ViewData]) -> Result<(Vec<Option<TrainTargets>>, Vec<InpaintTargets>)> {
    if views.len() != removal.lighting.len() {
        return Err(Error::Removal(format!("{} views for {} masks", views.len(), removal.lighting.len())));
    }
    let train = views
        .iter()
        .zip(&removal.lighting)
        .zip(&removal.inpaint_masks)
        .map(|((v, l), p)| TrainTargets::from_view(v, l.combined.or(p).dilate(1)))
        .collect();
    let inpaint = removal
        .tasks
        .iter()
        .map(|t| {
            let maps = t.inpainted.clone().ok_or_else(|| Error::Removal(format!("view {} was not inpainted", t.view)))?;
            Ok(InpaintTargets {
                view: t.view,
                maps,
                mask: t.mask.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((train, inpaint))
}

/// Writes `step,view,reference,<terms...>,total`.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,view,reference,");
    out.push_str(&LossBreakdown::COLUMNS.join(","));
    out.push('\n');
    let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
    for row in trace {
        out.push_str(&format!("{},{},{}", row.step, opt(row.view), opt(row.reference)));
        for v in row.loss.values() {
            out.push_str(&format!(",{v:e}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
