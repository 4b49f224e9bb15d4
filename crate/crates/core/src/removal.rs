//! Object removal: coarse deletion, inpainting masks, reference views,
//! 2D inpainting of material maps and back-projected initialization.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::lightmask::{frame_reflection_map, lighting_mask, LightingMask, DEFAULT_TAU};
use crate::math::{self, Vec3};
use crate::render::{render_with, scene_bvh, Frame, RenderOpts};
use crate::scene::{load_scene, save_scene, Camera, GaussianPrimitive, Scene};

pub const DEFAULT_LABEL_THRESH: f64 = 0.5;
/// Depth gap δ_d that counts as newly exposed content.
pub const DEPTH_GAP: f64 = 1e-2;
/// Post-removal alpha below which a pixel counts as exposed.
pub const EXPOSED_ALPHA: f64 = 1e-2;
/// Pre/post color difference below which a pixel is left untouched.
pub const UNCHANGED_EPS: f64 = 1e-4;
pub const INPAINT_TOL: f64 = 1e-4;
pub const INPAINT_MAX_ITERS: usize = 10_000;

/// Removes every primitive with label ≥ `label_thresh`.
pub fn coarse_remove(scene: &Scene, label_thresh: f64) -> Result<(Scene, usize)> {
    if !(label_thresh > 0.0 && label_thresh < 1.0) {
        return Err(Error::Removal(format!("label threshold {label_thresh} outside (0, 1)")));
    }
    let out = scene.filtered(|g| (g.label as f64) < label_thresh);
    let removed = scene.primitives.len() - out.primitives.len();
    if removed == 0 {
        warn!("no primitive has label >= {label_thresh}; target absent");
    }
    Ok((out, removed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskOpts {
    pub depth_gap: f64,
    pub alpha_min: f64,
    /// Depth agreement, absolute plus relative to depth, for a point to
    /// count as already observed in another view.
    pub seen_abs: f64,
    pub seen_rel: f64,
    /// Also mark pixels where removal reveals no opaque surface. Off by
    /// default: the environment behind them is known in every view.
    pub mark_empty: bool,
}

impl Default for MaskOpts {
    fn default() -> Self {
        MaskOpts {
            depth_gap: DEPTH_GAP,
            alpha_min: EXPOSED_ALPHA,
            seen_abs: 0.02,
            seen_rel: 0.01,
            mark_empty: false,
        }
    }
}

/// Whether an opaque pre-removal surface at depth ≈ `z` covers any pixel
/// of the 3×3 neighborhood of (u, v).
fn observed_at(f: &Frame, u: f64, v: f64, z: f64, tol: f64) -> bool {
    let gb = &f.gbuffer;
    let (cx, cy) = (u.round(), v.round());
    if !(cx >= 0.0 && cy >= 0.0 && cx < gb.width as f64 && cy < gb.height as f64) {
        return false;
    }
    let (cx, cy) = (cx as usize, cy as usize);
    (cy.saturating_sub(1)..(cy + 2).min(gb.height)).any(|y| {
        (cx.saturating_sub(1)..(cx + 2).min(gb.width)).any(|x| {
            let p = y * gb.width + x;
            gb.alpha.data[p] >= 0.5 && (gb.depth.data[p] - z).abs() <= tol
        })
    })
}

/// Inpainting masks from already rendered pre/post removal frames.
///
/// A pixel is marked when it lies in the pre-removal object mask, the
/// removal exposed new content there (depth jump or vanishing alpha), the
/// rendered color changed, and no other view observed the exposed point
/// before removal. The result is dilated by one pixel within the
/// changed set.
pub fn inpaint_masks_from(before: &[Frame], after: &[Frame], cams: &[Camera], opts: &MaskOpts) -> Vec<Mask> {
    (0..cams.len())
        .into_par_iter()
        .map(|i| {
            let (fb, fa, cam) = (&before[i], &after[i], &cams[i]);
            let (gb, ga) = (&fb.gbuffer, &fa.gbuffer);
            let (w, h) = (gb.width, gb.height);
            let omega = fb.object_mask();
            let changed = Mask::from_fn(w, h, |x, y| {
                let p = y * w + x;
                fb.color.pixel(p).iter().zip(fa.color.pixel(p)).any(|(a, b)| (a - b).abs() > UNCHANGED_EPS)
            });
            let core = Mask::from_fn(w, h, |x, y| {
                let p = y * w + x;
                if !omega.data[p] || !changed.data[p] {
                    return false;
                }
                let gone = ga.alpha.data[p] < opts.alpha_min;
                if !gone && ga.depth.data[p] <= gb.depth.data[p] + opts.depth_gap {
                    return false;
                }
                // A translucent revealed surface cannot be confirmed by
                // other views and is mostly environment.
                if ga.alpha.data[p] < 0.5 {
                    return opts.mark_empty;
                }
                let z = ga.depth.data[p];
                let x3 = cam.unproject(x as f64, y as f64, z);
                let seen = (0..cams.len()).filter(|&j| j != i).any(|j| {
                    let (u, v, zj) = cams[j].project(&x3);
                    zj > cams[j].near && observed_at(&before[j], u, v, zj, opts.seen_abs + opts.seen_rel * zj)
                });
                !seen
            });
            core.dilate(1).and(&changed)
        })
        .collect()
}

/// Renders both scenes from `cams` and derives the inpainting masks.
pub fn gen_inpaint_masks(before: &Scene, after: &Scene, cams: &[Camera], opts: &MaskOpts, render: &RenderOpts) -> Result<Vec<Mask>> {
    let fb = render_all(before, cams, render)?;
    let fa = render_all(after, cams, render)?;
    Ok(inpaint_masks_from(&fb, &fa, cams, opts))
}

pub fn render_all(scene: &Scene, cams: &[Camera], opts: &RenderOpts) -> Result<Vec<Frame>> {
    let bvh = scene_bvh(scene, opts);
    cams.iter().map(|c| render_with(scene, &bvh, c, opts)).collect()
}

/// The three views with the largest mask areas, ties by ascending id.
pub fn select_reference_views(masks: &[Mask]) -> Result<[usize; 3]> {
    if masks.len() < 3 {
        return Err(Error::Removal(format!("need at least 3 views, got {}", masks.len())));
    }
    let mut ids: Vec<usize> = (0..masks.len()).collect();
    let areas: Vec<usize> = masks.iter().map(Mask::count).collect();
    ids.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));
    let pick = [ids[0], ids[1], ids[2]];
    let nonzero = pick.iter().filter(|&&i| areas[i] > 0).count();
    if nonzero < 3 {
        warn!("only {nonzero} of the selected reference views have a nonempty inpainting mask");
    }
    Ok(pick)
}

/// Screen-space maps of one view that are inpainted jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialMaps {
    pub color: Image,
    pub diffuse: Image,
    pub fresnel: Image,
    pub roughness: Image,
    pub normal: Image,
    pub region: Image,
    pub depth: Image,
}

impl MaterialMaps {
    /// File stems used on disk, in field order.
    pub const NAMES: [&'static str; 7] = ["image", "diffuse", "fresnel", "roughness", "normal", "region", "depth"];

    pub fn from_frame(f: &Frame) -> MaterialMaps {
        let gb = &f.gbuffer;
        MaterialMaps {
            color: f.color.clone(),
            diffuse: gb.diffuse.clone(),
            fresnel: gb.fresnel0.clone(),
            roughness: gb.roughness.clone(),
            normal: gb.normal.clone(),
            region: gb.region.clone(),
            depth: gb.depth.clone(),
        }
    }

    pub fn maps(&self) -> [&Image; 7] {
        [&self.color, &self.diffuse, &self.fresnel, &self.roughness, &self.normal, &self.region, &self.depth]
    }

    pub fn maps_mut(&mut self) -> [&mut Image; 7] {
        [
            &mut self.color,
            &mut self.diffuse,
            &mut self.fresnel,
            &mut self.roughness,
            &mut self.normal,
            &mut self.region,
            &mut self.depth,
        ]
    }

    fn map_each(&self, f: impl Fn(&Image) -> Result<Image>) -> Result<MaterialMaps> {
        Ok(MaterialMaps {
            color: f(&self.color)?,
            diffuse: f(&self.diffuse)?,
            fresnel: f(&self.fresnel)?,
            roughness: f(&self.roughness)?,
            normal: f(&self.normal)?,
            region: f(&self.region)?,
            depth: f(&self.depth)?,
        })
    }
}

/// One reference view to complete in 2D.
#[derive(Clone, Debug, PartialEq)]
pub struct InpaintTask {
    pub view: usize,
    pub mask: Mask,
    pub maps: MaterialMaps,
    pub inpainted: Option<MaterialMaps>,
}

impl InpaintTask {
    pub fn new(view: usize, mask: Mask, frame: &Frame) -> InpaintTask {
        InpaintTask {
            view,
            mask,
            maps: MaterialMaps::from_frame(frame),
            inpainted: None,
        }
    }

    /// Writes `image.pfm`, `mask.png` and one PFM per map, plus the
    /// `*.out.pfm` completions when present.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mask.write_png(&dir.join("mask.png"))?;
        for (name, img) in MaterialMaps::NAMES.iter().zip(self.maps.maps()) {
            img.write_pfm(&dir.join(format!("{name}.pfm")))?;
        }
        if let Some(out) = &self.inpainted {
            for (name, img) in MaterialMaps::NAMES.iter().zip(out.maps()) {
                img.write_pfm(&dir.join(format!("{name}.out.pfm")))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path, view: usize) -> Result<InpaintTask> {
        let read = |suffix: &str| -> Result<MaterialMaps> {
            let r = |n: &str| Image::read_pfm(&dir.join(format!("{n}{suffix}.pfm")));
            Ok(MaterialMaps {
                color: r("image")?,
                diffuse: r("diffuse")?,
                fresnel: r("fresnel")?,
                roughness: r("roughness")?,
                normal: r("normal")?,
                region: r("region")?,
                depth: r("depth")?,
            })
        };
        let maps = read("")?;
        let inpainted = if dir.join("image.out.pfm").exists() { Some(read(".out")?) } else { None };
        Ok(InpaintTask {
            view,
            mask: Mask::read_png(&dir.join("mask.png"))?,
            maps,
            inpainted,
        })
    }
}

/// Channelwise diffusion fill of the masked pixels: repeated 3×3
/// averaging until the largest update falls below `tol`.
pub fn diffusion_fill(img: &Image, mask: &Mask, tol: f64, max_iters: usize) -> Image {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut out = img.clone();
    let holes: Vec<usize> = (0..w * h).filter(|&p| mask.data[p]).collect();
    if holes.is_empty() || holes.len() == w * h {
        return out;
    }
    let neighbors = |p: usize| {
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        (-1..=1isize)
            .flat_map(move |dy| (-1..=1isize).map(move |dx| (x + dx, y + dy)))
            .filter(move |&(nx, ny)| (nx, ny) != (x, y) && nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize)
            .map(move |(nx, ny)| ny as usize * w + nx as usize)
    };
    // Start from the mean of the known ring around the hole.
    let mut ring = vec![0.0; ch];
    let mut ring_n = 0usize;
    let mut on_ring = vec![false; w * h];
    for &p in &holes {
        for q in neighbors(p) {
            if !mask.data[q] && !on_ring[q] {
                on_ring[q] = true;
                ring_n += 1;
                for c in 0..ch {
                    ring[c] += img.data[q * ch + c];
                }
            }
        }
    }
    for &p in &holes {
        for c in 0..ch {
            out.data[p * ch + c] = ring[c] / ring_n as f64;
        }
    }
    let mut next = vec![0.0; holes.len() * ch];
    for _ in 0..max_iters {
        let mut max_update: f64 = 0.0;
        for (k, &p) in holes.iter().enumerate() {
            let mut n = 0.0;
            let acc = &mut next[k * ch..(k + 1) * ch];
            acc.iter_mut().for_each(|v| *v = 0.0);
            for q in neighbors(p) {
                n += 1.0;
                for c in 0..ch {
                    acc[c] += out.data[q * ch + c];
                }
            }
            for c in 0..ch {
                acc[c] /= n;
                max_update = max_update.max((acc[c] - out.data[p * ch + c]).abs());
            }
        }
        for (k, &p) in holes.iter().enumerate() {
            out.data[p * ch..(p + 1) * ch].copy_from_slice(&next[k * ch..(k + 1) * ch]);
        }
        if max_update < tol {
            break;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Inpainter {
    Baseline,
    /// External executable invoked with the task directory.
    Command { exe: PathBuf, fallback_baseline: bool },
}

impl Inpainter {
    /// Parses `baseline` or `cmd:<exe>`.
    pub fn parse(s: &str, fallback_baseline: bool) -> Result<Inpainter> {
        match s {
            "baseline" => Ok(Inpainter::Baseline),
            _ => match s.strip_prefix("cmd:") {
                Some(exe) if !exe.is_empty() => Ok(Inpainter::Command {
                    exe: PathBuf::from(exe),
                    fallback_baseline,
                }),
                _ => Err(Error::Removal(format!("unknown inpainter `{s}`, expected `baseline` or `cmd:<exe>`"))),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Inpainter::Baseline => "baseline".into(),
            Inpainter::Command { exe, .. } => format!("cmd:{}", exe.display()),
        }
    }
}

fn inpaint_baseline(task: &InpaintTask) -> Result<MaterialMaps> {
    task.maps.map_each(|img| Ok(diffusion_fill(img, &task.mask, INPAINT_TOL, INPAINT_MAX_ITERS)))
}

/// Keeps `out` only inside `mask`, restoring `orig` elsewhere.
fn restore_outside(orig: &Image, out: &Image, mask: &Mask) -> Result<Image> {
    orig.check_shape(out, "inpainted map")?;
    let ch = orig.channels;
    let mut r = orig.clone();
    for p in (0..orig.len_pixels()).filter(|&p| mask.data[p]) {
        r.data[p * ch..(p + 1) * ch].copy_from_slice(&out.data[p * ch..(p + 1) * ch]);
    }
    Ok(r)
}

fn inpaint_command(task: &InpaintTask, exe: &Path, workdir: &Path) -> Result<MaterialMaps> {
    let dir = workdir.join(task.view.to_string());
    let bare = InpaintTask {
        inpainted: None,
        ..task.clone()
    };
    bare.save(&dir)?;
    let out = Command::new(exe)
        .arg(&dir)
        .output()
        .map_err(|e| Error::Backend(format!("cannot run {}: {e}", exe.display())))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(Error::Backend(format!("{} exited with {}: {}", exe.display(), out.status, stderr.trim())));
    }
    let done = InpaintTask::load(&dir, task.view).map_err(|e| Error::Backend(format!("reading backend output: {e}")))?;
    let raw = done
        .inpainted
        .ok_or_else(|| Error::Backend(format!("backend wrote no image.out.pfm in {}", dir.display())))?;
    let mut res = task.maps.clone();
    for (dst, src) in res.maps_mut().into_iter().zip(raw.maps()) {
        *dst = restore_outside(dst, src, &task.mask)?;
    }
    Ok(res)
}

/// Completes every map of `task` inside its mask. `workdir` hosts the
/// external protocol files.
pub fn inpaint_2d(task: &InpaintTask, backend: &Inpainter, workdir: &Path) -> Result<InpaintTask> {
    let maps = match backend {
        Inpainter::Baseline => inpaint_baseline(task)?,
        Inpainter::Command { exe, fallback_baseline } => match inpaint_command(task, exe, workdir) {
            Ok(m) => m,
            Err(e) if *fallback_baseline => {
                warn!("view {}: {e}; falling back to baseline inpainter", task.view);
                inpaint_baseline(task)?
            }
            Err(e) => return Err(e),
        },
    };
    Ok(InpaintTask {
        inpainted: Some(maps),
        ..task.clone()
    })
}

/// New primitives for every (strided) masked pixel of the completed
/// tasks, placed at the inpainted depth.
pub fn backproject_init(tasks: &[InpaintTask], cams: &[Camera], survivors: &Scene, stride: usize) -> Result<Vec<GaussianPrimitive>> {
    if survivors.primitives.is_empty() {
        return Err(Error::Removal("no surviving primitives to copy geometry from".into()));
    }
    let stride = stride.max(1);
    let centers: Vec<Vec3> = survivors.primitives.iter().map(GaussianPrimitive::mean).collect();
    let rest = math::sh_rest_count(survivors.sh_degree);
    let mut out = Vec::new();
    for task in tasks {
        let maps = task
            .inpainted
            .as_ref()
            .ok_or_else(|| Error::Removal(format!("view {} has not been inpainted", task.view)))?;
        let cam = cams
            .get(task.view)
            .ok_or_else(|| Error::Removal(format!("no camera for view {}", task.view)))?;
        let w = task.mask.width;
        for y in (0..task.mask.height).step_by(stride) {
            for x in (0..w).step_by(stride) {
                let p = y * w + x;
                let z = maps.depth.data[p];
                if !task.mask.data[p] || !(z > 0.0) {
                    continue;
                }
                let pos = cam.unproject(x as f64, y as f64, z);
                let nn = centers
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i, (c - pos).norm_squared()))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
                    .expect("nonempty");
                let src = &survivors.primitives[nn];
                let n = maps.normal.vec3_at(p);
                let normal = if n.norm() > 1e-6 { math::to_f32(&n.normalize()) } else { src.normal };
                out.push(GaussianPrimitive {
                    position: math::to_f32(&pos),
                    scale: src.scale,
                    rotation: src.rotation,
                    opacity: src.opacity,
                    color: [0.5; 3],
                    sh_rest: vec![[0.0; 3]; rest],
                    diffuse: [0.5; 3],
                    fresnel0: [0.5; 3],
                    roughness: 0.5,
                    label: 0.0,
                    region: maps.region.data[p].clamp(0.0, 1.0) as f32,
                    normal,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemovalOpts {
    pub label_thresh: f64,
    pub tau: f64,
    pub stride: usize,
    pub inpainter: Inpainter,
    pub masks: MaskOpts,
    pub render: RenderOpts,
}

impl Default for RemovalOpts {
    fn default() -> Self {
        RemovalOpts {
            label_thresh: DEFAULT_LABEL_THRESH,
            tau: DEFAULT_TAU,
            stride: 1,
            inpainter: Inpainter::Baseline,
            masks: MaskOpts::default(),
            render: RenderOpts::default(),
        }
    }
}

/// Everything the refinement stage needs after removal.
#[derive(Clone, Debug)]
pub struct Removal {
    /// Survivors followed by the injected primitives.
    pub scene: Scene,
    pub removed: usize,
    pub added: usize,
    pub inpaint_masks: Vec<Mask>,
    /// Lighting-aware masks of the pre-removal scene per view.
    pub lighting: Vec<LightingMask>,
    pub reference: [usize; 3],
    pub tasks: Vec<InpaintTask>,
}

#[derive(Serialize, Deserialize)]
struct RemovalManifest {
    removed: usize,
    added: usize,
    reference: [usize; 3],
    tau: f64,
    views: usize,
}

/// Runs the full removal pipeline on `scene`. `workdir` is used only by
/// external inpainters.
pub fn remove_object(scene: &Scene, opts: &RemovalOpts, workdir: &Path) -> Result<Removal> {
    let (after, removed) = coarse_remove(scene, opts.label_thresh)?;
    let cams = &scene.cameras;
    let before_frames = render_all(scene, cams, &opts.render)?;
    let after_frames = render_all(&after, cams, &opts.render)?;
    let inpaint_masks = inpaint_masks_from(&before_frames, &after_frames, cams, &opts.masks);
    let lighting = before_frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let omega = scene.view(i).and_then(|v| v.mask_obj.clone()).unwrap_or_else(|| f.object_mask());
            lighting_mask(&frame_reflection_map(f), opts.tau, &omega)
        })
        .collect();
    let reference = select_reference_views(&inpaint_masks)?;
    let tasks = reference
        .iter()
        .map(|&v| inpaint_2d(&InpaintTask::new(v, inpaint_masks[v].clone(), &after_frames[v]), &opts.inpainter, workdir))
        .collect::<Result<Vec<_>>>()?;
    let fresh = backproject_init(&tasks, cams, &after, opts.stride)?;
    info!("removed {removed} primitives, injected {}", fresh.len());
    let added = fresh.len();
    let mut out = after;
    out.primitives.extend(fresh);
    Ok(Removal {
        scene: out,
        removed,
        added,
        inpaint_masks,
        lighting,
        reference,
        tasks,
    })
}

impl Removal {
    /// Layout: `scene/`, `masks/{inpaint,reflection,lighting}_<i>.png`,
    /// `tasks/<view>/` and `removal.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_scene(&self.scene, &dir.join("scene"))?;
        let masks = dir.join("masks");
        fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
        for (i, (p, l)) in self.inpaint_masks.iter().zip(&self.lighting).enumerate() {
            p.write_png(&masks.join(format!("inpaint_{i}.png")))?;
            l.m_r.write_png(&masks.join(format!("reflection_{i}.png")))?;
            l.combined.write_png(&masks.join(format!("lighting_{i}.png")))?;
            l.e_obj.write_pfm(&masks.join(format!("e_obj_{i}.pfm")))?;
        }
        for t in &self.tasks {
            t.save(&dir.join("tasks").join(t.view.to_string()))?;
        }
        let manifest = RemovalManifest {
            removed: self.removed,
            added: self.added,
            reference: self.reference,
            tau: self.lighting.first().map_or(DEFAULT_TAU, |l| l.tau),
            views: self.inpaint_masks.len(),
        };
        let path = dir.join("removal.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json")).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Removal> {
        let path = dir.join("removal.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RemovalManifest = serde_json::from_str(&text).map_err(|e| Error::malformed("removal.json", e.to_string()))?;
        let scene = load_scene(&dir.join("scene"))?;
        let masks = dir.join("masks");
        let mut inpaint_masks = Vec::new();
        let mut lighting = Vec::new();
        for i in 0..m.views {
            inpaint_masks.push(Mask::read_png(&masks.join(format!("inpaint_{i}.png")))?);
            lighting.push(LightingMask {
                e_obj: Image::read_pfm(&masks.join(format!("e_obj_{i}.pfm")))?,
                m_r: Mask::read_png(&masks.join(format!("reflection_{i}.png")))?,
                tau: m.tau,
                combined: Mask::read_png(&masks.join(format!("lighting_{i}.png")))?,
            });
        }
        let tasks = m
            .reference
            .iter()
            .map(|&v| InpaintTask::load(&dir.join("tasks").join(v.to_string()), v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Removal {
            scene,
            removed: m.removed,
            added: m.added,
            inpaint_masks,
            lighting,
            reference: m.reference,
            tasks,
        })
    }
}
