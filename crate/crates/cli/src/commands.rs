use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use gserase::lightmask::{frame_reflection_map, lighting_mask};
use gserase::math::Vec3;
use gserase::metrics::{psnr, ssim};
use gserase::optim::{refine, removal_targets, write_trace_csv, LossWeights, RefineOpts};
use gserase::removal::{remove_object, Inpainter, Removal, RemovalOpts};
use gserase::render::{render_with, scene_bvh, Frame, RenderOpts};
use gserase::scene::{gen_synthetic_scene, load_scene, save_scene, SceneSpec};
use gserase::ssfilter::RoughnessTranslator;
use gserase::tracer::{build_bvh, intersect_ray, rough_region, trace, TraceOpts};
use gserase::{Error, Image, Mask, Scene, ViewData};

use crate::args::*;

/// Bad flag values; reported with exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Render(a) => render(cli, a),
        Command::LightMask(a) => light_mask(cli, a),
        Command::Remove(a) => remove(cli, a),
        Command::Refine(a) => refine_cmd(cli, a),
        Command::Metrics(a) => metrics(a),
        Command::TraceDebug(a) => trace_debug(a),
        Command::Validate(a) => validate(a),
    }
}

fn render_opts(flags: &RenderFlags) -> Result<RenderOpts> {
    let translator = RoughnessTranslator::parse(&flags.roughness_translate).map_err(|e| match e {
        Error::Unsupported(m) => usage(m),
        e => anyhow!(e).context("loading the roughness network"),
    })?;
    Ok(RenderOpts {
        translator,
        ..Default::default()
    })
}

fn render_substitutions(ro: &RenderOpts) -> Vec<String> {
    match ro.translator {
        RoughnessTranslator::Analytic { .. } => vec![format!("roughness translation: {}", ro.translator.describe())],
        RoughnessTranslator::Net(_) => Vec::new(),
    }
}

#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    subcommand: &'a str,
    flags: &'a T,
    seed: Option<u64>,
    threads: Option<usize>,
    versions: serde_json::Value,
    substitutions: Vec<String>,
}

fn write_manifest<T: Serialize>(cli: &Cli, out: &Path, flags: &T, seed: Option<u64>, substitutions: Vec<String>) -> Result<()> {
    let m = RunManifest {
        subcommand: cli.command.name(),
        flags,
        seed,
        threads: cli.threads,
        versions: json!({
            "gserase-core": gserase::VERSION,
            "gserase-cli": env!("CARGO_PKG_VERSION"),
        }),
        substitutions,
    };
    let path = out.join("run.json");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> Result<Scene> {
    load_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn view_indices(scene: &Scene, view: Option<usize>) -> Result<Vec<usize>> {
    match view {
        Some(v) if v >= scene.cameras.len() => Err(usage(format!("--view {v} out of range: scene has {} cameras", scene.cameras.len()))),
        Some(v) => Ok(vec![v]),
        None => Ok((0..scene.cameras.len()).collect()),
    }
}

fn render_views(scene: &Scene, views: &[usize], ro: &RenderOpts) -> Result<Vec<Frame>> {
    let bvh = scene_bvh(scene, ro);
    views.iter().map(|&i| Ok(render_with(scene, &bvh, &scene.cameras[i], ro)?)).collect()
}

fn export_all(frames: &[Frame], views: &[usize], dir: &Path, components: bool) -> Result<()> {
    for (f, i) in frames.iter().zip(views) {
        f.export(dir, &format!("render_{i}"), components)?;
    }
    Ok(())
}

fn gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let mut spec = SceneSpec::preset(&a.preset, a.seed)
        .ok_or_else(|| usage(format!("unknown preset `{}`; expected one of {}", a.preset, SceneSpec::PRESETS.join(", "))))?;
    if let Some(w) = a.width {
        spec.width = w;
    }
    if let Some(h) = a.height {
        spec.height = h;
    }
    if let Some(c) = a.cameras {
        spec.camera_count = c;
    }
    if let Some(d) = a.sh_degree {
        spec.sh_degree = d;
    }
    let ro = render_opts(&a.render)?;
    let g = gen_synthetic_scene(&spec).map_err(|e| match e {
        Error::Spec(m) => usage(m),
        e => e.into(),
    })?;
    let gt_out = a.gt_out.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push("_gt");
        PathBuf::from(s)
    });
    for (mut scene, dir) in [(g.scene, &a.out), (g.ground_truth, &gt_out)] {
        let all: Vec<usize> = (0..scene.cameras.len()).collect();
        let frames = render_views(&scene, &all, &ro)?;
        if !a.no_views {
            scene.views = frames
                .iter()
                .map(|f| ViewData {
                    rgb: Some(f.color.clone()),
                    mask_obj: Some(f.object_mask()),
                    mask_region: Some(f.glossy_mask()),
                    normal: Some(f.gbuffer.normal.clone()),
                })
                .collect();
        }
        save_scene(&scene, dir).with_context(|| format!("saving {}", dir.display()))?;
        export_all(&frames, &all, dir, false)?;
        info!("wrote {} ({} primitives, {} views)", dir.display(), scene.primitives.len(), frames.len());
    }
    let mut subs = render_substitutions(&ro);
    subs.push("reference views, masks and normals: rendered from the generated scene".into());
    write_manifest(cli, &a.out, a, Some(a.seed), subs)
}

fn render(cli: &Cli, a: &RenderArgs) -> Result<()> {
    let ro = render_opts(&a.render)?;
    let scene = load(&a.scene)?;
    let views = view_indices(&scene, a.view)?;
    let out = a.out.clone().unwrap_or_else(|| a.scene.join("render"));
    let frames = render_views(&scene, &views, &ro)?;
    export_all(&frames, &views, &out, a.dump_components)?;
    for (f, i) in frames.iter().zip(&views) {
        let d = &f.specular.diagnostics;
        info!("view {i}: {} glossy, {} degenerate normals, {} back-facing", d.glossy, d.degenerate_normal, d.back_facing);
    }
    write_manifest(cli, &out, a, None, render_substitutions(&ro))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(usage(format!("--tau must be a finite non-negative number, got {tau}")))
    }
}

fn light_mask(cli: &Cli, a: &LightMaskArgs) -> Result<()> {
    check_tau(a.tau)?;
    let ro = render_opts(&a.render)?;
    let scene = load(&a.scene)?;
    let views = view_indices(&scene, a.view)?;
    let out = a.out.clone().unwrap_or_else(|| a.scene.join("light_mask"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (f, &i) in render_views(&scene, &views, &ro)?.iter().zip(&views) {
        let omega = scene.view(i).and_then(|v| v.mask_obj.clone()).unwrap_or_else(|| f.object_mask());
        let lm = lighting_mask(&frame_reflection_map(f), a.tau, &omega);
        lm.e_obj.write_pfm(&out.join(format!("e_obj_{i}.pfm")))?;
        lm.m_r.write_png(&out.join(format!("m_r_{i}.png")))?;
        lm.combined.write_png(&out.join(format!("combined_{i}.png")))?;
        info!("view {i}: M_r {} px, combined {} px", lm.m_r.count(), lm.combined.count());
    }
    write_manifest(cli, &out, a, None, render_substitutions(&ro))
}

fn remove(cli: &Cli, a: &RemoveArgs) -> Result<()> {
    if !(a.label_thresh > 0.0 && a.label_thresh < 1.0) {
        return Err(usage(format!("--label-thresh must lie in (0, 1), got {}", a.label_thresh)));
    }
    if a.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    check_tau(a.tau)?;
    let inpainter = Inpainter::parse(&a.inpainter, a.fallback_baseline).map_err(|e| usage(e.to_string()))?;
    let ro = render_opts(&a.render)?;
    let scene = load(&a.scene)?;
    let opts = RemovalOpts {
        label_thresh: a.label_thresh,
        tau: a.tau,
        stride: a.stride,
        inpainter: inpainter.clone(),
        render: ro.clone(),
        ..Default::default()
    };
    let removal = remove_object(&scene, &opts, &a.out.join("work"))?;
    removal.save(&a.out)?;
    let all: Vec<usize> = (0..removal.scene.cameras.len()).collect();
    export_all(&render_views(&removal.scene, &all, &ro)?, &all, &a.out, false)?;
    info!(
        "removed {} primitives, injected {}, reference views {:?}",
        removal.removed, removal.added, removal.reference
    );
    let mut subs = render_substitutions(&ro);
    if matches!(inpainter, Inpainter::Baseline) || a.fallback_baseline {
        subs.push("2D inpainting: baseline diffusion fill".into());
    }
    write_manifest(cli, &a.out, a, None, subs)
}

fn refine_cmd(cli: &Cli, a: &RefineArgs) -> Result<()> {
    let weights = LossWeights {
        lambda_d: a.lambda_d,
        lambda_dn: a.lambda_dn,
        lambda_n: a.lambda_n,
        lambda_s: a.lambda_s,
        lambda_omega: a.lambda_omega,
        lambda_region: a.lambda_region,
        lambda_a: a.lambda_a,
        lambda_m: a.lambda_m,
    };
    weights.validate().map_err(|e| usage(e.to_string()))?;
    for (name, v) in [("--lr-material", a.lr_material), ("--lr-sh", a.lr_sh), ("--eps", a.eps), ("--divergence", a.divergence)] {
        if !(v > 0.0) {
            return Err(usage(format!("{name} must be positive, got {v}")));
        }
    }
    for (name, v) in [("--beta1", a.beta1), ("--beta2", a.beta2)] {
        if !(0.0..1.0).contains(&v) {
            return Err(usage(format!("{name} must lie in [0, 1), got {v}")));
        }
    }
    let ro = render_opts(&a.render)?;
    let removal = Removal::load(&a.removal).with_context(|| format!("loading removal {}", a.removal.display()))?;
    let views = removal.scene.views.clone();
    if views.len() != removal.scene.cameras.len() || views.iter().all(|v| v.rgb.is_none()) {
        return Err(anyhow!("the removal scene carries no reference views; generate the scene without --no-views"));
    }
    let (train, inpaint) = removal_targets(&removal, &views)?;
    let opts = RefineOpts {
        steps: a.steps,
        lr_material: a.lr_material,
        lr_sh: a.lr_sh,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        seed: a.seed,
        weights,
        divergence: a.divergence,
        render: ro.clone(),
    };
    let result = refine(&removal.scene, &train, &inpaint, &opts)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_scene(&result.scene, &a.out.join("scene"))?;
    write_trace_csv(&a.out.join("trace.csv"), &result.trace)?;
    let all: Vec<usize> = (0..result.scene.cameras.len()).collect();
    export_all(&render_views(&result.scene, &all, &ro)?, &all, &a.out, false)?;
    if let (Some(first), Some(last)) = (result.trace.first(), result.trace.last()) {
        info!("loss {:.6} -> {:.6} over {} steps", first.loss.total, last.loss.total, result.trace.len());
    }
    let mut subs = render_substitutions(&ro);
    subs.push("L_A: L1 substitute".into());
    write_manifest(cli, &a.out, a, Some(a.seed), subs)
}

fn read_image(path: &Path) -> Result<Image> {
    let pfm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    let img = if pfm { Image::read_pfm(path) } else { Image::read_png(path) };
    img.with_context(|| format!("reading {}", path.display()))
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let (x, y) = (read_image(&a.a)?, read_image(&a.b)?);
    let mask = a.mask.as_deref().map(Mask::read_png).transpose()?;
    let pixels = mask.as_ref().map_or(x.len_pixels(), |m| m.count());
    let out = json!({
        "psnr": psnr(&x, &y, mask.as_ref())?,
        "ssim": ssim(&x, &y, mask.as_ref())?,
        "pixels": pixels,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn parse_ray(s: &str) -> Result<(Vec3, Vec3)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--ray `{s}`: expected six comma-separated numbers")))?;
    if v.len() != 6 || v.iter().any(|x| !x.is_finite()) {
        return Err(usage(format!("--ray `{s}`: expected six finite numbers")));
    }
    let d = Vec3::new(v[3], v[4], v[5]);
    if d.norm() == 0.0 {
        return Err(usage(format!("--ray `{s}`: zero direction")));
    }
    Ok((Vec3::new(v[0], v[1], v[2]), d.normalize()))
}

fn trace_debug(a: &TraceDebugArgs) -> Result<()> {
    let scene = load(&a.scene)?;
    let mut rays = a.rays.iter().map(|s| parse_ray(s)).collect::<Result<Vec<_>>>()?;
    if a.random > 0 {
        let (mut lo, mut hi) = (Vec3::repeat(f64::MAX), Vec3::repeat(f64::MIN));
        for g in &scene.primitives {
            lo = lo.inf(&g.mean());
            hi = hi.sup(&g.mean());
        }
        if scene.primitives.is_empty() {
            (lo, hi) = (Vec3::repeat(-1.0), Vec3::repeat(1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        for _ in 0..a.random {
            let o = Vec3::from_fn(|k, _| rng.random_range(lo[k]..=hi[k]));
            let d = loop {
                let d = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                if d.norm() > 1e-3 && d.norm() <= 1.0 {
                    break d.normalize();
                }
            };
            rays.push((o, d));
        }
    }
    if rays.is_empty() {
        return Err(usage("no rays: pass --ray or --random"));
    }
    let bvh = if a.all {
        build_bvh(&scene, |_| true, &TraceOpts::default())
    } else {
        build_bvh(&scene, rough_region, &TraceOpts::default())
    };
    let mut out = String::new();
    for (k, (o, d)) in rays.iter().enumerate() {
        let hits = intersect_ray(&bvh, o, d);
        let tr = trace(&bvh, &scene, o, d);
        out += &format!(
            "ray {k} origin {:.6} {:.6} {:.6} dir {:.6} {:.6} {:.6} hits {}\n",
            o.x,
            o.y,
            o.z,
            d.x,
            d.y,
            d.z,
            hits.len()
        );
        for h in &hits {
            out += &format!("  prim {} t {:.6} alpha {:.6}\n", h.prim, h.t, h.alpha);
        }
        out += &format!(
            "  l_ind {:.6} {:.6} {:.6} v {:.6} e_i {:.6}\n",
            tr.l_ind.x, tr.l_ind.y, tr.l_ind.z, tr.v, tr.e_i
        );
    }
    print!("{out}");
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let scene = load(&a.scene)?;
    println!(
        "valid: {} primitives, sh degree {}, {} cameras, {} views",
        scene.primitives.len(),
        scene.sh_degree,
        scene.cameras.len(),
        scene.views.iter().filter(|v| !v.is_empty()).count()
    );
    Ok(())
}
