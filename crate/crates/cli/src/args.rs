use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "gserase", version, about = "Gaussian-splat PBR renderer and reflection-aware object removal")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible output.
    #[arg(long, global = true, env = "GSERASE_THREADS")]
    pub threads: Option<usize>,

    /// Log filter for progress on standard error (error, warn, info, debug).
    #[arg(long, global = true, env = "GSERASE_LOG", default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene and its object-free counterpart.
    Gen(GenArgs),
    /// Render views of a scene.
    Render(RenderArgs),
    /// Compute reflection maps and lighting-aware masks.
    LightMask(LightMaskArgs),
    /// Remove the labelled object, inpaint reference views and inject primitives.
    Remove(RemoveArgs),
    /// Refine materials of a removal result.
    Refine(RefineArgs),
    /// PSNR and SSIM between two images as JSON.
    Metrics(MetricsArgs),
    /// Print per-ray hit lists.
    TraceDebug(TraceDebugArgs),
    /// Check a scene directory.
    Validate(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Render(_) => "render",
            Command::LightMask(_) => "light-mask",
            Command::Remove(_) => "remove",
            Command::Refine(_) => "refine",
            Command::Metrics(_) => "metrics",
            Command::TraceDebug(_) => "trace-debug",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RenderFlags {
    /// `analytic`, `analytic:<c0>,<c1>` or `net:<dir>`.
    #[arg(long, env = "GSERASE_ROUGHNESS_TRANSLATE", default_value = "analytic")]
    pub roughness_translate: String,
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    #[arg(long, env = "GSERASE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// mirror-sphere or sphere-and-box.
    #[arg(long, env = "GSERASE_PRESET", default_value = "mirror-sphere")]
    pub preset: String,
    #[arg(long, env = "GSERASE_OUT")]
    pub out: PathBuf,
    /// Ground-truth scene directory; defaults to `<out>_gt`.
    #[arg(long, env = "GSERASE_GT_OUT")]
    pub gt_out: Option<PathBuf>,
    #[arg(long, env = "GSERASE_WIDTH")]
    pub width: Option<usize>,
    #[arg(long, env = "GSERASE_HEIGHT")]
    pub height: Option<usize>,
    #[arg(long, env = "GSERASE_CAMERAS")]
    pub cameras: Option<usize>,
    #[arg(long, env = "GSERASE_SH_DEGREE")]
    pub sh_degree: Option<u32>,
    /// Skip rendering reference views into the scene.
    #[arg(long)]
    pub no_views: bool,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    pub scene: PathBuf,
    /// Camera index; every camera when omitted.
    #[arg(long)]
    pub view: Option<usize>,
    /// Output directory; defaults to `<scene>/render`.
    #[arg(long, env = "GSERASE_OUT")]
    pub out: Option<PathBuf>,
    /// Also write D, G, F, L_ind, L_dir, V and M.
    #[arg(long)]
    pub dump_components: bool,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Args, Debug, Serialize)]
pub struct LightMaskArgs {
    pub scene: PathBuf,
    #[arg(long)]
    pub view: Option<usize>,
    #[arg(long, env = "GSERASE_TAU", default_value_t = gserase::lightmask::DEFAULT_TAU)]
    pub tau: f64,
    /// Output directory; defaults to `<scene>/light_mask`.
    #[arg(long, env = "GSERASE_OUT")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Args, Debug, Serialize)]
pub struct RemoveArgs {
    pub scene: PathBuf,
    #[arg(long, env = "GSERASE_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "GSERASE_LABEL_THRESH", default_value_t = gserase::removal::DEFAULT_LABEL_THRESH)]
    pub label_thresh: f64,
    #[arg(long, env = "GSERASE_TAU", default_value_t = gserase::lightmask::DEFAULT_TAU)]
    pub tau: f64,
    /// Pixel stride of the back-projected point cloud.
    #[arg(long, env = "GSERASE_STRIDE", default_value_t = 1)]
    pub stride: usize,
    /// `baseline` or `cmd:<exe>`.
    #[arg(long, env = "GSERASE_INPAINTER", default_value = "baseline")]
    pub inpainter: String,
    /// Use the baseline inpainter when the external backend fails.
    #[arg(long, env = "GSERASE_FALLBACK_BASELINE")]
    pub fallback_baseline: bool,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Args, Debug, Serialize)]
pub struct RefineArgs {
    /// Output directory of `remove`.
    pub removal: PathBuf,
    #[arg(long, env = "GSERASE_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "GSERASE_STEPS", default_value_t = 500)]
    pub steps: usize,
    #[arg(long, env = "GSERASE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "GSERASE_LR_MATERIAL", default_value_t = 1e-2)]
    pub lr_material: f64,
    #[arg(long, env = "GSERASE_LR_SH", default_value_t = 1e-3)]
    pub lr_sh: f64,
    #[arg(long, env = "GSERASE_BETA1", default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, env = "GSERASE_BETA2", default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, env = "GSERASE_EPS", default_value_t = 1e-8)]
    pub eps: f64,
    /// Abort when the loss exceeds this multiple of its initial value.
    #[arg(long, env = "GSERASE_DIVERGENCE", default_value_t = 10.0)]
    pub divergence: f64,
    #[arg(long, env = "GSERASE_LAMBDA_D", default_value_t = 1000.0)]
    pub lambda_d: f64,
    #[arg(long, env = "GSERASE_LAMBDA_DN", default_value_t = 0.05)]
    pub lambda_dn: f64,
    #[arg(long, env = "GSERASE_LAMBDA_N", default_value_t = 0.5)]
    pub lambda_n: f64,
    #[arg(long, env = "GSERASE_LAMBDA_S", default_value_t = 0.05)]
    pub lambda_s: f64,
    #[arg(long, env = "GSERASE_LAMBDA_OMEGA", default_value_t = 1.0)]
    pub lambda_omega: f64,
    #[arg(long, env = "GSERASE_LAMBDA_REGION", default_value_t = 1.0)]
    pub lambda_region: f64,
    #[arg(long, env = "GSERASE_LAMBDA_A", default_value_t = 0.2)]
    pub lambda_a: f64,
    #[arg(long, env = "GSERASE_LAMBDA_M", default_value_t = 1.0)]
    pub lambda_m: f64,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Args, Debug, Serialize)]
pub struct MetricsArgs {
    /// PNG or PFM.
    pub a: PathBuf,
    pub b: PathBuf,
    /// 8-bit PNG; nonzero pixels are evaluated.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TraceDebugArgs {
    pub scene: PathBuf,
    /// Ray as `ox,oy,oz,dx,dy,dz`; repeatable.
    #[arg(long = "ray")]
    pub rays: Vec<String>,
    /// Additional random rays from the scene's bounding box.
    #[arg(long, default_value_t = 0)]
    pub random: usize,
    #[arg(long, env = "GSERASE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Trace every primitive instead of the rough-region set.
    #[arg(long)]
    pub all: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    pub scene: PathBuf,
}
