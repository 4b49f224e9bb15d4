//! Screen-space glossy filter: mip pyramids over the specular buffers,
//! sampled at a roughness-dependent level.

mod net;

pub use net::{ConvLayer, ConvNet};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::luminance;
use crate::shading::SpecularBuffers;

pub const PYRAMID_LEVELS: usize = 5;

/// Level 0 is the input; level p+1 is the binomial blur of level p
/// decimated by two (ceil dimensions).
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenPyramid {
    pub levels: Vec<Image>,
}

pub fn build_pyramid(img: &Image) -> ScreenPyramid {
    let mut levels = vec![img.clone()];
    for _ in 1..PYRAMID_LEVELS {
        let next = levels.last().unwrap().blur_binomial().decimate2();
        levels.push(next);
    }
    ScreenPyramid { levels }
}

/// Bilinear taps (pixel index, weight) of level-0 position (x, y) on a
/// `w`×`h` level with scale 2^-p, clamp-to-edge.
fn taps(w: usize, h: usize, p: usize, x: f64, y: f64) -> [(usize, f64); 4] {
    let scale = (1u64 << p) as f64;
    let s = (x / scale).clamp(0.0, (w - 1) as f64);
    let t = (y / scale).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (s.floor() as usize, t.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (s - x0 as f64, t - y0 as f64);
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}

/// Integer level below `l` and the interpolation fraction.
pub fn level_split(rs: f64) -> (usize, f64) {
    let l = rs.clamp(0.0, 1.0) * (PYRAMID_LEVELS - 1) as f64;
    let lo = (l.floor() as usize).min(PYRAMID_LEVELS - 2);
    (lo, l - lo as f64)
}

impl ScreenPyramid {
    pub fn channels(&self) -> usize {
        self.levels[0].channels
    }

    /// Bilinear lookup on one level at level-0 pixel coordinates.
    pub fn sample_level(&self, p: usize, x: f64, y: f64, out: &mut [f64]) {
        let img = &self.levels[p];
        out.iter_mut().for_each(|v| *v = 0.0);
        for (idx, wt) in taps(img.width, img.height, p, x, y) {
            if wt == 0.0 {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += wt * img.data[idx * img.channels + c];
            }
        }
    }
}

/// Value at level-0 pixel (x, y) filtered at screen roughness `rs`:
/// linear between the bilinear samples of the two bracketing levels.
pub fn sample_filtered(pyr: &ScreenPyramid, x: usize, y: usize, rs: f64) -> Vec<f64> {
    let ch = pyr.channels();
    let (lo, frac) = level_split(rs);
    let (x, y) = (x as f64, y as f64);
    let mut a = vec![0.0; ch];
    pyr.sample_level(lo, x, y, &mut a);
    if frac > 0.0 {
        let mut b = vec![0.0; ch];
        pyr.sample_level(lo + 1, x, y, &mut b);
        for c in 0..ch {
            a[c] = (1.0 - frac) * a[c] + frac * b[c];
        }
    }
    a
}

/// Adjoint of [`sample_filtered`] with respect to the pyramid levels and
/// the screen roughness. Adds `grad`·∂value into `level_grads` and returns
/// ∂/∂rs (zero where rs is clamped).
pub(crate) fn sample_filtered_backward(
    pyr: &ScreenPyramid,
    x: usize,
    y: usize,
    rs: f64,
    grad: &[f64],
    level_grads: &mut [Image],
) -> f64 {
    let ch = pyr.channels();
    let (lo, frac) = level_split(rs);
    let (xf, yf) = (x as f64, y as f64);
    for (p, wl) in [(lo, 1.0 - frac), (lo + 1, frac)] {
        if wl == 0.0 {
            continue;
        }
        let img = &level_grads[p];
        let (w, h) = (img.width, img.height);
        for (idx, wt) in taps(w, h, p, xf, yf) {
            for c in 0..ch {
                level_grads[p].data[idx * ch + c] += wl * wt * grad[c];
            }
        }
    }
    if !(0.0..=1.0).contains(&rs) {
        return 0.0;
    }
    let mut a = vec![0.0; ch];
    let mut b = vec![0.0; ch];
    pyr.sample_level(lo, xf, yf, &mut a);
    pyr.sample_level(lo + 1, xf, yf, &mut b);
    let dl: f64 = (0..ch).map(|c| grad[c] * (b[c] - a[c])).sum();
    dl * (PYRAMID_LEVELS - 1) as f64
}

/// Adjoint of [`build_pyramid`]: folds per-level gradients into a level-0
/// gradient.
pub(crate) fn pyramid_backward(mut level_grads: Vec<Image>) -> Image {
    while level_grads.len() > 1 {
        let top = level_grads.pop().unwrap();
        let below = level_grads.last_mut().unwrap();
        let up = top.decimate2_adjoint(below.width, below.height).blur_binomial_adjoint();
        for (d, s) in below.data.iter_mut().zip(&up.data) {
            *d += s;
        }
    }
    level_grads.pop().unwrap()
}

/// Zero images shaped like each level of `pyr`.
pub(crate) fn zero_levels(pyr: &ScreenPyramid) -> Vec<Image> {
    pyr.levels.iter().map(|l| Image::new(l.width, l.height, l.channels)).collect()
}

/// Maps surface roughness (and depth) to screen-space roughness.
#[derive(Clone, Debug, PartialEq)]
pub enum RoughnessTranslator {
    /// R_s = clamp(c0·R / (1 + c1·depth), 0, 1).
    Analytic { c0: f64, c1: f64 },
    Net(ConvNet),
}

impl Default for RoughnessTranslator {
    fn default() -> Self {
        RoughnessTranslator::Analytic { c0: 1.0, c1: 0.0 }
    }
}

impl RoughnessTranslator {
    /// `analytic`, `analytic:<c0>,<c1>` or `net:<dir>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "analytic" {
            return Ok(Self::default());
        }
        if let Some(dir) = s.strip_prefix("net:") {
            return Ok(RoughnessTranslator::Net(ConvNet::load(std::path::Path::new(dir))?));
        }
        let bad = || Error::Unsupported(format!("roughness translator `{s}`, expected `analytic`, `analytic:<c0>,<c1>` or `net:<dir>`"));
        let (c0, c1) = s.strip_prefix("analytic:").and_then(|p| p.split_once(',')).ok_or_else(bad)?;
        let parse = |v: &str| v.trim().parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0);
        match (parse(c0), parse(c1)) {
            (Some(c0), Some(c1)) => Ok(RoughnessTranslator::Analytic { c0, c1 }),
            _ => Err(bad()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            RoughnessTranslator::Analytic { c0, c1 } => format!("analytic(c0={c0}, c1={c1})"),
            RoughnessTranslator::Net(_) => "net".into(),
        }
    }
}

pub fn translate_roughness(r: &Image, depth: &Image, tr: &RoughnessTranslator) -> Result<Image> {
    if r.width != depth.width || r.height != depth.height || r.channels != 1 || depth.channels != 1 {
        return Err(Error::Dimension("roughness and depth images differ in shape".into()));
    }
    match tr {
        RoughnessTranslator::Analytic { c0, c1 } => Ok(Image::from_fn(r.width, r.height, 1, |x, y, _| {
            let p = y * r.width + x;
            (c0 * r.data[p] / (1.0 + c1 * depth.data[p])).clamp(0.0, 1.0)
        })),
        RoughnessTranslator::Net(net) => net.infer(r, depth),
    }
}

/// ∂R_s/∂R at one pixel for the analytic map (zero where clamped).
pub(crate) fn translate_derivative(r: f64, depth: f64, tr: &RoughnessTranslator) -> Result<f64> {
    match tr {
        RoughnessTranslator::Analytic { c0, c1 } => {
            let k = c0 / (1.0 + c1 * depth);
            let v = k * r;
            Ok(if (0.0..=1.0).contains(&v) { k } else { 0.0 })
        }
        RoughnessTranslator::Net(_) => Err(Error::Unsupported("gradients through the roughness network".into())),
    }
}

/// Filtered glossy term and the intermediate buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub g: Image,
    pub r_s: Image,
    pub l_ind: Image,
    pub v: Image,
    pub pyr_l_ind: ScreenPyramid,
    pub pyr_v: ScreenPyramid,
}

/// G = F·(L_ind' + L_dir·V') with L_ind' and V' sampled from their
/// pyramids at the translated roughness.
pub fn filter_specular(spec: &SpecularBuffers, r: &Image, depth: &Image, tr: &RoughnessTranslator) -> Result<FilterOutput> {
    let (w, h) = (spec.fresnel.width, spec.fresnel.height);
    if r.width != w || r.height != h {
        return Err(Error::Dimension(format!("roughness {}x{} vs specular {w}x{h}", r.width, r.height)));
    }
    let r_s = translate_roughness(r, depth, tr)?;
    let pyr_l_ind = build_pyramid(&spec.l_ind);
    let pyr_v = build_pyramid(&spec.v);
    let mut g = Image::new(w, h, 3);
    let mut l_ind = Image::new(w, h, 3);
    let mut v = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let rs = r_s.data[p];
            let li = sample_filtered(&pyr_l_ind, x, y, rs);
            let vf = sample_filtered(&pyr_v, x, y, rs)[0];
            for c in 0..3 {
                l_ind.data[3 * p + c] = li[c];
                g.data[3 * p + c] = spec.fresnel.data[3 * p + c] * (li[c] + spec.l_dir.data[3 * p + c] * vf);
            }
            v.data[p] = vf;
        }
    }
    Ok(FilterOutput {
        g,
        r_s,
        l_ind,
        v,
        pyr_l_ind,
        pyr_v,
    })
}

/// Unfiltered ideal specular S = F·(L_ind + L_dir·V).
pub fn ideal_specular(spec: &SpecularBuffers) -> Image {
    let (w, h) = (spec.fresnel.width, spec.fresnel.height);
    Image::from_fn(w, h, 3, |x, y, c| {
        let p = y * w + x;
        spec.fresnel.data[3 * p + c] * (spec.l_ind.data[3 * p + c] + spec.l_dir.data[3 * p + c] * spec.v.data[p])
    })
}

/// Luminance of F times E_i, the input of the object-reflection map.
pub fn fresnel_label(spec: &SpecularBuffers) -> Image {
    let (w, h) = (spec.fresnel.width, spec.fresnel.height);
    Image::from_fn(w, h, 1, |x, y, _| {
        let p = y * w + x;
        luminance(&spec.fresnel.vec3_at(p)) * spec.e_i.data[p]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, ch: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, ch, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn constant_pyramid_stays_constant() {
        let pyr = build_pyramid(&Image::filled(16, 16, 2, 0.7));
        let dims: Vec<_> = pyr.levels.iter().map(|l| l.width).collect();
        assert_eq!(dims, vec![16, 8, 4, 2, 1]);
        for l in &pyr.levels {
            assert!(l.data.iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn odd_sizes_use_ceil() {
        let pyr = build_pyramid(&Image::new(13, 7, 1));
        let dims: Vec<_> = pyr.levels.iter().map(|l| (l.width, l.height)).collect();
        assert_eq!(dims, vec![(13, 7), (7, 4), (4, 2), (2, 1), (1, 1)]);
    }

    #[test]
    fn impulse_level_one_matches_direct_convolution() {
        let mut img = Image::new(16, 16, 1);
        img.set(6, 8, 0, 1.0);
        let pyr = build_pyramid(&img);
        let k = [1.0, 4.0, 6.0, 4.0, 1.0];
        for y in 0..8usize {
            for x in 0..8usize {
                // direct 2D binomial at (2x, 2y), impulse away from borders
                let (dx, dy) = (2 * x as isize - 6, 2 * y as isize - 8);
                let expect = if dx.abs() <= 2 && dy.abs() <= 2 {
                    k[(dx + 2) as usize] * k[(dy + 2) as usize] / 256.0
                } else {
                    0.0
                };
                assert!((pyr.levels[1].get(x, y, 0) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sample_filtered_endpoints() {
        let img = random_image(16, 12, 3, 4);
        let pyr = build_pyramid(&img);
        for (x, y) in [(0, 0), (5, 7), (15, 11)] {
            assert_eq!(sample_filtered(&pyr, x, y, 0.0), img.pixel(y * 16 + x).to_vec());
            let mut top = vec![0.0; 3];
            pyr.sample_level(4, x as f64, y as f64, &mut top);
            assert_eq!(sample_filtered(&pyr, x, y, 1.0), top);
        }
        let c = build_pyramid(&Image::filled(16, 12, 1, 0.3));
        assert!((sample_filtered(&c, 3, 3, 0.5)[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn translator_parsing() {
        assert_eq!(RoughnessTranslator::parse("analytic").unwrap(), RoughnessTranslator::default());
        assert_eq!(RoughnessTranslator::parse("analytic:2,0.5").unwrap(), RoughnessTranslator::Analytic { c0: 2.0, c1: 0.5 });
        assert!(RoughnessTranslator::parse("analytic:-1,0").is_err());
        assert!(RoughnessTranslator::parse("cubic").is_err());
        assert!(matches!(RoughnessTranslator::parse("net:/nonexistent"), Err(Error::MissingFile(_))));
    }

    #[test]
    fn analytic_translation() {
        let r = Image::filled(4, 4, 1, 0.5);
        let d = Image::filled(4, 4, 1, 1.0);
        let rs = translate_roughness(&r, &d, &RoughnessTranslator::Analytic { c0: 1.0, c1: 1.0 }).unwrap();
        assert!(rs.data.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let zero = translate_roughness(&Image::new(4, 4, 1), &d, &RoughnessTranslator::Analytic { c0: 3.0, c1: 0.2 }).unwrap();
        assert!(zero.data.iter().all(|v| *v == 0.0));
        let big = translate_roughness(&r, &d, &RoughnessTranslator::Analytic { c0: 9.0, c1: 0.0 }).unwrap();
        assert!(big.data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn pyramid_backward_is_adjoint() {
        let img = random_image(13, 9, 2, 1);
        let pyr = build_pyramid(&img);
        let grads: Vec<Image> = pyr.levels.iter().enumerate().map(|(i, l)| random_image(l.width, l.height, 2, 10 + i as u64)).collect();
        let lhs: f64 = pyr.levels.iter().zip(&grads).map(|(l, g)| l.data.iter().zip(&g.data).map(|(a, b)| a * b).sum::<f64>()).sum();
        let back = pyramid_backward(grads);
        let rhs: f64 = img.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
