//! Image-space losses. Each returns its value and, when a gradient image
//! is supplied, adds `scale`·∂L/∂input into it.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::Vec3;
use crate::metrics::{gaussian_taps, SSIM_C1, SSIM_C2, SSIM_WINDOW};
use crate::raster::{gbuffer::EMPTY_ALPHA, GBuffer};
use crate::scene::Camera;

pub const L1_WEIGHT: f64 = 0.8;
pub const SSIM_WEIGHT: f64 = 0.2;
pub const BCE_EPS: f64 = 1e-6;

fn included(exclude: Option<&Mask>, p: usize) -> bool {
    exclude.is_none_or(|m| !m.data[p])
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_mask(img: &Image, m: Option<&Mask>, what: &str) -> Result<()> {
    match m {
        Some(m) if m.width != img.width || m.height != img.height => Err(Error::Dimension(format!(
            "{what}: mask {}x{} vs image {}x{}",
            m.width, m.height, img.width, img.height
        ))),
        _ => Ok(()),
    }
}

/// Mean |a − b| over included pixels and all channels.
pub fn l1_masked(a: &Image, b: &Image, exclude: Option<&Mask>, grad: Option<&mut Image>, scale: f64) -> Result<f64> {
    a.check_shape(b, "l1 inputs")?;
    check_mask(a, exclude, "l1")?;
    let ch = a.channels;
    let n = (0..a.len_pixels()).filter(|&p| included(exclude, p)).count() * ch;
    if n == 0 {
        return Err(Error::EmptyMask("l1"));
    }
    let mut sum = 0.0;
    let mut grad = grad;
    for p in (0..a.len_pixels()).filter(|&p| included(exclude, p)) {
        for c in 0..ch {
            let d = a.data[p * ch + c] - b.data[p * ch + c];
            sum += d.abs();
            if let Some(g) = grad.as_deref_mut() {
                g.data[p * ch + c] += scale * sign(d) / n as f64;
            }
        }
    }
    Ok(sum / n as f64)
}

/// Per-channel SSIM averaged over every included pixel as window center.
/// Windows are 11×11 Gaussians (σ 1.5) restricted to included pixels
/// inside the image and renormalized.
pub fn ssim_masked(a: &Image, b: &Image, exclude: Option<&Mask>, grad: Option<&mut Image>, scale: f64) -> Result<f64> {
    a.check_shape(b, "ssim inputs")?;
    check_mask(a, exclude, "ssim")?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    let k = gaussian_taps();
    let r = (SSIM_WINDOW / 2) as isize;
    let centers: Vec<usize> = (0..w * h).filter(|&p| included(exclude, p)).collect();
    if centers.is_empty() {
        return Err(Error::EmptyMask("ssim"));
    }
    let norm = (centers.len() * ch) as f64;
    let mut total = 0.0;
    let mut grad = grad;
    let mut taps: Vec<(usize, f64)> = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for &p in &centers {
        let (cx, cy) = ((p % w) as isize, (p / w) as isize);
        taps.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                    continue;
                }
                let q = y as usize * w + x as usize;
                if included(exclude, q) {
                    taps.push((q, k[(dx + r) as usize] * k[(dy + r) as usize]));
                }
            }
        }
        let s: f64 = taps.iter().map(|t| t.1).sum();
        for c in 0..ch {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(q, wt) in &taps {
                let (va, vb) = (a.data[q * ch + c], b.data[q * ch + c]);
                let wt = wt / s;
                ma += wt * va;
                mb += wt * vb;
                aa += wt * va * va;
                bb += wt * vb * vb;
                ab += wt * va * vb;
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            let n1 = 2.0 * ma * mb + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d1 = ma * ma + mb * mb + SSIM_C1;
            let d2 = va + vb + SSIM_C2;
            let ssim = n1 * n2 / (d1 * d2);
            total += ssim;
            if let Some(g) = grad.as_deref_mut() {
                // SSIM as a function of (μa, E[a²], E[ab]).
                let d_ma = (2.0 * mb * n2 - 2.0 * mb * n1) / (d1 * d2) - ssim * (2.0 * ma / d1 - 2.0 * ma / d2);
                let d_aa = -ssim / d2;
                let d_ab = 2.0 * n1 / (d1 * d2);
                let f = scale / norm;
                for &(q, wt) in &taps {
                    let (va, vb) = (a.data[q * ch + c], b.data[q * ch + c]);
                    g.data[q * ch + c] += f * wt / s * (d_ma + 2.0 * va * d_aa + vb * d_ab);
                }
            }
        }
    }
    Ok(total / norm)
}

/// L_c = 0.8·L1 + 0.2·(1 − SSIM) over pixels not in `exclude`.
pub fn loss_color(i: &Image, gt: &Image, exclude: Option<&Mask>, grad: Option<&mut Image>, scale: f64) -> Result<f64> {
    let mut grad = grad;
    let l1 = l1_masked(i, gt, exclude, grad.as_deref_mut(), scale * L1_WEIGHT)?;
    let s = ssim_masked(i, gt, exclude, grad, -scale * SSIM_WEIGHT)?;
    Ok(L1_WEIGHT * l1 + SSIM_WEIGHT * (1.0 - s))
}

/// Rendered maps that take part in the material loss.
pub struct MaterialViews<'a> {
    pub diffuse: &'a Image,
    pub fresnel: &'a Image,
    pub roughness: &'a Image,
    pub normal: &'a Image,
}

/// Gradient images matching [`MaterialViews`] (the normal is frozen).
pub struct MaterialGradViews<'a> {
    pub diffuse: &'a mut Image,
    pub fresnel: &'a mut Image,
    pub roughness: &'a mut Image,
}

/// Σ over {D, F, R, N} of mean over P of (1 − M̂)·mean_c |X − X̂|.
pub fn loss_material(
    maps: &MaterialViews,
    targets: &MaterialViews,
    region_hat: &Image,
    p_mask: &Mask,
    grads: Option<MaterialGradViews>,
    scale: f64,
) -> Result<f64> {
    let n = p_mask.count();
    if n == 0 {
        return Ok(0.0);
    }
    let pairs = [
        (maps.diffuse, targets.diffuse),
        (maps.fresnel, targets.fresnel),
        (maps.roughness, targets.roughness),
        (maps.normal, targets.normal),
    ];
    for (a, b) in pairs {
        a.check_shape(b, "material map")?;
        check_mask(a, Some(p_mask), "material loss")?;
    }
    let mut grads = grads;
    let mut total = 0.0;
    for (k, (a, b)) in pairs.iter().enumerate() {
        let ch = a.channels;
        for p in (0..a.len_pixels()).filter(|&p| p_mask.data[p]) {
            let wgt = 1.0 - region_hat.data[p];
            for c in 0..ch {
                let d = a.data[p * ch + c] - b.data[p * ch + c];
                total += wgt * d.abs() / (ch * n) as f64;
                if let Some(g) = grads.as_mut() {
                    let gi = match k {
                        0 => &mut *g.diffuse,
                        1 => &mut *g.fresnel,
                        2 => &mut *g.roughness,
                        _ => continue,
                    };
                    gi.data[p * ch + c] += scale * wgt * sign(d) / (ch * n) as f64;
                }
            }
        }
    }
    Ok(total)
}

/// Mean over P of M̂·mean_c |I − Î|. L1 stands in for a perceptual metric.
pub fn loss_appearance(i: &Image, i_hat: &Image, region_hat: &Image, p_mask: &Mask, grad: Option<&mut Image>, scale: f64) -> Result<f64> {
    i.check_shape(i_hat, "appearance inputs")?;
    check_mask(i, Some(p_mask), "appearance loss")?;
    let n = p_mask.count();
    if n == 0 {
        return Ok(0.0);
    }
    let ch = i.channels;
    let mut grad = grad;
    let mut total = 0.0;
    for p in (0..i.len_pixels()).filter(|&p| p_mask.data[p]) {
        let wgt = region_hat.data[p];
        for c in 0..ch {
            let d = i.data[p * ch + c] - i_hat.data[p * ch + c];
            total += wgt * d.abs();
            if let Some(g) = grad.as_deref_mut() {
                g.data[p * ch + c] += scale * wgt * sign(d) / (ch * n) as f64;
            }
        }
    }
    Ok(total / (ch * n) as f64)
}

/// Forward differences with zero at the last column/row.
fn forward_diff(x: &Image, p: usize, c: usize) -> (f64, f64) {
    let (w, h, ch) = (x.width, x.height, x.channels);
    let (px, py) = (p % w, p / w);
    let v = x.data[p * ch + c];
    let gx = if px + 1 < w { x.data[(p + 1) * ch + c] - v } else { 0.0 };
    let gy = if py + 1 < h { x.data[(p + w) * ch + c] - v } else { 0.0 };
    (gx, gy)
}

fn grad_norm(x: &Image, p: usize) -> f64 {
    (0..x.channels)
        .map(|c| {
            let (gx, gy) = forward_diff(x, p, c);
            gx * gx + gy * gy
        })
        .sum::<f64>()
        .sqrt()
}

/// Edge-aware smoothness of one map: mean(M_gt·‖∇X‖·exp(−‖∇I_gt‖)).
pub fn loss_smooth_map(x: &Image, i_gt: &Image, m_gt: &Image, grad: Option<&mut Image>, scale: f64) -> Result<f64> {
    if x.width != i_gt.width || x.height != i_gt.height || m_gt.width != x.width || m_gt.height != x.height {
        return Err(Error::Dimension("smoothness inputs differ in size".into()));
    }
    let (w, ch) = (x.width, x.channels);
    let n = x.len_pixels() as f64;
    let mut grad = grad;
    let mut total = 0.0;
    for p in 0..x.len_pixels() {
        let m = m_gt.data[p];
        if m == 0.0 {
            continue;
        }
        let e = (-grad_norm(i_gt, p)).exp();
        let norm = grad_norm(x, p);
        total += m * norm * e;
        if norm > 0.0 {
            if let Some(g) = grad.as_deref_mut() {
                let f = scale * m * e / (norm * n);
                let (px, py) = (p % w, p / w);
                for c in 0..ch {
                    let (gx, gy) = forward_diff(x, p, c);
                    if px + 1 < x.width {
                        g.data[(p + 1) * ch + c] += f * gx;
                        g.data[p * ch + c] -= f * gx;
                    }
                    if py + 1 < x.height {
                        g.data[(p + w) * ch + c] += f * gy;
                        g.data[p * ch + c] -= f * gy;
                    }
                }
            }
        }
    }
    Ok(total / n)
}

/// Σ of [`loss_smooth_map`] over `maps` (no gradients).
pub fn loss_smooth(maps: &[&Image], i_gt: &Image, m_gt: &Image) -> Result<f64> {
    maps.iter().map(|x| loss_smooth_map(x, i_gt, m_gt, None, 0.0)).sum()
}

/// Mean binary cross-entropy of Ω (clamped to [ε, 1 − ε]) against Ω_gt.
pub fn loss_label_bce(omega: &Image, omega_gt: &Mask, exclude: Option<&Mask>, grad: Option<&mut Image>, scale: f64) -> Result<f64> {
    check_mask(omega, Some(omega_gt), "label loss")?;
    check_mask(omega, exclude, "label loss")?;
    let idx: Vec<usize> = (0..omega.len_pixels()).filter(|&p| included(exclude, p)).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask("label loss"));
    }
    let n = idx.len() as f64;
    let mut grad = grad;
    let mut total = 0.0;
    for p in idx {
        let raw = omega.data[p];
        let o = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let g = if omega_gt.data[p] { 1.0 } else { 0.0 };
        total -= g * o.ln() + (1.0 - g) * (1.0 - o).ln();
        if let Some(gr) = grad.as_deref_mut() {
            if raw > BCE_EPS && raw < 1.0 - BCE_EPS {
                gr.data[p] += scale * (-g / o + (1.0 - g) / (1.0 - o)) / n;
            }
        }
    }
    Ok(total / n)
}

/// Mean of M·M_gt over included pixels: penalizes rough-region mass on
/// pixels that are glossy in the reference.
pub fn loss_region(m: &Image, m_gt: &Mask, exclude: Option<&Mask>, grad: Option<&mut Image>, scale: f64) -> Result<f64> {
    check_mask(m, Some(m_gt), "region loss")?;
    let idx: Vec<usize> = (0..m.len_pixels()).filter(|&p| included(exclude, p)).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask("region loss"));
    }
    let n = idx.len() as f64;
    let mut grad = grad;
    let mut total = 0.0;
    for p in idx {
        if m_gt.data[p] {
            total += m.data[p];
            if let Some(g) = grad.as_deref_mut() {
                g.data[p] += scale / n;
            }
        }
    }
    Ok(total / n)
}

/// Mean over glossy reference pixels of mean_c |N − N_gt|.
pub fn loss_normal(n: &Image, n_gt: &Image, m_gt: &Mask, exclude: Option<&Mask>) -> Result<f64> {
    n.check_shape(n_gt, "normal maps")?;
    let idx: Vec<usize> = (0..n.len_pixels()).filter(|&p| included(exclude, p)).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask("normal loss"));
    }
    let total: f64 = idx
        .iter()
        .filter(|&&p| m_gt.data[p])
        .map(|&p| (0..3).map(|c| (n.data[3 * p + c] - n_gt.data[3 * p + c]).abs()).sum::<f64>() / 3.0)
        .sum();
    Ok(total / idx.len() as f64)
}

/// World-space normals from central differences of the unprojected depth,
/// oriented toward the camera; zero where a neighbor is empty.
pub fn depth_normals(depth: &Image, alpha: &Image, cam: &Camera) -> Image {
    let (w, h) = (depth.width, depth.height);
    let eye = cam.center();
    let valid = |x: usize, y: usize| alpha.data[y * w + x] >= EMPTY_ALPHA;
    let point = |x: usize, y: usize| cam.unproject(x as f64, y as f64, depth.data[y * w + x]);
    let mut out = Image::new(w, h, 3);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if !(valid(x, y) && valid(x - 1, y) && valid(x + 1, y) && valid(x, y - 1) && valid(x, y + 1)) {
                continue;
            }
            let tx = point(x + 1, y) - point(x - 1, y);
            let ty = point(x, y + 1) - point(x, y - 1);
            let n = tx.cross(&ty);
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            let mut n: Vec3 = n / len;
            if n.dot(&(eye - point(x, y))) < 0.0 {
                n = -n;
            }
            out.set_vec3(y * w + x, &n);
        }
    }
    out
}

/// mean(1 − N·N_d) over pixels with a valid depth normal.
pub fn loss_depth_normal(n: &Image, n_d: &Image, exclude: Option<&Mask>) -> Result<f64> {
    n.check_shape(n_d, "normal maps")?;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in (0..n.len_pixels()).filter(|&p| included(exclude, p)) {
        let nd = n_d.vec3_at(p);
        if nd.norm_squared() == 0.0 {
            continue;
        }
        total += 1.0 - n.vec3_at(p).dot(&nd);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Σ_{i,j} w_i·w_j·|d_i − d_j| of one pixel's composited samples.
pub fn depth_distortion_pixel(samples: &[(f64, f64)]) -> f64 {
    let mut s: Vec<(f64, f64)> = samples.to_vec();
    s.sort_by(|a, b| a.1.total_cmp(&b.1));
    // With depths ascending, Σ_{i,j} = 2 Σ_i w_i (d_i·W_<i − (wd)_<i).
    let (mut wsum, mut wdsum, mut total) = (0.0, 0.0, 0.0);
    for (wi, di) in s {
        total += 2.0 * wi * (di * wsum - wdsum);
        wsum += wi;
        wdsum += wi * di;
    }
    total
}

/// Mean per-pixel depth distortion in NDC over included pixels.
pub fn loss_depth_distortion(gb: &GBuffer, cam: &Camera, exclude: Option<&Mask>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut buf = Vec::new();
    for p in (0..gb.pixel_count()).filter(|&p| included(exclude, p)) {
        buf.clear();
        buf.extend(gb.contributions.pixel(p).iter().map(|c| (c.weight, cam.ndc_depth(c.depth))));
        total += depth_distortion_pixel(&buf);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
