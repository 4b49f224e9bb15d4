//! Central finite-difference verification of analytic material gradients.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{Attr, MaterialGrads};
use crate::error::Result;
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckOpts {
    /// Initial central-difference step.
    pub h: f64,
    /// Smallest step tried before a coordinate is declared non-smooth.
    pub min_h: f64,
    /// Relative agreement required between the h and h/2 estimates.
    pub agree: f64,
    /// Relative bound on the analytic second difference across the step.
    pub kink: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Primitives to check; all when `None`.
    pub prims: Option<Vec<usize>>,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            h: 1e-3,
            min_h: 1e-3 / 64.0,
            agree: 2e-4,
            kink: 1e-4,
            tol: 1e-3,
            prims: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GroupStats {
    pub checked: usize,
    pub excluded: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradFailure {
    pub prim: usize,
    pub param: usize,
    pub attr: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradReport {
    pub groups: BTreeMap<&'static str, GroupStats>,
    /// Coordinates above `tol`.
    pub failures: Vec<GradFailure>,
    /// Coordinates with a kink or jump inside every tried step.
    pub non_smooth: Vec<(usize, usize)>,
    pub checked: usize,
    pub max_rel: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn excluded_fraction(&self) -> f64 {
        let total = self.checked + self.non_smooth.len();
        if total == 0 {
            0.0
        } else {
            self.non_smooth.len() as f64 / total as f64
        }
    }
}

/// |a − f| / max(|a|, |f|, 1e-6).
pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
}

enum Outcome {
    Smooth { numeric: f64 },
    NonSmooth,
}

/// Compares the analytic gradient of `objective` at `scene` with central
/// differences for every material coordinate. Steps act on the stored f32
/// values and the realized step is used in the quotient.
pub fn gradcheck<F>(scene: &Scene, objective: F, opts: &GradCheckOpts) -> Result<GradReport>
where
    F: Fn(&Scene) -> Result<(f64, MaterialGrads)> + Sync,
{
    let (_, base) = objective(scene)?;
    let layout = base.layout;
    let prims: Vec<usize> = opts.prims.clone().unwrap_or_else(|| (0..scene.primitives.len()).collect());
    let coords: Vec<(usize, usize)> = prims.iter().flat_map(|&i| (0..layout.len()).map(move |j| (i, j))).collect();

    let probe = |i: usize, j: usize, h: f64| -> Result<(f64, f64, f64)> {
        let x0 = layout.get(&scene.primitives[i], j);
        let (xp, xm) = ((x0 as f64 + h) as f32, (x0 as f64 - h) as f32);
        let mut s = scene.clone();
        layout.set(&mut s.primitives[i], j, xp);
        let (fp, gp) = objective(&s)?;
        layout.set(&mut s.primitives[i], j, xm);
        let (fm, gm) = objective(&s)?;
        let n = layout.len();
        Ok(((fp - fm) / (xp as f64 - xm as f64), gp.data[i * n + j], gm.data[i * n + j]))
    };

    let outcomes: Vec<Result<Outcome>> = coords
        .par_iter()
        .map(|&(i, j)| {
            let a0 = base.prim(i)[j];
            let mut h = opts.h;
            let mut prev = probe(i, j, h)?;
            while h / 2.0 >= opts.min_h {
                let cur = probe(i, j, h / 2.0)?;
                let (fd_h, fd_h2) = (prev.0, cur.0);
                let agree = (fd_h - fd_h2).abs() <= opts.agree * fd_h.abs().max(fd_h2.abs()) + 1e-10;
                let (ap, am) = (cur.1, cur.2);
                let second = (ap + am - 2.0 * a0).abs();
                let smooth_grad = second <= opts.kink * a0.abs().max(ap.abs()).max(am.abs()).max(1e-6);
                if agree && smooth_grad {
                    return Ok(Outcome::Smooth { numeric: fd_h2 });
                }
                prev = cur;
                h /= 2.0;
            }
            Ok(Outcome::NonSmooth)
        })
        .collect();

    let mut report = GradReport::default();
    let mut sums: BTreeMap<&'static str, f64> = BTreeMap::new();
    for (&(i, j), out) in coords.iter().zip(outcomes) {
        let attr: Attr = layout.attr(j);
        let stats = report.groups.entry(attr.name()).or_default();
        match out? {
            Outcome::NonSmooth => {
                stats.excluded += 1;
                report.non_smooth.push((i, j));
            }
            Outcome::Smooth { numeric } => {
                let a = base.prim(i)[j];
                let rel = relative_error(a, numeric);
                stats.checked += 1;
                stats.max_rel = stats.max_rel.max(rel);
                *sums.entry(attr.name()).or_default() += rel;
                report.checked += 1;
                report.max_rel = report.max_rel.max(rel);
                if rel > opts.tol {
                    report.failures.push(GradFailure {
                        prim: i,
                        param: j,
                        attr: attr.name(),
                        analytic: a,
                        numeric,
                        rel,
                    });
                }
            }
        }
    }
    for (name, stats) in report.groups.iter_mut() {
        if stats.checked > 0 {
            stats.mean_rel = sums.get(name).copied().unwrap_or(0.0) / stats.checked as f64;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::testutil::{glossy_scene, offset_targets};
    use crate::optim::{view_objective, LossWeights, TermSet};
    use crate::render::RenderOpts;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn full_objective_matches_differences() {
        let scene = glossy_scene(30, 11, 32);
        let (train, inpaint) = offset_targets(&scene, 3);
        let cam = scene.cameras[0].clone();
        let frame = crate::render::render_view(&scene, &cam, &RenderOpts::default()).unwrap();
        assert!(frame.specular.diagnostics.glossy > 20);
        assert!(frame.specular.traces.iter().flatten().any(|t| !t.contributions.is_empty()));
        let weights = LossWeights::default();
        let obj = |s: &Scene| view_objective(s, &cam, Some(&train), Some(&inpaint), &TermSet::ALL, &weights, &RenderOpts::default());
        let report = gradcheck(&scene, obj, &GradCheckOpts::default()).unwrap();
        for (name, g) in &report.groups {
            eprintln!("{name}: checked {} excluded {} max {:.2e} mean {:.2e}", g.checked, g.excluded, g.max_rel, g.mean_rel);
        }
        for f in report.failures.iter().take(10) {
            eprintln!("{f:?}");
        }
        assert!(report.passed(), "max rel {:.3e}", report.max_rel);
        assert!(report.excluded_fraction() < 0.05, "excluded {:.3}", report.excluded_fraction());
    }
}
