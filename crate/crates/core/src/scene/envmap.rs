use crate::image::Image;
use crate::math::Vec3;

use super::Violation;

/// Cube faces in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeFace {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::PosX,
        CubeFace::NegX,
        CubeFace::PosY,
        CubeFace::NegY,
        CubeFace::PosZ,
        CubeFace::NegZ,
    ];

    pub fn file_stem(self) -> &'static str {
        ["px", "nx", "py", "ny", "pz", "nz"][self as usize]
    }

    /// Face and (u, v) in [0,1]² hit by a direction (OpenGL cube convention).
    pub fn locate(d: &Vec3) -> (CubeFace, f64, f64) {
        let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
        let (face, ma, sc, tc) = if ax >= ay && ax >= az {
            if d.x >= 0.0 {
                (CubeFace::PosX, ax, -d.z, -d.y)
            } else {
                (CubeFace::NegX, ax, d.z, -d.y)
            }
        } else if ay >= az {
            if d.y >= 0.0 {
                (CubeFace::PosY, ay, d.x, d.z)
            } else {
                (CubeFace::NegY, ay, d.x, -d.z)
            }
        } else if d.z >= 0.0 {
            (CubeFace::PosZ, az, d.x, -d.y)
        } else {
            (CubeFace::NegZ, az, -d.x, -d.y)
        };
        (face, 0.5 * (sc / ma + 1.0), 0.5 * (tc / ma + 1.0))
    }

    /// Unnormalized direction through (u, v) on this face; inverse of `locate`.
    pub fn direction(self, u: f64, v: f64) -> Vec3 {
        let (sc, tc) = (2.0 * u - 1.0, 2.0 * v - 1.0);
        match self {
            CubeFace::PosX => Vec3::new(1.0, -tc, -sc),
            CubeFace::NegX => Vec3::new(-1.0, -tc, sc),
            CubeFace::PosY => Vec3::new(sc, 1.0, tc),
            CubeFace::NegY => Vec3::new(sc, -1.0, -tc),
            CubeFace::PosZ => Vec3::new(sc, -tc, 1.0),
            CubeFace::NegZ => Vec3::new(-sc, -tc, -1.0),
        }
    }
}

/// Procedural environment patterns used by the scene generator.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    Constant([f32; 3]),
    /// Vertical gradient over world z: ground below the horizon, horizon to
    /// zenith above it.
    Gradient {
        ground: [f32; 3],
        horizon: [f32; 3],
        zenith: [f32; 3],
    },
    /// `cells`×`cells` checkerboard on every face.
    Checker {
        a: [f32; 3],
        b: [f32; 3],
        cells: usize,
    },
}

/// Cube map of direct radiance with a prefiltered mip chain.
///
/// Level p+1 is the binomial blur (σ = 1 texel, clamp-to-edge, per face)
/// of level p followed by 2×2 box decimation, so the whole chain follows
/// deterministically from level 0.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    size: usize,
    mips: Vec<[Image; 6]>,
}

impl EnvironmentMap {
    /// Builds the map from its level-0 faces. `size` must be divisible by
    /// 2^(levels-1); the error lists the offending condition.
    pub fn from_faces(faces: [Image; 6], levels: usize) -> Result<Self, String> {
        let size = faces[0].width;
        if levels == 0 {
            return Err("environment needs at least one level".into());
        }
        if size == 0 || !size.is_multiple_of(1 << (levels - 1)) {
            return Err(format!("face size {size} not divisible by 2^{}", levels - 1));
        }
        for f in &faces {
            if f.width != size || f.height != size || f.channels != 3 {
                return Err(format!(
                    "face is {}x{}x{}, expected {size}x{size}x3",
                    f.width, f.height, f.channels
                ));
            }
        }
        let mut mips = vec![faces];
        for _ in 1..levels {
            let prev = mips.last().unwrap();
            let next: [Image; 6] = std::array::from_fn(|i| downsample_box2(&prev[i].blur_binomial()));
            mips.push(next);
        }
        Ok(EnvironmentMap { size, mips })
    }

    pub fn constant(size: usize, levels: usize, value: [f32; 3]) -> Self {
        Self::generate(&EnvKind::Constant(value), size, levels)
    }

    pub fn generate(kind: &EnvKind, size: usize, levels: usize) -> Self {
        let faces = CubeFace::ALL.map(|face| {
            Image::from_fn(size, size, 3, |x, y, c| {
                let u = (x as f64 + 0.5) / size as f64;
                let v = (y as f64 + 0.5) / size as f64;
                let d = face.direction(u, v).normalize();
                match kind {
                    EnvKind::Constant(k) => k[c] as f64,
                    EnvKind::Gradient { ground, horizon, zenith } => {
                        if d.z < 0.0 {
                            let t = (-d.z).min(1.0);
                            horizon[c] as f64 * (1.0 - t) * 0.5 + ground[c] as f64 * (0.5 + 0.5 * t)
                        } else {
                            let t = d.z.min(1.0);
                            horizon[c] as f64 * (1.0 - t) + zenith[c] as f64 * t
                        }
                    }
                    EnvKind::Checker { a, b, cells } => {
                        let cell = (size / cells.max(&1)).max(1);
                        if (x / cell + y / cell).is_multiple_of(2) {
                            a[c] as f64
                        } else {
                            b[c] as f64
                        }
                    }
                }
            })
        });
        Self::from_faces(faces, levels).expect("generated faces are consistent")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn levels(&self) -> usize {
        self.mips.len()
    }

    pub fn face(&self, level: usize, face: CubeFace) -> &Image {
        &self.mips[level][face as usize]
    }

    pub fn base_faces(&self) -> &[Image; 6] {
        &self.mips[0]
    }

    /// Bilinear lookup on one mip level with clamp at face edges.
    pub fn sample_level(&self, dir: &Vec3, level: usize) -> Vec3 {
        let (face, u, v) = CubeFace::locate(dir);
        let img = &self.mips[level][face as usize];
        bilinear_clamped(img, u * img.width as f64 - 0.5, v * img.height as f64 - 0.5)
    }

    /// Radiance toward `dir` at fractional mip `level`, linear across levels.
    pub fn sample(&self, dir: &Vec3, level: f64) -> Vec3 {
        let (lo, frac) = self.level_split(level);
        if frac == 0.0 {
            return self.sample_level(dir, lo);
        }
        self.sample_level(dir, lo) * (1.0 - frac) + self.sample_level(dir, lo + 1) * frac
    }

    /// d/dlevel of `sample` (right derivative at integer levels; zero when
    /// the level is clamped or the chain has a single level).
    pub fn sample_level_derivative(&self, dir: &Vec3, level: f64) -> Vec3 {
        let p = self.levels();
        if p < 2 || !(0.0..=(p - 1) as f64).contains(&level) {
            return Vec3::zeros();
        }
        let (lo, _) = self.level_split(level);
        self.sample_level(dir, lo + 1) - self.sample_level(dir, lo)
    }

    fn level_split(&self, level: f64) -> (usize, f64) {
        let p = self.levels();
        if p == 1 {
            return (0, 0.0);
        }
        let l = level.clamp(0.0, (p - 1) as f64);
        let lo = (l.floor() as usize).min(p - 2);
        (lo, l - lo as f64)
    }

    pub(crate) fn violations(&self) -> Vec<Violation> {
        let bad = self
            .mips
            .iter()
            .flatten()
            .flat_map(|f| f.data.iter())
            .any(|v| !v.is_finite() || *v < 0.0);
        if bad {
            vec![Violation {
                location: "environment".into(),
                message: "radiance not finite and non-negative".into(),
            }]
        } else {
            Vec::new()
        }
    }
}

pub(crate) fn bilinear_clamped(img: &Image, s: f64, t: f64) -> Vec3 {
    let s = s.clamp(0.0, (img.width - 1) as f64);
    let t = t.clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (s.floor() as usize, t.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (s - x0 as f64, t - y0 as f64);
    let px = |x: usize, y: usize| img.vec3_at(y * img.width + x);
    if fx == 0.0 && fy == 0.0 {
        return px(x0, y0);
    }
    px(x0, y0) * ((1.0 - fx) * (1.0 - fy))
        + px(x1, y0) * (fx * (1.0 - fy))
        + px(x0, y1) * ((1.0 - fx) * fy)
        + px(x1, y1) * (fx * fy)
}

fn downsample_box2(img: &Image) -> Image {
    Image::from_fn(img.width / 2, img.height / 2, img.channels, |x, y, c| {
        0.25 * (img.get(2 * x, 2 * y, c)
            + img.get(2 * x + 1, 2 * y, c)
            + img.get(2 * x, 2 * y + 1, c)
            + img.get(2 * x + 1, 2 * y + 1, c))
    })
}
