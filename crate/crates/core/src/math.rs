//! Small geometric helpers shared by the renderer and the tracer.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[inline]
pub fn vec3(v: [f32; 3]) -> Vec3 {
    Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

#[inline]
pub fn to_f32(v: &Vec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

/// Rotation matrix of a (w, x, y, z) quaternion. The quaternion is
/// normalized first so slightly denormalized inputs still give a rotation.
pub fn rotation_matrix(q: [f32; 4]) -> Mat3 {
    let q = Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Σ = R·diag(s²)·Rᵀ.
pub fn covariance(scale: [f32; 3], rotation: [f32; 4]) -> Mat3 {
    let r = rotation_matrix(rotation);
    let s = vec3(scale);
    let d = Mat3::from_diagonal(&s.component_mul(&s));
    r * d * r.transpose()
}

/// Quaternion (w, x, y, z) rotating +z onto `n`.
pub fn quat_from_z_to(n: &Vec3) -> [f32; 4] {
    let q = UnitQuaternion::rotation_between(&Vec3::z(), n)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    let q = q.into_inner();
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

/// Number of non-constant SH coefficients for a degree.
pub const fn sh_rest_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1) - 1) as usize
}

const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real SH basis values for bands 1..=degree evaluated at unit `dir`.
/// Band 0 is folded into the stored base color, so it is not returned.
pub fn sh_basis_rest(degree: u32, dir: &Vec3) -> Vec<f64> {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = Vec::with_capacity(sh_rest_count(degree));
    if degree >= 1 {
        out.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend([
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend([
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]);
    }
    out
}

/// Color seen along `dir` and the per-channel mask of which channels were
/// not clamped at zero (needed by the backward pass).
pub fn eval_color(base: [f32; 3], rest: &[[f32; 3]], basis: &[f64]) -> (Vec3, [bool; 3]) {
    let mut c = vec3(base);
    for (coef, b) in rest.iter().zip(basis) {
        c += vec3(*coef) * *b;
    }
    let live = [c.x > 0.0, c.y > 0.0, c.z > 0.0];
    (c.map(|v| v.max(0.0)), live)
}

#[inline]
pub fn luminance(v: &Vec3) -> f64 {
    (v.x + v.y + v.z) / 3.0
}
