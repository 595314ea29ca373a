//! Rigid-body poses, Rodrigues' rotation formula, and the inverse-depth warp.
//!
//! A pose `p = (t, ω)` describes the rigid transform `T(p) = [R(ω) | t]` that
//! maps 3D points in the reference camera frame into the source camera frame.
//! A reference pixel with normalized coordinates `x` and inverse depth `d`
//! lands in the source image at `⟨R·x̃ + d·t⟩`, where `x̃ = (u, v, 1)` and
//! `⟨·⟩` is the pinhole projection.

use nalgebra::{Matrix2x6, Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::dual::{Dual, Real};
use crate::error::{Error, Result};

/// Points with depth at or below this value are reported as behind the camera.
pub const EPSILON_Z: f64 = 1e-6;

/// Below this squared angle the trigonometric coefficients switch to series.
const SMALL_ANGLE_SQ: f64 = 1e-4;

type V3<S> = [S; 3];
type M3<S> = [[S; 3]; 3];

/// Camera motion as translation plus exponential coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6D {
    pub t: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6D {
    /// Builds a pose, reducing `omega` into the canonical range `‖ω‖ ≤ π`.
    pub fn new(t: Vector3<f64>, omega: Vector3<f64>) -> Self {
        let omega = if omega.norm() > std::f64::consts::PI {
            rotation_log(&rodrigues(&omega).0)
        } else {
            omega
        };
        Pose6D { t, omega }
    }

    pub fn identity() -> Self {
        Pose6D {
            t: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    /// Parameters in the fixed order `(t_x, t_y, t_z, ω_x, ω_y, ω_z)`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.t.x,
            self.t.y,
            self.t.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn rotation(&self) -> Rotation3 {
        rodrigues(&self.omega)
    }

    /// The homogeneous 4×4 transform `T(p)`.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let r = self.rotation().0;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    /// Recovers a pose from the upper 3×4 block of a rigid transform.
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        Pose6D {
            t,
            omega: rotation_log(&r),
        }
    }

    /// The exact SE(3) inverse: `T(p)⁻¹ = [Rᵀ | −Rᵀt]`.
    pub fn inverse(&self) -> Self {
        let r = self.rotation().0;
        Pose6D {
            t: -(r.transpose() * self.t),
            omega: -self.omega,
        }
    }

    /// Inverse together with the 6×6 Jacobian of its parameters.
    pub fn inverse_with_jacobian(&self) -> (Self, Matrix6<f64>) {
        let x = self.to_vector();
        let v: [Dual<6>; 6] = std::array::from_fn(|i| Dual::var(x[i], i));
        let r = rodrigues_generic([v[3], v[4], v[5]]);
        let mut out = [Dual::<6>::cst(0.0); 6];
        for i in 0..3 {
            out[i] = -(r[0][i] * v[0] + r[1][i] * v[1] + r[2][i] * v[2]);
            out[i + 3] = -v[i + 3];
        }
        unpack_dual(&out)
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(self.omega.iter()).all(|x| x.is_finite())
    }
}

/// A 3×3 orthonormal matrix with determinant +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3(pub Matrix3<f64>);

impl Rotation3 {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Config(format!(
                "intrinsics need positive focal lengths, got fx={fx} fy={fy}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Pixel `(col, row)` to normalized image-plane coordinates.
    #[inline]
    pub fn normalize(&self, col: f64, row: f64) -> NormalizedPoint {
        NormalizedPoint {
            u: (col - self.cx) / self.fx,
            v: (row - self.cy) / self.fy,
        }
    }

    /// Normalized coordinates back to pixel `(col, row)`.
    #[inline]
    pub fn to_pixel(&self, x: NormalizedPoint) -> (f64, f64) {
        (self.fx * x.u + self.cx, self.fy * x.v + self.cy)
    }

    /// Intrinsics after `level` factor-2 downsamplings.
    ///
    /// Pixel centers move as `c → (c + 0.5) / 2 − 0.5` for each halving.
    pub fn at_level(&self, level: usize) -> Self {
        let mut k = *self;
        for _ in 0..level {
            k.fx /= 2.0;
            k.fy /= 2.0;
            k.cx = (k.cx + 0.5) / 2.0 - 0.5;
            k.cy = (k.cy + 0.5) / 2.0 - 0.5;
        }
        k
    }
}

/// Normalized image-plane coordinates (pixels pre-multiplied by `K⁻¹`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedPoint {
    pub u: f64,
    pub v: f64,
}

impl NormalizedPoint {
    pub fn new(u: f64, v: f64) -> Self {
        NormalizedPoint { u, v }
    }

    /// Homogeneous lift `(u, v, 1)`.
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

/// Rotation matrix `exp([ω]ₓ)`.
pub fn rodrigues(omega: &Vector3<f64>) -> Rotation3 {
    let r = rodrigues_generic([omega.x, omega.y, omega.z]);
    Rotation3(Matrix3::from_fn(|i, j| r[i][j]))
}

/// Rotation matrix and its three partial derivatives `∂R/∂ω_k`.
pub fn rodrigues_with_derivatives(omega: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let w: [Dual<3>; 3] = std::array::from_fn(|i| Dual::var(omega[i], i));
    let r = rodrigues_generic(w);
    let m = Matrix3::from_fn(|i, j| r[i][j].re);
    let d = std::array::from_fn(|k| Matrix3::from_fn(|i, j| r[i][j].eps[k]));
    (m, d)
}

/// Exponential coordinates of a rotation matrix, with `‖ω‖ ≤ π`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let m: M3<f64> = std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]));
    let w = rotation_log_generic(&m);
    Vector3::new(w[0], w[1], w[2])
}

/// Pinhole projection `⟨P⟩ = (x/z, y/z)`.
#[inline]
pub fn project(p: &Vector3<f64>) -> Result<NormalizedPoint> {
    if p.z <= EPSILON_Z {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok(NormalizedPoint {
        u: p.x / p.z,
        v: p.y / p.z,
    })
}

/// Warps a reference point with inverse depth `d` into the source view.
pub fn warp_point(x: NormalizedPoint, p: &Pose6D, d: f64) -> Result<NormalizedPoint> {
    let r = p.rotation().0;
    warp_with_rotation(x, &r, &p.t, d)
}

/// Same as [`warp_point`] with the rotation matrix already evaluated.
#[inline]
pub fn warp_with_rotation(
    x: NormalizedPoint,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    d: f64,
) -> Result<NormalizedPoint> {
    project(&(r * x.homogeneous() + d * t))
}

/// `∂W(x; p, d)/∂p` at `p = 0`, columns `(t_x, t_y, t_z, ω_x, ω_y, ω_z)`.
pub fn warp_jacobian_identity(x: NormalizedPoint, d: f64) -> Matrix2x6<f64> {
    let (u, v) = (x.u, x.v);
    Matrix2x6::new(
        d,
        0.0,
        -d * u,
        -u * v,
        1.0 + u * u,
        -v,
        0.0,
        d,
        -d * v,
        -(1.0 + v * v),
        u * v,
        u,
    )
}

/// Left multiplicative update `T(delta) · T(p)`.
///
/// `delta` is the Gauss-Newton increment `J⁺W(I − I'_p)` solved on the
/// reference image; with that residual sign the increment already points
/// toward the optimum, so it is applied without inversion.
pub fn compose_left(delta: &Pose6D, p: &Pose6D) -> Pose6D {
    let out = compose_left_generic(&vec6(delta), &vec6(p));
    Pose6D {
        t: Vector3::new(out[0], out[1], out[2]),
        omega: Vector3::new(out[3], out[4], out[5]),
    }
}

/// [`compose_left`] together with its Jacobians with respect to `delta` and `p`.
pub fn compose_left_with_jacobians(
    delta: &Pose6D,
    p: &Pose6D,
) -> (Pose6D, Matrix6<f64>, Matrix6<f64>) {
    let a = delta.to_vector();
    let b = p.to_vector();
    let da: [Dual<12>; 6] = std::array::from_fn(|i| Dual::var(a[i], i));
    let db: [Dual<12>; 6] = std::array::from_fn(|i| Dual::var(b[i], i + 6));
    let out = compose_left_generic(&da, &db);
    let pose = Pose6D {
        t: Vector3::new(out[0].re, out[1].re, out[2].re),
        omega: Vector3::new(out[3].re, out[4].re, out[5].re),
    };
    let jd = Matrix6::from_fn(|i, j| out[i].eps[j]);
    let jp = Matrix6::from_fn(|i, j| out[i].eps[j + 6]);
    (pose, jd, jp)
}

fn vec6(p: &Pose6D) -> [f64; 6] {
    [p.t.x, p.t.y, p.t.z, p.omega.x, p.omega.y, p.omega.z]
}

fn unpack_dual(out: &[Dual<6>; 6]) -> (Pose6D, Matrix6<f64>) {
    let pose = Pose6D {
        t: Vector3::new(out[0].re, out[1].re, out[2].re),
        omega: Vector3::new(out[3].re, out[4].re, out[5].re),
    };
    (pose, Matrix6::from_fn(|i, j| out[i].eps[j]))
}

pub(crate) fn compose_left_generic<S: Real>(delta: &[S; 6], p: &[S; 6]) -> [S; 6] {
    let rd = rodrigues_generic([delta[3], delta[4], delta[5]]);
    let rp = rodrigues_generic([p[3], p[4], p[5]]);
    let r = mat_mul(&rd, &rp);
    let tp = [p[0], p[1], p[2]];
    let rt = mat_vec(&rd, &tp);
    let w = rotation_log_generic(&r);
    [
        rt[0] + delta[0],
        rt[1] + delta[1],
        rt[2] + delta[2],
        w[0],
        w[1],
        w[2],
    ]
}

pub(crate) fn rodrigues_generic<S: Real>(w: V3<S>) -> M3<S> {
    let th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b) = if th2.re() < SMALL_ANGLE_SQ {
        // sin θ / θ and (1 − cos θ) / θ² as series in θ²
        let c = S::cst;
        let a = c(1.0) - th2 / c(6.0) * (c(1.0) - th2 / c(20.0) * (c(1.0) - th2 / c(42.0)));
        let b = c(0.5) - th2 / c(24.0) * (c(1.0) - th2 / c(30.0) * (c(1.0) - th2 / c(56.0)));
        (a, b)
    } else {
        let th = th2.sqrt();
        (th.sin() / th, (S::cst(1.0) - th.cos()) / th2)
    };
    let zero = S::cst(0.0);
    let one = S::cst(1.0);
    let k = [[zero, -w[2], w[1]], [w[2], zero, -w[0]], [-w[1], w[0], zero]];
    let k2 = mat_mul(&k, &k);
    let mut r = [[zero; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { one } else { zero };
            r[i][j] = id + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

pub(crate) fn rotation_log_generic<S: Real>(r: &M3<S>) -> V3<S> {
    let half = S::cst(0.5);
    let v = [
        (r[2][1] - r[1][2]) * half,
        (r[0][2] - r[2][0]) * half,
        (r[1][0] - r[0][1]) * half,
    ];
    let c = (r[0][0] + r[1][1] + r[2][2] - S::cst(1.0)) * half;
    let s2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if c.re() > 0.0 && s2.re() < SMALL_ANGLE_SQ {
        // θ / sin θ with θ = asin(s), as a series in s²
        let k = S::cst;
        let f = k(1.0)
            + s2 * (k(1.0 / 6.0)
                + s2 * (k(3.0 / 40.0) + s2 * (k(5.0 / 112.0) + s2 * k(35.0 / 1152.0))));
        return [f * v[0], f * v[1], f * v[2]];
    }
    let s = s2.sqrt();
    if s.re() > 1e-6 {
        let th = s.atan2(c);
        let f = th / s;
        return [f * v[0], f * v[1], f * v[2]];
    }
    // θ near π: the axis comes from the symmetric part, (R + Rᵀ)/2 = cI + (1 − c)aaᵀ.
    let th = s.atan2(c);
    let one_minus_c = S::cst(1.0) - c;
    let sym = |i: usize, j: usize| ((r[i][j] + r[j][i]) * half - if i == j { c } else { S::cst(0.0) }) / one_minus_c;
    let k = (0..3)
        .max_by(|&a, &b| sym(a, a).re().total_cmp(&sym(b, b).re()))
        .unwrap_or(0);
    let ak = sym(k, k).sqrt();
    let mut axis = [S::cst(0.0); 3];
    for (j, a) in axis.iter_mut().enumerate() {
        *a = if j == k { ak } else { sym(j, k) / ak };
    }
    let dot = axis[0].re() * v[0].re() + axis[1].re() * v[1].re() + axis[2].re() * v[2].re();
    let th = if dot < 0.0 { -th } else { th };
    [th * axis[0], th * axis[1], th * axis[2]]
}

fn mat_mul<S: Real>(a: &M3<S>, b: &M3<S>) -> M3<S> {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j])
    })
}

fn mat_vec<S: Real>(a: &M3<S>, x: &V3<S>) -> V3<S> {
    std::array::from_fn(|i| a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2])
}
