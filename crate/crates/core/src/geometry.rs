//! Gaussian primitive math: quaternions, covariances, pinhole cameras and
//! the EWA projection of 3D Gaussians onto the image plane.
//!
//! Conventions: quaternions are scalar-first `(w, x, y, z)`; cameras are
//! OpenCV-style (x right, y down, z forward) and pixel `(i, j)` is sampled
//! at the continuous image coordinate `(i, j)`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};

/// Added to both diagonal entries of every screen-space covariance (px²).
pub const LOWPASS: f64 = 0.3;

/// Default near-plane distance in normalized scene units.
pub const DEFAULT_NEAR: f64 = 0.01;

/// Screen extent radius in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;

const ROTATION_TOL: f64 = 1e-9;

/// Rotation matrix of a unit quaternion. No normalization is applied.
pub(crate) fn rotation_from_unit_quat(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `L(R(q))` with respect to the unit quaternion components,
/// given `dL/dR`.
pub(crate) fn rotation_vjp(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let gw = -z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)];
    let gx = y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
        + z * g[(2, 0)]
        + w * g[(2, 1)]
        - 2.0 * x * g[(2, 2)];
    let gy = -2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
        - w * g[(2, 0)]
        + z * g[(2, 1)]
        - 2.0 * y * g[(2, 2)];
    let gz = -2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
        - 2.0 * z * g[(1, 1)]
        + y * g[(1, 2)]
        + x * g[(2, 0)]
        + y * g[(2, 1)];
    Vector4::new(2.0 * gw, 2.0 * gx, 2.0 * gy, 2.0 * gz)
}

fn normalize_quat(q: &Vector4<f64>) -> Result<Vector4<f64>> {
    let n = q.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid(format!(
            "quaternion {q:?} has zero or non-finite norm"
        )));
    }
    Ok(q / n)
}

/// Rotation matrix of `quat` after renormalizing it to unit length.
pub fn quat_to_rotation(quat: [f64; 4]) -> Result<Matrix3<f64>> {
    let q = normalize_quat(&Vector4::from(quat))?;
    Ok(rotation_from_unit_quat(&q))
}

/// `Σ = R S Sᵀ Rᵀ`. Computed as `M Mᵀ` with `M = R S`, which is bit-exactly symmetric.
pub fn build_covariance(quat: [f64; 4], scale: [f64; 3]) -> Result<Matrix3<f64>> {
    if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!(
            "scales must be positive, got {scale:?}"
        )));
    }
    let r = quat_to_rotation(quat)?;
    let m = r * Matrix3::from_diagonal(&Vector3::from(scale));
    Ok(m * m.transpose())
}

/// One splat.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vector3<f64>,
    pub quat: Vector4<f64>,
    pub scale: Vector3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub feature: Vec<f64>,
}

impl GaussianPrimitive {
    /// Validates every invariant and stores the normalized quaternion.
    pub fn new(
        mean: [f64; 3],
        quat: [f64; 4],
        scale: [f64; 3],
        color: [f64; 3],
        opacity: f64,
        feature: Vec<f64>,
    ) -> Result<Self> {
        let quat = normalize_quat(&Vector4::from(quat))?;
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!(
                "scales must be positive, got {scale:?}"
            )));
        }
        if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid(format!("color {color:?} outside [0,1]")));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::invalid(format!("opacity {opacity} outside (0,1)")));
        }
        if mean.iter().chain(feature.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite mean or feature"));
        }
        Ok(Self {
            mean: Vector3::from(mean),
            quat,
            scale: Vector3::from(scale),
            color: Vector3::from(color),
            opacity,
            feature,
        })
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let m = rotation_from_unit_quat(&self.quat) * Matrix3::from_diagonal(&self.scale);
        m * m.transpose()
    }
}

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
        near: f64,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
            near,
        };
        cam.validate(ROTATION_TOL)?;
        Ok(cam)
    }

    /// Checks intrinsics, image size, near plane and rotation orthonormality at `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::invalid(format!(
                "image size {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if !(self.near > 0.0) {
            return Err(Error::invalid(format!(
                "near plane {} must be positive",
                self.near
            )));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite || !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(Error::invalid(
                "camera intrinsics/extrinsics must be finite, focal > 0",
            ));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        if err > tol || (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal with det +1 (orthogonality error {err:e}, det {det})"
            )));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        near: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up vector is parallel to the viewing direction"))?;
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
            near,
        )
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn project_point(&self, t: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Local affine approximation of the perspective map at camera-space `t`.
pub fn perspective_jacobian(t: &Vector3<f64>, fx: f64, fy: f64) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(fx * iz, 0.0, -fx * t.x * iz2, 0.0, fy * iz, -fy * t.y * iz2)
}

/// A Gaussian after projection to screen space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub z_cam: f64,
    pub conic: Matrix2<f64>,
    pub extent: f64,
}

impl ProjectedGaussian {
    /// Radius of the `sigmas`-standard-deviation circle enclosing the footprint.
    pub fn radius(&self, sigmas: f64) -> f64 {
        self.extent / EXTENT_SIGMAS * sigmas
    }

    /// Whether the square of half-width `radius` around the mean touches any pixel sample.
    pub fn touches_image(&self, radius: f64, width: usize, height: usize) -> bool {
        let (u, v) = (self.mean2d.x, self.mean2d.y);
        u + radius >= 0.0
            && u - radius <= (width - 1) as f64
            && v + radius >= 0.0
            && v - radius <= (height - 1) as f64
    }
}

pub(crate) fn max_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let mid = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    mid + (mid * mid - det).max(0.0).sqrt()
}

/// Projection without the screen-extent cull; `None` only for Gaussians at or
/// in front of the near plane.
pub fn project_covariance(
    mean: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    cam: &Camera,
) -> Option<ProjectedGaussian> {
    let t = cam.world_to_camera(mean);
    if t.z <= cam.near {
        return None;
    }
    let j = perspective_jacobian(&t, cam.fx, cam.fy);
    let cov_cam = cam.rotation * cov3d * cam.rotation.transpose();
    let cov2d = j * cov_cam * j.transpose() + Matrix2::identity() * LOWPASS;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let extent = EXTENT_SIGMAS * max_eigenvalue_2x2(&cov2d).sqrt();
    Some(ProjectedGaussian {
        mean2d: cam.project_point(&t),
        cov2d,
        z_cam: t.z,
        conic,
        extent,
    })
}

/// EWA projection of `g` into `cam`; `None` when culled (behind the near
/// plane or with a 3σ extent that misses the image).
pub fn project_gaussian(g: &GaussianPrimitive, cam: &Camera) -> Option<ProjectedGaussian> {
    let pg = project_covariance(&g.mean, &g.covariance(), cam)?;
    pg.touches_image(pg.extent, cam.width, cam.height)
        .then_some(pg)
}

/// `½ dᵀ·conic·d` for `d = pixel − mean2d`.
pub(crate) fn mahalanobis_half(conic: &Matrix2<f64>, d: &Vector2<f64>) -> f64 {
    0.5 * (conic[(0, 0)] * d.x * d.x + 2.0 * conic[(0, 1)] * d.x * d.y + conic[(1, 1)] * d.y * d.y)
}

pub fn eval_gaussian_2d(pg: &ProjectedGaussian, pixel: Vector2<f64>) -> f64 {
    let d = pixel - pg.mean2d;
    (-mahalanobis_half(&pg.conic, &d)).exp()
}

/// Uniform scale followed by translation, `p ↦ s·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn new(scale: f64, translation: [f64; 3]) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!(
                "similarity scale {scale} must be positive"
            )));
        }
        Ok(Self {
            scale,
            translation: Vector3::from(translation),
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p * self.scale + self.translation
    }

    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.translation) / self.scale
    }

    pub fn apply_points(&self, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        pts.iter()
            .map(|p| self.apply(&Vector3::from(*p)).into())
            .collect()
    }

    pub fn apply_inverse_points(&self, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        pts.iter()
            .map(|p| self.apply_inverse(&Vector3::from(*p)).into())
            .collect()
    }

    /// Camera that sees the transformed scene exactly as `cam` sees the
    /// original one; camera-space coordinates (hence depths) scale by `s`.
    pub fn apply_camera(&self, cam: &Camera) -> Camera {
        Camera {
            translation: cam.translation * self.scale - cam.rotation * self.translation,
            near: cam.near * self.scale,
            ..cam.clone()
        }
    }

    /// Maps mean and scales of a Gaussian into the transformed frame.
    pub fn apply_gaussian(&self, g: &GaussianPrimitive) -> GaussianPrimitive {
        GaussianPrimitive {
            mean: self.apply(&g.mean),
            scale: g.scale * self.scale,
            ..g.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        // Rodrigues, independent of the quaternion path.
        let k = axis.normalize();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
    }

    #[test]
    fn identity_quaternion() {
        assert_eq!(
            quat_to_rotation([1.0, 0.0, 0.0, 0.0]).unwrap(),
            Matrix3::identity()
        );
        assert_eq!(
            quat_to_rotation([2.0, 0.0, 0.0, 0.0]).unwrap(),
            Matrix3::identity()
        );
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = quat_to_rotation([FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2]).unwrap();
        let oracle = axis_angle(Vector3::z(), FRAC_PI_2);
        assert!((r - oracle).amax() < 1e-12);
        assert!((r * Vector3::x() - Vector3::y()).amax() < 1e-12);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(matches!(
            quat_to_rotation([0.0; 4]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn covariance_examples() {
        let id = build_covariance([1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(id, Matrix3::identity());
        let d = build_covariance([1.0, 0.0, 0.0, 0.0], [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(d, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)));
        let r =
            build_covariance([FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2], [2.0, 1.0, 1.0]).unwrap();
        assert!((r - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).amax() < 1e-12);
        assert!(build_covariance([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 1.0]).is_err());
        assert!(build_covariance([1.0, 0.0, 0.0, 0.0], [1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn rotation_vjp_matches_finite_differences() {
        let q = Vector4::new(0.3, -0.5, 0.7, 0.2).normalize();
        let g = Matrix3::new(0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, -0.8, 0.9);
        let analytic = rotation_vjp(&q, &g);
        let f = |q: &Vector4<f64>| rotation_from_unit_quat(q).component_mul(&g).sum();
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += 1e-6;
            qm[k] -= 1e-6;
            let fd = (f(&qp) - f(&qm)) / 2e-6;
            assert!(
                (fd - analytic[k]).abs() < 1e-8,
                "component {k}: {fd} vs {}",
                analytic[k]
            );
        }
    }

    fn identity_camera() -> Camera {
        Camera::new(
            100.0,
            100.0,
            50.0,
            50.0,
            Matrix3::identity(),
            Vector3::zeros(),
            101,
            101,
            DEFAULT_NEAR,
        )
        .unwrap()
    }

    fn isotropic(mean: [f64; 3], s: f64) -> GaussianPrimitive {
        GaussianPrimitive::new(mean, [1.0, 0.0, 0.0, 0.0], [s; 3], [0.5; 3], 0.5, vec![]).unwrap()
    }

    #[test]
    fn on_axis_projection() {
        let pg = project_gaussian(&isotropic([0.0, 0.0, 1.0], 0.01), &identity_camera()).unwrap();
        assert_eq!(pg.mean2d, Vector2::new(50.0, 50.0));
        // J = diag(fx/z, fy/z) on the axis, so J Σ Jᵀ = (100·0.01)² I.
        let expected = Matrix2::identity() * (1.0 + LOWPASS);
        assert!((pg.cov2d - expected).amax() < 1e-12);
        assert!((pg.extent - 3.0 * (1.0 + LOWPASS).sqrt()).abs() < 1e-12);
        assert_eq!(pg.z_cam, 1.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        assert!(project_gaussian(&isotropic([0.0, 0.0, -1.0], 0.01), &identity_camera()).is_none());
    }

    #[test]
    fn far_off_screen_is_culled() {
        assert!(project_gaussian(&isotropic([5.0, 0.0, 1.0], 0.01), &identity_camera()).is_none());
    }

    #[test]
    fn rigid_motion_invariance() {
        let g = GaussianPrimitive::new(
            [0.1, -0.05, 1.3],
            [0.9, 0.1, -0.3, 0.2],
            [0.05, 0.02, 0.03],
            [0.2, 0.3, 0.4],
            0.7,
            vec![],
        )
        .unwrap();
        let cam = identity_camera();
        let base = project_gaussian(&g, &cam).unwrap();

        // World motion p ↦ Q p + v; the camera absorbs Q⁻¹.
        let q = axis_angle(Vector3::new(0.3, 1.0, -0.2), 0.7);
        let v = Vector3::new(0.4, -1.2, 2.5);
        let moved = GaussianPrimitive {
            mean: q * g.mean + v,
            quat: {
                let rq = nalgebra::UnitQuaternion::from_matrix(&q)
                    * nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                        g.quat[0], g.quat[1], g.quat[2], g.quat[3],
                    ));
                Vector4::new(rq.w, rq.i, rq.j, rq.k)
            },
            ..g.clone()
        };
        let cam2 = Camera {
            rotation: cam.rotation * q.transpose(),
            translation: cam.translation - cam.rotation * q.transpose() * v,
            ..cam.clone()
        };
        let pg = project_gaussian(&moved, &cam2).unwrap();
        assert!((pg.mean2d - base.mean2d).amax() < 1e-10);
        assert!((pg.cov2d - base.cov2d).amax() < 1e-10);
        assert!((pg.conic - base.conic).amax() < 1e-10);
        assert!((pg.z_cam - base.z_cam).abs() < 1e-10);

        // Pure translation of both.
        let shifted = GaussianPrimitive {
            mean: g.mean + v,
            ..g.clone()
        };
        let cam3 = Camera {
            translation: cam.translation - cam.rotation * v,
            ..cam.clone()
        };
        let pg3 = project_gaussian(&shifted, &cam3).unwrap();
        assert!((pg3.mean2d - base.mean2d).amax() < 1e-10);
        assert!((pg3.cov2d - base.cov2d).amax() < 1e-10);
    }

    #[test]
    fn gaussian_2d_values() {
        let pg = ProjectedGaussian {
            mean2d: Vector2::new(3.0, 4.0),
            cov2d: Matrix2::identity(),
            z_cam: 1.0,
            conic: Matrix2::identity(),
            extent: 3.0,
        };
        assert_eq!(eval_gaussian_2d(&pg, Vector2::new(3.0, 4.0)), 1.0);
        let d = (2.0 * 2f64.ln()).sqrt();
        assert!((eval_gaussian_2d(&pg, Vector2::new(3.0 + d, 4.0)) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 1..50 {
            let v = eval_gaussian_2d(
                &pg,
                Vector2::new(3.0 + 0.3 * k as f64, 4.0 - 0.1 * k as f64),
            );
            assert!(v < prev && v > 0.0 || v == 0.0);
            prev = v;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn similarity_examples() {
        let id = SimilarityTransform::identity();
        let cam = identity_camera();
        assert_eq!(id.apply_camera(&cam), cam);
        assert_eq!(
            id.apply(&Vector3::new(1.0, 2.0, 3.0)),
            Vector3::new(1.0, 2.0, 3.0)
        );

        let double = SimilarityTransform::new(2.0, [0.0; 3]).unwrap();
        let cam2 = double.apply_camera(&cam);
        let p = Vector3::new(0.3, -0.2, 1.7);
        let z0 = cam.world_to_camera(&p).z;
        let z1 = cam2.world_to_camera(&double.apply(&p)).z;
        assert!((z1 - 2.0 * z0).abs() < 1e-12);

        let t = SimilarityTransform::new(0.37, [1.5, -2.0, 0.25]).unwrap();
        let pts = [[0.1, 0.2, 0.3], [-5.0, 7.0, 1e3]];
        let back = t.apply_inverse_points(&t.apply_points(&pts));
        for (a, b) in pts.iter().zip(&back) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12 * a[k].abs().max(1.0));
            }
        }
        assert!(SimilarityTransform::new(0.0, [0.0; 3]).is_err());
        assert!(SimilarityTransform::new(-1.0, [0.0; 3]).is_err());
    }

    #[test]
    fn look_at_is_valid_rotation() {
        let cam = Camera::look_at(
            Vector3::new(2.0, 0.3, 1.0),
            Vector3::new(0.5, 0.5, 0.5),
            Vector3::z(),
            60.0,
            60.0,
            32,
            24,
            DEFAULT_NEAR,
        )
        .unwrap();
        let t = cam.world_to_camera(&Vector3::new(0.5, 0.5, 0.5));
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12 && t.z > 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn double_cover(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
                prop_assume!((w * w + x * x + y * y + z * z) > 1e-3);
                let a = quat_to_rotation([w, x, y, z]).unwrap();
                let b = quat_to_rotation([-w, -x, -y, -z]).unwrap();
                prop_assert!((a - b).amax() < 1e-14);
                prop_assert!((a.transpose() * a - Matrix3::identity()).amax() < 1e-12);
                prop_assert!((a.determinant() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn covariance_is_symmetric_pd(
                w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                s0 in 0.01..3.0f64, s1 in 0.01..3.0f64, s2 in 0.01..3.0f64,
            ) {
                prop_assume!((w * w + x * x + y * y + z * z) > 1e-3);
                let c = build_covariance([w, x, y, z], [s0, s1, s2]).unwrap();
                prop_assert!((c - c.transpose()).amax() <= 1e-12);
                prop_assert!(c.cholesky().is_some());
                let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
                ev.sort_by(f64::total_cmp);
                let mut sq = vec![s0 * s0, s1 * s1, s2 * s2];
                sq.sort_by(f64::total_cmp);
                for (a, b) in ev.iter().zip(&sq) {
                    prop_assert!((a - b).abs() < 1e-9 * b.max(1.0));
                }
            }
        }
    }
}
