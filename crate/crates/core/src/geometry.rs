//! Pinhole camera/projector geometry: fundamental matrix, triangulation of a
//! camera pixel against a projector column, and the epipolar solve for the
//! projector row.
//!
//! Convention: `x_p = R x_c + t`, so `R` and `t` map camera coordinates into
//! projector coordinates. Metric quantities are millimetres.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::raster::ChannelRaster;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("zero baseline: epipolar geometry is undefined")]
    DegenerateBaseline,
    #[error("triangulation system is singular (|det| = {0:e})")]
    SingularSystem(f64),
    #[error("epipolar line has no v_p component")]
    EpipolarDegenerate,
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
}

/// Sub-pixel image coordinate; the homogeneous third component is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    #[inline]
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

/// Intrinsics and extrinsics of a camera/projector pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoCalibration {
    k_c: Matrix3<f64>,
    k_p: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    cam_size: (usize, usize),
    prj_size: (usize, usize),
    k_c_inv: Matrix3<f64>,
    k_p_inv: Matrix3<f64>,
    // K_p R K_c^-1 and K_p t, the two terms of the triangulation system.
    m: Matrix3<f64>,
    b: Vector3<f64>,
    f: Option<Matrix3<f64>>,
}

fn check_intrinsics(k: &Matrix3<f64>, name: &str) -> Result<(), GeometryError> {
    let upper = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0;
    let positive = k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0;
    if !(upper && positive) {
        return Err(GeometryError::InvalidCalibration(format!(
            "{name} must be upper-triangular with a positive diagonal"
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidCalibration(format!("{name} is not finite")));
    }
    Ok(())
}

impl StereoCalibration {
    pub fn new(
        k_c: Matrix3<f64>,
        k_p: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        cam_size: (usize, usize),
        prj_size: (usize, usize),
    ) -> Result<Self, GeometryError> {
        check_intrinsics(&k_c, "K_c")?;
        check_intrinsics(&k_p, "K_p")?;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidCalibration(
                "R must be a proper rotation".into(),
            ));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCalibration("t is not finite".into()));
        }
        let k_c_inv = k_c
            .try_inverse()
            .ok_or_else(|| GeometryError::InvalidCalibration("K_c is singular".into()))?;
        let k_p_inv = k_p
            .try_inverse()
            .ok_or_else(|| GeometryError::InvalidCalibration("K_p is singular".into()))?;
        let mut calib = Self {
            k_c,
            k_p,
            r,
            t,
            cam_size,
            prj_size,
            k_c_inv,
            k_p_inv,
            m: Matrix3::zeros(),
            b: Vector3::zeros(),
            f: None,
        };
        calib.refresh();
        Ok(calib)
    }

    fn refresh(&mut self) {
        self.m = self.k_p * self.r * self.k_c_inv;
        self.b = self.k_p * self.t;
        self.f = fundamental_from_parts(&self.k_p_inv, &self.r, &self.t, &self.k_c_inv).ok();
    }

    /// Replaces the extrinsics and recomputes the derived matrices.
    pub fn set_extrinsics(&mut self, r: Matrix3<f64>, t: Vector3<f64>) -> Result<(), GeometryError> {
        *self = Self::new(self.k_c, self.k_p, r, t, self.cam_size, self.prj_size)?;
        Ok(())
    }

    pub fn k_c(&self) -> &Matrix3<f64> {
        &self.k_c
    }
    pub fn k_p(&self) -> &Matrix3<f64> {
        &self.k_p
    }
    pub fn k_c_inv(&self) -> &Matrix3<f64> {
        &self.k_c_inv
    }
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }
    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }
    pub fn cam_size(&self) -> (usize, usize) {
        self.cam_size
    }
    pub fn prj_size(&self) -> (usize, usize) {
        self.prj_size
    }
    /// Cached fundamental matrix; `None` for a zero baseline.
    pub fn fundamental(&self) -> Option<&Matrix3<f64>> {
        self.f.as_ref()
    }

    /// Camera ray direction (unit depth) through a pixel: `K_c^-1 [u, v, 1]`.
    #[inline]
    pub fn camera_ray(&self, u_c: PixelCoord) -> Vector3<f64> {
        self.k_c_inv * u_c.homogeneous()
    }

    /// Projects a camera-frame point into both devices.
    pub fn project(&self, x_c: &Vector3<f64>) -> Projection {
        let uc = self.k_c * x_c;
        let x_p = self.r * x_c + self.t;
        let up = self.k_p * x_p;
        Projection {
            cam: PixelCoord::new(uc.x / uc.z, uc.y / uc.z),
            prj: PixelCoord::new(up.x / up.z, up.y / up.z),
            s_c: x_c.z,
            s_p: x_p.z,
        }
    }
}

/// A 3D point seen through both devices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub cam: PixelCoord,
    pub prj: PixelCoord,
    pub s_c: f64,
    pub s_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationResult {
    /// Depth along the camera axis (mm).
    pub s_c: f64,
    /// Depth along the projector axis (mm).
    pub s_p: f64,
    /// Projector row from the epipolar constraint.
    pub v_p: f64,
    /// Point in camera coordinates (mm).
    pub point_cam: Vector3<f64>,
}

impl TriangulationResult {
    /// Both depths positive.
    pub fn in_front(&self) -> bool {
        self.s_c > 0.0 && self.s_p > 0.0
    }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

fn fundamental_from_parts(
    k_p_inv: &Matrix3<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k_c_inv: &Matrix3<f64>,
) -> Result<Matrix3<f64>, GeometryError> {
    if t.norm() == 0.0 {
        return Err(GeometryError::DegenerateBaseline);
    }
    Ok(k_p_inv.transpose() * skew(t) * r * k_c_inv)
}

/// `F = K_p^-T [t]x R K_c^-1`, so that `u_p^T F u_c = 0` for corresponding pixels.
pub fn fundamental_matrix(calib: &StereoCalibration) -> Result<Matrix3<f64>, GeometryError> {
    fundamental_from_parts(&calib.k_p_inv, &calib.r, &calib.t, &calib.k_c_inv)
}

/// Solves the epipolar constraint for the projector row given the column.
pub fn solve_vp(u_c: PixelCoord, u_p: f64, calib: &StereoCalibration) -> Result<f64, GeometryError> {
    let f = calib.f.as_ref().ok_or(GeometryError::DegenerateBaseline)?;
    let line = f * u_c.homogeneous();
    let n = line.norm();
    if n == 0.0 || (line.y / n).abs() < 1e-12 {
        return Err(GeometryError::EpipolarDegenerate);
    }
    Ok(-(line.x * u_p + line.z) / line.y)
}

/// Intersects the camera ray through `u_c` with the projector plane of column
/// `u_p`, using rows 1 and 3 of `s_p u_p = s_c K_p R K_c^-1 u_c + K_p t`.
pub fn triangulate(
    u_c: PixelCoord,
    u_p: f64,
    calib: &StereoCalibration,
) -> Result<TriangulationResult, GeometryError> {
    if calib.t.norm() == 0.0 {
        return Err(GeometryError::SingularSystem(0.0));
    }
    let m = calib.m * u_c.homogeneous();
    let b = &calib.b;
    // [m0  -u_p] [s_c]   [-b0]
    // [m2   -1 ] [s_p] = [-b2]
    let det = -m.x + u_p * m.z;
    if det.abs() < 1e-12 {
        return Err(GeometryError::SingularSystem(det));
    }
    let s_c = (b.x - u_p * b.z) / det;
    let s_p = (m.x * -b.z + b.x * m.z) / det;
    let v_p = solve_vp(u_c, u_p, calib)?;
    Ok(TriangulationResult {
        s_c,
        s_p,
        v_p,
        point_cam: calib.camera_ray(u_c) * s_c,
    })
}

/// One 3D point per valid depth pixel.
pub fn depth_map_to_point_cloud(depth: &ChannelRaster, calib: &StereoCalibration) -> Vec<Vector3<f64>> {
    depth
        .iter_valid()
        .map(|(x, y, s_c)| calib.camera_ray(PixelCoord::new(x as f64, y as f64)) * s_c)
        .collect()
}

/// Serialized form: row-major matrices, `F` is always re-derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StereoCalibrationDoc {
    #[serde(rename = "K_c")]
    pub k_c: Mat3Doc,
    #[serde(rename = "K_p")]
    pub k_p: Mat3Doc,
    #[serde(rename = "R")]
    pub r: Mat3Doc,
    pub t: [f64; 3],
    pub cam_size: [usize; 2],
    pub prj_size: [usize; 2],
}

/// A 3x3 matrix as nested rows; a flat 9-element row-major array is also accepted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Mat3Doc {
    Rows([[f64; 3]; 3]),
    Flat([f64; 9]),
}

impl From<&Matrix3<f64>> for Mat3Doc {
    fn from(m: &Matrix3<f64>) -> Self {
        Mat3Doc::Rows([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ])
    }
}

impl From<&Mat3Doc> for Matrix3<f64> {
    fn from(d: &Mat3Doc) -> Self {
        match d {
            Mat3Doc::Rows(r) => Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Mat3Doc::Flat(f) => Matrix3::from_row_slice(f),
        }
    }
}

impl From<&StereoCalibration> for StereoCalibrationDoc {
    fn from(c: &StereoCalibration) -> Self {
        Self {
            k_c: (&c.k_c).into(),
            k_p: (&c.k_p).into(),
            r: (&c.r).into(),
            t: [c.t.x, c.t.y, c.t.z],
            cam_size: [c.cam_size.0, c.cam_size.1],
            prj_size: [c.prj_size.0, c.prj_size.1],
        }
    }
}

impl TryFrom<&StereoCalibrationDoc> for StereoCalibration {
    type Error = GeometryError;

    fn try_from(d: &StereoCalibrationDoc) -> Result<Self, Self::Error> {
        StereoCalibration::new(
            (&d.k_c).into(),
            (&d.k_p).into(),
            (&d.r).into(),
            Vector3::from(d.t),
            (d.cam_size[0], d.cam_size[1]),
            (d.prj_size[0], d.prj_size[1]),
        )
    }
}

impl Serialize for StereoCalibration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StereoCalibrationDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StereoCalibration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = StereoCalibrationDoc::deserialize(d)?;
        StereoCalibration::try_from(&doc).map_err(serde::de::Error::custom)
    }
}

/// Rotation about the camera y axis by `angle` radians.
pub fn rotation_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the camera x axis by `angle` radians.
pub fn rotation_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Intrinsic matrix with square pixels and zero skew.
pub fn intrinsics(focal: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0)
}
