use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3};

pub const DEFAULT_FOV_Y_DEG: f64 = 50.0;
pub const NEAR_PLANE: f64 = 0.01;
pub const FAR_PLANE: f64 = 10.0;

/// A viewpoint on a sphere around the origin, looking at the origin.
///
/// `elevation_deg` is the polar angle measured from +Z, so 90 lies on the equator,
/// 60 above it and 110 below it. Azimuth is measured from +X towards +Y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_y_deg: f64,
    pub image_size: u32,
}

impl Camera {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Self {
        Camera {
            azimuth_deg: azimuth_deg.rem_euclid(360.0),
            elevation_deg,
            radius,
            fov_y_deg: DEFAULT_FOV_Y_DEG,
            image_size: 512,
        }
    }

    /// Camera looking at the origin from world position `p`.
    pub fn from_position(p: &Vec3) -> Self {
        let radius = p.norm();
        let polar = (p.z / radius).clamp(-1.0, 1.0).acos().to_degrees();
        Camera::new(p.y.atan2(p.x).to_degrees(), polar, radius)
    }

    pub fn with_image_size(mut self, size: u32) -> Self {
        self.image_size = size;
        self
    }

    pub fn with_fov(mut self, fov_y_deg: f64) -> Self {
        self.fov_y_deg = fov_y_deg;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.azimuth_deg.is_finite()
            && self.elevation_deg > 0.0
            && self.elevation_deg < 180.0
            && self.radius > 0.0
            && self.radius.is_finite()
            && self.fov_y_deg > 0.0
            && self.fov_y_deg < 180.0
            && self.image_size > 0;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidMesh(format!("invalid camera {self:?}")))
        }
    }

    /// Unit vector from the origin towards the camera.
    pub fn direction(&self) -> Vec3 {
        let (az, pol) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vec3::new(pol.sin() * az.cos(), pol.sin() * az.sin(), pol.cos())
    }

    pub fn position(&self) -> Vec3 {
        self.direction() * self.radius
    }

    pub fn forward(&self) -> Vec3 {
        -self.direction()
    }

    pub fn matrices(&self) -> CameraMatrices {
        let az = self.azimuth_deg.to_radians();
        let eye = self.position();
        let forward = self.forward();
        // The azimuthal tangent is horizontal and never parallel to `forward`, so the
        // basis stays well defined at the poles.
        let right = Vec3::new(-az.sin(), az.cos(), 0.0);
        let up = right.cross(&forward);
        #[rustfmt::skip]
        let rotation = Matrix4::new(
            right.x, right.y, right.z, 0.0,
            up.x, up.y, up.z, 0.0,
            -forward.x, -forward.y, -forward.z, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let view = rotation * Matrix4::new_translation(&-eye);
        let focal = 1.0 / (self.fov_y_deg.to_radians() * 0.5).tan();
        let (n, f) = (NEAR_PLANE, FAR_PLANE);
        #[rustfmt::skip]
        let projection = Matrix4::new(
            focal, 0.0, 0.0, 0.0,
            0.0, focal, 0.0, 0.0,
            0.0, 0.0, (f + n) / (n - f), 2.0 * f * n / (n - f),
            0.0, 0.0, -1.0, 0.0,
        );
        CameraMatrices {
            view,
            projection,
            eye,
            focal,
            size: self.image_size as f64,
        }
    }
}

/// A point projected into continuous pixel coordinates. Pixel `(x, y)` has its centre
/// at `(x + 0.5, y + 0.5)`; `depth` is the positive distance along the view axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

#[derive(Debug, Clone)]
pub struct CameraMatrices {
    /// World to view transform; the camera looks down -Z in view space.
    pub view: Matrix4<f64>,
    /// OpenGL-style clip transform (near 0.01, far 10).
    pub projection: Matrix4<f64>,
    pub eye: Vec3,
    focal: f64,
    size: f64,
}

impl CameraMatrices {
    pub fn to_view(&self, p: &Vec3) -> Vec3 {
        let v = self.view * Vector4::new(p.x, p.y, p.z, 1.0);
        Vec3::new(v.x, v.y, v.z)
    }

    /// Pixel coordinates of a view-space point in front of the camera.
    pub fn view_to_pixel(&self, v: &Vec3) -> (f64, f64) {
        let depth = -v.z;
        let ndc_x = self.focal * v.x / depth;
        let ndc_y = self.focal * v.y / depth;
        ((ndc_x + 1.0) * 0.5 * self.size, (1.0 - ndc_y) * 0.5 * self.size)
    }

    pub fn project(&self, p: &Vec3) -> Option<ProjectedPoint> {
        let v = self.to_view(p);
        let depth = -v.z;
        if depth < NEAR_PLANE {
            return None;
        }
        let (x, y) = self.view_to_pixel(&v);
        Some(ProjectedPoint { x, y, depth })
    }

    /// Normalized-device depth in `[-1, 1]` via the projection matrix.
    pub fn ndc_depth(&self, p: &Vec3) -> f64 {
        let v = self.view * Vector4::new(p.x, p.y, p.z, 1.0);
        let c = self.projection * v;
        c.z / c.w
    }

    /// World-space ray through continuous pixel coordinates.
    pub fn pixel_ray(&self, x: f64, y: f64) -> (Vec3, Vec3) {
        let ndc_x = x / self.size * 2.0 - 1.0;
        let ndc_y = 1.0 - y / self.size * 2.0;
        let dir_view = Vec3::new(ndc_x / self.focal, ndc_y / self.focal, -1.0);
        let inv = self.view.try_inverse().expect("rigid view transform");
        let d = inv * Vector4::new(dir_view.x, dir_view.y, dir_view.z, 0.0);
        (self.eye, Vec3::new(d.x, d.y, d.z).normalize())
    }

    /// World-space edge length of one pixel at the given view depth.
    pub fn pixel_footprint(&self, depth: f64) -> f64 {
        2.0 * depth / (self.focal * self.size)
    }

    pub fn image_size(&self) -> f64 {
        self.size
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equator_azimuth_zero_sits_on_x_axis() {
        let cam = Camera::new(0.0, 90.0, 1.0);
        assert_abs_diff_eq!(cam.position(), Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(cam.forward(), Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn near_pole_is_near_plus_z() {
        let cam = Camera::new(123.0, 1e-6, 2.0);
        assert_abs_diff_eq!(cam.position(), Vec3::new(0.0, 0.0, 2.0), epsilon = 1e-6);
        // basis stays orthonormal at the pole
        let m = cam.matrices();
        let r = m.view.fixed_view::<3, 3>(0, 0);
        assert_abs_diff_eq!(r * r.transpose(), nalgebra::Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn origin_projects_to_image_center() {
        for &(az, el, r, size) in &[(0.0, 90.0, 1.0, 512), (37.0, 12.0, 2.5, 100), (300.0, 170.0, 1.3, 64)] {
            let m = Camera::new(az, el, r).with_image_size(size).matrices();
            let p = m.project(&Vec3::zeros()).unwrap();
            assert_abs_diff_eq!(p.x, size as f64 / 2.0, epsilon = 1e-9);
            assert_abs_diff_eq!(p.y, size as f64 / 2.0, epsilon = 1e-9);
            assert_abs_diff_eq!(p.depth, r, epsilon = 1e-12);
        }
    }

    #[test]
    fn z_up_appears_above_center() {
        let m = Camera::new(0.0, 90.0, 3.0).matrices();
        let p = m.project(&Vec3::new(0.0, 0.0, 0.5)).unwrap();
        assert!(p.y < 256.0);
        // +Y is to the right when looking down -X
        let q = m.project(&Vec3::new(0.0, 0.5, 0.0)).unwrap();
        assert!(q.x > 256.0);
    }

    #[test]
    fn pixel_ray_round_trips_projection() {
        let m = Camera::new(40.0, 70.0, 2.0).matrices();
        let (o, d) = m.pixel_ray(100.25, 300.5);
        let p = m.project(&(o + d * 1.7)).unwrap();
        assert_abs_diff_eq!(p.x, 100.25, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, 300.5, epsilon = 1e-9);
    }

    #[test]
    fn clip_matrix_maps_near_far() {
        let cam = Camera::new(0.0, 90.0, 5.0);
        let m = cam.matrices();
        assert_abs_diff_eq!(m.ndc_depth(&(cam.position() + cam.forward() * NEAR_PLANE)), -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.ndc_depth(&(cam.position() + cam.forward() * FAR_PLANE)), 1.0, epsilon = 1e-9);
    }
}
