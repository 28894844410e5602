//! Mesh representation, OBJ input/output, camera poses and procedural fixtures.

mod camera;
mod mesh;
mod obj;
pub mod shapes;

pub use camera::{Camera, CameraMatrices, ProjectedPoint, DEFAULT_FOV_Y_DEG, FAR_PLANE, NEAR_PLANE};
pub use mesh::{FaceBasis, GeometryError, MeshWarning, TriangleMesh};
pub use obj::{load_mesh, parse_obj, write_obj_with_material, LoadedMesh};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
