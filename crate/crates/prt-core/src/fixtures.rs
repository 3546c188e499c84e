//! Canonical demo scene shared by tests, examples, and the CLI: a sphere
//! resting on a ground slab, lit by a smooth gradient sky. The scene exists
//! as an SDF description and as a marching-cubes mesh of the same field, so
//! both geometry paths can be exercised on identical content.

use crate::envmap::{envmap_from_function, project_envmap, EnvironmentLight};
use crate::error::Result;
use crate::marching::marching_cubes;
use crate::math::{vec3, Vec3};
use crate::mesh::TriangleMesh;
use crate::render::Camera;
use crate::sdf::{parse_sdf_scene, SdfScene};

/// Sphere-on-slab scene in the line-oriented SDF format. The sphere sinks
/// slightly into the slab so the union surface is watertight for marching
/// cubes, and its shadow gives the transfer field real occlusion structure.
pub const TOY_SCENE_SDF: &str = "\
# sphere resting on a ground slab
box    id=ground c=0,0,-0.2 h=1.6,1.6,0.2
sphere id=ball   c=0,0,0.45 r=0.5
op union a=ground b=ball
bounds min=-1.8,-1.8,-0.6 max=1.8,1.8,1.2
";

pub fn toy_scene_sdf() -> SdfScene {
    parse_sdf_scene(TOY_SCENE_SDF).expect("builtin scene text parses")
}

/// Mesh variant of the same scene: the zero isosurface of the SDF.
pub fn toy_scene_mesh(grid_res: u32) -> Result<TriangleMesh> {
    let scene = toy_scene_sdf();
    marching_cubes(&scene, grid_res, scene.bounds)
}

/// Three-quarter view covering the sphere, its contact shadow, and open slab.
pub fn toy_camera(width: usize, height: usize) -> Camera {
    Camera {
        eye: vec3(1.7, -2.5, 1.5),
        look_at: vec3(0.0, 0.0, 0.3),
        up: vec3(0.0, 0.0, 1.0),
        fov_y_deg: 42.0,
        width,
        height,
    }
}

/// Radiance of the fixture sky: a smooth blue-to-warm vertical gradient.
/// Low-frequency by construction so an order-4 SH projection captures it.
pub fn toy_sky(dir: Vec3) -> [f64; 3] {
    let t = 0.5 * (dir.z + 1.0);
    [
        0.9 + (0.35 - 0.9) * t,
        0.65 + (0.45 - 0.65) * t,
        0.45 + (0.95 - 0.45) * t,
    ]
}

/// The fixture sky projected to SH at the given order.
pub fn toy_light(order: usize) -> Result<EnvironmentLight> {
    let img = envmap_from_function(toy_sky, 128, 64);
    project_envmap(&img, order)
}
