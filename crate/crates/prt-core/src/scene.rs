//! Scene description file: a single JSON document naming the surface,
//! material, environment light, and camera, with all relative paths resolved
//! against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envmap::{envmap_from_function, project_envmap, EnvironmentLight};
use crate::error::{Error, Result};
use crate::image::load_radiance_image;
use crate::math::{vec3, Vec3};
use crate::mesh::load_obj;
use crate::render::{Camera, Material};
use crate::sdf::parse_sdf_scene;
use crate::surface::Surface;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceConfig {
    /// Wavefront OBJ triangle mesh.
    Mesh { path: String },
    /// Line-oriented SDF scene description.
    Sdf { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialConfig {
    Diffuse { albedo: [f64; 3] },
    GlossyPhong { albedo: [f64; 3], exponent: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvmapConfig {
    /// Equirectangular radiance file (PFM or Radiance HDR).
    File { path: String },
    /// Uniform radiance, mostly for furnace-style fixtures.
    Constant { value: [f64; 3] },
    /// Smooth vertical gradient between a zenith and a horizon color; an
    /// analytic stand-in for a sky probe.
    Gradient { zenith: [f64; 3], horizon: [f64; 3] },
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_fov() -> f64 {
    45.0
}

fn default_size() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub surface: SurfaceConfig,
    pub material: MaterialConfig,
    pub envmap: EnvmapConfig,
    pub camera: CameraConfig,
    /// Optional path to a trained transfer model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

fn arr(a: [f64; 3]) -> Vec3 {
    vec3(a[0], a[1], a[2])
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<SceneConfig> {
        let cfg: SceneConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.material()?.validate()?;
        self.camera().validate()?;
        match &self.envmap {
            EnvmapConfig::Constant { value } => check_radiance("constant envmap", value)?,
            EnvmapConfig::Gradient { zenith, horizon } => {
                check_radiance("gradient zenith", zenith)?;
                check_radiance("gradient horizon", horizon)?;
            }
            EnvmapConfig::File { .. } => {}
        }
        Ok(())
    }

    pub fn material(&self) -> Result<Material> {
        let m = match self.material {
            MaterialConfig::Diffuse { albedo } => Material::Diffuse { albedo },
            MaterialConfig::GlossyPhong { albedo, exponent } => {
                Material::GlossyPhong { albedo, exponent }
            }
        };
        m.validate()?;
        Ok(m)
    }

    pub fn camera(&self) -> Camera {
        Camera {
            eye: arr(self.camera.eye),
            look_at: arr(self.camera.look_at),
            up: arr(self.camera.up),
            fov_y_deg: self.camera.fov_y_deg,
            width: self.camera.width,
            height: self.camera.height,
        }
    }

    /// Load the surface geometry, resolving a relative path against `base`.
    pub fn load_surface(&self, base: &Path) -> Result<Surface> {
        match &self.surface {
            SurfaceConfig::Mesh { path } => Ok(Surface::from_mesh(load_obj(&resolve(base, path))?)),
            SurfaceConfig::Sdf { path } => {
                let p = resolve(base, path);
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Ok(Surface::from_sdf(parse_sdf_scene(&text)?))
            }
        }
    }

    /// Build the environment light at the given SH order.
    pub fn build_light(&self, base: &Path, order: usize) -> Result<EnvironmentLight> {
        match &self.envmap {
            EnvmapConfig::File { path } => {
                let img = load_radiance_image(&resolve(base, path))?;
                project_envmap(&img, order)
            }
            EnvmapConfig::Constant { value } => EnvironmentLight::constant(order, *value),
            EnvmapConfig::Gradient { zenith, horizon } => {
                let (z, h) = (*zenith, *horizon);
                let img = envmap_from_function(
                    |d| {
                        let t = 0.5 * (d.z + 1.0);
                        [
                            h[0] + (z[0] - h[0]) * t,
                            h[1] + (z[1] - h[1]) * t,
                            h[2] + (z[2] - h[2]) * t,
                        ]
                    },
                    256,
                    128,
                );
                project_envmap(&img, order)
            }
        }
    }

    /// Resolved model path, if the config names one.
    pub fn model_path(&self, base: &Path) -> Option<PathBuf> {
        self.model.as_ref().map(|p| resolve(base, p))
    }
}

fn check_radiance(what: &str, v: &[f64; 3]) -> Result<()> {
    for c in v {
        if !c.is_finite() || *c < 0.0 {
            return Err(Error::input(format!("{what} channel {c} must be finite and >= 0")));
        }
    }
    Ok(())
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Read and validate a scene config; returns the config and the directory
/// its relative paths resolve against.
pub fn load_scene(path: &Path) -> Result<(SceneConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = SceneConfig::from_json(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> &'static str {
        r#"{
            "surface": { "type": "sdf", "path": "scene.sdf" },
            "material": { "type": "diffuse", "albedo": [0.8, 0.7, 0.6] },
            "envmap": { "type": "gradient", "zenith": [0.5, 0.6, 0.9], "horizon": [0.9, 0.8, 0.7] },
            "camera": { "eye": [0, -3, 1], "look_at": [0, 0, 0.5], "width": 128, "height": 128 }
        }"#
    }

    #[test]
    fn sample_config_parses_and_realizes() {
        let cfg = SceneConfig::from_json(sample_json()).unwrap();
        assert!(matches!(cfg.surface, SurfaceConfig::Sdf { .. }));
        let cam = cfg.camera();
        assert_eq!(cam.width, 128);
        assert_eq!(cam.fov_y_deg, 45.0); // default
        assert_eq!(cam.up.y, 1.0); // default
        let mat = cfg.material().unwrap();
        assert!(matches!(mat, Material::Diffuse { .. }));
        let light = cfg.build_light(Path::new("."), 4).unwrap();
        assert_eq!(light.order(), 4);
        assert!(light.is_finite());
        assert!(cfg.model_path(Path::new("/tmp")).is_none());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = SceneConfig::from_json(sample_json()).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = SceneConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&cfg).unwrap());
    }

    #[test]
    fn bad_configs_are_rejected() {
        // Unknown field.
        assert!(SceneConfig::from_json(&sample_json().replace("\"camera\"", "\"kamera\"")).is_err());
        // Albedo out of range.
        assert!(SceneConfig::from_json(&sample_json().replace("0.8, 0.7", "1.8, 0.7")).is_err());
        // Negative radiance.
        assert!(SceneConfig::from_json(&sample_json().replace("0.5, 0.6", "-0.5, 0.6")).is_err());
        // Degenerate camera (eye == look_at).
        let bad = sample_json().replace("\"eye\": [0, -3, 1]", "\"eye\": [0, 0, 0.5]");
        assert!(SceneConfig::from_json(&bad).is_err());
        // Glossy exponent must be positive.
        let glossy = sample_json().replace(
            r#"{ "type": "diffuse", "albedo": [0.8, 0.7, 0.6] }"#,
            r#"{ "type": "glossy_phong", "albedo": [0.8, 0.7, 0.6], "exponent": -3.0 }"#,
        );
        assert!(SceneConfig::from_json(&glossy).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let scene_path = dir.path().join("cfg").join("scene.json");
        std::fs::create_dir_all(scene_path.parent().unwrap()).unwrap();
        std::fs::write(
            dir.path().join("cfg").join("scene.sdf"),
            "sphere c=0,0,0 r=1\nbounds min=-2,-2,-2 max=2,2,2\n",
        )
        .unwrap();
        std::fs::write(&scene_path, sample_json()).unwrap();
        let (cfg, base) = load_scene(&scene_path).unwrap();
        assert_eq!(base, dir.path().join("cfg"));
        let surface = cfg.load_surface(&base).unwrap();
        assert!(matches!(surface, Surface::Sdf { .. }));
    }

    #[test]
    fn constant_envmap_projects_to_dc_only() {
        let cfg = SceneConfig::from_json(
            &sample_json().replace(
                r#"{ "type": "gradient", "zenith": [0.5, 0.6, 0.9], "horizon": [0.9, 0.8, 0.7] }"#,
                r#"{ "type": "constant", "value": [1.0, 2.0, 0.5] }"#,
            ),
        )
        .unwrap();
        let light = cfg.build_light(Path::new("."), 4).unwrap();
        let dc = 2.0 * std::f64::consts::PI.sqrt();
        assert!((light.sh[0].coeffs[0] - dc).abs() < 1e-9);
        assert!((light.sh[1].coeffs[0] - 2.0 * dc).abs() < 1e-9);
        assert!(light.sh[0].coeffs[1..].iter().all(|c| c.abs() < 1e-12));
    }
}
