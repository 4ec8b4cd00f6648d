//! JSON run configuration: tracker and viewpoint settings plus one block per
//! tracked object. Relative paths resolve against the config file's folder.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::mesh::{load_mesh, TriangleMesh};
use crate::optimizer::OptimizerConfig;
use crate::tracker::{TrackedObject, TrackerConfig};
use crate::viewpoint::{build_model, SparseViewpointModel, ViewpointConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub viewpoint: ViewpointConfig,
    pub objects: Vec<ObjectConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub mesh: PathBuf,
    /// Viewpoint model file; built and written here when missing.
    #[serde(default)]
    pub model_cache: Option<PathBuf>,
    /// Row-major `r11..r33, tx, ty, tz`, meters. Sequences with ground truth
    /// start from frame 0 instead.
    #[serde(default)]
    pub initial_pose: Option<[f64; 12]>,
    /// Replaces the tracker-wide optimizer settings for this object.
    #[serde(default)]
    pub overrides: Option<OptimizerConfig>,
    /// Multiplies mesh coordinates, e.g. 0.001 for millimeter meshes.
    #[serde(default = "unit_scale")]
    pub mesh_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        for o in &self.objects {
            if !(o.mesh_scale > 0.0 && o.mesh_scale.is_finite()) {
                return Err(Error::InvalidInput(format!("{}: mesh_scale must be positive", o.mesh.display())));
            }
            if let Some(opt) = &o.overrides {
                opt.validate()?;
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        for o in &mut self.objects {
            o.mesh = base.join(&o.mesh);
            if let Some(cache) = &mut o.model_cache {
                *cache = base.join(&*cache);
            }
        }
    }

    /// Tracked objects with ids in config order.
    pub fn tracked_objects(&self) -> Result<Vec<TrackedObject>> {
        self.objects
            .iter()
            .enumerate()
            .map(|(id, o)| {
                let mesh = o.load_mesh()?;
                let model = o.load_or_build_model(&mesh, &self.viewpoint)?;
                let object = TrackedObject::new(id, Arc::new(mesh), Arc::new(model));
                Ok(match &o.overrides {
                    Some(opt) => object.with_optimizer(*opt),
                    None => object,
                })
            })
            .collect()
    }
}

impl ObjectConfig {
    pub fn new(mesh: impl Into<PathBuf>) -> Self {
        Self { mesh: mesh.into(), model_cache: None, initial_pose: None, overrides: None, mesh_scale: 1.0 }
    }

    pub fn load_mesh(&self) -> Result<TriangleMesh> {
        let mesh = load_mesh(&self.mesh)?;
        if self.mesh_scale == 1.0 {
            Ok(mesh)
        } else {
            mesh.scaled(self.mesh_scale)
        }
    }

    pub fn initial_pose(&self) -> Result<Option<Pose>> {
        self.initial_pose.as_ref().map(Pose::from_row_major).transpose()
    }

    /// Read the cached model if present, otherwise build it (and write the
    /// cache when a path is configured).
    pub fn load_or_build_model(
        &self,
        mesh: &TriangleMesh,
        viewpoint: &ViewpointConfig,
    ) -> Result<SparseViewpointModel> {
        match &self.model_cache {
            Some(path) if path.is_file() => SparseViewpointModel::load(path),
            Some(path) => {
                let model = build_model(mesh, viewpoint)?;
                model.save(path)?;
                Ok(model)
            }
            None => build_model(mesh, viewpoint),
        }
    }
}
