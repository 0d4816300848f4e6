//! Object model directory: `obj_<id>.json` metadata next to its mesh.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use zephyr::objmodel::{load_object, prepare_model, ObjectMeta, ObjectModel, PrepareConfig, TriangleMesh};
use zephyr::shapes::catalog;

use crate::error::{CliError, CliResult};

pub fn meta_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("obj_{id:06}.json"))
}

/// Writes the procedural catalog as PLY meshes with metadata; returns the ids.
pub fn write_catalog(dir: &Path) -> CliResult<Vec<u32>> {
    std::fs::create_dir_all(dir)?;
    let mut ids = Vec::new();
    for obj in catalog() {
        let mesh_name = format!("obj_{:06}.ply", obj.object_id);
        std::fs::write(dir.join(&mesh_name), obj.mesh.to_ply_bytes())?;
        let meta = ObjectMeta {
            object_id: obj.object_id,
            mesh: mesh_name,
            symmetry: obj.symmetry,
            units: "m".into(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(zephyr::Error::from)?;
        std::fs::write(meta_path(dir, obj.object_id), json + "\n")?;
        ids.push(obj.object_id);
    }
    Ok(ids)
}

/// Ids with a metadata file in `dir`, ascending.
pub fn available(dir: &Path) -> CliResult<Vec<u32>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("models dir {}: {e}", dir.display())))?;
    let mut ids = Vec::new();
    for e in entries {
        let name = e?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name
            .strip_prefix("obj_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<u32>().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

#[derive(Debug, Clone)]
pub struct LoadedObject {
    pub meta: ObjectMeta,
    pub mesh: TriangleMesh,
    pub model: ObjectModel,
}

/// Loads objects by id, recording every file it opens.
#[derive(Debug, Clone)]
pub struct ModelStore {
    dir: PathBuf,
    prepare: PrepareConfig,
    log: Arc<Mutex<Vec<PathBuf>>>,
}

impl ModelStore {
    pub fn new(dir: impl Into<PathBuf>, prepare: PrepareConfig, log: Arc<Mutex<Vec<PathBuf>>>) -> Self {
        Self { dir: dir.into(), prepare, log }
    }

    fn record(&self, p: PathBuf) {
        if let Ok(mut l) = self.log.lock() {
            l.push(p);
        }
    }

    pub fn mesh(&self, id: u32) -> CliResult<(ObjectMeta, TriangleMesh)> {
        let path = meta_path(&self.dir, id);
        if !path.exists() {
            return Err(CliError::Data(format!("no model for object {id} in {}", self.dir.display())));
        }
        self.record(path.clone());
        let (meta, mesh) = load_object(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.record(meta.mesh_path(&path));
        if meta.object_id != id {
            return Err(CliError::Data(format!("{} declares object {}", path.display(), meta.object_id)));
        }
        Ok((meta, mesh))
    }

    pub fn load(&self, id: u32) -> CliResult<LoadedObject> {
        let (meta, mesh) = self.mesh(id)?;
        let model = prepare_model(id, &mesh, &meta.symmetry, &self.prepare)?;
        Ok(LoadedObject { meta, mesh, model })
    }

    pub fn load_all(&self, ids: &[u32]) -> CliResult<BTreeMap<u32, LoadedObject>> {
        ids.par_iter().map(|&id| self.load(id).map(|o| (id, o))).collect()
    }
}
