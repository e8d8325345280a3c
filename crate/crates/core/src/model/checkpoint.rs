use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ParamSet};
use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.json";

/// JSON side of a checkpoint directory; tensors live next to it as `.jtt`
/// files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    /// Last completed stage, if any.
    pub stage: Option<String>,
    pub step: u64,
    pub num_scalars: usize,
    pub student: BTreeMap<String, String>,
    pub teacher: Option<BTreeMap<String, String>>,
}

pub fn save_checkpoint(
    dir: &Path,
    config: &ModelConfig,
    stage: Option<&str>,
    step: u64,
    student: &ParamSet<f32>,
    teacher: Option<&ParamSet<f32>>,
) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir)?;
    let student_files = student.save(dir, "student.")?;
    let teacher_files = teacher.map(|t| t.save(dir, "teacher.")).transpose()?;
    let manifest = CheckpointManifest {
        format: "JTT1".into(),
        config: config.clone(),
        stage: stage.map(str::to_owned),
        step,
        num_scalars: student.num_scalars(),
        student: student_files,
        teacher: teacher_files,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a checkpoint and checks the student against the manifest's config.
pub fn load_checkpoint(
    dir: &Path,
) -> Result<(CheckpointManifest, ParamSet<f32>, Option<ParamSet<f32>>)> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Dependency {
            what: "checkpoint".into(),
            path,
        });
    }
    let manifest: CheckpointManifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if manifest.format != "JTT1" {
        return Err(Error::Checkpoint(format!(
            "unknown format {}",
            manifest.format
        )));
    }
    let student = ParamSet::load(dir, &manifest.student)?;
    let reference = super::Model::new(manifest.config.clone())?.init::<f32>(0);
    reference.check_manifest(&student)?;
    let teacher = match &manifest.teacher {
        Some(files) => {
            let t = ParamSet::load(dir, files)?;
            reference.check_manifest(&t)?;
            Some(t)
        }
        None => None,
    };
    Ok((manifest, student, teacher))
}
