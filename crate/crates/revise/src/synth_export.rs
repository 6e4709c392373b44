//! Synthetic datasets on disk.
//!
//! ```text
//! out/
//!   dataset.txt        generation parameters
//!   manifest.jsonl
//!   tasks.jsonl        full task descriptions, read by the oracle backend
//!   frames/synth-<seed>/000000.png ... meta.txt
//! ```

use std::fs;
use std::path::Path;

use revise_core::synth::{generate_task, SynthError, SyntheticTask};
use thiserror::Error;

use crate::frame_dir::{write_frame_dir, FrameDirError};
use crate::manifest::{read_jsonl, write_manifest, ManifestError, ManifestRecord};
use crate::records::write_jsonl;

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub items: usize,
    pub length: usize,
    /// Inclusive range of evidence counts.
    pub k_min: usize,
    pub k_max: usize,
    pub n_options: usize,
    pub fps: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            items: 20,
            length: 40,
            k_min: 2,
            k_max: 8,
            n_options: 4,
            fps: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthExportError {
    #[error("k_min {k_min} exceeds k_max {k_max}")]
    BadRange { k_min: usize, k_max: usize },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    FrameDir(#[from] FrameDirError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Tasks for `spec`, a pure function of it.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<SyntheticTask>, SynthExportError> {
    if spec.k_min > spec.k_max {
        return Err(SynthExportError::BadRange {
            k_min: spec.k_min,
            k_max: spec.k_max,
        });
    }
    let span = (spec.k_max - spec.k_min + 1) as u64;
    (0..spec.items as u64)
        .map(|i| {
            let task_seed = mix(spec.seed ^ mix(i));
            let k = spec.k_min + (mix(task_seed) % span) as usize;
            Ok(generate_task(task_seed, spec.length, k, spec.n_options)?.with_fps(spec.fps)?)
        })
        .collect()
}

pub fn manifest_record(task: &SyntheticTask) -> ManifestRecord {
    ManifestRecord {
        id: task.id.clone(),
        video_path: format!("frames/{}", task.id),
        question: task.question.clone(),
        options: task.options.iter().map(|o| o.text.clone()).collect(),
        answer: task.correct.clone(),
        category: Some(format!("k{}", task.k())),
    }
}

/// Writes `tasks` under `dir` in the layout above.
pub fn export_dataset(tasks: &[SyntheticTask], dir: &Path, spec: Option<&SynthSpec>) -> Result<(), SynthExportError> {
    fs::create_dir_all(dir.join("frames"))?;
    for t in tasks {
        write_frame_dir(t, &dir.join("frames").join(&t.id))?;
    }
    let records: Vec<ManifestRecord> = tasks.iter().map(manifest_record).collect();
    write_manifest(&dir.join(MANIFEST_FILE), &records)?;
    write_jsonl(&dir.join(TASKS_FILE), tasks)?;
    if let Some(s) = spec {
        fs::write(
            dir.join("dataset.txt"),
            format!(
                "seed={}\nitems={}\nlength={}\nk_min={}\nk_max={}\nn_options={}\nfps={}\n",
                s.seed, s.items, s.length, s.k_min, s.k_max, s.n_options, s.fps
            ),
        )?;
    }
    Ok(())
}

pub fn load_tasks(path: &Path) -> Result<Vec<SyntheticTask>, ManifestError> {
    read_jsonl(path)
}
