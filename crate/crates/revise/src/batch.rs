//! Running many episodes at once.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use revise_core::synth::SyntheticTask;
use revise_core::{run_episode, EpisodeConfig, EpisodeError, ModelBackend, Trajectory, VideoSource};
use serde::{Deserialize, Serialize};

use crate::frame_dir::open_frame_dir;
use crate::manifest::QaItem;

/// Opens the video behind a manifest item.
pub trait VideoResolver: Sync {
    fn open(&self, item: &QaItem) -> Result<Box<dyn VideoSource + Send>, String>;
}

/// Reads `item.video_path` as a frame directory.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameDirResolver;

impl VideoResolver for FrameDirResolver {
    fn open(&self, item: &QaItem) -> Result<Box<dyn VideoSource + Send>, String> {
        open_frame_dir(&item.video_path)
            .map(|s| Box::new(s) as Box<dyn VideoSource + Send>)
            .map_err(|e| e.to_string())
    }
}

/// Serves synthetic tasks from memory, keyed by item id.
#[derive(Debug, Clone, Default)]
pub struct SynthResolver {
    pub tasks: BTreeMap<String, SyntheticTask>,
}

impl SynthResolver {
    pub fn new(tasks: impl IntoIterator<Item = SyntheticTask>) -> Self {
        Self {
            tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
        }
    }
}

impl VideoResolver for SynthResolver {
    fn open(&self, item: &QaItem) -> Result<Box<dyn VideoSource + Send>, String> {
        self.tasks
            .get(&item.id)
            .map(|t| Box::new(t.clone()) as Box<dyn VideoSource + Send>)
            .ok_or_else(|| format!("no synthetic task {}", item.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemErrorKind {
    Video,
    Backend,
    Config,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemError {
    pub id: String,
    pub kind: ItemErrorKind,
    pub message: String,
    pub partial: Option<Trajectory>,
}

/// Runs one item, timing it.
pub fn run_item(
    item: &QaItem,
    resolver: &dyn VideoResolver,
    backend: &dyn ModelBackend,
    config: &EpisodeConfig,
) -> Result<Trajectory, ItemError> {
    let fail = |kind, message: String, partial| ItemError {
        id: item.id.clone(),
        kind,
        message,
        partial,
    };
    let start = Instant::now();
    let video = resolver.open(item).map_err(|m| fail(ItemErrorKind::Video, m, None))?;
    let result = run_episode(&*video, &item.question, &item.options, backend, config);
    let ms = start.elapsed().as_millis() as u64;
    match result {
        Ok(mut t) => {
            t.wall_ms = ms;
            Ok(t)
        }
        Err(e) => {
            let kind = match &e {
                EpisodeError::Backend { .. } => ItemErrorKind::Backend,
                EpisodeError::Video { .. } | EpisodeError::EmptyVideo => ItemErrorKind::Video,
                _ => ItemErrorKind::Config,
            };
            let partial = e.partial().cloned().map(|mut t| {
                t.wall_ms = ms;
                t
            });
            Err(fail(kind, e.to_string(), partial))
        }
    }
}

/// Runs every item with up to `parallelism` episodes in flight. The output
/// is in input order and does not depend on `parallelism` (apart from wall
/// times).
pub fn run_batch(
    items: &[QaItem],
    resolver: &dyn VideoResolver,
    backend: &dyn ModelBackend,
    config: &EpisodeConfig,
    parallelism: usize,
) -> Vec<Result<Trajectory, ItemError>> {
    let parallelism = parallelism.max(1);
    if parallelism == 1 || items.len() <= 1 {
        return items.iter().map(|i| run_item(i, resolver, backend, config)).collect();
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(p) => p,
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            return items.iter().map(|i| run_item(i, resolver, backend, config)).collect();
        }
    };
    pool.install(|| {
        items
            .par_iter()
            .map(|i| run_item(i, resolver, backend, config))
            .collect()
    })
}
