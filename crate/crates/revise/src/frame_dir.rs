//! Pre-extracted frame directories.
//!
//! Layout: `{dir}/%06d.jpg` (or `.png`), one file per frame, plus a flat
//! `meta.txt` with `fps`, `source_id` and `duration`. A `%06d.txt` next to a
//! frame is read as its machine-readable label.
//!
//! Extracting frames from a video file, for example at 1 fps:
//!
//! ```text
//! ffmpeg -i clip.mp4 -vf fps=1 -start_number 0 clip/%06d.jpg
//! printf 'fps=1\nsource_id=clip\n' > clip/meta.txt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use revise_core::video::{Frame, VideoError, VideoSource};
use revise_core::ImagePayload;
use thiserror::Error;

pub const META_FILE: &str = "meta.txt";

#[derive(Debug, Error)]
pub enum FrameDirError {
    #[error("{0}: no such directory")]
    NotADirectory(PathBuf),
    #[error("{0}: missing meta.txt")]
    MissingMetadata(PathBuf),
    #[error("{path}: bad metadata: {reason}")]
    BadMetadata { path: PathBuf, reason: String },
    #[error("{dir}: frame {missing:06} is missing ({found} frames found)")]
    GapInIndices { dir: PathBuf, missing: usize, found: usize },
    #[error("{0}: no frames")]
    Empty(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FrameDirError + '_ {
    move |source| FrameDirError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Contents of `meta.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDirMeta {
    pub fps: f64,
    pub source_id: String,
    pub duration: Option<f64>,
}

/// Parses flat `key=value` text. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value", n + 1));
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl FrameDirMeta {
    pub fn parse(text: &str, dir: &Path) -> Result<Self, FrameDirError> {
        let bad = |reason: String| FrameDirError::BadMetadata {
            path: dir.join(META_FILE),
            reason,
        };
        let kv = parse_kv(text).map_err(bad)?;
        let fps: f64 = kv
            .get("fps")
            .ok_or_else(|| bad("fps is required".into()))?
            .parse()
            .map_err(|e| bad(format!("fps: {e}")))?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(bad(format!("fps must be positive, got {fps}")));
        }
        let source_id = match kv.get("source_id") {
            Some(s) if !s.is_empty() => s.clone(),
            _ => dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let duration = match kv.get("duration") {
            Some(d) => Some(d.parse().map_err(|e| bad(format!("duration: {e}")))?),
            None => None,
        };
        Ok(Self {
            fps,
            source_id,
            duration,
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!("fps={}\nsource_id={}\n", self.fps, self.source_id);
        if let Some(d) = self.duration {
            s.push_str(&format!("duration={d}\n"));
        }
        s
    }
}

/// A validated frame directory.
#[derive(Debug, Clone)]
pub struct FrameDirSource {
    dir: PathBuf,
    meta: FrameDirMeta,
    files: Vec<PathBuf>,
}

fn mime_for(path: &Path) -> Option<&'static str> {
    match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "jpg" | "jpeg" => Some("image/jpeg"),
        "png" => Some("image/png"),
        _ => None,
    }
}

/// Opens and validates `dir`: metadata present and indices `0..L` contiguous.
pub fn open_frame_dir(dir: impl AsRef<Path>) -> Result<FrameDirSource, FrameDirError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(FrameDirError::NotADirectory(dir.to_path_buf()));
    }
    let meta_path = dir.join(META_FILE);
    if !meta_path.is_file() {
        return Err(FrameDirError::MissingMetadata(dir.to_path_buf()));
    }
    let meta = FrameDirMeta::parse(&fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?, dir)?;

    let mut indexed = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if mime_for(&path).is_none() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.len() == 6 && stem.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(i) = stem.parse::<usize>() {
                indexed.insert(i, path);
            }
        }
    }
    if indexed.is_empty() {
        return Err(FrameDirError::Empty(dir.to_path_buf()));
    }
    let found = indexed.len();
    let mut files = Vec::with_capacity(found);
    for (expect, (i, path)) in indexed.into_iter().enumerate() {
        if i != expect {
            return Err(FrameDirError::GapInIndices {
                dir: dir.to_path_buf(),
                missing: expect,
                found,
            });
        }
        files.push(path);
    }
    Ok(FrameDirSource {
        dir: dir.to_path_buf(),
        meta,
        files,
    })
}

impl FrameDirSource {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &FrameDirMeta {
        &self.meta
    }
}

impl VideoSource for FrameDirSource {
    fn id(&self) -> &str {
        &self.meta.source_id
    }

    fn len(&self) -> usize {
        self.files.len()
    }

    fn fps(&self) -> f64 {
        self.meta.fps
    }

    fn frame_at(&self, index: usize) -> Result<Frame, VideoError> {
        let path = self.files.get(index).ok_or(VideoError::IndexOutOfRange {
            index,
            length: self.files.len(),
        })?;
        let read = |e: std::io::Error| VideoError::Read {
            index,
            reason: format!("{}: {e}", path.display()),
        };
        let data = fs::read(path).map_err(read)?;
        let mut image = ImagePayload::encoded(mime_for(path).unwrap_or("image/jpeg"), data);
        if let Ok(size) = image::ImageReader::new(std::io::Cursor::new(&image.data))
            .with_guessed_format()
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
        {
            (image.width, image.height) = size;
        }
        let label_path = path.with_extension("txt");
        if label_path.is_file() {
            image.label = Some(fs::read_to_string(&label_path).map_err(read)?.trim().to_string());
        }
        Ok(Frame {
            image,
            timestamp: self.timestamp(index),
        })
    }
}

/// Encodes a payload as PNG. Raw grayscale is converted; PNG and JPEG bytes
/// are returned as they are.
pub fn to_png(image: &ImagePayload) -> Result<Vec<u8>, image::ImageError> {
    if image.mime != ImagePayload::GRAY8 {
        return Ok(image.data.clone());
    }
    let buf = image::GrayImage::from_raw(image.width, image.height, image.data.clone()).ok_or_else(|| {
        image::ImageError::Parameter(image::error::ParameterError::from_kind(
            image::error::ParameterErrorKind::DimensionMismatch,
        ))
    })?;
    let mut out = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

/// Writes every frame of `video` as `%06d.png` (plus label files) and a
/// `meta.txt`.
pub fn write_frame_dir(video: &dyn VideoSource, dir: &Path) -> Result<(), FrameDirError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for i in 0..video.len() {
        let frame = video.frame_at(i).map_err(|e| FrameDirError::BadMetadata {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        let path = dir.join(format!("{i:06}.png"));
        let png = to_png(&frame.image).map_err(|e| FrameDirError::Io {
            path: path.clone(),
            source: std::io::Error::other(e),
        })?;
        fs::write(&path, png).map_err(io_err(&path))?;
        if let Some(label) = &frame.image.label {
            let lp = dir.join(format!("{i:06}.txt"));
            let mut f = fs::File::create(&lp).map_err(io_err(&lp))?;
            writeln!(f, "{label}").map_err(io_err(&lp))?;
        }
    }
    let meta = FrameDirMeta {
        fps: video.fps(),
        source_id: video.id().to_string(),
        duration: Some(video.len() as f64 / video.fps()),
    };
    let mp = dir.join(META_FILE);
    fs::write(&mp, meta.render()).map_err(io_err(&mp))
}
