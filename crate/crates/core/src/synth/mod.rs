//! Deterministic synthetic video QA.
//!
//! A task hides `k` evidence frames at secret indices of an `L`-frame video.
//! Evidence frames show a marker in the correct colour; every other frame
//! shows a distractor colour. Answering well requires finding enough
//! evidence frames.

pub mod oracle;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::ImagePayload;
use crate::protocol::AnswerSet;
use crate::video::{Frame, VideoError, VideoSource};

pub use oracle::{OracleBackend, OracleRules};

/// Frame side in pixels.
pub const FRAME_SIDE: u32 = 32;

const PALETTE: [&str; 10] = [
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "magenta", "white", "black",
];

pub const QUESTION: &str = "Which colour is the marker in the flagged frames?";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("evidence count {k} exceeds video length {length}")]
    TooMuchEvidence { k: usize, length: usize },
    #[error("need at least two options, got {0}")]
    TooFewOptions(usize),
    #[error("video length must be positive")]
    EmptyVideo,
    #[error("fps must be positive and finite")]
    BadFps,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticTask {
    pub id: String,
    pub seed: u64,
    pub length: usize,
    pub fps: f64,
    /// Sorted.
    pub evidence: Vec<usize>,
    pub question: String,
    pub options: AnswerSet,
    pub correct: String,
    /// Option index drawn in each frame.
    pub layout: Vec<u8>,
}

/// Builds the task for `seed`. Identical arguments give identical tasks.
pub fn generate_task(seed: u64, length: usize, k: usize, n_options: usize) -> Result<SyntheticTask, SynthError> {
    if length == 0 {
        return Err(SynthError::EmptyVideo);
    }
    if k > length {
        return Err(SynthError::TooMuchEvidence { k, length });
    }
    if n_options < 2 {
        return Err(SynthError::TooFewOptions(n_options));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evidence = index::sample(&mut rng, length, k).into_vec();
    evidence.sort_unstable();

    let texts: Vec<String> = (0..n_options)
        .map(|i| match PALETTE.get(i) {
            Some(c) => c.to_string(),
            None => format!("colour {i}"),
        })
        .collect();
    let options = AnswerSet::from_texts(texts);
    let correct_idx = rng.gen_range(0..n_options);
    let correct = options.get(correct_idx).map(|o| o.label.clone()).unwrap_or_default();

    let mut layout = Vec::with_capacity(length);
    let mut ev = evidence.iter().peekable();
    for i in 0..length {
        if ev.peek() == Some(&&i) {
            ev.next();
            layout.push(correct_idx as u8);
        } else {
            let d = rng.gen_range(0..n_options - 1);
            layout.push(if d >= correct_idx { d + 1 } else { d } as u8);
        }
    }

    Ok(SyntheticTask {
        id: format!("synth-{seed}"),
        seed,
        length,
        fps: 1.0,
        evidence,
        question: QUESTION.to_string(),
        options,
        correct,
        layout,
    })
}

impl SyntheticTask {
    pub fn with_fps(mut self, fps: f64) -> Result<Self, SynthError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(SynthError::BadFps);
        }
        self.fps = fps;
        Ok(self)
    }

    pub fn is_evidence(&self, index: usize) -> bool {
        self.evidence.binary_search(&index).is_ok()
    }

    pub fn k(&self) -> usize {
        self.evidence.len()
    }

    /// Sidecar label mirroring the pixel content.
    pub fn frame_label(&self, index: usize) -> String {
        format!(
            "frame={index};evidence={};colour={}",
            u8::from(self.is_evidence(index)),
            self.options
                .get(self.layout[index] as usize)
                .map(|o| o.text.as_str())
                .unwrap_or("")
        )
    }

    /// 32x32 grayscale. Bytes 0..4 hold the index (little endian), byte 4
    /// the evidence flag, byte 5 the colour index; the centre square is
    /// bright on evidence frames.
    pub fn render_frame(&self, index: usize) -> ImagePayload {
        let side = FRAME_SIDE as usize;
        let colour = self.layout[index];
        let evidence = self.is_evidence(index);
        let mut data = alloc::vec![40u8.wrapping_add(colour.wrapping_mul(20)); side * side];
        data[..4].copy_from_slice(&(index as u32).to_le_bytes());
        data[4] = u8::from(evidence);
        data[5] = colour;
        if evidence {
            for y in 12..20 {
                for x in 12..20 {
                    data[y * side + x] = 255;
                }
            }
        }
        let mut img = ImagePayload::gray(FRAME_SIDE, FRAME_SIDE, data);
        img.label = Some(self.frame_label(index));
        img
    }
}

/// Reads `(index, is_evidence)` back from a synthetic frame, preferring the
/// sidecar label and falling back to the pixels.
pub fn decode_frame(image: &ImagePayload) -> Option<(usize, bool)> {
    if let Some(label) = &image.label {
        let mut index = None;
        let mut evidence = None;
        for part in label.split(';') {
            if let Some(v) = part.strip_prefix("frame=") {
                index = v.parse().ok();
            } else if let Some(v) = part.strip_prefix("evidence=") {
                evidence = Some(v == "1");
            }
        }
        if let (Some(i), Some(e)) = (index, evidence) {
            return Some((i, e));
        }
    }
    if image.mime == ImagePayload::GRAY8 && image.data.len() >= 6 {
        let i = u32::from_le_bytes(image.data[..4].try_into().ok()?) as usize;
        return Some((i, image.data[4] == 1));
    }
    None
}

impl VideoSource for SyntheticTask {
    fn id(&self) -> &str {
        &self.id
    }

    fn len(&self) -> usize {
        self.length
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame_at(&self, index: usize) -> Result<Frame, VideoError> {
        if index >= self.length {
            return Err(VideoError::IndexOutOfRange {
                index,
                length: self.length,
            });
        }
        Ok(Frame {
            image: self.render_frame(index),
            timestamp: self.timestamp(index),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        assert_eq!(generate_task(7, 50, 5, 4), generate_task(7, 50, 5, 4));
        assert_ne!(generate_task(7, 50, 5, 4), generate_task(8, 50, 5, 4));
    }

    #[test]
    fn all_evidence_when_k_is_l() {
        let t = generate_task(1, 12, 12, 3).unwrap();
        assert!((0..12).all(|i| t.is_evidence(i)));
    }

    #[test]
    fn layout_matches_evidence() {
        let t = generate_task(3, 40, 6, 5).unwrap();
        let ci = t.options.index_of(&t.correct).unwrap() as u8;
        for i in 0..40 {
            assert_eq!(t.layout[i] == ci, t.is_evidence(i), "frame {i}");
        }
    }

    #[test]
    fn frames_decode_both_ways() {
        let t = generate_task(9, 300, 20, 4).unwrap();
        for i in [0, 1, 257, 299] {
            let mut img = t.frame_at(i).unwrap().image;
            assert_eq!(decode_frame(&img), Some((i, t.is_evidence(i))));
            img.label = None;
            assert_eq!(decode_frame(&img), Some((i, t.is_evidence(i))));
            assert_eq!(img.data.len(), 32 * 32);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(
            generate_task(0, 5, 6, 2),
            Err(SynthError::TooMuchEvidence { k: 6, length: 5 })
        );
        assert_eq!(generate_task(0, 5, 1, 1), Err(SynthError::TooFewOptions(1)));
        assert_eq!(generate_task(0, 0, 0, 2), Err(SynthError::EmptyVideo));
    }
}
