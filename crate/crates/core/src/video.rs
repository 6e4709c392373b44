//! Indexable frame access.

use crate::backend::ImagePayload;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VideoError {
    #[error("frame {index} out of range for video of length {length}")]
    IndexOutOfRange { index: usize, length: usize },
    #[error("failed to read frame {index}: {reason}")]
    Read { index: usize, reason: alloc::string::String },
}

/// One decoded-or-encoded frame with its timestamp in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: ImagePayload,
    pub timestamp: f64,
}

/// A video `V = {x_i}` of `len()` frames sampled at `fps()`.
///
/// `frame_at` must be referentially transparent: the same index always
/// yields the same bytes.
pub trait VideoSource: Sync {
    fn id(&self) -> &str;
    fn len(&self) -> usize;
    fn fps(&self) -> f64;
    fn frame_at(&self, index: usize) -> Result<Frame, VideoError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn timestamp(&self, index: usize) -> f64 {
        index as f64 / self.fps()
    }
}
