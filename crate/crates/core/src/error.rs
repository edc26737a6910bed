//! Crate-level error type.

use thiserror::Error;

use crate::cloud::CloudError;
use crate::coverage::CoverageError;
use crate::ply::PlyError;
use crate::primitives::FitError;
use crate::segmentation::SegmentationError;
use crate::session::SessionError;
use crate::surface::SurfaceError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
