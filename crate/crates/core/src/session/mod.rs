//! Stateful sessions: the phase machine that walks an operator from contact
//! points to an exported trajectory, with one engine worker per session.
//!
//! Phases only move forward: `loading → segmenting → editing → planning →
//! done`. Crops may return a planned session to `editing`.

pub mod journal;
pub mod protocol;
pub mod server;

use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, PointCloud, SpatialIndex};
use crate::coverage::{plan_patch, trajectory_to_csv, trajectory_to_json, CoverageConfig, CoverageError, Trajectory};
use crate::ply::{load_ply, PlyError};
use crate::segmentation::{
    run_session_observed, AppliedRevision, ContactPointSet, ContactSource, EventSource, SegmentationConfig,
    SegmentationError, SegmentationSnapshot, SessionEvent, SessionOutcome, SessionProgress,
};
use crate::surface::{apply_crop, CropEdit, CropRegion, CropStatus, SupportGrid, SurfaceConfig, SurfaceError, SurfacePatch};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Loading,
    Segmenting,
    Editing,
    Planning,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Loading => "loading",
            Phase::Segmenting => "segmenting",
            Phase::Editing => "editing",
            Phase::Planning => "planning",
            Phase::Done => "done",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{op} is not allowed in phase {phase}")]
    Phase { op: &'static str, phase: Phase },
    #[error("{0}")]
    NotReady(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("log line {line} is truncated or corrupt (last valid record: {last_valid})")]
    Truncated { line: usize, last_valid: String },
    #[error("replay diverged: {0}")]
    ReplayMismatch(String),
    #[error("engine worker failed: {0}")]
    Worker(String),
}

impl SessionError {
    /// Error code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Phase { .. } | SessionError::NotReady(_) => "phase",
            SessionError::Input(_) | SessionError::Json(_) => "bad_payload",
            SessionError::Ply(_) | SessionError::Cloud(_) => "cloud",
            SessionError::Segmentation(_) => "segmentation",
            SessionError::Surface(_) => "surface",
            SessionError::Coverage(_) => "coverage",
            SessionError::Io(_) => "io",
            SessionError::Truncated { .. } => "log",
            SessionError::ReplayMismatch(_) | SessionError::Worker(_) => "internal",
        }
    }

    /// Whether the error is caused by the caller's input rather than a bug.
    pub fn is_input(&self) -> bool {
        !matches!(self, SessionError::ReplayMismatch(_) | SessionError::Worker(_))
    }
}

/// Where a session's cloud came from, with a digest of its coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub points: usize,
    pub sha256: String,
}

impl CloudRef {
    pub fn of(cloud: &PointCloud, path: Option<String>) -> Self {
        Self {
            path,
            points: cloud.len(),
            sha256: crate::hash::cloud_digest(cloud),
        }
    }
}

/// Everything the engine worker has produced so far.
#[derive(Debug, Clone, Default)]
pub struct ProgressState {
    /// Bumped on every new snapshot.
    pub version: u64,
    pub history: Vec<Arc<SegmentationSnapshot>>,
    pub revisions: Vec<AppliedRevision>,
}

/// Shared between the engine worker, the session and connection writers.
#[derive(Debug, Default)]
pub struct Progress {
    state: Mutex<ProgressState>,
}

impl Progress {
    fn lock(&self) -> MutexGuard<'_, ProgressState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The newest snapshot and its version.
    pub fn latest(&self) -> (u64, Option<Arc<SegmentationSnapshot>>) {
        let s = self.lock();
        (s.version, s.history.last().cloned())
    }

    pub fn snapshot_count(&self) -> usize {
        self.lock().history.len()
    }

    pub fn state(&self) -> ProgressState {
        self.lock().clone()
    }

    fn record(&self, p: SessionProgress) {
        let mut s = self.lock();
        match p {
            SessionProgress::Applied(r) => s.revisions.push(r),
            SessionProgress::Snapshot(snap) => {
                s.history.push(snap);
                s.version += 1;
            }
        }
    }

    fn reset(&self) {
        *self.lock() = ProgressState::default();
    }
}

enum WorkerMsg {
    Contacts(ContactPointSet),
    StopAt(u64),
}

/// Feeds the worker loop from the session. A stop request takes effect once
/// the engine has run the requested number of iterations, or at once if the
/// engine is starved of contacts.
struct WorkerEvents {
    rx: Receiver<WorkerMsg>,
    stop_at: Option<u64>,
}

impl WorkerEvents {
    fn take(&mut self, msg: WorkerMsg, out: &mut Vec<SessionEvent>) {
        match msg {
            WorkerMsg::Contacts(c) => out.push(SessionEvent::Contacts(c)),
            WorkerMsg::StopAt(n) => self.stop_at = Some(n),
        }
    }
}

impl EventSource for WorkerEvents {
    fn poll(&mut self, steps_done: u64, waiting: bool) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(m) => self.take(m, &mut out),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    out.push(SessionEvent::Stop);
                    return out;
                }
            }
        }
        loop {
            let fresh = out.iter().any(|e| matches!(e, SessionEvent::Contacts(_)));
            if let Some(n) = self.stop_at {
                if steps_done >= n || (waiting && !fresh) {
                    out.push(SessionEvent::Stop);
                    return out;
                }
            }
            if !waiting || fresh {
                return out;
            }
            match self.rx.recv() {
                Ok(m) => self.take(m, &mut out),
                Err(_) => {
                    out.push(SessionEvent::Stop);
                    return out;
                }
            }
        }
    }
}

struct Worker {
    tx: Sender<WorkerMsg>,
    handle: JoinHandle<Result<SessionOutcome, SegmentationError>>,
}

fn spawn_worker(cloud: Arc<PointCloud>, config: SegmentationConfig, progress: Arc<Progress>) -> Worker {
    let (tx, rx) = channel();
    let handle = std::thread::spawn(move || {
        let mut events = WorkerEvents { rx, stop_at: None };
        run_session_observed(&cloud, &config, &mut events, &mut |p| progress.record(p))
    });
    Worker { tx, handle }
}

/// A UI click: either a 3D position or a viewing ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Click {
    Position {
        position: [f64; 3],
    },
    Ray {
        origin: [f64; 3],
        direction: [f64; 3],
        /// Largest accepted distance between ray and point.
        #[serde(default = "default_ray_tolerance")]
        tolerance: f64,
    },
}

fn default_ray_tolerance() -> f64 {
    0.01
}

/// Index of the cloud point closest to the forward ray, ties broken by depth;
/// `None` if no point lies within `tolerance`.
pub fn snap_ray(cloud: &PointCloud, origin: &Vec3, direction: &Vec3, tolerance: f64) -> Option<usize> {
    let d = direction.try_normalize(0.0)?;
    let mut best: Option<(f64, f64, usize)> = None;
    for (i, p) in cloud.points().iter().enumerate() {
        let rel = p - origin;
        let t = rel.dot(&d);
        if t < 0.0 {
            continue;
        }
        let dist = (rel - d * t).norm();
        if dist > tolerance {
            continue;
        }
        if best.is_none_or(|(bd, bt, _)| dist < bd || (dist == bd && t < bt)) {
            best = Some((dist, t, i));
        }
    }
    best.map(|b| b.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    #[default]
    Json,
    Csv,
}

pub struct Session {
    id: String,
    phase: Phase,
    config: SegmentationConfig,
    surface_config: SurfaceConfig,
    cloud: Option<Arc<PointCloud>>,
    cloud_ref: Option<CloudRef>,
    contacts: ContactPointSet,
    progress: Arc<Progress>,
    worker: Option<Worker>,
    stopped_at: Option<u64>,
    base_grid: Option<SupportGrid>,
    patch: Option<SurfacePatch>,
    next_edit: u64,
    trajectory: Option<Trajectory>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Self::with_id(uuid::Uuid::new_v4().to_string())
    }

    pub fn with_id(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            phase: Phase::Loading,
            config: SegmentationConfig::default(),
            surface_config: SurfaceConfig::default(),
            cloud: None,
            cloud_ref: None,
            contacts: ContactPointSet::new(),
            progress: Arc::new(Progress::default()),
            worker: None,
            stopped_at: None,
            base_grid: None,
            patch: None,
            next_edit: 1,
            trajectory: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn config(&self) -> &SegmentationConfig {
        &self.config
    }

    pub fn surface_config(&self) -> &SurfaceConfig {
        &self.surface_config
    }

    pub fn cloud(&self) -> Option<&Arc<PointCloud>> {
        self.cloud.as_ref()
    }

    pub fn cloud_ref(&self) -> Option<&CloudRef> {
        self.cloud_ref.as_ref()
    }

    pub fn contacts(&self) -> &ContactPointSet {
        &self.contacts
    }

    pub fn progress(&self) -> Arc<Progress> {
        self.progress.clone()
    }

    pub fn latest_snapshot(&self) -> Option<Arc<SegmentationSnapshot>> {
        self.progress.latest().1
    }

    /// Iteration count at which segmentation was stopped.
    pub fn stopped_at(&self) -> Option<u64> {
        self.stopped_at
    }

    /// The patch as first built, before any crop.
    pub fn base_grid(&self) -> Option<&SupportGrid> {
        self.base_grid.as_ref()
    }

    pub fn patch(&self) -> Option<&SurfacePatch> {
        self.patch.as_ref()
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.trajectory.as_ref()
    }

    fn require(&self, op: &'static str, allowed: &[Phase]) -> Result<(), SessionError> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else {
            Err(SessionError::Phase { op, phase: self.phase })
        }
    }

    pub fn configure(
        &mut self,
        config: Option<SegmentationConfig>,
        surface: Option<SurfaceConfig>,
    ) -> Result<(), SessionError> {
        self.require("configure", &[Phase::Loading])?;
        if let Some(c) = config {
            c.validate()?;
            self.config = c;
        }
        if let Some(s) = surface {
            if !(s.cell > 0.0 && s.cell.is_finite()) {
                return Err(SurfaceError::InvalidCell(s.cell).into());
            }
            self.surface_config = s;
        }
        Ok(())
    }

    /// Installs the cloud and starts the engine worker.
    pub fn load_cloud(&mut self, cloud: PointCloud, path: Option<String>) -> Result<(), SessionError> {
        self.require("load_cloud", &[Phase::Loading])?;
        if cloud.is_empty() {
            return Err(CloudError::Empty.into());
        }
        let cloud = Arc::new(cloud);
        self.cloud_ref = Some(CloudRef::of(&cloud, path));
        self.worker = Some(spawn_worker(cloud.clone(), self.config.clone(), self.progress.clone()));
        self.cloud = Some(cloud);
        self.phase = Phase::Segmenting;
        Ok(())
    }

    pub fn load_cloud_file(&mut self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        self.require("load_cloud", &[Phase::Loading])?;
        let cloud = load_ply(path.as_ref())?;
        self.load_cloud(cloud, Some(path.as_ref().display().to_string()))
    }

    fn send_contacts(&self) -> Result<(), SessionError> {
        let worker = self.worker.as_ref().ok_or_else(|| SessionError::Worker("no engine worker".into()))?;
        worker
            .tx
            .send(WorkerMsg::Contacts(self.contacts.clone()))
            .map_err(|_| SessionError::Worker("engine worker exited".into()))
    }

    /// Appends one batch and returns the new revision.
    pub fn add_contacts(&mut self, positions: &[Vec3], source: ContactSource) -> Result<u64, SessionError> {
        self.require("add_contact_points", &[Phase::Segmenting])?;
        if positions.is_empty() {
            return Err(SessionError::Input("empty contact batch".into()));
        }
        let mut next = self.contacts.clone();
        let revision = next.add_batch(positions, source)?;
        self.contacts = next;
        self.send_contacts()?;
        Ok(revision)
    }

    /// Snaps a click to the cloud and adds it as a one-point batch. Returns
    /// the snapped point index and the new revision.
    pub fn add_click(&mut self, click: &Click) -> Result<(usize, u64), SessionError> {
        self.require("add_contact_click", &[Phase::Segmenting])?;
        let cloud = self.cloud.clone().expect("segmenting sessions have a cloud");
        let index = match click {
            Click::Position { position } => {
                let q = Vec3::from(*position);
                if !q.iter().all(|c| c.is_finite()) {
                    return Err(SessionError::Input("non-finite click position".into()));
                }
                SpatialIndex::with_auto_cell(&cloud)?.nearest_point(&q)?
            }
            Click::Ray {
                origin,
                direction,
                tolerance,
            } => snap_ray(&cloud, &Vec3::from(*origin), &Vec3::from(*direction), *tolerance)
                .ok_or_else(|| SessionError::Input("ray hits no point within tolerance".into()))?,
        };
        let revision = self.add_contacts(&[cloud.point(index)], ContactSource::Selected)?;
        Ok((index, revision))
    }

    /// Removes the latest batch; `None` when there was nothing to undo.
    pub fn undo_contacts(&mut self) -> Result<Option<u64>, SessionError> {
        self.require("undo_contact_batch", &[Phase::Segmenting])?;
        let Some(revision) = self.contacts.undo_batch() else {
            return Ok(None);
        };
        self.send_contacts()?;
        Ok(Some(revision))
    }

    /// Stops the engine after `after_steps` iterations (at once when `None`)
    /// and builds the surface patch from the final snapshot.
    pub fn stop(&mut self, after_steps: Option<u64>) -> Result<Arc<SegmentationSnapshot>, SessionError> {
        self.require("stop_segmentation", &[Phase::Segmenting])?;
        if after_steps.is_none() && self.progress.snapshot_count() == 0 {
            return Err(SessionError::NotReady("no snapshot yet; add contact points first".into()));
        }
        let worker = self.worker.take().expect("segmenting sessions have a worker");
        let _ = worker.tx.send(WorkerMsg::StopAt(after_steps.unwrap_or(0)));
        let result = worker
            .handle
            .join()
            .map_err(|_| SessionError::Worker("engine worker panicked".into()))?;
        let outcome = match result {
            Ok(o) => o,
            Err(SegmentationError::NoModel) => {
                // Nothing to keep: restart the engine on the current contacts.
                self.progress.reset();
                let cloud = self.cloud.clone().expect("segmenting sessions have a cloud");
                self.worker = Some(spawn_worker(cloud, self.config.clone(), self.progress.clone()));
                if !self.contacts.is_empty() {
                    self.send_contacts()?;
                }
                return Err(SessionError::NotReady("engine stopped before producing a snapshot".into()));
            }
            Err(e) => return Err(e.into()),
        };
        self.stopped_at = Some(outcome.steps);
        self.phase = Phase::Editing;
        let last = outcome.last.clone();
        let cloud = self.cloud.clone().expect("segmenting sessions have a cloud");
        let patch = SurfacePatch::build(&last.model, &cloud, &last.object_inliers, &self.surface_config)?;
        self.base_grid = Some(patch.grid.clone());
        self.patch = Some(patch);
        Ok(last)
    }

    /// Applies a crop. Without an explicit `seq` the next edit number is used.
    pub fn crop(&mut self, region: CropRegion, seq: Option<u64>) -> Result<CropStatus, SessionError> {
        self.require("crop", &[Phase::Editing, Phase::Planning])?;
        let patch = self
            .patch
            .as_ref()
            .ok_or_else(|| SessionError::NotReady("no surface patch".into()))?;
        let edit = CropEdit {
            seq: seq.unwrap_or(self.next_edit),
            region,
        };
        let (next, status) = apply_crop(patch, &edit)?;
        if matches!(status, CropStatus::Applied { .. } | CropStatus::Emptied { .. }) {
            self.next_edit = edit.seq + 1;
            self.patch = Some(next);
            self.trajectory = None;
            self.phase = Phase::Editing;
        }
        Ok(status)
    }

    /// Drops the latest crop. Returns whether there was one.
    pub fn undo_crop(&mut self) -> Result<bool, SessionError> {
        self.require("undo_crop", &[Phase::Editing, Phase::Planning])?;
        let (Some(patch), Some(base)) = (&self.patch, &self.base_grid) else {
            return Err(SessionError::NotReady("no surface patch".into()));
        };
        if patch.edits.is_empty() {
            return Ok(false);
        }
        let edits = &patch.edits[..patch.edits.len() - 1];
        self.patch = Some(SurfacePatch::replay(&patch.model, base.clone(), edits)?);
        self.trajectory = None;
        self.phase = Phase::Editing;
        Ok(true)
    }

    pub fn plan(&mut self, config: &CoverageConfig) -> Result<&Trajectory, SessionError> {
        self.require("plan", &[Phase::Editing, Phase::Planning])?;
        let patch = self
            .patch
            .as_ref()
            .ok_or_else(|| SessionError::NotReady("no surface patch".into()))?;
        let trajectory = plan_patch(patch, config)?;
        self.phase = Phase::Planning;
        Ok(self.trajectory.insert(trajectory))
    }

    /// Writes the trajectory file.
    pub fn export(&mut self, path: impl AsRef<Path>, format: ExportFormat) -> Result<(), SessionError> {
        self.require("export", &[Phase::Planning, Phase::Done])?;
        let t = self.trajectory.as_ref().expect("planned sessions have a trajectory");
        let text = match format {
            ExportFormat::Json => trajectory_to_json(t),
            ExportFormat::Csv => trajectory_to_csv(t),
        };
        std::fs::write(path, text)?;
        self.phase = Phase::Done;
        Ok(())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.tx.send(WorkerMsg::StopAt(0));
            let _ = w.handle.join();
        }
    }
}
