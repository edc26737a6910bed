//! Session logs: one JSON record per line, replayable through the engine.
//!
//! The log holds the configuration, every applied contact revision with the
//! iteration count it took effect at, every snapshot, the crop edits and the
//! planning configuration. Replaying reruns the engine with the same seed and
//! checks each artifact against the recorded one.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CloudRef, Phase, Session, SessionError};
use crate::cloud::PointCloud;
use crate::coverage::{plan_patch, trajectory_to_json, CoverageConfig, Trajectory};
use crate::hash::sha256_hex;
use crate::ply::load_ply;
use crate::segmentation::{
    run_session, AppliedRevision, SegmentationConfig, SegmentationSnapshot, ScriptedEvents, SessionEvent,
};
use crate::surface::{CropEdit, SupportGrid, SurfaceConfig, SurfacePatch};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogRecord {
    Header {
        version: u32,
        session: String,
        phase: Phase,
        config: SegmentationConfig,
        surface: SurfaceConfig,
        cloud: CloudRef,
    },
    Contacts(AppliedRevision),
    Snapshot(SegmentationSnapshot),
    /// Iterations run; `stopped` once segmentation has ended.
    Steps {
        steps: u64,
        stopped: bool,
    },
    /// The support grid as first built and the hash of the final patch.
    Patch {
        base: SupportGrid,
        sha256: String,
    },
    Edit(CropEdit),
    Trajectory {
        config: CoverageConfig,
        sha256: String,
        poses: usize,
    },
    End,
}

impl LogRecord {
    pub fn name(&self) -> &'static str {
        match self {
            LogRecord::Header { .. } => "header",
            LogRecord::Contacts(_) => "contacts",
            LogRecord::Snapshot(_) => "snapshot",
            LogRecord::Steps { .. } => "steps",
            LogRecord::Patch { .. } => "patch",
            LogRecord::Edit(_) => "edit",
            LogRecord::Trajectory { .. } => "trajectory",
            LogRecord::End => "end",
        }
    }
}

/// A parsed session log.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session: String,
    pub phase: Phase,
    pub config: SegmentationConfig,
    pub surface: SurfaceConfig,
    pub cloud: CloudRef,
    pub revisions: Vec<AppliedRevision>,
    pub snapshots: Vec<Arc<SegmentationSnapshot>>,
    pub steps: u64,
    pub stopped: bool,
    pub patch: Option<(SupportGrid, String)>,
    pub edits: Vec<CropEdit>,
    pub trajectory: Option<(CoverageConfig, String, usize)>,
}

fn trajectory_hash(t: &Trajectory) -> String {
    sha256_hex(trajectory_to_json(t).as_bytes())
}

/// Log records describing the session's current state.
pub fn session_records(session: &Session) -> Result<Vec<LogRecord>, SessionError> {
    let cloud = session
        .cloud_ref()
        .cloned()
        .ok_or_else(|| SessionError::NotReady("session has no cloud to log".into()))?;
    let progress = session.progress().state();
    let mut out = vec![LogRecord::Header {
        version: LOG_FORMAT_VERSION,
        session: session.id().to_string(),
        phase: session.phase(),
        config: session.config().clone(),
        surface: *session.surface_config(),
        cloud,
    }];
    out.extend(progress.revisions.iter().cloned().map(LogRecord::Contacts));
    out.extend(progress.history.iter().map(|s| LogRecord::Snapshot((**s).clone())));
    let (steps, stopped) = match session.stopped_at() {
        Some(n) => (n, true),
        None => (progress.history.last().map_or(0, |s| s.t), false),
    };
    out.push(LogRecord::Steps { steps, stopped });
    if let (Some(base), Some(patch)) = (session.base_grid(), session.patch()) {
        out.push(LogRecord::Patch {
            base: base.clone(),
            sha256: patch.content_hash(),
        });
        out.extend(patch.edits.iter().cloned().map(LogRecord::Edit));
    }
    if let Some(t) = session.trajectory() {
        out.push(LogRecord::Trajectory {
            config: t.config,
            sha256: trajectory_hash(t),
            poses: t.poses.len(),
        });
    }
    out.push(LogRecord::End);
    Ok(out)
}

pub fn session_log_string(session: &Session) -> Result<String, SessionError> {
    let mut text = String::new();
    for r in session_records(session)? {
        text.push_str(&serde_json::to_string(&r)?);
        text.push('\n');
    }
    Ok(text)
}

/// Writes the log next to `path` and renames it into place.
pub fn persist_session(session: &Session, path: impl AsRef<Path>) -> Result<(), SessionError> {
    let path = path.as_ref();
    let text = session_log_string(session)?;
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn parse_session_log(text: &str) -> Result<SessionLog, SessionError> {
    let mut last_valid = "none".to_string();
    let mut log: Option<SessionLog> = None;
    let mut ended = false;
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let bad = |last: &str| SessionError::Truncated {
            line: lineno,
            last_valid: last.to_string(),
        };
        if ended {
            return Err(bad(&last_valid));
        }
        let record: LogRecord = serde_json::from_str(line).map_err(|_| bad(&last_valid))?;
        count = lineno;
        match (record.clone(), log.as_mut()) {
            (
                LogRecord::Header {
                    version,
                    session,
                    phase,
                    config,
                    surface,
                    cloud,
                },
                None,
            ) if version == LOG_FORMAT_VERSION => {
                log = Some(SessionLog {
                    session,
                    phase,
                    config,
                    surface,
                    cloud,
                    revisions: Vec::new(),
                    snapshots: Vec::new(),
                    steps: 0,
                    stopped: false,
                    patch: None,
                    edits: Vec::new(),
                    trajectory: None,
                })
            }
            (LogRecord::Header { .. }, _) | (_, None) => return Err(bad(&last_valid)),
            (LogRecord::Contacts(r), Some(l)) => l.revisions.push(r),
            (LogRecord::Snapshot(s), Some(l)) => l.snapshots.push(Arc::new(s)),
            (LogRecord::Steps { steps, stopped }, Some(l)) => {
                l.steps = steps;
                l.stopped = stopped;
            }
            (LogRecord::Patch { base, sha256 }, Some(l)) => l.patch = Some((base, sha256)),
            (LogRecord::Edit(e), Some(l)) => l.edits.push(e),
            (LogRecord::Trajectory { config, sha256, poses }, Some(l)) => l.trajectory = Some((config, sha256, poses)),
            (LogRecord::End, Some(_)) => ended = true,
        }
        last_valid = format!("line {lineno} ({})", record.name());
    }
    if !ended {
        return Err(SessionError::Truncated {
            line: count + 1,
            last_valid,
        });
    }
    Ok(log.expect("an ended log has a header"))
}

pub fn read_session_log(path: impl AsRef<Path>) -> Result<SessionLog, SessionError> {
    parse_session_log(&std::fs::read_to_string(path)?)
}

/// Artifacts recomputed from a log.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub last: Option<Arc<SegmentationSnapshot>>,
    pub snapshots: usize,
    pub patch: Option<SurfacePatch>,
    pub trajectory: Option<Trajectory>,
}

/// Loads the cloud named in the log header.
pub fn load_logged_cloud(log: &SessionLog) -> Result<PointCloud, SessionError> {
    let path = log
        .cloud
        .path
        .as_ref()
        .ok_or_else(|| SessionError::Input("log does not name a cloud file; pass one explicitly".into()))?;
    Ok(load_ply(path)?)
}

/// Reruns the engine, crops and planning, and fails on the first artifact
/// that differs from the log.
pub fn replay_session_log(log: &SessionLog, cloud: &PointCloud) -> Result<ReplayOutcome, SessionError> {
    let got = CloudRef::of(cloud, log.cloud.path.clone());
    if got.sha256 != log.cloud.sha256 {
        return Err(SessionError::Input(format!(
            "cloud digest {} does not match the logged {}",
            got.sha256, log.cloud.sha256
        )));
    }
    let mismatch = |m: String| Err(SessionError::ReplayMismatch(m));
    if log.snapshots.is_empty() {
        return Ok(ReplayOutcome {
            last: None,
            snapshots: 0,
            patch: None,
            trajectory: None,
        });
    }
    let script = log
        .revisions
        .iter()
        .map(|r| (r.after_steps, SessionEvent::Contacts(r.contacts.clone())))
        .chain(std::iter::once((log.steps, SessionEvent::Stop)));
    let outcome = run_session(cloud, &log.config, &mut ScriptedEvents::new(script))?;
    if outcome.history.len() != log.snapshots.len() {
        return mismatch(format!(
            "{} snapshots replayed, {} logged",
            outcome.history.len(),
            log.snapshots.len()
        ));
    }
    if let Some(k) = (0..outcome.history.len()).find(|&k| outcome.history[k] != log.snapshots[k]) {
        return mismatch(format!("snapshot {} differs", k + 1));
    }
    if outcome.revisions != log.revisions {
        return mismatch("contact revisions differ".into());
    }
    let mut result = ReplayOutcome {
        last: Some(outcome.last.clone()),
        snapshots: outcome.history.len(),
        patch: None,
        trajectory: None,
    };
    let Some((base, sha)) = &log.patch else {
        return Ok(result);
    };
    let built = SurfacePatch::build(&outcome.last.model, cloud, &outcome.last.object_inliers, &log.surface)?;
    if &built.grid != base {
        return mismatch("support grid differs".into());
    }
    let patch = SurfacePatch::replay(&built.model, built.grid, &log.edits)?;
    if &patch.content_hash() != sha {
        return mismatch("cropped patch differs".into());
    }
    if let Some((config, sha, _)) = &log.trajectory {
        let t = plan_patch(&patch, config)?;
        if &trajectory_hash(&t) != sha {
            return mismatch("trajectory differs".into());
        }
        result.trajectory = Some(t);
    }
    result.patch = Some(patch);
    Ok(result)
}
