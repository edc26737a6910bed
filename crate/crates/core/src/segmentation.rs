//! Contact-point guided segmentation.
//!
//! Every iteration draws one subset `S` from the current contact points,
//! fits every enabled primitive to it, and scores each candidate with
//!
//! ```text
//! score = (|OI| / |OP| + |CI| / |CP|) / D_M
//! ```
//!
//! where `OI`/`CI` are the object and contact points closer than `tau` to the
//! candidate and `D_M` is the per-kind complexity divisor. The incumbent is
//! re-scored against the current contact points each iteration and is only
//! replaced by a challenger with a strictly higher score; the winner is then
//! refit on its object inliers. The loop has no iteration limit or inlier
//! quota: it runs until the operator stops it.

use std::collections::VecDeque;
use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{PointCloud, PointIndexSet};
use crate::primitives::{fit, refit, ShapeKind, ShapeModel};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("waiting for input: {have} contact points, at least {need} needed")]
    WaitingForInput { have: usize, need: usize },
    #[error("the point cloud is empty")]
    EmptyCloud,
    #[error("no candidate model could be fitted this iteration")]
    NoCandidate,
    #[error("no model: the session stopped before any snapshot")]
    NoModel,
    #[error("invalid score arguments: {0}")]
    InvalidScore(String),
    #[error("invalid contact point: {0}")]
    InvalidContact(String),
}

/// Complexity divisor `D_M` per kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityTable {
    pub line: f64,
    pub plane: f64,
    pub sphere: f64,
    pub poly2: f64,
    pub poly3: f64,
}

impl Default for ComplexityTable {
    fn default() -> Self {
        Self {
            line: 1.0,
            plane: 2.0,
            sphere: 2.0,
            poly2: 2.5,
            poly3: 3.0,
        }
    }
}

impl ComplexityTable {
    pub fn get(&self, kind: ShapeKind) -> f64 {
        match kind {
            ShapeKind::Line => self.line,
            ShapeKind::Plane => self.plane,
            ShapeKind::Sphere => self.sphere,
            ShapeKind::Poly2 => self.poly2,
            ShapeKind::Poly3 => self.poly3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Inlier threshold in meters (strict `error < tau`).
    pub tau: f64,
    pub complexity: ComplexityTable,
    /// Size of the subset drawn from the contact points each iteration.
    pub sample_size: usize,
    pub rng_seed: u64,
    pub kinds_enabled: Vec<ShapeKind>,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            tau: 0.002,
            complexity: ComplexityTable::default(),
            sample_size: 12,
            rng_seed: 0,
            kinds_enabled: ShapeKind::ALL.to_vec(),
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let bad = |m: String| Err(SegmentationError::InvalidConfig(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        for kind in ShapeKind::ALL {
            let d = self.complexity.get(kind);
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("complexity of {kind} must be positive, got {d}"));
            }
        }
        if self.kinds_enabled.is_empty() {
            return bad("no shape kinds enabled".into());
        }
        let needed = self.kinds_enabled.iter().map(|k| k.min_samples()).max().unwrap_or(0);
        if self.sample_size < needed {
            return bad(format!(
                "sample_size {} is below the largest enabled minimum {needed}",
                self.sample_size
            ));
        }
        Ok(())
    }

    pub fn is_enabled(&self, kind: ShapeKind) -> bool {
        self.kinds_enabled.contains(&kind)
    }

    /// Fewest points any enabled kind can be fitted to.
    pub fn min_points(&self) -> usize {
        self.kinds_enabled.iter().map(|k| k.min_samples()).min().unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactSource {
    Selected,
    Demonstrated,
}

/// Time-varying contact points. Each mutation bumps the revision by one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactPointSet {
    revision: u64,
    #[serde(with = "vec3_list")]
    positions: Vec<Vec3>,
    sources: Vec<ContactSource>,
    batches: Vec<usize>,
}

pub(crate) mod vec3_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::Vec3;

    pub fn serialize<S: Serializer>(v: &[Vec3], s: S) -> Result<S::Ok, S::Error> {
        let arrays: Vec<[f64; 3]> = v.iter().map(|p| [p.x, p.y, p.z]).collect();
        arrays.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec3>, D::Error> {
        let arrays = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(arrays.into_iter().map(Vec3::from).collect())
    }
}

impl ContactPointSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds revision 1 holding `positions` as one batch.
    pub fn from_positions(positions: Vec<Vec3>, source: ContactSource) -> Result<Self, SegmentationError> {
        let mut set = Self::new();
        set.add_batch(&positions, source)?;
        Ok(set)
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn sources(&self) -> &[ContactSource] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn add_batch(&mut self, positions: &[Vec3], source: ContactSource) -> Result<u64, SegmentationError> {
        if let Some(p) = positions.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(SegmentationError::InvalidContact(format!("non-finite position {p:?}")));
        }
        self.positions.extend_from_slice(positions);
        self.sources.extend(std::iter::repeat_n(source, positions.len()));
        self.batches.push(positions.len());
        self.revision += 1;
        Ok(self.revision)
    }

    /// Removes the most recent batch; `None` when there is nothing to undo.
    pub fn undo_batch(&mut self) -> Option<u64> {
        let n = self.batches.pop()?;
        let keep = self.positions.len() - n;
        self.positions.truncate(keep);
        self.sources.truncate(keep);
        self.revision += 1;
        Some(self.revision)
    }
}

/// Model score: `((oi / op) + (ci / cp)) / d_m`.
pub fn score(oi_count: usize, op_count: usize, ci_count: usize, cp_count: usize, d_m: f64) -> Result<f64, SegmentationError> {
    if op_count == 0 || cp_count == 0 {
        return Err(SegmentationError::InvalidScore("empty object or contact set".into()));
    }
    if !(d_m > 0.0 && d_m.is_finite()) {
        return Err(SegmentationError::InvalidScore(format!("complexity {d_m} is not positive")));
    }
    if oi_count > op_count || ci_count > cp_count {
        return Err(SegmentationError::InvalidScore("inlier count exceeds set size".into()));
    }
    Ok(((oi_count as f64 / op_count as f64) + (ci_count as f64 / cp_count as f64)) / d_m)
}

fn inlier_indices(model: &ShapeModel, points: &[Vec3], tau: f64) -> PointIndexSet {
    PointIndexSet::from_sorted(
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| model.error(p) < tau)
            .map(|(i, _)| i)
            .collect(),
    )
}

/// Object and contact inliers of `model`: points with `error < tau`.
pub fn classify_inliers(
    model: &ShapeModel,
    cloud: &PointCloud,
    cps: &ContactPointSet,
    tau: f64,
) -> (PointIndexSet, PointIndexSet) {
    (
        inlier_indices(model, cloud.points(), tau),
        inlier_indices(model, cps.positions(), tau),
    )
}

/// One published iteration result.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSnapshot {
    pub t: u64,
    pub cp_revision: u64,
    pub model: ShapeModel,
    pub score: f64,
    pub object_inliers: PointIndexSet,
    pub contact_inliers: PointIndexSet,
    pub op_count: usize,
    pub cp_count: usize,
}

impl SegmentationSnapshot {
    pub fn kind(&self) -> ShapeKind {
        self.model.kind()
    }

    /// Whether the stored score equals the score recomputed from the stored
    /// inlier counts.
    pub fn is_self_consistent(&self, complexity: &ComplexityTable) -> bool {
        score(
            self.object_inliers.len(),
            self.op_count,
            self.contact_inliers.len(),
            self.cp_count,
            complexity.get(self.kind()),
        )
        .is_ok_and(|s| s == self.score)
    }
}

/// Wire form: `{t, cp_revision, kind, model, score, oi, ci, op_count, cp_count}`
/// with `oi` as `[start, len]` runs.
#[derive(Serialize, Deserialize)]
struct SnapshotRepr {
    t: u64,
    cp_revision: u64,
    kind: ShapeKind,
    model: ShapeModel,
    score: f64,
    oi: Vec<[usize; 2]>,
    ci: Vec<usize>,
    op_count: usize,
    cp_count: usize,
}

impl Serialize for SegmentationSnapshot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SnapshotRepr {
            t: self.t,
            cp_revision: self.cp_revision,
            kind: self.kind(),
            model: self.model.clone(),
            score: self.score,
            oi: self.object_inliers.to_runs(),
            ci: self.contact_inliers.as_slice().to_vec(),
            op_count: self.op_count,
            cp_count: self.cp_count,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SegmentationSnapshot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = SnapshotRepr::deserialize(d)?;
        if r.kind != r.model.kind() {
            return Err(D::Error::custom("snapshot kind does not match model"));
        }
        let object_inliers =
            PointIndexSet::from_runs(&r.oi).ok_or_else(|| D::Error::custom("malformed inlier runs"))?;
        if !r.ci.windows(2).all(|w| w[0] < w[1]) {
            return Err(D::Error::custom("contact inliers must be strictly increasing"));
        }
        Ok(Self {
            t: r.t,
            cp_revision: r.cp_revision,
            model: r.model,
            score: r.score,
            object_inliers,
            contact_inliers: PointIndexSet::from_sorted(r.ci),
            op_count: r.op_count,
            cp_count: r.cp_count,
        })
    }
}

/// Where the per-iteration subset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleSource {
    /// Contact points, scored with both inlier ratios.
    Contacts,
    /// Object points, scored with the object inlier ratio only (classical RANSAC).
    Objects,
}

#[derive(Debug, Clone)]
struct Evaluated {
    model: ShapeModel,
    oi: PointIndexSet,
    ci: PointIndexSet,
    score: f64,
    d_m: f64,
}

/// Mutable state of the iterative loop.
#[derive(Debug, Clone)]
pub struct Engine {
    config: SegmentationConfig,
    rng: ChaCha8Rng,
    incumbent: Option<ShapeModel>,
    t: u64,
}

impl Engine {
    pub fn new(config: SegmentationConfig) -> Result<Self, SegmentationError> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            incumbent: None,
            t: 0,
        })
    }

    pub fn config(&self) -> &SegmentationConfig {
        &self.config
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn incumbent(&self) -> Option<&ShapeModel> {
        self.incumbent.as_ref()
    }

    /// Runs one iteration against the given contact point revision.
    pub fn step(&mut self, cloud: &PointCloud, cps: &ContactPointSet) -> Result<SegmentationSnapshot, SegmentationError> {
        self.step_from(cloud, cps, SampleSource::Contacts)
    }

    /// One classical RANSAC iteration: the subset is drawn from the object
    /// points and candidates are scored by `(|OI| / |OP|) / D_M` alone.
    /// Fitting, classification and replacement are shared with [`step`](Self::step).
    pub fn step_classical(&mut self, cloud: &PointCloud) -> Result<SegmentationSnapshot, SegmentationError> {
        self.step_from(cloud, &ContactPointSet::new(), SampleSource::Objects)
    }

    fn step_from(
        &mut self,
        cloud: &PointCloud,
        cps: &ContactPointSet,
        source: SampleSource,
    ) -> Result<SegmentationSnapshot, SegmentationError> {
        if cloud.is_empty() {
            return Err(SegmentationError::EmptyCloud);
        }
        let pool = match source {
            SampleSource::Contacts => cps.positions(),
            SampleSource::Objects => cloud.points(),
        };
        let need = self.config.min_points();
        if pool.len() < need {
            return Err(SegmentationError::WaitingForInput {
                have: pool.len(),
                need,
            });
        }

        let amount = self.config.sample_size.min(pool.len());
        let mut picked = rand::seq::index::sample(&mut self.rng, pool.len(), amount).into_vec();
        picked.sort_unstable();
        let subset: Vec<Vec3> = picked.iter().map(|&i| pool[i]).collect();

        let evaluate = |model: ShapeModel| -> Evaluated {
            let (oi, ci) = classify_inliers(&model, cloud, cps, self.config.tau);
            let d_m = self.config.complexity.get(model.kind());
            let object_ratio = oi.len() as f64 / cloud.len() as f64;
            let score = match source {
                SampleSource::Contacts => ((object_ratio) + (ci.len() as f64 / cps.len() as f64)) / d_m,
                SampleSource::Objects => object_ratio / d_m,
            };
            Evaluated {
                model,
                oi,
                ci,
                score,
                d_m,
            }
        };

        let incumbent = self.incumbent.take().map(&evaluate);

        let mut challenger: Option<Evaluated> = None;
        for kind in ShapeKind::ALL {
            if !self.config.is_enabled(kind) || kind.min_samples() > subset.len() {
                continue;
            }
            let Ok(model) = fit(kind, &subset) else { continue };
            let candidate = evaluate(model);
            let better = match &challenger {
                None => true,
                Some(c) => candidate.score > c.score || (candidate.score == c.score && candidate.d_m < c.d_m),
            };
            if better {
                challenger = Some(candidate);
            }
        }

        let winner = match (incumbent, challenger) {
            (Some(inc), Some(ch)) if ch.score > inc.score => self.install(ch, cloud, &evaluate),
            (None, Some(ch)) => self.install(ch, cloud, &evaluate),
            (Some(inc), _) => inc,
            (None, None) => {
                self.t += 1;
                return Err(SegmentationError::NoCandidate);
            }
        };

        self.t += 1;
        self.incumbent = Some(winner.model.clone());
        Ok(SegmentationSnapshot {
            t: self.t,
            cp_revision: cps.revision(),
            model: winner.model,
            score: winner.score,
            object_inliers: winner.oi,
            contact_inliers: winner.ci,
            op_count: cloud.len(),
            cp_count: cps.len(),
        })
    }

    /// Refits a winning challenger on its object inliers. The refit replaces
    /// the sample fit unless it scores lower, so an installed model never
    /// scores below the challenger that displaced the incumbent.
    fn install(&self, ch: Evaluated, cloud: &PointCloud, evaluate: &dyn Fn(ShapeModel) -> Evaluated) -> Evaluated {
        match refit(&ch.model, &cloud.select(&ch.oi)) {
            Ok(model) => {
                let refitted = evaluate(model);
                if refitted.score >= ch.score {
                    refitted
                } else {
                    ch
                }
            }
            Err(_) => ch,
        }
    }
}

/// Inputs folded into a running session between iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    /// Replace the contact points with this revision.
    Contacts(ContactPointSet),
    Stop,
}

/// Supplies session events at iteration boundaries.
pub trait EventSource {
    /// Called before each iteration. `waiting` is set when the engine cannot
    /// make progress without new input; sources may block in that case.
    fn poll(&mut self, steps_done: u64, waiting: bool) -> Vec<SessionEvent>;
}

/// A replayable event script keyed by completed iteration count.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEvents {
    queue: VecDeque<(u64, SessionEvent)>,
}

impl ScriptedEvents {
    /// Events must be ordered by `after_steps`. An exhausted script stops
    /// the session.
    pub fn new(events: impl IntoIterator<Item = (u64, SessionEvent)>) -> Self {
        Self {
            queue: events.into_iter().collect(),
        }
    }
}

impl EventSource for ScriptedEvents {
    fn poll(&mut self, steps_done: u64, waiting: bool) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        while let Some((after, _)) = self.queue.front() {
            if *after <= steps_done || (waiting && out.is_empty()) {
                out.push(self.queue.pop_front().expect("front exists").1);
            } else {
                break;
            }
        }
        if self.queue.is_empty() && out.is_empty() {
            out.push(SessionEvent::Stop);
        }
        out
    }
}

impl EventSource for Receiver<SessionEvent> {
    fn poll(&mut self, _steps_done: u64, waiting: bool) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        if waiting {
            match self.recv() {
                Ok(ev) => out.push(ev),
                Err(_) => return vec![SessionEvent::Stop],
            }
        }
        loop {
            match self.try_recv() {
                Ok(ev) => out.push(ev),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    out.push(SessionEvent::Stop);
                    break;
                }
            }
        }
        out
    }
}

/// A contact revision and the iteration count at which it took effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedRevision {
    pub after_steps: u64,
    pub contacts: ContactPointSet,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub last: Arc<SegmentationSnapshot>,
    pub history: Vec<Arc<SegmentationSnapshot>>,
    pub revisions: Vec<AppliedRevision>,
    pub steps: u64,
}

/// Progress reported by [`run_session_observed`] as it happens.
#[derive(Debug, Clone)]
pub enum SessionProgress {
    Applied(AppliedRevision),
    Snapshot(Arc<SegmentationSnapshot>),
}

/// Runs the loop until the event source says stop.
pub fn run_session(
    cloud: &PointCloud,
    config: &SegmentationConfig,
    events: &mut dyn EventSource,
) -> Result<SessionOutcome, SegmentationError> {
    run_session_observed(cloud, config, events, &mut |_| {})
}

/// [`run_session`] that also reports every applied revision and snapshot.
pub fn run_session_observed(
    cloud: &PointCloud,
    config: &SegmentationConfig,
    events: &mut dyn EventSource,
    observer: &mut dyn FnMut(SessionProgress),
) -> Result<SessionOutcome, SegmentationError> {
    let mut engine = Engine::new(config.clone())?;
    let mut cps = ContactPointSet::new();
    let mut history: Vec<Arc<SegmentationSnapshot>> = Vec::new();
    let mut revisions = Vec::new();
    let mut waiting = false;
    loop {
        for event in events.poll(engine.iteration(), waiting) {
            match event {
                SessionEvent::Contacts(set) => {
                    let applied = AppliedRevision {
                        after_steps: engine.iteration(),
                        contacts: set.clone(),
                    };
                    observer(SessionProgress::Applied(applied.clone()));
                    revisions.push(applied);
                    cps = set;
                }
                SessionEvent::Stop => {
                    let last = history.last().cloned().ok_or(SegmentationError::NoModel)?;
                    return Ok(SessionOutcome {
                        last,
                        history,
                        revisions,
                        steps: engine.iteration(),
                    });
                }
            }
        }
        match engine.step(cloud, &cps) {
            Ok(snapshot) => {
                let snapshot = Arc::new(snapshot);
                observer(SessionProgress::Snapshot(snapshot.clone()));
                history.push(snapshot);
                waiting = false;
            }
            Err(SegmentationError::WaitingForInput { .. }) => waiting = true,
            Err(SegmentationError::NoCandidate) => waiting = false,
            Err(e) => return Err(e),
        }
    }
}
