//! Command line interface. Runs the same code paths as the session service.
//!
//! Exit codes: 0 on success, 1 on input errors (missing or malformed files
//! and flags), 2 on internal errors. `CONTACTSEG_SEED` overrides `--seed`.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::coverage::{plan_patch, trajectory_to_csv, trajectory_to_json, CoverageConfig};
use crate::ply::{load_ply, save_ply};
use crate::segmentation::{
    run_session_observed, ContactPointSet, ContactSource, ScriptedEvents, SegmentationConfig, SegmentationSnapshot,
    SessionEvent, SessionProgress,
};
use crate::session::journal::{load_logged_cloud, persist_session, read_session_log, replay_session_log};
use crate::session::server::{serve, ServerConfig};
use crate::session::{Session, SessionError};
use crate::surface::{mesh_to_ply_string, SurfaceConfig, SurfacePatch};
use crate::synth::{
    classical_ransac_baseline, generate_scene, simulate_demos, BaselineConfig, DemoPath, SceneSpec, SynthError,
};
use crate::Vec3;

pub const SEED_ENV: &str = "CONTACTSEG_SEED";

#[derive(Debug, Parser)]
#[command(name = "contactseg", version, about = "Contact-point guided segmentation and coverage planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the segmentation engine for a fixed number of iterations.
    Segment {
        #[arg(long)]
        cloud: PathBuf,
        /// Contact points: a list of `[x, y, z]` or a contact point set.
        #[arg(long)]
        cp: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: u64,
        /// Final snapshot JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a replayable session log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Build the surface patch for a snapshot.
    Surface {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the patch mesh as PLY.
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Plan a raster trajectory over a patch.
    Plan {
        #[arg(long)]
        patch: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the poses as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic scene.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-point ground truth JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Demonstration path (or list of paths) to simulate.
        #[arg(long, requires = "cp_out")]
        demo: Option<PathBuf>,
        /// Final contact point set of the demonstration.
        #[arg(long, requires = "demo")]
        cp_out: Option<PathBuf>,
    },
    /// Classical RANSAC baseline sampling from the whole cloud.
    Baseline {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Host sessions over TCP (newline-delimited JSON).
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        snapshot_ms: u64,
    },
    /// Re-run a session log and check every recorded artifact.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Cloud file; defaults to the path recorded in the log.
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// Final snapshot JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failed command with its exit code.
#[derive(Debug)]
struct Fail {
    code: i32,
    message: String,
}

fn input(message: impl Display) -> Fail {
    Fail {
        code: 1,
        message: message.to_string(),
    }
}

fn internal(message: impl Display) -> Fail {
    Fail {
        code: 2,
        message: message.to_string(),
    }
}

impl From<SessionError> for Fail {
    fn from(e: SessionError) -> Self {
        if e.is_input() {
            input(e)
        } else {
            internal(e)
        }
    }
}

impl From<SynthError> for Fail {
    fn from(e: SynthError) -> Self {
        input(e)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Fail> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T, Fail> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn write(path: &Path, text: &str) -> Result<(), Fail> {
    std::fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

/// The environment variable wins over the flag.
fn effective_seed(flag: Option<u64>) -> Result<Option<u64>, Fail> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| input(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

/// Accepts a bare `[[x, y, z], …]` list, `{"positions": …}` or a serialized
/// contact point set.
pub fn parse_contacts(text: &str) -> Result<ContactPointSet, SessionError> {
    let v: Value = serde_json::from_str(text)?;
    let list = |v: &Value| -> Result<ContactPointSet, SessionError> {
        let pts: Vec<[f64; 3]> = serde_json::from_value(v.clone())?;
        Ok(ContactPointSet::from_positions(
            pts.into_iter().map(Vec3::from).collect(),
            ContactSource::Selected,
        )?)
    };
    match &v {
        Value::Array(_) => list(&v),
        Value::Object(m) if m.contains_key("revision") => Ok(serde_json::from_value(v)?),
        Value::Object(m) if m.contains_key("positions") => list(&m["positions"]),
        _ => Err(SessionError::Input("contact file must hold a list of positions".into())),
    }
}

fn cmd_segment(
    cloud_path: &Path,
    cp: &Path,
    config: Option<&PathBuf>,
    steps: u64,
    out: &Path,
    seed: Option<u64>,
    log: Option<&PathBuf>,
) -> Result<(), Fail> {
    let mut config: SegmentationConfig = read_json_or_default(config)?;
    if let Some(s) = effective_seed(seed)? {
        config.rng_seed = s;
    }
    config.validate().map_err(input)?;
    let cp_text = std::fs::read_to_string(cp).map_err(|e| input(format!("{}: {e}", cp.display())))?;
    let contacts = parse_contacts(&cp_text).map_err(|e| input(format!("{}: {e}", cp.display())))?;
    let snapshot = match log {
        // The logged path drives a session so the log is the service's format.
        Some(log) => {
            let mut session = Session::new();
            session.configure(Some(config), None)?;
            session.load_cloud_file(cloud_path)?;
            session.add_contacts(contacts.positions(), ContactSource::Selected)?;
            let snap = session.stop(Some(steps))?;
            persist_session(&session, log)?;
            (*snap).clone()
        }
        None => {
            let cloud = load_ply(cloud_path).map_err(|e| input(format!("{}: {e}", cloud_path.display())))?;
            let contacts = ContactPointSet::from_positions(contacts.positions().to_vec(), ContactSource::Selected)
                .map_err(input)?;
            let mut script = ScriptedEvents::new([(0, SessionEvent::Contacts(contacts)), (steps, SessionEvent::Stop)]);
            let outcome = run_session_observed(&cloud, &config, &mut script, &mut |p| {
                if let SessionProgress::Snapshot(s) = p {
                    log::debug!("t={} kind={} score={}", s.t, s.kind(), s.score);
                }
            })
            .map_err(input)?;
            (*outcome.last).clone()
        }
    };
    write(out, &pretty(&snapshot))?;
    println!("{} {}", snapshot.kind(), snapshot.score);
    Ok(())
}

fn cmd_surface(
    cloud: &Path,
    snapshot: &Path,
    config: Option<&PathBuf>,
    out: &Path,
    mesh: Option<&PathBuf>,
) -> Result<(), Fail> {
    let config: SurfaceConfig = read_json_or_default(config)?;
    let cloud = load_ply(cloud).map_err(|e| input(format!("{}: {e}", cloud.display())))?;
    let snap: SegmentationSnapshot = read_json(snapshot)?;
    if snap.op_count != cloud.len() {
        return Err(input(format!(
            "snapshot was taken on {} points, cloud has {}",
            snap.op_count,
            cloud.len()
        )));
    }
    let patch = SurfacePatch::build(&snap.model, &cloud, &snap.object_inliers, &config).map_err(input)?;
    write(out, &pretty(&patch))?;
    if let Some(m) = mesh {
        write(m, &mesh_to_ply_string(&patch.mesh))?;
    }
    println!("{} cells", patch.grid.occupied_count());
    Ok(())
}

fn cmd_plan(patch: &Path, config: Option<&PathBuf>, out: &Path, csv: Option<&PathBuf>) -> Result<(), Fail> {
    let config: CoverageConfig = read_json_or_default(config)?;
    let patch: SurfacePatch = read_json(patch)?;
    let t = plan_patch(&patch, &config).map_err(input)?;
    write(out, &trajectory_to_json(&t))?;
    if let Some(c) = csv {
        write(c, &trajectory_to_csv(&t))?;
    }
    println!("{} lanes, {} poses", t.lane_count, t.poses.len());
    Ok(())
}

fn cmd_synth(
    spec: &Path,
    out: &Path,
    seed: Option<u64>,
    truth: Option<&PathBuf>,
    demo: Option<&PathBuf>,
    cp_out: Option<&PathBuf>,
) -> Result<(), Fail> {
    let mut spec: SceneSpec = read_json(spec)?;
    if let Some(s) = effective_seed(seed)? {
        spec.seed = s;
    }
    let scene = generate_scene(&spec)?;
    save_ply(&scene.cloud, out).map_err(|e| input(format!("{}: {e}", out.display())))?;
    if let Some(t) = truth {
        write(t, &serde_json::to_string(&scene.truth).expect("truth serializes"))?;
    }
    if let (Some(demo), Some(cp_out)) = (demo, cp_out) {
        let v: Value = read_json(demo)?;
        let paths: Vec<DemoPath> = match v {
            Value::Array(_) => serde_json::from_value(v),
            _ => serde_json::from_value(v).map(|p| vec![p]),
        }
        .map_err(|e| input(format!("{}: {e}", demo.display())))?;
        let stream = simulate_demos(&scene.truth, &paths)?;
        let last = stream.last().cloned().unwrap_or_default();
        write(cp_out, &pretty(&last))?;
    }
    println!("{} points", scene.cloud.len());
    Ok(())
}

fn cmd_baseline(cloud: &Path, config: &Path, seed: Option<u64>, out: Option<&PathBuf>) -> Result<(), Fail> {
    let mut config: BaselineConfig = read_json(config)?;
    if let Some(s) = effective_seed(seed)? {
        config.segmentation.rng_seed = s;
    }
    let cloud = load_ply(cloud).map_err(|e| input(format!("{}: {e}", cloud.display())))?;
    let outcome = classical_ransac_baseline(&cloud, &config)?;
    let result = json!({
        "model": outcome.model,
        "score": outcome.score,
        "iterations": outcome.iterations,
        "inliers": outcome.snapshot.object_inliers.len(),
    });
    match out {
        Some(p) => write(p, &pretty(&result))?,
        None => print!("{}", pretty(&result)),
    }
    Ok(())
}

fn cmd_serve(bind: &str, log_dir: Option<&PathBuf>, snapshot_ms: u64) -> Result<(), Fail> {
    if let Some(d) = log_dir {
        std::fs::create_dir_all(d).map_err(|e| input(format!("{}: {e}", d.display())))?;
    }
    let handle = serve(
        bind,
        ServerConfig {
            log_dir: log_dir.cloned(),
            snapshot_interval: Duration::from_millis(snapshot_ms),
        },
    )
    .map_err(|e| input(format!("cannot bind {bind}: {e}")))?;
    eprintln!("listening on {}", handle.local_addr());
    handle.join();
    Ok(())
}

fn cmd_replay(log: &Path, cloud: Option<&PathBuf>, out: Option<&PathBuf>) -> Result<(), Fail> {
    let parsed = read_session_log(log)?;
    let cloud = match cloud {
        Some(p) => load_ply(p).map_err(|e| input(format!("{}: {e}", p.display())))?,
        None => load_logged_cloud(&parsed)?,
    };
    let r = replay_session_log(&parsed, &cloud)?;
    if let (Some(o), Some(last)) = (out, &r.last) {
        write(o, &pretty(&**last))?;
    }
    let summary = json!({
        "session": parsed.session,
        "snapshots": r.snapshots,
        "kind": r.last.as_ref().map(|s| s.kind()),
        "score": r.last.as_ref().map(|s| s.score),
        "patch_sha256": r.patch.as_ref().map(|p| p.content_hash()),
        "trajectory_poses": r.trajectory.as_ref().map(|t| t.poses.len()),
    });
    print!("{}", pretty(&summary));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Fail> {
    match cli.command {
        Command::Segment {
            cloud,
            cp,
            config,
            steps,
            out,
            seed,
            log,
        } => cmd_segment(&cloud, &cp, config.as_ref(), steps, &out, seed, log.as_ref()),
        Command::Surface {
            cloud,
            snapshot,
            config,
            out,
            mesh,
        } => cmd_surface(&cloud, &snapshot, config.as_ref(), &out, mesh.as_ref()),
        Command::Plan { patch, config, out, csv } => cmd_plan(&patch, config.as_ref(), &out, csv.as_ref()),
        Command::Synth {
            spec,
            out,
            seed,
            truth,
            demo,
            cp_out,
        } => cmd_synth(&spec, &out, seed, truth.as_ref(), demo.as_ref(), cp_out.as_ref()),
        Command::Baseline {
            cloud,
            config,
            seed,
            out,
        } => cmd_baseline(&cloud, &config, seed, out.as_ref()),
        Command::Serve {
            bind,
            log_dir,
            snapshot_ms,
        } => cmd_serve(&bind, log_dir.as_ref(), snapshot_ms),
        Command::Replay { log, cloud, out } => cmd_replay(&log, cloud.as_ref(), out.as_ref()),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
