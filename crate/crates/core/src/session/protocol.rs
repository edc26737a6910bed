//! Message grammar. Every message in either direction is one JSON object per
//! line: `{"kind": …, "seq": …, "payload": {…}}`. `seq` strictly increases per
//! connection and direction.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Click, ExportFormat, Phase};
use crate::coverage::{trajectory_to_json, CoverageConfig, Trajectory};
use crate::segmentation::{ContactSource, SegmentationConfig, SegmentationSnapshot};
use crate::surface::{CropRegion, CropStatus, SurfaceConfig, SurfacePatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub kind: String,
    pub seq: u64,
    #[serde(default = "empty_object")]
    pub payload: Value,
}

fn empty_object() -> Value {
    json!({})
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Operator,
    Observer,
}

/// Source of a `load_cloud` request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum CloudInput {
    Path { path: String },
    Ply { ply: String },
    Points { points: Vec<[f64; 3]> },
}

/// Client to server requests. Unknown payload fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    CreateSession {
        #[serde(default)]
        config: Option<SegmentationConfig>,
        #[serde(default)]
        surface: Option<SurfaceConfig>,
    },
    AttachSession {
        session: String,
        #[serde(default)]
        role: Role,
    },
    LoadCloud(CloudInput),
    Configure {
        #[serde(default)]
        config: Option<SegmentationConfig>,
        #[serde(default)]
        surface: Option<SurfaceConfig>,
    },
    AddContactPoints {
        positions: Vec<[f64; 3]>,
        #[serde(default = "selected")]
        source: ContactSource,
    },
    AddContactClick(Click),
    UndoContactBatch {},
    StopSegmentation {
        #[serde(default)]
        after_steps: Option<u64>,
    },
    Crop(CropRequest),
    UndoCrop {},
    Plan(CoverageConfig),
    Export {
        path: String,
        #[serde(default)]
        format: ExportFormat,
        #[serde(default)]
        log: Option<String>,
    },
}

/// `crop` payload: exactly one of `polygon` or `cells`, and an optional
/// `edit_seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CropPayload", into = "CropPayload")]
pub struct CropRequest {
    pub region: CropRegion,
    pub edit_seq: Option<u64>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CropPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygon: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cells: Option<Vec<[i64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edit_seq: Option<u64>,
}

impl TryFrom<CropPayload> for CropRequest {
    type Error = &'static str;

    fn try_from(p: CropPayload) -> Result<Self, Self::Error> {
        let region = match (p.polygon, p.cells) {
            (Some(v), None) => CropRegion::Polygon(v),
            (None, Some(c)) => CropRegion::Cells(c),
            _ => return Err("crop needs exactly one of `polygon` or `cells`"),
        };
        Ok(Self {
            region,
            edit_seq: p.edit_seq,
        })
    }
}

impl From<CropRequest> for CropPayload {
    fn from(r: CropRequest) -> Self {
        let (polygon, cells) = match r.region {
            CropRegion::Polygon(v) => (Some(v), None),
            CropRegion::Cells(c) => (None, Some(c)),
        };
        Self {
            polygon,
            cells,
            edit_seq: r.edit_seq,
        }
    }
}

fn selected() -> ContactSource {
    ContactSource::Selected
}

pub const REQUEST_KINDS: [&str; 13] = [
    "create_session",
    "attach_session",
    "load_cloud",
    "configure",
    "add_contact_points",
    "add_contact_click",
    "undo_contact_batch",
    "stop_segmentation",
    "crop",
    "undo_crop",
    "plan",
    "export",
    "ping",
];

impl Request {
    /// Whether the request changes session state, which only the operator
    /// may do.
    pub fn is_mutating(&self) -> bool {
        !matches!(self, Request::CreateSession { .. } | Request::AttachSession { .. })
    }
}

/// Why a message was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolError {
    pub code: String,
    pub message: String,
    pub offending_seq: Option<u64>,
}

impl ProtocolError {
    pub fn new(code: &str, message: impl Into<String>, offending_seq: Option<u64>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            offending_seq,
        }
    }
}

/// Parses one line. `ping` is answered by an ack and has no request form,
/// so it comes back as `Ok(None)`.
pub fn parse_line(line: &str) -> Result<(u64, Option<Request>), ProtocolError> {
    let raw: Value =
        serde_json::from_str(line).map_err(|e| ProtocolError::new("malformed", format!("not JSON: {e}"), None))?;
    let seq = raw.get("seq").and_then(Value::as_u64);
    let env: Envelope = serde_json::from_value(raw)
        .map_err(|e| ProtocolError::new("malformed", format!("bad envelope: {e}"), seq))?;
    if !REQUEST_KINDS.contains(&env.kind.as_str()) {
        return Err(ProtocolError::new(
            "unknown_kind",
            format!("unknown message kind {:?}", env.kind),
            Some(env.seq),
        ));
    }
    if env.kind == "ping" {
        return Ok((env.seq, None));
    }
    let req: Request = serde_json::from_value(json!({"kind": env.kind, "payload": env.payload}))
        .map_err(|e| ProtocolError::new("bad_payload", format!("{}: {e}", env.kind), Some(env.seq)))?;
    Ok((env.seq, Some(req)))
}

/// Server to client message bodies; the connection adds `seq`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub kind: &'static str,
    pub payload: Value,
}

impl Outgoing {
    pub fn to_line(&self, seq: u64) -> String {
        let mut s = serde_json::to_string(&json!({"kind": self.kind, "seq": seq, "payload": self.payload}))
            .expect("values serialize");
        s.push('\n');
        s
    }
}

pub fn ack(seq: u64, session: Option<&str>, phase: Option<Phase>, extra: Value) -> Outgoing {
    let mut payload = json!({"seq": seq});
    if let Some(s) = session {
        payload["session"] = json!(s);
    }
    if let Some(p) = phase {
        payload["phase"] = json!(p);
    }
    if let Value::Object(map) = extra {
        for (k, v) in map {
            payload[k] = v;
        }
    }
    Outgoing { kind: "ack", payload }
}

pub fn error(e: &ProtocolError) -> Outgoing {
    Outgoing {
        kind: "error",
        payload: json!({"code": e.code, "message": e.message, "offending_seq": e.offending_seq}),
    }
}

pub fn snapshot(s: &SegmentationSnapshot) -> Outgoing {
    Outgoing {
        kind: "snapshot",
        payload: serde_json::to_value(s).expect("snapshots serialize"),
    }
}

/// Patch with its mesh so clients need not evaluate models.
pub fn patch_update(patch: &SurfacePatch, status: Option<CropStatus>) -> Outgoing {
    let mesh = &patch.mesh;
    let v3 = |v: &[crate::Vec3]| v.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>();
    Outgoing {
        kind: "patch_update",
        payload: json!({
            "patch": patch,
            "sha256": patch.content_hash(),
            "occupied_cells": patch.grid.occupied_count(),
            "status": status,
            "mesh": {
                "vertices": v3(&mesh.vertices),
                "normals": v3(&mesh.normals),
                "triangles": mesh.triangles,
            },
        }),
    }
}

pub fn trajectory(t: &Trajectory) -> Outgoing {
    Outgoing {
        kind: "trajectory",
        payload: serde_json::from_str(&trajectory_to_json(t)).expect("trajectory JSON parses"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_requests() {
        let (seq, r) = parse_line(r#"{"kind":"add_contact_points","seq":4,"payload":{"positions":[[0,0,0]]}}"#).unwrap();
        assert_eq!(seq, 4);
        assert_eq!(
            r,
            Some(Request::AddContactPoints {
                positions: vec![[0.0, 0.0, 0.0]],
                source: ContactSource::Selected
            })
        );
        let (_, r) = parse_line(r#"{"kind":"undo_contact_batch","seq":5}"#).unwrap();
        assert_eq!(r, Some(Request::UndoContactBatch {}));
        let (_, r) = parse_line(r#"{"kind":"crop","seq":6,"payload":{"polygon":[[0,0],[1,0],[0,1]]}}"#).unwrap();
        assert!(matches!(r, Some(Request::Crop(CropRequest { region: CropRegion::Polygon(_), edit_seq: None }))));
        let (_, r) = parse_line(r#"{"kind":"plan","seq":7,"payload":{"overlap":0.5}}"#).unwrap();
        assert!(matches!(r, Some(Request::Plan(c)) if c.overlap == 0.5));
        let (_, r) = parse_line(r#"{"kind":"add_contact_click","seq":8,"payload":{"origin":[0,0,1],"direction":[0,0,-1]}}"#).unwrap();
        assert!(matches!(r, Some(Request::AddContactClick(Click::Ray { tolerance, .. })) if tolerance == 0.01));
        assert_eq!(parse_line(r#"{"kind":"ping","seq":9}"#).unwrap(), (9, None));
    }

    #[test]
    fn rejects_bad_messages() {
        assert_eq!(parse_line("{").unwrap_err().code, "malformed");
        let e = parse_line(r#"{"kind":"dance","seq":3}"#).unwrap_err();
        assert_eq!((e.code.as_str(), e.offending_seq), ("unknown_kind", Some(3)));
        let e = parse_line(r#"{"kind":"add_contact_points","seq":2,"payload":{}}"#).unwrap_err();
        assert_eq!(e.code, "bad_payload");
        assert_eq!(parse_line(r#"{"kind":"ping"}"#).unwrap_err().code, "malformed");
    }
}
