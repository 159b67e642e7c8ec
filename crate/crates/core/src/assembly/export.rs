use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{BRepModel, EdgeKind, FaceKind};
use super::validity::Verdict;
use crate::complex::Mode;
use crate::dataio::io::ComplexJson;
use crate::dataio::SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::geometry::CURVE_SAMPLES;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Obj,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obj" => Ok(Self::Obj),
            "json" | "native-json" => Ok(Self::Json),
            other => Err(Error::Config(format!(
                "unknown export format `{other}` (expected obj or json)"
            ))),
        }
    }
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Obj => "obj",
            Self::Json => "json",
        }
    }
}

/// Triangulated face grids; wireframes and faceless models become `l` polylines through sampled edges.
pub fn model_to_obj(model: &BRepModel) -> String {
    let c = &model.complex;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} faces {} edges {} vertices",
        c.faces.len(),
        c.edges.len(),
        c.vertices.len()
    );
    let mut base = 1;
    for (k, f) in c.faces.iter().enumerate() {
        let _ = writeln!(out, "o face_{k}");
        for p in &f.grid.points {
            let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
        }
        for [a, b, t] in f.grid.triangle_indices() {
            let _ = writeln!(out, "f {} {} {}", base + a, base + b, base + t);
        }
        base += f.grid.points.len();
    }
    if c.mode == Mode::Wireframe || c.faces.is_empty() {
        for (i, e) in c.edges.iter().enumerate() {
            let _ = writeln!(out, "o edge_{i}");
            let pts = e.curve.sample_uniform(CURVE_SAMPLES);
            for p in &pts {
                let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
            }
            let idx: Vec<String> = (base..base + pts.len()).map(|i| i.to_string()).collect();
            let _ = writeln!(out, "l {}", idx.join(" "));
            base += pts.len();
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    version: u32,
    #[serde(flatten)]
    complex: ComplexJson,
    face_kinds: Vec<FaceKind>,
    edge_kinds: Vec<EdgeKind>,
    verdict: Verdict,
}

pub fn model_to_json(model: &BRepModel) -> Result<String> {
    let json = ModelJson {
        version: SCHEMA_VERSION,
        complex: ComplexJson::from(&model.complex),
        face_kinds: model.face_kinds.clone(),
        edge_kinds: model.edge_kinds.clone(),
        verdict: model.verdict.clone(),
    };
    serde_json::to_string_pretty(&json).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })
}

pub fn model_from_json(text: &str) -> Result<BRepModel> {
    let json: ModelJson = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if json.version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: json.version,
            expected: SCHEMA_VERSION,
        });
    }
    let complex = json.complex.into_complex_unchecked()?;
    Ok(BRepModel {
        shells: complex.shells(),
        complex,
        face_kinds: json.face_kinds,
        edge_kinds: json.edge_kinds,
        verdict: json.verdict,
    })
}

pub fn export_model(model: &BRepModel, format: ExportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ExportFormat::Obj => model_to_obj(model),
        ExportFormat::Json => model_to_json(model)?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<BRepModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
