use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::{DatasetRecord, Normalization};
use crate::complex::{CellComplex, Edge, Face, Mode};
use crate::error::{Error, Result};
use crate::geometry::{Frame, RationalCubicBezier, SurfacePatch, Vec3};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexJson {
    id: usize,
    p: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeJson {
    id: usize,
    v: [usize; 2],
    ctrl: [Vec3; 4],
    w: [f64; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameJson {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaceJson {
    id: usize,
    loops: Vec<Vec<i64>>,
    grid: Vec<Vec<Vec3>>,
    frame: FrameJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ComplexJson {
    mode: Mode,
    vertices: Vec<VertexJson>,
    edges: Vec<EdgeJson>,
    faces: Vec<FaceJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    version: u32,
    id: String,
    #[serde(flatten)]
    complex: ComplexJson,
    cloud: Vec<Vec3>,
    normalization: Normalization,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<u32>,
}

impl From<&CellComplex> for ComplexJson {
    fn from(c: &CellComplex) -> Self {
        ComplexJson {
            mode: c.mode,
            vertices: c
                .vertices
                .iter()
                .enumerate()
                .map(|(id, &p)| VertexJson { id, p })
                .collect(),
            edges: c
                .edges
                .iter()
                .enumerate()
                .map(|(id, e)| EdgeJson {
                    id,
                    v: e.v,
                    ctrl: e.curve.ctrl,
                    w: e.curve.weights,
                })
                .collect(),
            faces: c
                .faces
                .iter()
                .enumerate()
                .map(|(id, f)| FaceJson {
                    id,
                    loops: f.loops.clone(),
                    grid: f.grid.points.chunks(f.grid.g).map(<[Vec3]>::to_vec).collect(),
                    frame: FrameJson {
                        r: f.frame.flat_r(),
                        t: f.frame.t,
                    },
                })
                .collect(),
        }
    }
}

impl ComplexJson {
    pub(crate) fn into_complex(self) -> Result<CellComplex> {
        let c = self.into_complex_unchecked()?;
        c.validate()?;
        Ok(c)
    }

    /// Rebuild without checking topological invariants.
    pub(crate) fn into_complex_unchecked(self) -> Result<CellComplex> {
        let misplaced = |what: &str, id: usize, pos: usize| {
            Err(Error::InvalidComplex {
                cell: format!("{what} {id}"),
                reason: format!("listed at position {pos}"),
            })
        };
        let mut c = CellComplex::empty(self.mode);
        for (pos, v) in self.vertices.into_iter().enumerate() {
            if v.id != pos {
                return misplaced("vertex", v.id, pos);
            }
            c.vertices.push(v.p);
        }
        for (pos, e) in self.edges.into_iter().enumerate() {
            if e.id != pos {
                return misplaced("edge", e.id, pos);
            }
            c.edges.push(Edge {
                v: e.v,
                curve: RationalCubicBezier::new(e.ctrl, e.w)?,
            });
        }
        for (pos, f) in self.faces.into_iter().enumerate() {
            if f.id != pos {
                return misplaced("face", f.id, pos);
            }
            let g = f.grid.len();
            if f.grid.iter().any(|row| row.len() != g) {
                return Err(Error::InvalidComplex {
                    cell: format!("face {pos}"),
                    reason: "grid is not square".into(),
                });
            }
            c.faces.push(Face {
                loops: f.loops,
                grid: SurfacePatch::new(g, f.grid.into_iter().flatten().collect())?,
                frame: Frame::from_flat(&f.frame.r, f.frame.t),
            });
        }
        Ok(c)
    }
}

pub fn record_to_line(r: &DatasetRecord) -> Result<String> {
    let json = RecordJson {
        version: SCHEMA_VERSION,
        id: r.id.clone(),
        complex: ComplexJson::from(&r.complex),
        cloud: r.cloud.clone(),
        normalization: r.normalization,
    };
    serde_json::to_string(&json).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })
}

pub fn record_from_line(line: &str, number: usize) -> Result<DatasetRecord> {
    let parse_err = |e: serde_json::Error| Error::Parse {
        line: number,
        message: e.to_string(),
    };
    let probe: VersionProbe = serde_json::from_str(line).map_err(parse_err)?;
    match probe.version {
        Some(SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(Error::SchemaVersion {
                found,
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(Error::Parse {
                line: number,
                message: "missing schema version".into(),
            })
        }
    }
    let json: RecordJson = serde_json::from_str(line).map_err(parse_err)?;
    let complex = json.complex.into_complex().map_err(|e| Error::Parse {
        line: number,
        message: e.to_string(),
    })?;
    Ok(DatasetRecord {
        id: json.id,
        complex,
        cloud: json.cloud,
        normalization: json.normalization,
    })
}

/// One JSON record per line.
pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", record_to_line(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Blank lines are skipped; an empty file is an empty dataset.
pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(record_from_line(&line, i + 1)?);
    }
    Ok(out)
}
