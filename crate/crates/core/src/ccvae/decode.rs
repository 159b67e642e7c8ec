use std::collections::HashMap;

use super::model::{argmax_type, CcVae, EDGE_PARAMS, POSE_PARAMS};
use crate::complex::{restore_complex, restore_topology, CellComplex, CellType, Mode, PredictedGeometry, RepairLog};
use crate::error::{Error, Result};
use crate::geometry::{Frame, RationalCubicBezier, SurfacePatch, Vec3};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor};

/// Cells held fixed during decoding, keyed by latent row.
#[derive(Clone, Debug, Default)]
pub struct KnownCells {
    pub types: HashMap<usize, CellType>,
    pub anchors: HashMap<usize, Vec3>,
    pub curves: HashMap<usize, RationalCubicBezier>,
    /// Links among known rows; every other pair of known rows is unlinked.
    pub links: Vec<(usize, usize)>,
    /// Type forced on every row not listed in `types`.
    pub free_type: Option<CellType>,
}

/// Everything decoded from one latent set.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub types: Vec<CellType>,
    pub anchors: Vec<Vec3>,
    /// Row-major `n × n` symmetric link probabilities.
    pub probs: Vec<f64>,
    pub complex: CellComplex,
    pub log: RepairLog,
}

/// Decode latent rows (`n × D`, row-major) into a cell complex.
pub fn decode_latents<T: Scalar>(
    model: &CcVae,
    store: &ParamStore<T>,
    latents: &[f64],
    mode: Mode,
    known: Option<&KnownCells>,
) -> Result<Decoded> {
    let d = model.config.latent_dim;
    if latents.is_empty() || !latents.len().is_multiple_of(d) {
        return Err(Error::shape(
            "decode",
            format!("{} values for latent width {d}", latents.len()),
        ));
    }
    let n = latents.len() / d;
    let mut g = Graph::inference(store);
    let z = g.constant(Tensor::from_f64(&[n, d], latents)?);
    let zt = model.decode_features(&mut g, z)?;
    let logits = model.type_logits(&mut g, zt)?;
    let logits = g.value(logits).to_f64_vec();
    let mut types: Vec<CellType> = (0..n).map(|r| argmax_type(&logits[r * 3..r * 3 + 3])).collect();
    let a = model.anchors(&mut g, zt)?;
    let a = g.value(a).to_f64_vec();
    let mut anchors: Vec<Vec3> = (0..n).map(|r| [a[r * 3], a[r * 3 + 1], a[r * 3 + 2]]).collect();
    if let Some(k) = known {
        if let Some(t) = k.free_type {
            types
                .iter_mut()
                .enumerate()
                .filter(|(r, _)| !k.types.contains_key(r))
                .for_each(|(_, ty)| *ty = t);
        }
        for (&r, &t) in &k.types {
            types[r] = t;
        }
        for (&r, &x) in &k.anchors {
            anchors[r] = x;
        }
    }
    if mode == Mode::Wireframe {
        for t in types.iter_mut().filter(|t| **t == CellType::Face) {
            *t = CellType::Edge;
        }
    }

    let is_known = |r: usize| known.is_some_and(|k| k.types.contains_key(&r));
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if types[i].rank().abs_diff(types[j].rank()) == 1 && !(is_known(i) && is_known(j)) {
                pairs.push((i, j));
            }
        }
    }
    let mut probs = vec![0.0; n * n];
    if !pairs.is_empty() {
        let l = model.link_logits(&mut g, zt, &pairs)?;
        for (&(i, j), &x) in pairs.iter().zip(g.value(l).to_f64_vec().iter()) {
            let p = 1.0 / (1.0 + (-x).exp());
            probs[i * n + j] = p;
            probs[j * n + i] = p;
        }
    }
    if let Some(k) = known {
        for &(i, j) in &k.links {
            probs[i * n + j] = 1.0;
            probs[j * n + i] = 1.0;
        }
    }

    let (topo, _) = restore_topology(&types, &anchors, &probs, mode);
    let mut geometry = PredictedGeometry::default();
    let fresh: Vec<(usize, [usize; 2])> = topo
        .edges
        .iter()
        .filter(|(e, _)| !known.is_some_and(|k| k.curves.contains_key(e)))
        .cloned()
        .collect();
    if !fresh.is_empty() {
        let params = model.edge_params(&mut g, zt, &fresh)?;
        let params = g.value(params).to_f64_vec();
        for (k, &(e, [u, v])) in fresh.iter().enumerate() {
            let p = &params[k * EDGE_PARAMS..(k + 1) * EDGE_PARAMS];
            geometry
                .edges
                .insert(e, CcVae::curve_from_params(p, anchors[u], anchors[v]));
        }
    }
    if let Some(k) = known {
        for (&e, curve) in &k.curves {
            geometry.edges.insert(e, curve.clone());
        }
    }
    let faces: Vec<(usize, Vec<usize>)> = topo.faces.clone();
    if !faces.is_empty() {
        let rows: Vec<usize> = faces.iter().map(|f| f.0).collect();
        let params = model.pose_params(&mut g, zt, &rows)?;
        let params = g.value(params).to_f64_vec();
        let frames: Vec<Frame> = (0..rows.len())
            .map(|k| CcVae::frame_from_params(&params[k * POSE_PARAMS..(k + 1) * POSE_PARAMS]))
            .collect();
        let pts = model.surface_points(&mut g, zt, &faces, &frames, &anchors)?;
        let pts = g.value(pts).to_f64_vec();
        let res = model.config.surface_grid;
        let gg = res * res;
        for (k, &(f, _)) in faces.iter().enumerate() {
            let block: Vec<Vec3> = pts[k * gg * 3..(k + 1) * gg * 3]
                .chunks(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect();
            if let Ok(patch) = SurfacePatch::new(res, block) {
                geometry.faces.insert(f, (frames[k], patch));
            }
        }
    }
    let (complex, log) = restore_complex(&types, &anchors, &probs, mode, &geometry);
    Ok(Decoded {
        types,
        anchors,
        probs,
        complex,
        log,
    })
}
