use super::model::CcVae;
use super::sample::VaeSample;
use crate::complex::CellType;
use crate::error::{Error, Result};
use crate::geometry::{Frame, PointIndex, Vec3};
use crate::tensor::{Graph, Scalar, Tensor, Var};

fn constant<T: Scalar>(g: &mut Graph<T>, shape: &[usize], data: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::from_f64(shape, data)?))
}

/// Mean over rows and dims of `0.5 (μ² + σ² − 1 − log σ²)`.
pub fn kl_divergence<T: Scalar>(g: &mut Graph<T>, mu: Var, logsig: Var) -> Result<Var> {
    let mu2 = g.square(mu);
    let two = g.mul_scalar(logsig, 2.0);
    let var = g.exp(two);
    let s = g.add(mu2, var)?;
    let s = g.sub(s, two)?;
    let s = g.add_scalar(s, -1.0);
    let m = g.mean(s);
    Ok(g.mul_scalar(m, 0.5))
}

/// Mean binary cross-entropy on logits: `softplus(x) − y x`.
pub fn bce_with_logits<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: &[f64]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let y = constant(g, &shape, targets)?;
    let sp = g.softplus(logits);
    let yx = g.mul(y, logits)?;
    let l = g.sub(sp, yx)?;
    Ok(g.mean(l))
}

/// Mean focal loss `−α (1 − p_t)^γ log p_t` on logits.
pub fn focal_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: &[f64], alpha: f64, gamma: f64) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let sign: Vec<f64> = targets.iter().map(|&y| 2.0 * y - 1.0).collect();
    let sign = constant(g, &shape, &sign)?;
    // s = ±logit so that p_t = sigmoid(s).
    let s = g.mul(logits, sign)?;
    let neg = g.neg(s);
    let nll = g.softplus(neg);
    let l = if gamma == 0.0 {
        nll
    } else {
        let q = g.sigmoid(neg);
        let w = g.pow_scalar(q, gamma);
        g.mul(w, nll)?
    };
    let m = g.mean(l);
    Ok(g.mul_scalar(m, alpha))
}

/// Mean Euclidean length of the rows of `diff` (`k × 3`).
fn mean_row_norm<T: Scalar>(g: &mut Graph<T>, diff: Var) -> Result<Var> {
    let sq = g.square(diff);
    let n2 = g.sum_axis(sq, 1)?;
    let n2 = g.add_scalar(n2, 1e-12);
    let n = g.pow_scalar(n2, 0.5);
    Ok(g.mean(n))
}

/// Bidirectional Chamfer-L1 between face-major blocks of `pred` (`per_face`
/// rows each) and the target point sets, averaged over both directions.
pub fn chamfer_l1<T: Scalar>(g: &mut Graph<T>, pred: Var, per_face: usize, targets: &[&[Vec3]]) -> Result<Var> {
    let values = g.value(pred).to_f64_vec();
    let pts: Vec<Vec3> = values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    if pts.len() != per_face * targets.len() {
        return Err(Error::shape("chamfer", "prediction and target face counts differ"));
    }
    let mut all = Vec::new();
    let mut to_target = Vec::with_capacity(pts.len());
    let mut to_pred = Vec::new();
    for (k, target) in targets.iter().enumerate() {
        let block = &pts[k * per_face..(k + 1) * per_face];
        let ti = PointIndex::new(target)?;
        let pi = PointIndex::new(block)?;
        let base = all.len();
        to_target.extend(block.iter().map(|p| base + ti.nearest(p).1));
        to_pred.extend(target.iter().map(|q| k * per_face + pi.nearest(q).1));
        all.extend_from_slice(target);
    }
    let flat: Vec<f64> = all.iter().flatten().copied().collect();
    let tgt = constant(g, &[all.len(), 3], &flat)?;
    let matched = g.gather(tgt, &to_target)?;
    let d1 = g.sub(pred, matched)?;
    let m1 = mean_row_norm(g, d1)?;
    let back = g.gather(pred, &to_pred)?;
    let d2 = g.sub(back, tgt)?;
    let m2 = mean_row_norm(g, d2)?;
    let s = g.add(m1, m2)?;
    Ok(g.mul_scalar(s, 0.5))
}

/// Graph handles of every loss component for one sample.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub type_: Var,
    pub anchor: Var,
    pub link: Var,
    pub edge: Var,
    pub face: Var,
    pub pose: Var,
    pub kl: Var,
    pub total: Var,
}

impl LossVars {
    pub const NAMES: [&'static str; 8] = ["type", "anchor", "link", "edge", "face", "pose", "kl", "total"];

    pub fn vars(&self) -> [Var; 8] {
        [
            self.type_,
            self.anchor,
            self.link,
            self.edge,
            self.face,
            self.pose,
            self.kl,
            self.total,
        ]
    }
}

/// Edge slots with canonical endpoint rows, and face slots with child rows, under teacher forcing.
pub(crate) fn teacher_rows(
    s: &VaeSample,
) -> (
    Vec<(usize, [usize; 2])>,
    Vec<usize>,
    Vec<(usize, Vec<usize>)>,
    Vec<usize>,
) {
    let nv = s.types.iter().filter(|t| **t == CellType::Vertex).count();
    let ne = s.edges.len();
    let mut edges = Vec::new();
    let mut edge_targets = Vec::new();
    let mut faces = Vec::new();
    let mut face_targets = Vec::new();
    for (r, &src) in s.source.iter().enumerate() {
        match s.types[src] {
            CellType::Vertex => {}
            CellType::Edge => {
                let k = src - nv;
                edges.push((r, s.edges[k].ends));
                edge_targets.push(k);
            }
            CellType::Face => {
                let k = src - nv - ne;
                faces.push((r, s.faces[k].children.clone()));
                face_targets.push(k);
            }
        }
    }
    (edges, edge_targets, faces, face_targets)
}

impl CcVae {
    /// Every loss term for one sample; `eps` (`n × D`) samples `z`, `None` uses `μ`.
    ///
    /// Phase II runs under teacher forcing: ground-truth children, anchors
    /// and face frames feed the edge and face heads.
    pub fn losses<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &VaeSample,
        eps: Option<&[f64]>,
        kl_weight: f64,
    ) -> Result<LossVars> {
        let c = &self.config;
        let (mu, logsig) = self.encode(g, s)?;
        let kl = kl_divergence(g, mu, logsig)?;
        let z = match eps {
            Some(e) => self.reparameterize(g, mu, logsig, e)?,
            None => mu,
        };
        let z = g.gather(z, &s.source)?;
        let zt = self.decode_features(g, z)?;
        let m = s.slots();

        let logits = self.type_logits(g, zt)?;
        let onehot: Vec<f64> = s
            .source
            .iter()
            .flat_map(|&src| (0..3).map(move |k| if s.types[src].rank() == k { 1.0 } else { 0.0 }))
            .collect();
        let type_ = bce_with_logits(g, logits, &onehot)?;

        let anchors = self.anchors(g, zt)?;
        let gt: Vec<f64> = s.source.iter().flat_map(|&src| s.anchors[src]).collect();
        let gt = constant(g, &[m, 3], &gt)?;
        let diff = g.sub(anchors, gt)?;
        let sq = g.square(diff);
        let anchor = g.mean(sq);

        let pairs = s.link_pairs();
        let link = if pairs.is_empty() {
            g.scalar(0.0)
        } else {
            let l = self.link_logits(g, zt, &pairs)?;
            let y: Vec<f64> = pairs
                .iter()
                .map(|&(i, j)| {
                    if s.is_linked(s.source[i], s.source[j]) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            focal_loss(g, l, &y, c.focal_alpha, c.focal_gamma)?
        };

        let (edge_rows, edge_targets, face_rows, face_targets) = teacher_rows(s);
        let edge = if edge_rows.is_empty() {
            g.scalar(0.0)
        } else {
            let params = self.edge_params(g, zt, &edge_rows)?;
            let ends: Vec<[Vec3; 2]> = edge_rows
                .iter()
                .map(|(_, [a, b])| [s.anchors[*a], s.anchors[*b]])
                .collect();
            let curves = self.curve_samples(g, params, &ends)?;
            let target: Vec<f64> = edge_targets
                .iter()
                .flat_map(|&k| s.edges[k].samples.iter().flatten().copied())
                .collect();
            let shape = g.shape(curves).to_vec();
            let target = constant(g, &shape, &target)?;
            let d = g.sub(curves, target)?;
            let d = g.abs(d);
            g.mean(d)
        };

        let (face, pose) = if face_rows.is_empty() {
            (g.scalar(0.0), g.scalar(0.0))
        } else {
            let frames: Vec<Frame> = face_targets.iter().map(|&k| s.faces[k].frame).collect();
            let rows: Vec<usize> = face_rows.iter().map(|f| f.0).collect();
            let params = self.pose_params(g, zt, &rows)?;
            let (axes, t) = self.pose_axes(g, params)?;
            let pred = g.concat(&[axes, t], 1)?;
            let target: Vec<f64> = frames
                .iter()
                .flat_map(|f| {
                    let mut v: Vec<f64> = (0..3).flat_map(|k| f.axis(k)).collect();
                    v.extend(f.t);
                    v
                })
                .collect();
            let target = constant(g, &[rows.len(), 12], &target)?;
            let d = g.sub(pred, target)?;
            let d = g.square(d);
            let pose = g.mean(d);
            let points = self.surface_points(g, zt, &face_rows, &frames, &s.anchors)?;
            let targets: Vec<&[Vec3]> = face_targets.iter().map(|&k| s.faces[k].points.as_slice()).collect();
            let gg = c.surface_grid * c.surface_grid;
            (chamfer_l1(g, points, gg, &targets)?, pose)
        };

        let mut total = type_;
        for term in [anchor, link, edge, face, pose] {
            total = g.add(total, term)?;
        }
        let kl_term = g.mul_scalar(kl, kl_weight);
        let total = g.add(total, kl_term)?;
        Ok(LossVars {
            type_,
            anchor,
            link,
            edge,
            face,
            pose,
            kl,
            total,
        })
    }
}
