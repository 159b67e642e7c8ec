use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    cad_metrics, chamfer_matrix, distribution_metrics_from, jsd_voxel, novelty_uniqueness_from, ModelSummary,
    JSD_RESOLUTION,
};
use crate::error::Result;
use crate::geometry::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinKRow {
    pub k: usize,
    pub valid: Option<f64>,
}

/// All metrics for one evaluation; MMD and JSD are scaled by 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub one_nna: f64,
    pub mmd_x100: f64,
    pub jsd_x100: f64,
    pub cov: f64,
    pub novelty: f64,
    pub uniqueness: f64,
    pub valid: f64,
    pub cc: f64,
    pub min_k: Vec<MinKRow>,
    pub gen_count: usize,
    pub ref_count: usize,
    pub train_count: usize,
    pub seed: u64,
    pub novelty_threshold: f64,
    pub uniqueness_threshold: f64,
}

impl EvalReport {
    /// `gen`, `reference` and `train` are per-model point clouds.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        gen: &[Vec<Vec3>],
        summaries: &[ModelSummary],
        reference: &[Vec<Vec3>],
        train: &[Vec<Vec3>],
        tau_n: f64,
        tau_u: f64,
        seed: u64,
    ) -> Result<Self> {
        let gen_ref = chamfer_matrix(gen, reference)?;
        let gen_gen = chamfer_matrix(gen, gen)?;
        let ref_ref = chamfer_matrix(reference, reference)?;
        let dist = distribution_metrics_from(&gen_ref, &gen_gen, &ref_ref, gen.len(), reference.len())?;
        let gen_train = chamfer_matrix(gen, train)?;
        let div = novelty_uniqueness_from(&gen_train, &gen_gen, gen.len(), train.len(), tau_n, tau_u);
        let cad = cad_metrics(summaries);
        Ok(Self {
            one_nna: dist.one_nna,
            mmd_x100: dist.mmd * 100.0,
            jsd_x100: jsd_voxel(gen, reference, JSD_RESOLUTION) * 100.0,
            cov: dist.cov,
            novelty: div.novelty,
            uniqueness: div.uniqueness,
            valid: cad.valid,
            cc: cad.cc,
            min_k: cad.min_k.into_iter().map(|(k, valid)| MinKRow { k, valid }).collect(),
            gen_count: gen.len(),
            ref_count: reference.len(),
            train_count: train.len(),
            seed,
            novelty_threshold: tau_n,
            uniqueness_threshold: tau_u,
        })
    }

    /// Aligned plain-text rendering.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("1-NNA (%)", self.one_nna),
            ("MMD (x1e2)", self.mmd_x100),
            ("JSD (x1e2)", self.jsd_x100),
            ("COV (%)", self.cov),
            ("Novelty (%)", self.novelty),
            ("Unique (%)", self.uniqueness),
            ("Valid (%)", self.valid),
            ("CC", self.cc),
        ];
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<14}{v:>10.2}");
        }
        let _ = writeln!(s, "\n{:<14}{:>10}", "min faces", "Valid (%)");
        for row in &self.min_k {
            match row.valid {
                Some(v) => {
                    let _ = writeln!(s, "{:<14}{v:>10.2}", row.k);
                }
                None => {
                    let _ = writeln!(s, "{:<14}{:>10}", row.k, "-");
                }
            }
        }
        let _ = writeln!(
            s,
            "\ngenerated {}  reference {}  train {}  seed {}",
            self.gen_count, self.ref_count, self.train_count, self.seed
        );
        s
    }
}
