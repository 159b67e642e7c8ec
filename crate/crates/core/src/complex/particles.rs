use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::cell::CellType;
use super::hasse::SpatialHasseDiagram;
use crate::geometry::vec3::lex_cmp;
use crate::geometry::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub anchor: Vec3,
    pub cell: CellType,
    pub latent: Vec<f64>,
}

/// Unordered particles; `true_count` of them are distinct cells, the rest padding.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub true_count: usize,
    pub budget: usize,
}

fn particle_cmp(a: &Particle, b: &Particle) -> Ordering {
    a.cell
        .cmp(&b.cell)
        .then_with(|| lex_cmp(&a.anchor, &b.anchor))
        .then_with(|| {
            a.latent
                .iter()
                .zip(&b.latent)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.latent.len().cmp(&b.latent.len()))
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Particles in a canonical order, for order-free comparison.
    pub fn sorted(&self) -> Vec<Particle> {
        let mut p = self.particles.clone();
        p.sort_by(particle_cmp);
        p
    }
}

/// Multiset equality; storage order is irrelevant.
impl PartialEq for ParticleSet {
    fn eq(&self, other: &Self) -> bool {
        self.true_count == other.true_count
            && self.budget == other.budget
            && self.len() == other.len()
            && self
                .sorted()
                .iter()
                .zip(other.sorted().iter())
                .all(|(a, b)| particle_cmp(a, b).is_eq())
    }
}

/// One particle per diagram node; links stay in the diagram.
pub fn flatten_to_particles(diagram: &SpatialHasseDiagram, latents: Option<&[Vec<f64>]>) -> ParticleSet {
    let particles = diagram
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| Particle {
            anchor: n.anchor,
            cell: n.cell,
            latent: latents.and_then(|l| l.get(i)).cloned().unwrap_or_default(),
        })
        .collect::<Vec<_>>();
    ParticleSet {
        true_count: particles.len(),
        budget: particles.len(),
        particles,
    }
}
