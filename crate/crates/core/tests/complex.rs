use kcp_core::complex::{
    build_hasse_diagram, complexity_filter, flatten_to_particles, restore_complex, restore_topology, CellComplex,
    CellType, ComplexityLimits, Edge, Face, Mode, PredictedGeometry, Repair, SpatialHasseDiagram,
};
use kcp_core::dataio::{generate, Kind};
use kcp_core::geometry::{Frame, RationalCubicBezier, SurfacePatch};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn restore_from(d: &SpatialHasseDiagram, probs: &[f64], mode: Mode, geom: &PredictedGeometry) -> (CellComplex, usize) {
    let (c, log) = restore_complex(&d.types(), &d.anchors(), probs, mode, geom);
    (c, log.len())
}

#[test]
fn restore_with_ground_truth_is_identity_over_catalog() {
    for kind in Kind::catalog() {
        for wireframe in [false, true] {
            for seed in 0..20 {
                let c = generate(kind, seed, wireframe).unwrap();
                let d = build_hasse_diagram(&c).unwrap();
                let (r, log) = restore_from(&d, &d.link_matrix(), c.mode, &PredictedGeometry::from_complex(&c));
                assert_eq!(log, 0, "{kind} seed {seed}");
                assert_eq!(r, c, "{kind} seed {seed} wireframe {wireframe}");
            }
        }
    }
}

#[test]
fn lowered_face_link_is_repaired() {
    let c = generate(Kind::Box, 3, false).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let n = d.len();
    let mut probs = d.link_matrix();
    let (f, e) = d
        .links
        .iter()
        .copied()
        .find(|&(p, _)| d.nodes[p].cell == CellType::Face)
        .unwrap();
    probs[f * n + e] = 0.4;
    probs[e * n + f] = 0.4;
    let (r, log) = restore_complex(
        &d.types(),
        &d.anchors(),
        &probs,
        c.mode,
        &PredictedGeometry::from_complex(&c),
    );
    assert_eq!(
        log.entries,
        vec![Repair::RestoredLink {
            parent: f,
            child: e,
            p: 0.4,
            reason: "closing an open boundary chain".into()
        }]
    );
    assert_eq!(r, c);
}

#[test]
fn face_with_one_confident_edge_is_dropped() {
    // One kept side is a single open chain; one repair adds a second side,
    // which still leaves the loop open, so the face goes.
    let c = generate(Kind::Box, 4, false).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let n = d.len();
    let mut probs = d.link_matrix();
    let (nv, ne) = (c.vertices.len(), c.edges.len());
    let f = nv + ne;
    for &e in &c.faces[0].edge_set()[1..] {
        probs[f * n + nv + e] = 0.1;
        probs[(nv + e) * n + f] = 0.1;
    }
    let (r, log) = restore_complex(
        &d.types(),
        &d.anchors(),
        &probs,
        c.mode,
        &PredictedGeometry::from_complex(&c),
    );
    assert_eq!(r.faces.len(), 5);
    assert_eq!(log.len(), 2);
    assert!(matches!(log.entries[0], Repair::RestoredLink { parent, .. } if parent == f));
    assert!(matches!(log.entries[1], Repair::DroppedCell { particle, cell: CellType::Face, .. } if particle == f));
}

#[test]
fn two_open_chains_each_get_one_repair() {
    let c = generate(Kind::Box, 4, false).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let n = d.len();
    let mut probs = d.link_matrix();
    let (nv, ne) = (c.vertices.len(), c.edges.len());
    let f = nv + ne;
    let edges = c.faces[0].edge_set();
    let first = c.edges[edges[0]].v;
    let opposite = edges
        .iter()
        .copied()
        .find(|&e| c.edges[e].v.iter().all(|v| !first.contains(v)))
        .unwrap();
    for e in [edges[0], opposite] {
        probs[f * n + nv + e] = 0.3;
        probs[(nv + e) * n + f] = 0.3;
    }
    let (r, log) = restore_complex(
        &d.types(),
        &d.anchors(),
        &probs,
        c.mode,
        &PredictedGeometry::from_complex(&c),
    );
    assert_eq!(r, c);
    assert_eq!(log.len(), 2);
}

#[test]
fn all_zero_matrix_restores_nothing() {
    let c = generate(Kind::Box, 0, false).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let zeros = vec![0.0; d.len() * d.len()];
    let (r, log) = restore_complex(&d.types(), &d.anchors(), &zeros, c.mode, &PredictedGeometry::default());
    assert!(r.is_empty());
    assert_eq!(log.len(), 26);
    assert!(log.entries.iter().all(|e| matches!(e, Repair::DroppedCell { .. })));
}

#[test]
fn edges_keep_two_most_probable_vertices() {
    let c = generate(Kind::Box, 1, true).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let n = d.len();
    let mut probs = d.link_matrix();
    let e = 8;
    let [a, _] = c.edges[0].v;
    let stray = (0..8).find(|&v| v != c.edges[0].v[0] && v != c.edges[0].v[1]).unwrap();
    probs[e * n + stray] = 0.6;
    let (topo, log) = restore_topology(&d.types(), &d.anchors(), &probs, Mode::Wireframe);
    assert_eq!(topo.edges.len(), 12);
    let kept = topo.edges.iter().find(|(p, _)| *p == e).unwrap().1;
    assert!(kept.contains(&a) && !kept.contains(&stray));
    assert_eq!(log.len(), 1);
}

#[test]
fn nonadjacent_links_are_ignored() {
    let c = generate(Kind::Box, 2, false).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let n = d.len();
    let mut probs = d.link_matrix();
    probs[25 * n] = 0.9;
    let (r, log) = restore_complex(
        &d.types(),
        &d.anchors(),
        &probs,
        c.mode,
        &PredictedGeometry::from_complex(&c),
    );
    assert_eq!(r, c);
    assert_eq!(log.entries, vec![Repair::IgnoredLink { a: 0, b: 25, p: 0.9 }]);
}

fn polygon(n: usize) -> CellComplex {
    let mut c = CellComplex::empty(Mode::OpenShell);
    for k in 0..n {
        let t = std::f64::consts::TAU * k as f64 / n as f64;
        c.vertices.push([t.cos(), t.sin(), 0.0]);
    }
    for k in 0..n {
        let (a, b) = (k, (k + 1) % n);
        c.edges.push(Edge {
            v: [a, b],
            curve: RationalCubicBezier::line(c.vertices[a], c.vertices[b]),
        });
    }
    let frame = Frame::identity();
    c.faces.push(Face {
        loops: vec![(1..=n as i64).collect()],
        grid: SurfacePatch::planar(&frame, [-1.0, -1.0], [1.0, 1.0], 16),
        frame,
    });
    c
}

fn wire_path(vertices: usize, edges: usize) -> CellComplex {
    let mut c = CellComplex::empty(Mode::Wireframe);
    c.vertices = (0..vertices).map(|k| [k as f64 / vertices as f64, 0.0, 0.0]).collect();
    for k in 0..edges {
        let (a, b) = (k % vertices, (k + 1) % vertices);
        c.edges.push(Edge {
            v: [a, b],
            curve: RationalCubicBezier::line(c.vertices[a], c.vertices[b]),
        });
    }
    c
}

#[test]
fn complexity_filter_boundaries() {
    let limits = ComplexityLimits::default();
    assert!(complexity_filter(&generate(Kind::Box, 0, false).unwrap(), &limits));
    assert!(complexity_filter(&polygon(30), &limits));
    assert!(!complexity_filter(&polygon(31), &limits));
    let ring = wire_path(96, 96);
    assert_eq!(ring.cell_count(), 192);
    assert!(complexity_filter(&ring, &limits));
    let path = wire_path(97, 96);
    assert_eq!(path.cell_count(), 193);
    assert!(!complexity_filter(&path, &limits));
}

#[test]
fn flatten_counts_and_empty_latents() {
    let c = generate(Kind::Box, 0, false).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let set = flatten_to_particles(&d, None);
    assert_eq!((set.true_count, set.len()), (26, 26));
    assert!(set.particles.iter().all(|p| p.latent.is_empty()));
    assert_eq!(set.particles.iter().filter(|p| p.cell == CellType::Face).count(), 6);
    for (p, n) in set.particles.iter().zip(&d.nodes) {
        assert_eq!((p.anchor, p.cell), (n.anchor, n.cell));
    }
}

#[test]
fn shuffled_nodes_give_equal_particle_sets() {
    let c = generate(Kind::Frustum(5), 9, false).unwrap();
    let d = build_hasse_diagram(&c).unwrap();
    let latents: Vec<Vec<f64>> = (0..d.len()).map(|i| vec![i as f64, -(i as f64)]).collect();
    let base = flatten_to_particles(&d, Some(&latents));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mut shuffled = base.clone();
        shuffled.particles.shuffle(&mut rng);
        assert_eq!(shuffled, base);
    }
    let mut changed = base.clone();
    changed.particles[0].latent[0] += 1e-9;
    assert_ne!(changed, base);
}

fn noisy(base: &[f64], noise: &[f64]) -> Vec<f64> {
    base.iter()
        .zip(noise)
        .map(|(&b, &z)| (b * 0.7 + z).clamp(0.0, 1.0))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn repaired_topology_respects_rank_structure(
        seed in 0u64..1000,
        kind_index in 0usize..22,
        noise in proptest::collection::vec(0.0f64..0.6, 64 * 64),
    ) {
        let kind = Kind::catalog()[kind_index % Kind::catalog().len()];
        let c = generate(kind, seed, false).unwrap();
        let d = build_hasse_diagram(&c).unwrap();
        let n = d.len();
        let probs = noisy(&d.link_matrix(), &noise[..n * n]);
        let types = d.types();
        let (topo, _) = restore_topology(&types, &d.anchors(), &probs, c.mode);
        for &(e, [a, b]) in &topo.edges {
            prop_assert_eq!(types[e], CellType::Edge);
            prop_assert_eq!(types[a], CellType::Vertex);
            prop_assert_eq!(types[b], CellType::Vertex);
            prop_assert!(a != b);
        }
        for (f, es) in &topo.faces {
            prop_assert_eq!(types[*f], CellType::Face);
            prop_assert!(es.len() >= 3);
            prop_assert!(es.iter().all(|e| topo.edges.iter().any(|(p, _)| p == e)));
        }
        for v in &topo.vertices {
            prop_assert!(topo.edges.iter().any(|(_, ends)| ends.contains(v)));
        }
    }
}
