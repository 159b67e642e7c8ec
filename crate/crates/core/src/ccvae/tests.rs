use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::complex::{build_hasse_diagram, CellType, Mode};
use crate::dataio::{generate_record, normalize_and_pad, normalize_record, Kind};
use crate::geometry::{Frame, CURVE_SAMPLES};
use crate::nn::AdamWConfig;
use crate::tensor::{gradcheck, Graph, ParamStore, Tensor};

fn sample(kind: Kind, seed: u64, wire: bool, budget: Option<usize>, cloud: usize) -> VaeSample {
    let mut record = generate_record(kind, seed, wire).unwrap();
    record.cloud.truncate(cloud);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match budget {
        Some(b) => VaeSample::from_padded(&normalize_and_pad(&record, b, &mut rng).unwrap()).unwrap(),
        None => {
            normalize_record(&mut record);
            let d = build_hasse_diagram(&record.complex).unwrap();
            VaeSample::unpadded(&record, &d).unwrap()
        }
    }
}

fn tiny_model<T: crate::tensor::Scalar>(seed: u64) -> (CcVae, ParamStore<T>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = CcVae::new(VaeConfig::tiny(), &mut store, &mut rng).unwrap();
    (model, store)
}

fn kl_of(mu: f64, logsig: f64) -> f64 {
    let mut g = Graph::<f64>::detached();
    let m = g.constant(Tensor::from_f64(&[1, 1], &[mu]).unwrap());
    let l = g.constant(Tensor::from_f64(&[1, 1], &[logsig]).unwrap());
    let k = kl_divergence(&mut g, m, l).unwrap();
    g.value(k).item()
}

#[test]
fn kl_examples() {
    assert_eq!(kl_of(0.0, 0.0), 0.0);
    assert!((kl_of(1.0, 0.0) - 0.5).abs() < 1e-15);
    // σ² = e.
    let expected = 0.5 * (std::f64::consts::E - 2.0);
    assert!((kl_of(0.0, 0.5) - expected).abs() < 1e-12);
    assert!((expected - 0.3591).abs() < 1e-4);
}

#[test]
fn focal_without_focusing_is_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits: Vec<f64> = (0..64).map(|_| rng.random_range(-6.0..6.0)).collect();
    let y: Vec<f64> = (0..64).map(|_| f64::from(rng.random_bool(0.3))).collect();
    let mut g = Graph::<f64>::detached();
    let l = g.constant(Tensor::from_f64(&[64], &logits).unwrap());
    let f = focal_loss(&mut g, l, &y, 1.0, 0.0).unwrap();
    let b = bce_with_logits(&mut g, l, &y).unwrap();
    assert!((g.value(f).item() - g.value(b).item()).abs() < 1e-9);
    let direct: f64 = logits
        .iter()
        .zip(&y)
        .map(|(&x, &t)| {
            let p = 1.0 / (1.0 + (-x).exp());
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / 64.0;
    assert!((g.value(b).item() - direct).abs() < 1e-9);
}

#[test]
fn saturated_predictions_have_vanishing_losses() {
    let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let logits: Vec<f64> = y.iter().map(|&t| if t > 0.5 { 20.0 } else { -20.0 }).collect();
    let mut g = Graph::<f64>::detached();
    let l = g.constant(Tensor::from_f64(&[6], &logits).unwrap());
    let b = bce_with_logits(&mut g, l, &y).unwrap();
    let f = focal_loss(&mut g, l, &y, 0.25, 2.0).unwrap();
    assert!(g.value(b).item() <= 1e-6);
    assert!(g.value(f).item() <= 1e-6);
}

#[test]
fn link_logits_are_symmetric() {
    let (model, store) = tiny_model::<f64>(1);
    let s = sample(Kind::Box, 1, false, None, 32);
    let mut g = Graph::inference(&store);
    let (mu, _) = model.encode(&mut g, &s).unwrap();
    let zt = model.decode_features(&mut g, mu).unwrap();
    let pairs: Vec<(usize, usize)> = (0..10).flat_map(|i| (0..10).map(move |j| (i, j))).collect();
    let l = model.link_logits(&mut g, zt, &pairs).unwrap();
    let v = g.value(l).to_f64_vec();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        assert_eq!(v[k], v[j * 10 + i], "({i}, {j})");
    }
}

#[test]
fn curve_endpoints_are_the_anchors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let p: Vec<f64> = (0..EDGE_PARAMS).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = [rng.random(), rng.random(), rng.random()];
        let b = [rng.random(), rng.random(), rng.random()];
        let c = CcVae::curve_from_params(&p, a, b);
        assert_eq!(c.start(), a);
        assert_eq!(c.end(), b);
        assert_eq!(c.eval(0.0), a);
        assert_eq!(c.eval(1.0), b);
    }
    let line = CcVae::curve_from_params(&[0.0; EDGE_PARAMS], [0.0; 3], [3.0, 0.0, 0.0]);
    assert!((line.eval(0.5)[0] - 1.5).abs() < 1e-9);
}

#[test]
fn graph_curves_match_direct_evaluation() {
    let (model, _) = tiny_model::<f64>(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 3;
    let p: Vec<f64> = (0..m * EDGE_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ends: Vec<[[f64; 3]; 2]> = (0..m)
        .map(|_| {
            [
                [rng.random(), rng.random(), rng.random()],
                [rng.random(), rng.random(), rng.random()],
            ]
        })
        .collect();
    let mut g = Graph::<f64>::detached();
    let pv = g.constant(Tensor::from_f64(&[m, EDGE_PARAMS], &p).unwrap());
    let s = model.curve_samples(&mut g, pv, &ends).unwrap();
    let v = g.value(s).to_f64_vec();
    for k in 0..m {
        let c = CcVae::curve_from_params(&p[k * EDGE_PARAMS..(k + 1) * EDGE_PARAMS], ends[k][0], ends[k][1]);
        for (i, q) in c.sample_uniform(CURVE_SAMPLES).iter().enumerate() {
            for d in 0..3 {
                assert!((v[(k * CURVE_SAMPLES + i) * 3 + d] - q[d]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn swapped_endpoint_order_gives_the_same_curve() {
    let s = sample(Kind::Prism(5), 2, false, None, 32);
    for e in &s.edges {
        let [a, b] = e.ends;
        assert_eq!(crate::complex::canonical_endpoints(&s.anchors, b, a), [a, b]);
        assert_eq!(e.samples[0], s.anchors[a]);
        assert_eq!(*e.samples.last().unwrap(), s.anchors[b]);
    }
}

fn permute_nodes(s: &VaeSample, perm: &[usize]) -> VaeSample {
    // New node k is old node perm[k].
    let n = s.true_count();
    let mut inv = vec![0; n];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    let mut out = s.clone();
    out.types = perm.iter().map(|&p| s.types[p]).collect();
    out.anchors = perm.iter().map(|&p| s.anchors[p]).collect();
    out.rotations = perm.iter().map(|&p| s.rotations[p]).collect();
    let w = crate::complex::LPE_DIM;
    out.lpe = perm.iter().flat_map(|&p| s.lpe[p * w..(p + 1) * w].to_vec()).collect();
    out.links = s.links.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
    out.source = (0..n).collect();
    out
}

#[test]
fn encoder_and_decoder_are_permutation_equivariant() {
    let (model, store) = tiny_model::<f64>(6);
    let s = sample(Kind::Frustum(4), 6, false, None, 64);
    let n = s.true_count();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let run = |s: &VaeSample| {
        let mut g = Graph::inference(&store);
        let (mu, ls) = model.encode(&mut g, s).unwrap();
        let zt = model.decode_features(&mut g, mu).unwrap();
        let t = model.type_logits(&mut g, zt).unwrap();
        let a = model.anchors(&mut g, zt).unwrap();
        [mu, ls, t, a].map(|v| g.value(v).to_f64_vec())
    };
    let base = run(&s);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let out = run(&permute_nodes(&s, &perm));
        for (b, o) in base.iter().zip(&out) {
            let w = b.len() / n;
            for (k, &p) in perm.iter().enumerate() {
                for c in 0..w {
                    assert!((o[k * w + c] - b[p * w + c]).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn padded_slots_permute_with_their_outputs() {
    let (model, store) = tiny_model::<f64>(8);
    let s = sample(Kind::Box, 8, false, Some(40), 32);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let run = |s: &VaeSample| {
        let mut g = Graph::inference(&store);
        let (mu, _) = model.encode(&mut g, s).unwrap();
        let z = g.gather(mu, &s.source).unwrap();
        let zt = model.decode_features(&mut g, z).unwrap();
        let a = model.anchors(&mut g, zt).unwrap();
        g.value(a).to_f64_vec()
    };
    let base = run(&s);
    let mut perm: Vec<usize> = (0..s.slots()).collect();
    perm.shuffle(&mut rng);
    let out = run(&s.permuted_slots(&perm));
    for (k, &p) in perm.iter().enumerate() {
        for c in 0..3 {
            assert!((out[k * 3 + c] - base[p * 3 + c]).abs() < 1e-9);
        }
    }
}

#[test]
fn deterministic_sampling_repeats() {
    let (model, store) = tiny_model::<f64>(10);
    let s = sample(Kind::Wedge, 1, false, None, 32);
    let eps: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..s.true_count() * model.config.latent_dim)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect()
    };
    let z = || {
        let mut g = Graph::inference(&store);
        let (mu, ls) = model.encode(&mut g, &s).unwrap();
        let z = model.reparameterize(&mut g, mu, ls, &eps).unwrap();
        g.value(z).to_f64_vec()
    };
    assert_eq!(z(), z());
}

#[test]
fn twin_anchors_with_different_neighbourhoods_separate() {
    let (model, store) = tiny_model::<f64>(12);
    let base = sample(Kind::Pyramid(3), 0, true, None, 16);
    // Two vertices at the same place: node 0 keeps its edges, node `n` is new and isolated.
    let mut s = base.clone();
    let n = s.true_count();
    s.types.push(CellType::Vertex);
    s.anchors.push(s.anchors[0]);
    s.rotations.push(s.rotations[0]);
    s.lpe = crate::complex::laplacian_positional_encoding(n + 1, &s.links, crate::complex::LPE_DIM).unwrap();
    s.source = (0..=n).collect();
    let mut g = Graph::inference(&store);
    let (mu, _) = model.encode(&mut g, &s).unwrap();
    let v = g.value(mu).to_f64_vec();
    let d = model.config.latent_dim;
    let gap = (0..d).map(|k| (v[k] - v[n * d + k]).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-6, "gap {gap}");
}

#[test]
fn boundary_context_ignores_child_order() {
    let (model, store) = tiny_model::<f64>(13);
    let s = sample(Kind::Prism(6), 3, false, None, 32);
    let mut g = Graph::inference(&store);
    let (mu, _) = model.encode(&mut g, &s).unwrap();
    let zt = model.decode_features(&mut g, mu).unwrap();
    let f = &s.faces[0];
    let mut rev = f.children.clone();
    rev.reverse();
    let a = model
        .surface_points(&mut g, zt, &[(f.node, f.children.clone())], &[f.frame], &s.anchors)
        .unwrap();
    let b = model
        .surface_points(&mut g, zt, &[(f.node, rev)], &[f.frame], &s.anchors)
        .unwrap();
    assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-12);
}

#[test]
fn zero_surface_output_collapses_to_the_frame_origin() {
    let (model, mut store) = tiny_model::<f64>(14);
    for name in ["vae.head.surface.out.1.weight", "vae.head.surface.out.1.bias"] {
        let id = store.id(name).unwrap();
        store
            .get_mut(id)
            .value_mut()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let s = sample(Kind::Box, 3, false, None, 32);
    let mut g = Graph::inference(&store);
    let (mu, _) = model.encode(&mut g, &s).unwrap();
    let zt = model.decode_features(&mut g, mu).unwrap();
    let frame = Frame {
        t: [0.25, -0.5, 0.125],
        ..Frame::identity()
    };
    let f = &s.faces[0];
    let p = model
        .surface_points(&mut g, zt, &[(f.node, f.children.clone())], &[frame], &s.anchors)
        .unwrap();
    for c in g.value(p).to_f64_vec().chunks(3) {
        assert_eq!(c, frame.t);
    }
}

#[test]
fn pose_axes_are_orthonormal_and_match_frames() {
    let (model, _) = tiny_model::<f64>(15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p: Vec<f64> = (0..4 * POSE_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = Graph::<f64>::detached();
    let pv = g.constant(Tensor::from_f64(&[4, POSE_PARAMS], &p).unwrap());
    let (axes, t) = model.pose_axes(&mut g, pv).unwrap();
    let (axes, t) = (g.value(axes).to_f64_vec(), g.value(t).to_f64_vec());
    for k in 0..4 {
        let f = CcVae::frame_from_params(&p[k * 9..k * 9 + 9]);
        assert!(f.orthonormality_error() < 1e-12);
        assert!((f.det() - 1.0).abs() < 1e-12);
        for a in 0..3 {
            for c in 0..3 {
                assert!((axes[k * 9 + a * 3 + c] - f.axis(a)[c]).abs() < 1e-9);
            }
            assert_eq!(t[k * 3 + a], f.t[a]);
        }
    }
}

#[test]
fn kl_weight_only_changes_the_kl_path() {
    let (model, store) = tiny_model::<f64>(17);
    let s = sample(Kind::Prism(4), 4, false, Some(30), 32);
    let report = |w: f64| {
        let mut g = Graph::new(&store);
        let vars = model.losses(&mut g, &s, None, w).unwrap();
        loss_values(&g, &vars, 0).unwrap()
    };
    let (a, b) = (report(0.0), report(2e-6));
    assert_eq!(a[..7], b[..7]);
    assert!((b[7] - a[7] - 2e-6 * a[6]).abs() < 1e-12);
}

#[test]
fn total_loss_passes_gradcheck() {
    let (model, mut store) = tiny_model::<f64>(18);
    let s = sample(Kind::Pyramid(3), 2, false, Some(16), 8);
    let eps: Vec<f64> = (0..s.true_count() * model.config.latent_dim)
        .map(|k| ((k * 7) % 5) as f64 * 0.1 - 0.2)
        .collect();
    let report = gradcheck(&mut store, 1e-5, Some(6), |g| {
        Ok(model.losses(g, &s, Some(&eps), 2e-6)?.total)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
    assert_eq!(
        report.unreachable().count(),
        0,
        "{:?}",
        report.unreachable().collect::<Vec<_>>()
    );
}

#[test]
fn training_reduces_loss_on_a_tiny_set() {
    let mut trainer = VaeTrainer::<f32>::new(
        VaeConfig::tiny(),
        AdamWConfig {
            lr: 3e-3,
            ..AdamWConfig::default()
        },
        19,
    )
    .unwrap();
    let batch: Vec<VaeSample> = (0..2)
        .map(|k| sample(Kind::Prism(3 + k), k as u64, false, Some(32), 64))
        .collect();
    let losses: Vec<f64> = (0..60).map(|_| trainer.train_step(&batch).unwrap().total).collect();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[50..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.7 * head, "head {head} tail {tail}");
}

#[test]
fn decoding_yields_a_complex_of_the_requested_mode() {
    let (model, store) = tiny_model::<f64>(20);
    let s = sample(Kind::Box, 0, false, None, 32);
    let mu = encode_mean(&model, &store, &s).unwrap();
    let d = decode_latents(&model, &store, &mu, Mode::Solid, None).unwrap();
    assert_eq!(d.types.len(), s.true_count());
    assert_eq!(d.complex.mode, Mode::Solid);
    for i in 0..d.types.len() {
        for j in 0..d.types.len() {
            assert_eq!(d.probs[i * d.types.len() + j], d.probs[j * d.types.len() + i]);
        }
    }
    for e in &d.complex.edges {
        assert_eq!(e.curve.start(), d.complex.vertices[e.v[0]]);
        assert_eq!(e.curve.end(), d.complex.vertices[e.v[1]]);
    }
}
