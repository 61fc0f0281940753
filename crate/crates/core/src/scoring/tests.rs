use super::*;
use crate::model::{gen_data, gen_model, MoEConfig, Nonlinearity};
use crate::numerics::Rng;

fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn activation_strength_cases() {
    let mut rng = Rng::new(1);
    let layer = MoELayer {
        experts: vec![Matrix::zeros(3, 3), Matrix::identity(3), random_matrix(&mut rng, 3, 3)],
        router: Matrix::zeros(3, 3),
    };
    let mut h = random_matrix(&mut rng, 4, 3);
    for k in 0..4 {
        let n = l2_norm(h.row(k));
        for v in h.row_mut(k) {
            *v /= n;
        }
    }
    let a = activation_strength(&layer, &h).unwrap();
    assert_eq!(a[0], 0.0);
    assert!(close(a[1], 1.0, 1e-14));
    let w = &layer.experts[2];
    let mut sum = 0.0;
    for k in 0..4 {
        let out: Vec<f64> = (0..3)
            .map(|c| (0..3).map(|j| h[(k, j)] * w[(c, j)]).sum())
            .collect();
        sum += out.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    assert!(close(a[2], sum / 4.0, 1e-13));
}

#[test]
fn routing_preference_cases() {
    let h = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.5]]).unwrap();
    let zero = MoELayer {
        experts: vec![Matrix::<f64>::identity(2); 4],
        router: Matrix::zeros(4, 2),
    };
    assert!(routing_preference(&zero, &h).unwrap().iter().all(|&r| (r - 0.25).abs() < 1e-15));

    let router = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
    let layer = MoELayer {
        experts: vec![Matrix::<f64>::identity(2); 2],
        router,
    };
    let single = Matrix::from_rows(&[vec![1.5, 3.0]]).unwrap();
    let r = routing_preference(&layer, &single).unwrap();
    assert_eq!(r, layer.route(&single).unwrap().row(0));

    // Tokens with logits (+1,-1) and (-1,+1): rows are mirror images.
    let opposite = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
    let r = routing_preference(&layer, &opposite).unwrap();
    let p = 1.0 / (1.0 + (-2.0f64).exp());
    let want = [(p + (1.0 - p)) / 2.0, ((1.0 - p) + p) / 2.0];
    assert!(close(r[0], want[0], 1e-15) && close(r[1], want[1], 1e-15));
}

#[test]
fn transition_intensity_cases() {
    let t = transition_intensity(&[0.0, 1.0, 0.0], &[0.2, 0.3, 0.5]);
    for i in [0, 2] {
        assert!(t.row(i).iter().all(|&v| v == 0.0));
    }
    let t = transition_intensity(&[0.5; 3], &[1.0 / 3.0; 3]);
    assert!(t.data().iter().all(|&v| v == t[(0, 0)]));
    let t = transition_intensity(&[1.0, 2.0], &[0.25, 0.75]);
    assert_eq!(t.data(), &[0.25, 0.75, 0.5, 1.5]);
}

#[test]
fn reconstruction_loss_cases() {
    let mut rng = Rng::new(5);
    let w = random_matrix(&mut rng, 3, 3);
    let single = MoELayer {
        experts: vec![w.clone()],
        router: random_matrix(&mut rng, 1, 3),
    };
    let h = random_matrix(&mut rng, 4, 3);
    let (y, _) = single.forward(&h, 1, None).unwrap();
    assert_eq!(reconstruction_loss(&single, &h, &y).unwrap(), vec![0.0]);

    let dup = MoELayer {
        experts: vec![w.clone(), w.clone(), random_matrix(&mut rng, 3, 3)],
        router: random_matrix(&mut rng, 3, 3),
    };
    let (y, _) = dup.forward(&h, 2, None).unwrap();
    let loss = reconstruction_loss(&dup, &h, &y).unwrap();
    assert_eq!(loss[0], loss[1]);

    let mut want = 0.0;
    for k in 0..4 {
        for c in 0..3 {
            let yhat: f64 = (0..3).map(|j| h[(k, j)] * dup.experts[2][(c, j)]).sum();
            want += (y[(k, c)] - yhat).powi(2);
        }
    }
    assert!(close(loss[2], want / 4.0, 1e-13));
}

#[test]
fn importance_cases() {
    let e = importance_scores(&[0.7f64; 4], LayerPosition::Interior).unwrap();
    assert!(e.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let e = importance_scores(&[0.0f64, 2f64.ln()], LayerPosition::Interior).unwrap();
    assert!((e[0] - 2.0 / 3.0).abs() < 1e-15);

    let uniform = [1.0 / 3.0; 3];
    let e = importance_scores(&[1.0f64; 3], LayerPosition::First { routing: &uniform }).unwrap();
    assert!(e.iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));

    let act = [2.0, 0.0];
    let e = importance_scores(&[0.0f64, 0.0], LayerPosition::Last { activation: &act }).unwrap();
    assert_eq!(e, vec![1.0, 0.0]);

    assert!(importance_scores(&[0.0f64; 2], LayerPosition::Last { activation: &[1.0] }).is_err());
}

#[test]
fn first_layer_zero_router_equal_losses() {
    let cfg = MoEConfig::new(2, 3, 2, 1, Nonlinearity::None).unwrap();
    let mut model = gen_model::<f64>(&cfg, 3).unwrap();
    model.layers[0].router = Matrix::zeros(3, 2);
    model.layers[0].experts = vec![Matrix::identity(2); 3];
    let x = gen_data::<f64>(&cfg, 1, 4, 4).unwrap().remove(0);
    let g = score_sample(&model, &x).unwrap();
    for &e in &g.layer_scores[0].e {
        assert!((e - 1.0 / 9.0).abs() < 1e-15);
    }
}

#[test]
fn single_expert_graph_has_one_path() {
    let cfg = MoEConfig::new(2, 1, 3, 1, Nonlinearity::Tanh).unwrap();
    let model = gen_model::<f64>(&cfg, 8).unwrap();
    let x = gen_data::<f64>(&cfg, 1, 3, 9).unwrap().remove(0);
    let g = score_sample(&model, &x).unwrap();
    assert_eq!(g.path_count(), 1);
    assert_eq!(g.log_node[0][0], g.layer_scores[0].e[0].ln());
    assert_eq!(g.log_edge[0][(0, 0)], g.transitions[0][(0, 0)].ln());
}

#[test]
fn duplicate_experts_score_identically() {
    let cfg = MoEConfig::new(3, 3, 4, 2, Nonlinearity::Tanh).unwrap();
    let mut model = gen_model::<f64>(&cfg, 12).unwrap();
    model.layers[1].experts[2] = model.layers[1].experts[0].clone();
    let x = gen_data::<f64>(&cfg, 1, 5, 13).unwrap().remove(0);
    let g = score_sample(&model, &x).unwrap();
    let s = &g.layer_scores[1];
    assert_eq!(s.a[0], s.a[2]);
    assert_eq!(s.recon_loss[0], s.recon_loss[2]);
    assert_eq!(s.e[0], s.e[2]);
    assert_eq!(g.transitions[1].row(0), g.transitions[1].row(2));
}

/// Re-derives every field straight from the trace with explicit loops.
#[test]
fn score_matches_recomputation_from_trace() {
    let cfg = MoEConfig::new(3, 3, 4, 2, Nonlinearity::Tanh).unwrap();
    for seed in 0..5 {
        let model = gen_model::<f64>(&cfg, seed).unwrap();
        let x = gen_data::<f64>(&cfg, 1, 6, seed + 50).unwrap().remove(0);
        let trace = model.forward(&x, None).unwrap();
        let g = score_sample(&model, &x).unwrap();
        let n = 6.0;
        let mut a = vec![vec![0.0; 3]; 3];
        let mut r = vec![vec![0.0; 3]; 3];
        let mut loss = vec![vec![0.0; 3]; 3];
        for l in 0..3 {
            let h = &trace.hidden_states[l];
            let y = &trace.layer_outputs[l];
            for i in 0..3 {
                let w = &model.layers[l].experts[i];
                for k in 0..6 {
                    let mut sq_norm = 0.0;
                    let mut sq_err = 0.0;
                    for c in 0..4 {
                        let yhat: f64 = (0..4).map(|j| h[(k, j)] * w[(c, j)]).sum();
                        sq_norm += yhat * yhat;
                        sq_err += (y[(k, c)] - yhat).powi(2);
                    }
                    a[l][i] += sq_norm.sqrt() / n;
                    loss[l][i] += sq_err / n;
                }
            }
            for k in 0..6 {
                let logits: Vec<f64> = (0..3)
                    .map(|j| (0..4).map(|c| h[(k, c)] * model.layers[l].router[(j, c)]).sum())
                    .collect();
                let z: f64 = logits.iter().map(|v| v.exp()).sum();
                for j in 0..3 {
                    r[l][j] += logits[j].exp() / z / n;
                }
            }
        }
        for l in 0..3 {
            let z: f64 = loss[l].iter().map(|v| (-v).exp()).sum();
            for i in 0..3 {
                let mut e = (-loss[l][i]).exp() / z;
                if l == 0 {
                    e *= r[0][i];
                }
                if l == 2 {
                    e *= a[2][i];
                }
                let s = &g.layer_scores[l];
                assert!(close(s.a[i], a[l][i], 1e-12));
                assert!(close(s.r[i], r[l][i], 1e-12));
                assert!(close(s.recon_loss[i], loss[l][i], 1e-12));
                assert!(close(s.e[i], e, 1e-12));
                assert!(close(g.log_node[l][i], e.ln(), 1e-12));
            }
        }
        #[allow(clippy::needless_range_loop)]
        for l in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!(close(g.transitions[l][(i, j)], a[l][i] * r[l + 1][j], 1e-12));
                }
            }
        }
    }
}

#[test]
fn invariants_on_random_models() {
    let cfg = MoEConfig::new(4, 5, 6, 2, Nonlinearity::Tanh).unwrap();
    for seed in 0..10 {
        let model = gen_model::<f64>(&cfg, seed).unwrap();
        let x = gen_data::<f64>(&cfg, 1, 7, seed ^ 0xff).unwrap().remove(0);
        let g = score_sample(&model, &x).unwrap();
        for (l, t) in g.transitions.iter().enumerate() {
            let (a, r) = (&g.layer_scores[l].a, &g.layer_scores[l + 1].r);
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(t[(i, j)].to_bits(), (a[i] * r[j]).to_bits());
                }
            }
        }
        for (l, s) in g.layer_scores.iter().enumerate() {
            assert!((s.r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(s.a.iter().all(|&v| v >= 0.0));
            assert!(s.recon_loss.iter().all(|&v| v >= 0.0));
            assert!(s.e.iter().all(|&v| v > 0.0));
            if l != 0 && l != 3 {
                assert!((s.e.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        assert_eq!(g, score_sample(&model, &x).unwrap());
    }
}

#[test]
fn activation_scales_with_expert_weights() {
    let cfg = MoEConfig::new(3, 4, 5, 2, Nonlinearity::Tanh).unwrap();
    let model = gen_model::<f64>(&cfg, 31).unwrap();
    let x = gen_data::<f64>(&cfg, 1, 4, 32).unwrap().remove(0);
    let trace = model.forward(&x, None).unwrap();
    let h = &trace.hidden_states[1];
    let base = activation_strength(&model.layers[1], h).unwrap();
    for c in [2.0, 0.5, 3.7] {
        let scaled = MoELayer {
            experts: model.layers[1].experts.iter().map(|w| w.scale(c)).collect(),
            router: model.layers[1].router.clone(),
        };
        let a = activation_strength(&scaled, h).unwrap();
        for (s, b) in a.iter().zip(&base) {
            if c == 2.0 || c == 0.5 {
                assert_eq!(*s, c * b);
            } else {
                assert!(close(*s, c * b, 1e-13));
            }
        }
    }
}

#[test]
fn zero_weights_clamp_to_finite_logs() {
    let cfg = MoEConfig::new(2, 2, 2, 1, Nonlinearity::None).unwrap();
    let mut model = gen_model::<f64>(&cfg, 1).unwrap();
    model.layers[0].experts[1] = Matrix::zeros(2, 2);
    let x = gen_data::<f64>(&cfg, 1, 2, 2).unwrap().remove(0);
    let g = score_sample(&model, &x).unwrap();
    assert_eq!(g.layer_scores[0].a[1], 0.0);
    assert!(g.log_edge[0].data().iter().all(|v| v.is_finite()));
    assert_eq!(g.log_edge[0][(1, 0)], 1e-300f64.ln());
}
