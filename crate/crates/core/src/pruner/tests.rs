use super::*;
use crate::model::{gen_data, gen_model, Nonlinearity};
use crate::numerics::{Matrix, Rng};
use crate::planner::PrefixPath;
use crate::scoring::score_sample;

fn pathset(paths: &[&[usize]]) -> PathSet<f64> {
    PathSet {
        m: paths.len(),
        paths: paths
            .iter()
            .map(|p| PrefixPath {
                experts: p.to_vec(),
                log_weight: 0.0,
            })
            .collect(),
    }
}

fn uniform_graph(layers: usize, experts: usize) -> SampleGraph<f64> {
    SampleGraph::from_log_weights(
        vec![vec![0.0; experts]; layers],
        vec![Matrix::zeros(experts, experts); layers - 1],
    )
    .unwrap()
}

fn random_graph(rng: &mut Rng, layers: usize, experts: usize) -> SampleGraph<f64> {
    SampleGraph::from_log_weights(
        (0..layers)
            .map(|_| (0..experts).map(|_| rng.uniform(-4.0, 0.0)).collect())
            .collect(),
        (0..layers - 1)
            .map(|_| Matrix::from_fn(experts, experts, |_, _| rng.uniform(-4.0, 0.0)))
            .collect(),
    )
    .unwrap()
}

#[test]
fn experts_from_paths_cases() {
    let one = experts_from_paths(&pathset(&[&[2, 0, 1, 3]])).unwrap();
    assert_eq!(one, vec![vec![2], vec![0], vec![1], vec![3]]);
    let two = experts_from_paths(&pathset(&[&[1, 1, 0, 1], &[1, 1, 2, 1]])).unwrap();
    assert_eq!(two.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 2, 1]);
    let g = uniform_graph(3, 2);
    let all = crate::planner::top_m_paths_dp(&g, 8).unwrap();
    assert!(experts_from_paths(&all).unwrap().iter().all(|s| s == &[0, 1]));
    assert!(experts_from_paths(&PathSet::<f64> { m: 1, paths: vec![] }).is_err());
}

#[test]
fn union_cases() {
    let a = vec![vec![0], vec![2]];
    let b = vec![vec![1], vec![0]];
    let single = union_masks(std::slice::from_ref(&a), &[3, 3]).unwrap();
    assert_eq!(single.rows(), &[vec![true, false, false], vec![false, false, true]]);
    let both = union_masks(&[a.clone(), b], &[3, 3]).unwrap();
    assert_eq!(both.retained_per_layer(), vec![2, 2]);
    let big = vec![vec![0, 1], vec![0, 2]];
    assert_eq!(
        union_masks(&[a, big.clone()], &[3, 3]).unwrap(),
        union_masks(&[big], &[3, 3]).unwrap()
    );
    assert!(union_masks(&[], &[3]).is_err());
}

#[test]
fn mask_file_roundtrip_and_validation() {
    let mask = PruneMask::from_rows(vec![vec![true, false], vec![false, true]]);
    let file = mask.to_file();
    assert_eq!(serde_json::to_string(&file).unwrap(), r#"{"L":2,"Ne":2,"keep":[[1,0],[0,1]]}"#);
    assert_eq!(PruneMask::from_file(file).unwrap(), mask);
    let bad = MaskFile {
        layers: 1,
        experts: 2,
        keep: vec![vec![1, 2]],
    };
    assert!(PruneMask::from_file(bad).is_err());
}

#[test]
fn heterogeneous_layers_are_representable() {
    let mask = PruneMask::from_rows(vec![vec![true; 4], vec![true, false, false, false], vec![false, true, true, false]]);
    assert_eq!(mask.retained_per_layer(), vec![4, 1, 2]);
    assert_eq!(mask.retained_total(), 7);
    assert!((mask.retention_fraction() - 7.0 / 12.0).abs() < 1e-15);
}

#[test]
fn target_full_retention_grows_m() {
    let mut rng = Rng::new(1);
    let g = random_graph(&mut rng, 3, 2);
    let (mask, report) = target_sparsity_search(std::slice::from_ref(&g), 1.0, 64).unwrap();
    assert_eq!(mask.retained_total(), 6);
    assert!(report.m_used > 1);
    // minimality: one fewer path would not cover everything
    let fewer = crate::planner::top_m_paths_dp(&g, report.m_used - 1).unwrap();
    assert!(mask_from_pathsets(&[fewer], &[2, 2, 2]).unwrap().retained_total() < 6);
    assert!(report.trimmed.is_empty());
}

#[test]
fn single_sample_one_per_layer_uses_m_1() {
    let mut rng = Rng::new(2);
    let g = random_graph(&mut rng, 4, 4);
    let (mask, report) = target_sparsity_search(&[g], 0.25, 16).unwrap();
    assert_eq!(report.m_used, 1);
    assert_eq!(mask.retained_per_layer(), vec![1; 4]);
    assert!(report.trimmed.is_empty());
}

#[test]
fn half_retention_lands_exactly_on_count() {
    let cfg = MoEConfig::new(4, 6, 5, 2, Nonlinearity::Tanh).unwrap();
    let model = gen_model::<f64>(&cfg, 5).unwrap();
    let graphs: Vec<_> = gen_data::<f64>(&cfg, 5, 6, 6)
        .unwrap()
        .iter()
        .map(|x| score_sample(&model, x).unwrap())
        .collect();
    let (mask, report) = target_sparsity_search(&graphs, 0.5, 4096).unwrap();
    assert_eq!(mask.retained_total(), 12);
    assert_eq!(report.retained_total, 12);
    assert!((report.retention_fraction - 0.5).abs() < 1e-15);
    assert_eq!(report.samples_used, 5);
    assert!(mask.first_empty_layer().is_none());
    // trimmed experts were on some path, kept ones were too
    let sets: Vec<_> = graphs
        .iter()
        .map(|g| crate::planner::top_m_paths_dp(g, report.m_used).unwrap())
        .collect();
    let union = mask_from_pathsets(&sets, &[6; 4]).unwrap();
    assert!(mask.is_subset_of(&union));
    for &(l, i) in &report.trimmed {
        assert!(union.is_kept(l, i) && !mask.is_kept(l, i));
    }
    assert_eq!(union.retained_total() - report.trimmed.len(), 12);
}

#[test]
fn trim_order_prefers_rare_then_higher_layer_then_higher_index() {
    let mut mask = PruneMask::from_rows(vec![vec![true, true, true], vec![true, true, false]]);
    let freq = FrequencyMatrix {
        counts: vec![vec![5, 1, 1], vec![3, 1, 0]],
    };
    let trimmed = trim_to_count(&mut mask, &freq, 3);
    assert_eq!(trimmed, vec![(1, 1), (0, 2)]);
    // layer 1 now has one expert and is protected
    let trimmed = trim_to_count(&mut mask, &freq, 1);
    assert_eq!(trimmed, vec![(0, 1)]);
    assert_eq!(mask.retained_per_layer(), vec![1, 1]);
}

#[test]
fn unreachable_target_reports_achievable_fraction() {
    let g = uniform_graph(3, 4);
    match target_sparsity_search(&[g], 1.0, 4) {
        Err(Error::TargetUnreachable { achieved, m_max: 4, .. }) => {
            assert!((achieved - 6.0 / 12.0).abs() < 1e-15, "{achieved}");
        }
        other => panic!("{other:?}"),
    }
    assert!(target_sparsity_search(&[uniform_graph(2, 2)], 0.0, 4).is_err());
    assert!(target_sparsity_search(&[uniform_graph(2, 2)], 1.5, 4).is_err());
}

#[test]
fn apply_full_mask_keeps_everything() {
    let cfg = MoEConfig::new(3, 4, 3, 2, Nonlinearity::Tanh).unwrap();
    let model = gen_model::<f64>(&cfg, 8).unwrap();
    let (pruned, remap) = apply_mask(&model, &PruneMask::full(&cfg)).unwrap();
    assert_eq!(pruned.layers, model.layers);
    assert!(remap.layers.iter().all(|r| r.new_to_old == vec![0, 1, 2, 3]));
}

#[test]
fn apply_single_expert_routes_everything_there() {
    let cfg = MoEConfig::new(2, 2, 3, 2, Nonlinearity::None).unwrap();
    let model = gen_model::<f64>(&cfg, 9).unwrap();
    let mask = PruneMask::from_rows(vec![vec![false, true]; 2]);
    let (pruned, remap) = apply_mask(&model, &mask).unwrap();
    assert_eq!(pruned.layers[0].router.shape(), [1, 3]);
    assert_eq!(pruned.config.layer_experts, Some(vec![1, 1]));
    assert_eq!(pruned.config.top_k_at(0), 1);
    assert_eq!(remap.layers[0].old_to_new, vec![None, Some(0)]);
    let x = gen_data::<f64>(&cfg, 1, 4, 1).unwrap().remove(0);
    let t = pruned.forward(&x, None).unwrap();
    let h1 = crate::numerics::matmul_transpose(&x.tokens, &model.layers[0].experts[1]).unwrap();
    let h2 = crate::numerics::matmul_transpose(&h1, &model.layers[1].experts[1]).unwrap();
    for (a, b) in t.final_hidden().data().iter().zip(h2.data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn materialized_model_matches_masked_forward() {
    let cfg = MoEConfig::new(4, 5, 4, 2, Nonlinearity::Tanh).unwrap();
    let mut rng = Rng::new(44);
    for seed in 0..10 {
        let model = gen_model::<f64>(&cfg, seed).unwrap();
        let mut rows = vec![vec![false; 5]; 4];
        for row in &mut rows {
            let n = 1 + rng.next_below(5) as usize;
            for i in rng.sample_indices(5, n) {
                row[i] = true;
            }
        }
        let mask = PruneMask::from_rows(rows);
        let (pruned, _) = apply_mask(&model, &mask).unwrap();
        for x in gen_data::<f64>(&cfg, 3, 4, seed + 1).unwrap() {
            let a = pruned.forward(&x, None).unwrap();
            let b = model.forward(&x, Some(&mask)).unwrap();
            for (p, q) in a.final_hidden().data().iter().zip(b.final_hidden().data()) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn apply_rejects_empty_layer() {
    let cfg = MoEConfig::new(2, 2, 2, 1, Nonlinearity::None).unwrap();
    let model = gen_model::<f64>(&cfg, 1).unwrap();
    let mask = PruneMask::from_rows(vec![vec![true, false], vec![false, false]]);
    assert!(matches!(apply_mask(&model, &mask), Err(Error::LayerFullyPruned { layer: 1 })));
}

#[test]
fn frequency_cases() {
    let f = selection_frequency(&[pathset(&[&[1, 0, 2]])], 3, None).unwrap();
    assert_eq!(f.counts, vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1]]);

    let mut rng = Rng::new(3);
    let sets: Vec<_> = (0..10)
        .map(|_| crate::planner::top_m_paths_dp(&random_graph(&mut rng, 3, 5), 100).unwrap())
        .collect();
    let f = selection_frequency(&sets, 5, None).unwrap();
    assert_eq!(f.row_sums(), vec![1000; 3]);

    let all = crate::planner::top_m_paths_dp(&uniform_graph(3, 2), 8).unwrap();
    let f = selection_frequency(&[all], 2, None).unwrap();
    assert!(f.counts.iter().flatten().all(|&c| c == 4));
}

#[test]
fn outliers_take_the_maximum() {
    let sets = [pathset(&[&[0, 0], &[0, 1], &[0, 1]])];
    let f = selection_frequency(&sets, 3, Some(&[(1, 2)])).unwrap();
    assert_eq!(f.counts, vec![vec![3, 0, 0], vec![1, 2, 3]]);
    assert!(selection_frequency(&sets, 3, Some(&[(2, 0)])).is_err());
    assert!(selection_frequency(&sets, 1, None).is_err());
}
