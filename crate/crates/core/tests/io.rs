use std::fs;

use moe_pathfinder::json;
use moe_pathfinder::model::{gen_data, gen_model, load_data, load_model, save_data, save_model};
use moe_pathfinder::numerics::tensor::write_matrix;
use moe_pathfinder::planner::top_m_paths_dp;
use moe_pathfinder::pruner::apply_mask;
use moe_pathfinder::scoring::{load_graph, save_graph, score_sample};
use moe_pathfinder::{
    Error, ErrorClass, Matrix, MoEConfig, MoEModel, Nonlinearity, PathSet, PruneMask, RemapTable, SampleGraph,
};

fn config() -> MoEConfig {
    MoEConfig::new(3, 4, 5, 2, Nonlinearity::Tanh).unwrap()
}

#[test]
fn model_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model::<f64>(&config(), 3).unwrap();
    save_model(&model, dir.path()).unwrap();
    let back: MoEModel = load_model(dir.path()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn pruned_model_roundtrip_keeps_layer_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model::<f64>(&config(), 4).unwrap();
    let mask = PruneMask::from_rows(vec![
        vec![true, false, false, true],
        vec![false, true, false, false],
        vec![true, true, true, false],
    ]);
    let (pruned, remap) = apply_mask(&model, &mask).unwrap();
    save_model(&pruned, dir.path()).unwrap();
    remap.save(&dir.path().join("remap.json")).unwrap();
    let back: MoEModel = load_model(dir.path()).unwrap();
    assert_eq!(back, pruned);
    assert_eq!(back.config.layer_experts, Some(vec![2, 1, 3]));
    assert_eq!(RemapTable::load(&dir.path().join("remap.json")).unwrap(), remap);
}

#[test]
fn data_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.tnsr");
    let data = gen_data::<f64>(&config(), 6, 7, 8).unwrap();
    save_data(&data, &path).unwrap();
    assert_eq!(load_data::<f64>(&path).unwrap(), data);
}

#[test]
fn truncated_blob_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    save_model(&gen_model::<f64>(&config(), 1).unwrap(), dir.path()).unwrap();
    let blob = dir.path().join("layer1.expert2.tnsr");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_model::<f64>(dir.path()).unwrap_err();
    assert!(matches!(err, Error::UnexpectedEof), "{err}");
    assert_eq!(err.class(), ErrorClass::Data);
}

#[test]
fn wrong_router_shape_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    save_model(&gen_model::<f64>(&config(), 1).unwrap(), dir.path()).unwrap();
    write_matrix(&dir.path().join("layer2.router.tnsr"), &Matrix::zeros(3, 5)).unwrap();
    let err = load_model::<f64>(dir.path()).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Data);
    assert!(err.to_string().contains("layer 2 router"), "{err}");
}

#[test]
fn graph_roundtrip_preserves_plans() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let model = gen_model::<f64>(&cfg, 2).unwrap();
    let x = gen_data::<f64>(&cfg, 1, 6, 9).unwrap().remove(0);
    let g = score_sample(&model, &x).unwrap();
    let path = save_graph(&g, dir.path(), "graph0").unwrap();
    let back: SampleGraph = load_graph(&path).unwrap();
    assert_eq!(back, g);
    assert_eq!(top_m_paths_dp(&back, 10).unwrap(), top_m_paths_dp(&g, 10).unwrap());
}

#[test]
fn pathset_and_mask_json_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let model = gen_model::<f64>(&cfg, 5).unwrap();
    let x = gen_data::<f64>(&cfg, 1, 4, 1).unwrap().remove(0);
    let ps = top_m_paths_dp(&score_sample(&model, &x).unwrap(), 7).unwrap();
    let p = dir.path().join("paths.json");
    json::write_pretty(&p, &ps).unwrap();
    let back: PathSet = json::read(&p).unwrap();
    assert_eq!(back, ps);

    let mask = PruneMask::from_rows(vec![vec![true, false], vec![false, true], vec![true, true]]);
    let mp = dir.path().join("mask.json");
    mask.save(&mp).unwrap();
    assert_eq!(PruneMask::load(&mp).unwrap(), mask);
    let text = fs::read_to_string(&mp).unwrap();
    assert!(text.contains("\"L\": 3") && text.contains("\"Ne\": 2"), "{text}");
}

#[test]
fn malformed_mask_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mp = dir.path().join("mask.json");
    fs::write(&mp, r#"{"L": 2, "Ne": 2, "keep": [[1, 0]]}"#).unwrap();
    assert_eq!(PruneMask::load(&mp).unwrap_err().class(), ErrorClass::Data);
    fs::write(&mp, r#"{"L": 1, "Ne": 2, "keep": [[1, 2]]}"#).unwrap();
    assert_eq!(PruneMask::load(&mp).unwrap_err().class(), ErrorClass::Data);
    fs::write(&mp, "not json").unwrap();
    assert_eq!(PruneMask::load(&mp).unwrap_err().class(), ErrorClass::Data);
}
