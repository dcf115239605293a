mod common;

use common::fixture;
use iges_dse::model::*;
use iges_dse::Error;
use serde_json::{json, Value};

fn threenode_json() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("threenode.json")).unwrap()).unwrap()
}

fn parse(v: &Value) -> iges_dse::Result<IgesModel> {
    parse_model(&v.to_string(), &fixture(""))
}

fn validation_message(v: &Value) -> String {
    match parse(v) {
        Err(Error::Validation(m)) => m,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn threenode_fixture() {
    let m = load_model(fixture("threenode.json")).unwrap();
    assert_eq!((m.gas.n_nodes(), m.gas.n_pipes(), m.gas.source_ids().len()), (3, 2, 1));
    assert_eq!(m.gas.sink_ids(), vec![2, 3]);
    assert_eq!(m.grid.n_buses(), 3);
    assert_eq!(m.grid.slack(), 1);
    assert!(validate(&m).is_empty());
}

#[test]
fn bundled_fixture() {
    let m = load_model(fixture("iges30_39.json")).unwrap();
    assert_eq!((m.gas.n_nodes(), m.grid.n_buses()), (30, 39));
    let mut gtus: Vec<(usize, usize)> = m.gtus.iter().map(|g| (g.bus, g.gas_sink)).collect();
    gtus.sort();
    assert_eq!(gtus, vec![(32, 16), (36, 17)]);
    assert_eq!(m.gas.source_ids().len(), 2);
    assert!(validate(&m).is_empty());
    // 41.48 bar at c = 340 m/s.
    let rho = m.gas.source_densities()[0];
    assert!((m.gas.density_to_pressure(rho) - 41.48e5).abs() < 1e-6);
}

#[test]
fn duplicate_node_is_rejected() {
    let mut v = threenode_json();
    let dup = v["gas_network"]["nodes"][1].clone();
    v["gas_network"]["nodes"].as_array_mut().unwrap().push(dup);
    let msg = validation_message(&v);
    assert!(msg.contains("DuplicateNode"), "{msg}");
    assert_eq!(parse(&v).unwrap_err().exit_code(), 1);
}

#[test]
fn gtu_on_a_source_is_rejected() {
    let mut v = threenode_json();
    v["gtus"][0]["gas_sink"] = json!(1);
    assert!(validation_message(&v).contains("GtuSinkNotSink"));
}

#[test]
fn reversed_pipeline_is_rejected() {
    let mut v = threenode_json();
    v["gas_network"]["pipelines"][0]["from"] = json!(2);
    v["gas_network"]["pipelines"][0]["to"] = json!(1);
    assert!(validation_message(&v).contains("PipelineOrientation"));
}

#[test]
fn load_at_gtu_sink_is_rejected() {
    let mut v = threenode_json();
    v["scenario"]["gas_loads"][0]["node"] = json!(3);
    assert!(validation_message(&v).contains("LoadAtGtuSink"));
}

#[test]
fn load_at_gtu_bus_is_rejected() {
    let mut v = threenode_json();
    v["power_grid"]["buses"][1]["pd"] = json!(10.0);
    assert!(validation_message(&v).contains("LoadAtGtuBus"));
}

#[test]
fn structural_issues() {
    let mut v = threenode_json();
    v["gas_network"]["pipelines"].as_array_mut().unwrap().pop();
    assert!(validation_message(&v).contains("Disconnected"));

    let mut v = threenode_json();
    v["gas_network"]["dt"] = json!(0.0);
    assert!(validation_message(&v).contains("NonPositiveParameter"));

    let mut v = threenode_json();
    v["scenario"]["smoothing"] = json!({"alpha": 1.2, "beta": 0.7});
    assert!(validation_message(&v).contains("BadSmoothing"));

    let mut v = threenode_json();
    v["scenario"]["noise"] = json!([{"kind": "gaussian", "sigma": -1.0}]);
    assert!(validation_message(&v).contains("BadNoise"));
}

#[test]
fn malformed_json_is_a_parse_error() {
    assert!(matches!(parse_model("{", &fixture("")), Err(Error::Parse(_))));
    let mut v = threenode_json();
    v["gas_network"]["unexpected"] = json!(1);
    assert!(matches!(parse(&v), Err(Error::Parse(_))));
    assert!(matches!(load_model(fixture("missing.json")), Err(Error::Parse(_))));
}

#[test]
fn pressure_and_density_sources_agree() {
    let mut v = threenode_json();
    let m0 = parse(&v).unwrap();
    let rho = m0.gas.source_densities()[0];
    let node = &mut v["gas_network"]["nodes"][0];
    node.as_object_mut().unwrap().remove("pressure_bar");
    node["fixed_density"] = json!(rho);
    assert_eq!(parse(&v).unwrap(), m0);
}

#[test]
fn sparse_ids_are_renumbered() {
    let mut v = threenode_json();
    for n in v["gas_network"]["nodes"].as_array_mut().unwrap() {
        n["id"] = json!(n["id"].as_u64().unwrap() * 10);
    }
    for p in v["gas_network"]["pipelines"].as_array_mut().unwrap() {
        p["from"] = json!(p["from"].as_u64().unwrap() * 10);
        p["to"] = json!(p["to"].as_u64().unwrap() * 10);
    }
    v["gtus"][0]["gas_sink"] = json!(30);
    v["scenario"]["gas_loads"][0]["node"] = json!(20);
    assert_eq!(parse(&v).unwrap(), parse(&threenode_json()).unwrap());
}

#[test]
fn segments_insert_junctions() {
    let mut v = threenode_json();
    v["gas_network"]["pipelines"][0]["segments"] = json!(3);
    let m = parse(&v).unwrap();
    assert_eq!((m.gas.n_nodes(), m.gas.n_pipes()), (5, 4));
    let total: f64 = m.gas.pipelines.iter().map(|p| p.length).sum();
    let orig: f64 = parse(&threenode_json()).unwrap().gas.pipelines.iter().map(|p| p.length).sum();
    assert!((total - orig).abs() < 1e-6);
}

#[test]
fn serialize_round_trips() {
    for name in ["threenode.json", "iges30_39.json"] {
        let m = load_model(fixture(name)).unwrap();
        let text = serialize(&m).unwrap();
        assert_eq!(parse_model(&text, &fixture("")).unwrap(), m, "{name}");
    }
}

#[test]
fn profiles() {
    assert_eq!(Profile::Constant.value(17, 600.0), 1.0);
    let s = Profile::Series { values: vec![1.0, 2.0] };
    assert_eq!((s.value(0, 600.0), s.value(1, 600.0), s.value(9, 600.0)), (1.0, 2.0, 2.0));
    let d = Profile::Daily { amplitude: 0.3, trough_hour: 4.0, peak_hour: 18.0 };
    assert!((d.value(4 * 6, 600.0) - 0.7).abs() < 1e-12);
    assert!((d.value(18 * 6, 600.0) - 1.3).abs() < 1e-12);
    assert!((d.peak(144, 600.0) - 1.3).abs() < 1e-12);
}
