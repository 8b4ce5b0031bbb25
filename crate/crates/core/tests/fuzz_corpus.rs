//! Replays the checked-in fuzz corpus through the fuzz targets' properties.

use std::fs;
use std::path::Path;

use qkd_keysupply::netsim::{route, Topology};
use qkd_keysupply::scenario::ScenarioConfig;

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut seeds: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter_map(|p| {
            let text = fs::read_to_string(&p).ok()?;
            Some((p.file_name()?.to_string_lossy().into_owned(), text))
        })
        .collect();
    seeds.sort();
    assert!(!seeds.is_empty(), "no seeds in {}", dir.display());
    seeds
}

#[test]
fn topology_seeds() {
    let mut parsed = 0;
    for (name, text) in corpus("parse_topology") {
        let Ok(topo) = Topology::parse_edge_list(&text) else {
            continue;
        };
        parsed += 1;
        let again = Topology::parse_edge_list(&topo.to_edge_list()).unwrap();
        assert_eq!(again.links(), topo.links(), "{name}");
        let nodes: Vec<u32> = topo.nodes().collect();
        for &a in &nodes {
            for &b in &nodes {
                if a != b {
                    let path = route(&topo, a, b).unwrap();
                    assert_eq!((path.nodes[0], *path.nodes.last().unwrap()), (a, b), "{name}");
                }
            }
        }
    }
    assert!(parsed >= 3);
}

#[test]
fn scenario_seeds() {
    for (name, text) in corpus("parse_scenario") {
        let config = ScenarioConfig::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ScenarioConfig::from_toml(&config.to_toml()).unwrap(), config, "{name}");
        config.resolve(None).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
