#![no_main]

use libfuzzer_sys::fuzz_target;
use qkd_keysupply::netsim::{route, Topology};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(topo) = Topology::parse_edge_list(text) else {
        return;
    };
    let again = Topology::parse_edge_list(&topo.to_edge_list()).expect("emitted edge list parses");
    assert_eq!(again.links().len(), topo.links().len());
    let nodes: Vec<u32> = topo.nodes().collect();
    if let (Some(&a), Some(&b)) = (nodes.first(), nodes.last()) {
        if a != b {
            let path = route(&topo, a, b).expect("connected topology routes");
            assert_eq!(path.nodes.first(), Some(&a));
            assert_eq!(path.nodes.last(), Some(&b));
        }
    }
});
