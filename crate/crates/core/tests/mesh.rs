use msbasis::edge_basis::node_edges;
use msbasis::mesh::{FineNodeClass, GridHierarchy};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn counts_and_adjacency(nc in 2usize..10, s in 2usize..6) {
        let g = GridHierarchy::new(nc, nc * s).unwrap();
        prop_assert_eq!(g.num_edges(), 2 * nc * (nc - 1));
        prop_assert_eq!(g.num_nodes(), (nc - 1) * (nc - 1));
        prop_assert_eq!(g.num_elements(), nc * nc);
        for e in 0..g.num_edges() {
            let coords = g.edge_fine_coords(e);
            prop_assert_eq!(coords.len(), s + 1);
            // every interior point of the edge classifies back to it
            for &(x, y) in &coords[1..s] {
                prop_assert_eq!(g.classify_fine_node(g.fine_node(x, y)), FineNodeClass::EdgeInterior(e));
            }
            // both neighbours list the edge among their sides, and both lie in omega_e
            let dom = g.oversampling_domain(e);
            for t in g.elements_of_edge(e) {
                prop_assert!(g.edges_of_element(t).contains(&e));
                prop_assert!(dom.contains(&t));
            }
            let r = g.oversampling_rect(e);
            let area = r.width() * r.height();
            if g.edge(e).is_boundary_connected() {
                prop_assert_eq!(area, 4);
            } else {
                prop_assert_eq!(area, 6);
            }
        }
        for node in 0..g.num_nodes() {
            let mut a: Vec<usize> = node_edges(&g, node).iter().map(|p| p.0).collect();
            a.sort_unstable();
            prop_assert_eq!(a, g.edges_of_node(node));
            prop_assert_eq!(g.support_of_tent(node).len(), 4);
        }
    }

    #[test]
    fn every_fine_node_has_one_class(nc in 2usize..8, s in 2usize..5) {
        let g = GridHierarchy::new(nc, nc * s).unwrap();
        let (mut skeleton, mut interior) = (0usize, 0usize);
        for n in 0..g.num_fine_nodes() {
            match g.classify_fine_node(n) {
                FineNodeClass::ElementInterior(_) => interior += 1,
                FineNodeClass::EdgeInterior(_) | FineNodeClass::CoarseNode(_) => skeleton += 1,
                FineNodeClass::DomainBoundary => {}
            }
        }
        prop_assert_eq!(interior, nc * nc * (s - 1) * (s - 1));
        prop_assert_eq!(skeleton, g.num_edges() * (s - 1) + g.num_nodes());
    }
}

#[test]
fn rejects_non_nested() {
    assert!(GridHierarchy::new(3, 10).is_err());
    assert!(GridHierarchy::new(8, 8).is_err());
    assert!(GridHierarchy::new(1, 8).is_err());
}
