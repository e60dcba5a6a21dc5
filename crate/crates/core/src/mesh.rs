//! Nested two-level uniform quadrilateral grid on the unit square.
//!
//! The coarse grid has `nc` cells per side, the fine grid `nf`, and every
//! coarse cell is covered by `s = nf / nc` fine cells per side. Indexing is
//! row-major everywhere:
//!
//! * fine nodes: `gy * (nf + 1) + gx`, with `0 <= gx, gy <= nf`;
//! * coarse elements: `ey * nc + ex`;
//! * interior coarse nodes: `(j - 1) * (nc - 1) + (i - 1)` for the vertex at
//!   `(i H, j H)`, `1 <= i, j <= nc - 1`;
//! * coarse edges: all horizontal edges first (row `j`, then column `i`),
//!   followed by all vertical edges in the same order. Edges lying on the
//!   domain boundary are not part of the edge set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// A coarse edge. `start`/`end` are coarse vertex coordinates in units of `H`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub orientation: Orientation,
    pub start: (usize, usize),
    pub end: (usize, usize),
    /// Interior coarse node at each endpoint, `None` when the endpoint is on the boundary.
    pub nodes: [Option<usize>; 2],
    /// The two coarse elements sharing the edge (below/above or left/right).
    pub elements: [usize; 2],
}

impl Edge {
    pub fn is_boundary_connected(&self) -> bool {
        self.nodes.iter().any(Option::is_none)
    }
}

/// Axis-aligned block of coarse elements, half-open in element units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CoarseRect {
    pub ex0: usize,
    pub ex1: usize,
    pub ey0: usize,
    pub ey1: usize,
}

impl CoarseRect {
    pub fn width(&self) -> usize {
        self.ex1 - self.ex0
    }

    pub fn height(&self) -> usize {
        self.ey1 - self.ey0
    }
}

/// Classification of a fine node with respect to the coarse skeleton.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FineNodeClass {
    DomainBoundary,
    CoarseNode(usize),
    /// Interior point of a coarse edge in the edge set.
    EdgeInterior(usize),
    ElementInterior(usize),
}

#[derive(Clone, Debug)]
pub struct GridHierarchy {
    nc: usize,
    nf: usize,
    edges: Vec<Edge>,
}

impl GridHierarchy {
    pub fn new(nc: usize, nf: usize) -> Result<Self> {
        if nc < 2 {
            return Err(Error::DegenerateMesh { nc });
        }
        if !nf.is_multiple_of(nc) || nf / nc < 2 {
            return Err(Error::NonNestedMesh { nc, nf });
        }
        let node = |i: usize, j: usize| -> Option<usize> {
            (i > 0 && i < nc && j > 0 && j < nc).then(|| (j - 1) * (nc - 1) + (i - 1))
        };
        let mut edges = Vec::with_capacity(2 * nc * (nc - 1));
        for j in 1..nc {
            for i in 0..nc {
                edges.push(Edge {
                    orientation: Orientation::Horizontal,
                    start: (i, j),
                    end: (i + 1, j),
                    nodes: [node(i, j), node(i + 1, j)],
                    elements: [(j - 1) * nc + i, j * nc + i],
                });
            }
        }
        for j in 0..nc {
            for i in 1..nc {
                edges.push(Edge {
                    orientation: Orientation::Vertical,
                    start: (i, j),
                    end: (i, j + 1),
                    nodes: [node(i, j), node(i, j + 1)],
                    elements: [j * nc + i - 1, j * nc + i],
                });
            }
        }
        Ok(Self { nc, nf, edges })
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn nf(&self) -> usize {
        self.nf
    }

    /// Fine cells per coarse cell side.
    pub fn ratio(&self) -> usize {
        self.nf / self.nc
    }

    pub fn coarse_h(&self) -> f64 {
        1.0 / self.nc as f64
    }

    pub fn fine_h(&self) -> f64 {
        1.0 / self.nf as f64
    }

    pub fn num_nodes(&self) -> usize {
        (self.nc - 1) * (self.nc - 1)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_elements(&self) -> usize {
        self.nc * self.nc
    }

    pub fn num_fine_nodes(&self) -> usize {
        (self.nf + 1) * (self.nf + 1)
    }

    pub fn num_fine_cells(&self) -> usize {
        self.nf * self.nf
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Coarse vertex `(i, j)` of an interior node.
    pub fn node_vertex(&self, node: usize) -> (usize, usize) {
        let m = self.nc - 1;
        (node % m + 1, node / m + 1)
    }

    pub fn node_at_vertex(&self, i: usize, j: usize) -> Option<usize> {
        let nc = self.nc;
        (i > 0 && i < nc && j > 0 && j < nc).then(|| (j - 1) * (nc - 1) + (i - 1))
    }

    pub fn node_position(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.node_vertex(node);
        [i as f64 * self.coarse_h(), j as f64 * self.coarse_h()]
    }

    pub fn element_coords(&self, t: usize) -> (usize, usize) {
        (t % self.nc, t / self.nc)
    }

    pub fn element_rect(&self, t: usize) -> CoarseRect {
        let (ex, ey) = self.element_coords(t);
        CoarseRect { ex0: ex, ex1: ex + 1, ey0: ey, ey1: ey + 1 }
    }

    pub fn fine_node(&self, gx: usize, gy: usize) -> usize {
        gy * (self.nf + 1) + gx
    }

    pub fn fine_node_coords(&self, n: usize) -> (usize, usize) {
        (n % (self.nf + 1), n / (self.nf + 1))
    }

    pub fn fine_node_position(&self, n: usize) -> [f64; 2] {
        let (gx, gy) = self.fine_node_coords(n);
        [gx as f64 * self.fine_h(), gy as f64 * self.fine_h()]
    }

    pub fn is_domain_boundary_node(&self, gx: usize, gy: usize) -> bool {
        gx == 0 || gy == 0 || gx == self.nf || gy == self.nf
    }

    /// Fine vertex coordinates of the edge's nodes, ordered from `start` to `end`
    /// (both endpoints included, `ratio() + 1` entries).
    pub fn edge_fine_coords(&self, e: usize) -> Vec<(usize, usize)> {
        let edge = &self.edges[e];
        let s = self.ratio();
        let (x0, y0) = (edge.start.0 * s, edge.start.1 * s);
        (0..=s)
            .map(|k| match edge.orientation {
                Orientation::Horizontal => (x0 + k, y0),
                Orientation::Vertical => (x0, y0 + k),
            })
            .collect()
    }

    /// Global fine-node indices along the edge, endpoints included.
    pub fn edge_fine_nodes(&self, e: usize) -> Vec<usize> {
        self.edge_fine_coords(e)
            .into_iter()
            .map(|(x, y)| self.fine_node(x, y))
            .collect()
    }

    /// Global indices of fine nodes strictly inside a coarse element.
    pub fn element_interior_fine_nodes(&self, t: usize) -> Vec<usize> {
        let (ex, ey) = self.element_coords(t);
        let s = self.ratio();
        let mut out = Vec::with_capacity((s - 1) * (s - 1));
        for gy in ey * s + 1..(ey + 1) * s {
            for gx in ex * s + 1..(ex + 1) * s {
                out.push(self.fine_node(gx, gy));
            }
        }
        out
    }

    pub fn edges_of_node(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.edges.len())
            .filter(|&e| self.edges[e].nodes.contains(&Some(node)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn elements_of_edge(&self, e: usize) -> [usize; 2] {
        self.edges[e].elements
    }

    pub fn elements_of_node(&self, node: usize) -> Vec<usize> {
        let (i, j) = self.node_vertex(node);
        let nc = self.nc;
        vec![(j - 1) * nc + i - 1, (j - 1) * nc + i, j * nc + i - 1, j * nc + i]
    }

    /// Support of the tent function of a node: the elements around it.
    pub fn support_of_tent(&self, node: usize) -> Vec<usize> {
        self.elements_of_node(node)
    }

    /// Edges of the edge set lying on the boundary of a coarse element,
    /// in the order bottom, top, left, right (missing ones skipped).
    pub fn edges_of_element(&self, t: usize) -> Vec<usize> {
        self.element_sides(t).into_iter().flatten().collect()
    }

    /// The four sides of an element as edge-set indices: `[bottom, top, left, right]`,
    /// `None` where the side lies on the domain boundary.
    pub fn element_sides(&self, t: usize) -> [Option<usize>; 4] {
        let (ex, ey) = self.element_coords(t);
        let nc = self.nc;
        let h_edge = |i: usize, j: usize| (j > 0 && j < nc).then(|| (j - 1) * nc + i);
        let nh = nc * (nc - 1);
        let v_edge = |i: usize, j: usize| (i > 0 && i < nc).then(|| nh + j * (nc - 1) + i - 1);
        [h_edge(ex, ey), h_edge(ex, ey + 1), v_edge(ex, ey), v_edge(ex + 1, ey)]
    }

    /// Interior coarse nodes at the corners of an element, ordered
    /// `[(ex, ey), (ex+1, ey), (ex, ey+1), (ex+1, ey+1)]`.
    pub fn element_corner_nodes(&self, t: usize) -> [Option<usize>; 4] {
        let (ex, ey) = self.element_coords(t);
        [
            self.node_at_vertex(ex, ey),
            self.node_at_vertex(ex + 1, ey),
            self.node_at_vertex(ex, ey + 1),
            self.node_at_vertex(ex + 1, ey + 1),
        ]
    }

    /// The oversampling domain of an edge as a block of coarse elements: all
    /// elements whose closure meets the edge, clipped to the domain.
    pub fn oversampling_rect(&self, e: usize) -> CoarseRect {
        let edge = &self.edges[e];
        let (i, j) = edge.start;
        let nc = self.nc;
        match edge.orientation {
            Orientation::Horizontal => CoarseRect {
                ex0: i.saturating_sub(1),
                ex1: (i + 2).min(nc),
                ey0: j - 1,
                ey1: j + 1,
            },
            Orientation::Vertical => CoarseRect {
                ex0: i - 1,
                ex1: i + 1,
                ey0: j.saturating_sub(1),
                ey1: (j + 2).min(nc),
            },
        }
    }

    /// Element indices of the oversampling domain, row-major.
    pub fn oversampling_domain(&self, e: usize) -> Vec<usize> {
        let r = self.oversampling_rect(e);
        let mut out = Vec::with_capacity(r.width() * r.height());
        for ey in r.ey0..r.ey1 {
            for ex in r.ex0..r.ex1 {
                out.push(ey * self.nc + ex);
            }
        }
        out
    }

    pub fn classify_fine_node(&self, n: usize) -> FineNodeClass {
        let (gx, gy) = self.fine_node_coords(n);
        if self.is_domain_boundary_node(gx, gy) {
            return FineNodeClass::DomainBoundary;
        }
        let s = self.ratio();
        let nc = self.nc;
        match (gx % s == 0, gy % s == 0) {
            (true, true) => FineNodeClass::CoarseNode(self.node_at_vertex(gx / s, gy / s).unwrap()),
            (false, true) => FineNodeClass::EdgeInterior((gy / s - 1) * nc + gx / s),
            (true, false) => {
                FineNodeClass::EdgeInterior(nc * (nc - 1) + (gy / s) * (nc - 1) + gx / s - 1)
            }
            (false, false) => FineNodeClass::ElementInterior((gy / s) * nc + gx / s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_at_full_scale() {
        let g = GridHierarchy::new(32, 1024).unwrap();
        assert_eq!(g.num_nodes(), 961);
        assert_eq!(g.num_edges(), 1984);
    }

    #[test]
    fn smallest_grid() {
        let g = GridHierarchy::new(2, 4).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.num_elements(), 4);
        for e in 0..4 {
            assert_eq!(g.oversampling_domain(e), vec![0, 1, 2, 3]);
            assert!(g.edge(e).is_boundary_connected());
        }
        let mut all = g.elements_of_node(0);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(g.edges_of_node(0).len(), 4);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(GridHierarchy::new(1, 4), Err(Error::DegenerateMesh { .. })));
        assert!(matches!(GridHierarchy::new(3, 8), Err(Error::NonNestedMesh { .. })));
        assert!(matches!(GridHierarchy::new(4, 4), Err(Error::NonNestedMesh { .. })));
    }

    #[test]
    fn short_edge_fine_nodes() {
        let g = GridHierarchy::new(3, 6).unwrap();
        // horizontal edge between elements (0,0) and (0,1)
        let e = 0;
        assert_eq!(g.edge(e).orientation, Orientation::Horizontal);
        assert_eq!(g.edge(e).elements, [0, 3]);
        let nodes = g.edge_fine_coords(e);
        assert_eq!(nodes, vec![(0, 2), (1, 2), (2, 2)]);
        assert_eq!(nodes.len() - 2, 1);
    }

    #[test]
    fn oversampling_shapes() {
        let g = GridHierarchy::new(4, 16).unwrap();
        for (e, edge) in g.edges().iter().enumerate() {
            let r = g.oversampling_rect(e);
            let dom = g.oversampling_domain(e);
            if edge.is_boundary_connected() {
                assert_eq!(dom.len(), 4, "edge {e}");
            } else {
                assert_eq!(dom.len(), 6, "edge {e}");
                match edge.orientation {
                    Orientation::Horizontal => assert_eq!((r.width(), r.height()), (3, 2)),
                    Orientation::Vertical => assert_eq!((r.width(), r.height()), (2, 3)),
                }
            }
            for t in g.elements_of_edge(e) {
                assert!(dom.contains(&t));
            }
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_handshakes() {
        let g = GridHierarchy::new(5, 10).unwrap();
        let mut from_edges = 0;
        for e in 0..g.num_edges() {
            from_edges += g.elements_of_edge(e).len();
            for t in g.elements_of_edge(e) {
                assert!(g.edges_of_element(t).contains(&e));
            }
            for n in g.edge(e).nodes.iter().flatten() {
                assert!(g.edges_of_node(*n).contains(&e));
            }
        }
        let from_elements: usize = (0..g.num_elements()).map(|t| g.edges_of_element(t).len()).sum();
        assert_eq!(from_edges, from_elements);
        for n in 0..g.num_nodes() {
            assert_eq!(g.edges_of_node(n).len(), 4);
            for t in g.elements_of_node(n) {
                assert!(g.element_corner_nodes(t).contains(&Some(n)));
            }
        }
    }

    #[test]
    fn fine_node_partition() {
        let g = GridHierarchy::new(4, 12).unwrap();
        let mut edge_hits = vec![0usize; g.num_edges()];
        let mut elem_hits = vec![0usize; g.num_elements()];
        let mut node_hits = vec![0usize; g.num_nodes()];
        let mut boundary = 0;
        for n in 0..g.num_fine_nodes() {
            match g.classify_fine_node(n) {
                FineNodeClass::DomainBoundary => boundary += 1,
                FineNodeClass::CoarseNode(k) => node_hits[k] += 1,
                FineNodeClass::EdgeInterior(e) => {
                    edge_hits[e] += 1;
                    assert!(g.edge_fine_nodes(e)[1..g.ratio()].contains(&n));
                }
                FineNodeClass::ElementInterior(t) => {
                    elem_hits[t] += 1;
                    assert!(g.element_interior_fine_nodes(t).contains(&n));
                }
            }
        }
        assert_eq!(boundary, 4 * 12);
        assert!(node_hits.iter().all(|&c| c == 1));
        assert!(edge_hits.iter().all(|&c| c == g.ratio() - 1));
        assert!(elem_hits.iter().all(|&c| c == (g.ratio() - 1).pow(2)));
    }

    #[test]
    fn element_sides_match_edges() {
        let g = GridHierarchy::new(4, 8).unwrap();
        for t in 0..g.num_elements() {
            let [b, top, l, r] = g.element_sides(t);
            if let Some(e) = b {
                assert_eq!(g.edge(e).elements[1], t);
            }
            if let Some(e) = top {
                assert_eq!(g.edge(e).elements[0], t);
            }
            if let Some(e) = l {
                assert_eq!(g.edge(e).elements[1], t);
            }
            if let Some(e) = r {
                assert_eq!(g.edge(e).elements[0], t);
            }
        }
    }
}
