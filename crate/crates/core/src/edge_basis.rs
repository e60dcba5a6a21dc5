//! Functions on coarse edges: tent traces, edge norms, the oversampling
//! restriction operator and its singular vectors, and the right-hand-side
//! dependent oversampling bubble.
//!
//! Edge functions are stored as values at the `s + 1` fine nodes of the edge
//! (start to end). Enrichment functions vanish at both endpoints.
//!
//! Two ways to obtain the singular pairs are provided. [`edge_svd`] works on
//! the image side: with `W` the functionals `u -> (u - I_H u)(x_k)` at the
//! interior edge nodes, `R R^* = z^T S^+ z` where `z = -A_BI A_II^{-1} W`
//! and `S^+ z` is read off a single Neumann solve on the oversampling domain.
//! That needs `s - 1` Dirichlet and `s - 1` Neumann solves per edge.
//! [`RestrictionOperator`] builds `R` explicitly together with the domain
//! Schur complement and solves the generalized pencil densely; it is used as
//! an independent check on small meshes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficient::CoefficientField;
use crate::dense::{fix_sign, generalized_eigen, product_eigen, quad};
use crate::error::{Error, Result};
use crate::fem::{ElementSchur, FineRect, LocalPatch, PatchKind, SymbolicCache};
use crate::mesh::GridHierarchy;
use crate::util::try_par_map;

/// Values of a function at the fine nodes of one coarse edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFunction {
    pub edge: usize,
    pub values: Vec<f64>,
}

impl EdgeFunction {
    pub fn zeros(g: &GridHierarchy, edge: usize) -> Self {
        Self { edge, values: vec![0.0; g.ratio() + 1] }
    }

    /// Interior values (endpoints dropped).
    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }

    fn from_interior(edge: usize, inner: &[f64]) -> Self {
        let mut values = Vec::with_capacity(inner.len() + 2);
        values.push(0.0);
        values.extend_from_slice(inner);
        values.push(0.0);
        Self { edge, values }
    }
}

/// The four edges around an interior coarse node, with the endpoint index
/// (0 = start, 1 = end) at which the node sits: left, right, below, above.
pub fn node_edges(g: &GridHierarchy, node: usize) -> [(usize, usize); 4] {
    let nc = g.nc();
    let (i, j) = g.node_vertex(node);
    let h = |i: usize, j: usize| (j - 1) * nc + i;
    let v = |i: usize, j: usize| nc * (nc - 1) + j * (nc - 1) + i - 1;
    [(h(i - 1, j), 1), (h(i, j), 0), (v(i, j - 1), 1), (v(i, j), 0)]
}

fn linear(g: &GridHierarchy, edge: usize, v0: f64, v1: f64) -> EdgeFunction {
    let s = g.ratio();
    let values = (0..=s)
        .map(|k| {
            let t = k as f64 / s as f64;
            (1.0 - t) * v0 + t * v1
        })
        .collect();
    EdgeFunction { edge, values }
}

/// Tent traces: for every interior coarse node, its linear trace on each of
/// the four adjacent edges.
pub fn tent_functions(g: &GridHierarchy) -> Vec<Vec<EdgeFunction>> {
    (0..g.num_nodes())
        .map(|node| {
            node_edges(g, node)
                .iter()
                .map(|&(e, end)| if end == 0 { linear(g, e, 1.0, 0.0) } else { linear(g, e, 0.0, 1.0) })
                .collect()
        })
        .collect()
}

/// Piecewise-linear edge traces of nodal values (zero at boundary vertices).
pub fn interpolate(g: &GridHierarchy, v: &[f64]) -> Result<Vec<EdgeFunction>> {
    if v.len() != g.num_nodes() {
        return Err(Error::DimensionMismatch { expected: g.num_nodes(), got: v.len() });
    }
    Ok(g.edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let at = |n: Option<usize>| n.map_or(0.0, |n| v[n]);
            linear(g, e, at(edge.nodes[0]), at(edge.nodes[1]))
        })
        .collect())
}

/// Gram matrix of the edge norm on the `s - 1` interior edge nodes: the
/// energy of the a-harmonic extension into the two adjacent elements of the
/// zero-extended edge function. Row-major.
pub fn h_half_gram(g: &GridHierarchy, schur: &ElementSchur, e: usize) -> Vec<f64> {
    let s = g.ratio();
    let n = s - 1;
    let mut out = vec![0.0; n * n];
    let nb = schur.size();
    for t in g.elements_of_edge(e) {
        let pos = schur.edge_positions(g, t, e);
        let m = schur.get(t);
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] += m[pos[a + 1] * nb + pos[b + 1]];
            }
        }
    }
    out
}

/// Quadrature of the Lions–Magenes norm squared on an edge of length `H`
/// with `s` segments: trapezoid weights, double integral over node pairs with
/// the diagonal left out, and the boundary-distance weight. `values` has
/// `s + 1` entries with zero endpoints.
pub fn h00_half_norm(coarse_h: f64, values: &[f64]) -> f64 {
    let s = values.len() - 1;
    let h = coarse_h / s as f64;
    let w = |k: usize| if k == 0 || k == s { 0.5 * h } else { h };
    let mut l2 = 0.0;
    let mut semi = 0.0;
    let mut dist = 0.0;
    for k in 0..=s {
        l2 += w(k) * values[k] * values[k];
        let d = k.min(s - k);
        if d > 0 {
            dist += w(k) * values[k] * values[k] / (d as f64 * h);
        }
        for l in 0..=s {
            if l != k {
                let r = (k as f64 - l as f64) * h;
                semi += w(k) * w(l) * (values[k] - values[l]).powi(2) / (r * r);
            }
        }
    }
    (l2 + semi + dist).sqrt()
}

/// Rows of `W`: for interior edge node `k`, the coefficients of
/// `u(x_k) - (1 - t_k) u(x_0) - t_k u(x_s)` on the unknowns of `patch`.
fn residual_functionals(g: &GridHierarchy, patch: &LocalPatch, e: usize) -> Vec<Vec<(usize, f64)>> {
    let coords = g.edge_fine_coords(e);
    let s = g.ratio();
    (1..s)
        .map(|k| {
            let t = k as f64 / s as f64;
            let mut row = Vec::with_capacity(3);
            for (node, c) in [(k, 1.0), (0, -(1.0 - t)), (s, -t)] {
                let (x, y) = coords[node];
                if let Some(d) = patch.dof_of(x, y) {
                    row.push((d, c));
                }
            }
            row
        })
        .collect()
}

/// Non-Dirichlet nodes on the perimeter of the oversampling domain.
fn free_perimeter(g: &GridHierarchy, rect: FineRect) -> Vec<(usize, usize)> {
    rect.perimeter()
        .into_iter()
        .filter(|&(x, y)| !g.is_domain_boundary_node(x, y))
        .collect()
}

/// Singular values (non-increasing, all `s - 1` of them) and the leading
/// left singular vectors of one edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSvd {
    pub lambda: Vec<f64>,
    pub modes: Vec<EdgeFunction>,
    /// Fewer strictly positive singular values than requested.
    pub rank_deficient: bool,
}

fn finish_svd(e: usize, mu: Vec<f64>, vecs: Vec<Vec<f64>>, m: usize) -> EdgeSvd {
    let top = mu.first().copied().unwrap_or(0.0).max(0.0);
    let positive = mu.iter().filter(|&&x| x > 1e-14 * top && x > 0.0).count();
    let lambda: Vec<f64> = mu.iter().map(|x| x.max(0.0).sqrt()).collect();
    let take = m.min(positive);
    let modes = vecs
        .into_iter()
        .take(take)
        .map(|mut v| {
            fix_sign(&mut v);
            EdgeFunction::from_interior(e, &v)
        })
        .collect();
    EdgeSvd { lambda, modes, rank_deficient: take < m }
}

/// Per-edge output of the offline stage.
#[derive(Clone, Debug)]
pub struct EdgeResult {
    pub svd: EdgeSvd,
    /// Present when a load vector was supplied.
    pub os_bubble: Option<EdgeFunction>,
}

/// Leading `m` singular pairs of the restriction operator of edge `e`, and
/// optionally the oversampling bubble for a global load vector.
pub fn edge_svd(
    g: &GridHierarchy,
    field: &CoefficientField,
    schur: &ElementSchur,
    cache: &SymbolicCache,
    e: usize,
    m: usize,
    load: Option<&[f64]>,
) -> Result<EdgeResult> {
    let s = g.ratio();
    let n = s - 1;
    let rect = FineRect::from_coarse(g, g.oversampling_rect(e));
    let dir = LocalPatch::assemble(g, field, rect, PatchKind::Dirichlet, Some(cache))?;
    let neu = LocalPatch::assemble(g, field, rect, PatchKind::Neumann, Some(cache))?;
    let boundary = free_perimeter(g, rect);

    let nd = dir.num_dofs();
    let mut xd = vec![0.0; nd * n];
    for (k, row) in residual_functionals(g, &dir, e).iter().enumerate() {
        for &(d, c) in row {
            xd[k * nd + d] = c;
        }
    }
    dir.solve_block(&mut xd, n);

    // z = -A_BI X_D on the free perimeter
    let nb = boundary.len();
    let mut z = vec![0.0; nb * n];
    for k in 0..n {
        let col = dir.boundary_coupling(&boundary, &xd[k * nd..(k + 1) * nd]);
        for p in 0..nb {
            z[k * nb + p] = -col[p];
        }
    }

    let nn = neu.num_dofs();
    let mut y = vec![0.0; nn * n];
    for (k, row) in residual_functionals(g, &neu, e).iter().enumerate() {
        for &(d, c) in row {
            y[k * nn + d] = c;
        }
    }
    neu.solve_block(&mut y, n);
    let bdofs: Vec<Option<usize>> = boundary.iter().map(|&(x, yy)| neu.dof_of(x, yy)).collect();

    // K = z^T y_B, symmetric up to rounding
    let mut kmat = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            kmat[a * n + b] = bdofs
                .iter()
                .enumerate()
                .filter_map(|(p, d)| d.map(|d| z[a * nb + p] * y[b * nn + d]))
                .sum();
        }
    }
    for a in 0..n {
        for b in 0..a {
            let v = 0.5 * (kmat[a * n + b] + kmat[b * n + a]);
            kmat[a * n + b] = v;
            kmat[b * n + a] = v;
        }
    }

    let gram = h_half_gram(g, schur, e);
    let (mu, vecs) = product_eigen(&kmat, &gram, n)?;
    let svd = finish_svd(e, mu, vecs, m);

    let os_bubble = load.map(|b| {
        let bi = dir.gather(b);
        let vals: Vec<f64> = (0..n)
            .map(|k| xd[k * nd..(k + 1) * nd].iter().zip(&bi).map(|(x, b)| x * b).sum())
            .collect();
        EdgeFunction::from_interior(e, &vals)
    });
    Ok(EdgeResult { svd, os_bubble })
}

/// Oversampling bubble of a single edge: interpolation residue on `e` of the
/// Dirichlet solve of the load on the oversampling domain.
pub fn oversampling_bubble_edge(
    g: &GridHierarchy,
    field: &CoefficientField,
    cache: &SymbolicCache,
    e: usize,
    load: &[f64],
) -> Result<EdgeFunction> {
    let rect = FineRect::from_coarse(g, g.oversampling_rect(e));
    let dir = LocalPatch::assemble(g, field, rect, PatchKind::Dirichlet, Some(cache))?;
    let u = dir.bubble(load);
    let coords = g.edge_fine_coords(e);
    let at = |k: usize| u[rect.local(coords[k].0, coords[k].1)];
    let s = g.ratio();
    let vals: Vec<f64> = (1..s)
        .map(|k| {
            let t = k as f64 / s as f64;
            at(k) - (1.0 - t) * at(0) - t * at(s)
        })
        .collect();
    Ok(EdgeFunction::from_interior(e, &vals))
}

/// Explicit restriction operator of one edge, for dense checks.
#[derive(Clone, Debug)]
pub struct RestrictionOperator {
    pub edge: usize,
    /// Free perimeter nodes of the oversampling domain (the domain-side DOFs).
    pub boundary: Vec<(usize, usize)>,
    /// `(s - 1) x nb`, row-major.
    pub r: Vec<f64>,
    /// Energy Gram of harmonic extensions, `nb x nb`, row-major.
    pub domain_gram: Vec<f64>,
    /// The oversampling domain does not touch the domain boundary, so
    /// constants are in the kernel of both `r` and `domain_gram`.
    pub constant_kernel: bool,
}

impl RestrictionOperator {
    pub fn build(
        g: &GridHierarchy,
        field: &CoefficientField,
        e: usize,
        cache: Option<&SymbolicCache>,
    ) -> Result<Self> {
        let rect = FineRect::from_coarse(g, g.oversampling_rect(e));
        let dir = LocalPatch::assemble(g, field, rect, PatchKind::Dirichlet, cache)?;
        let boundary = free_perimeter(g, rect);
        let (domain_gram, x) = dir.schur_complement(&boundary);
        let nb = boundary.len();
        let nd = dir.num_dofs();
        let w = residual_functionals(g, &dir, e);
        let n = w.len();
        let mut r = vec![0.0; n * nb];
        for (k, row) in w.iter().enumerate() {
            for p in 0..nb {
                r[k * nb + p] = row.iter().map(|&(d, c)| c * x[p * nd + d]).sum();
            }
        }
        let constant_kernel = !rect.touches(g.nf()).contains(&true);
        Ok(Self { edge: e, boundary, r, domain_gram, constant_kernel })
    }

    pub fn rows(&self) -> usize {
        self.r.len() / self.boundary.len()
    }

    /// Interior edge values of `R x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let nb = self.boundary.len();
        (0..self.rows())
            .map(|k| (0..nb).map(|p| self.r[k * nb + p] * x[p]).sum())
            .collect()
    }

    /// Singular pairs from the generalized pencil
    /// `(R^T G R) x = lambda^2 S x`, with the constant mode deflated when it
    /// spans the kernel of `S`. Left singular vectors are `R x / lambda`.
    pub fn svd(&self, gram: &[f64], m: usize) -> Result<EdgeSvd> {
        let nb = self.boundary.len();
        let n = self.rows();
        // basis of the working subspace, as columns q_j (length nb)
        let basis: Vec<Vec<f64>> = if self.constant_kernel {
            complement_of_constant(nb)
        } else {
            (0..nb).map(|j| (0..nb).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect()
        };
        let q = basis.len();
        let rq: Vec<Vec<f64>> = basis.iter().map(|c| self.apply(c)).collect();
        let sq: Vec<Vec<f64>> = basis
            .iter()
            .map(|c| (0..nb).map(|i| (0..nb).map(|j| self.domain_gram[i * nb + j] * c[j]).sum()).collect())
            .collect();
        let mut a = vec![0.0; q * q];
        let mut b = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..=i {
                let av = quad(gram, &rq[i], &rq[j]);
                let bv: f64 = basis[i].iter().zip(&sq[j]).map(|(x, y)| x * y).sum();
                a[i * q + j] = av;
                a[j * q + i] = av;
                b[i * q + j] = bv;
                b[j * q + i] = bv;
            }
        }
        let (mu, xs) = generalized_eigen(&a, &b, q)?;
        let vecs: Vec<Vec<f64>> = mu
            .iter()
            .zip(&xs)
            .take(n)
            .map(|(&mu, x)| {
                let lam = mu.max(0.0).sqrt();
                let mut v = vec![0.0; n];
                for (j, &c) in x.iter().enumerate() {
                    for k in 0..n {
                        v[k] += c * rq[j][k];
                    }
                }
                if lam > 0.0 {
                    v.iter_mut().for_each(|t| *t /= lam);
                }
                v
            })
            .collect();
        let mu: Vec<f64> = mu.into_iter().take(n).collect();
        Ok(finish_svd(self.edge, mu, vecs, m))
    }
}

/// Orthonormal basis of the complement of the constant vector in `R^n`
/// (the last `n - 1` columns of a Householder reflector).
fn complement_of_constant(n: usize) -> Vec<Vec<f64>> {
    let c = 1.0 / (n as f64).sqrt();
    let mut v = vec![c; n];
    v[0] -= 1.0;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    (1..n)
        .map(|j| (0..n).map(|i| (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vv).collect())
        .collect()
}

/// Per edge, the smallest `m_e` with `lambda_{e, m_e} < tau`; the flag is set
/// when no available singular value falls below `tau` (then `m_e` is the
/// number of available modes).
pub fn adaptive_truncation(set: &EdgeBasisSet, tau: f64) -> (Vec<usize>, Vec<bool>) {
    set.edges
        .iter()
        .map(|b| {
            let avail = b.modes.len();
            match b.lambda.iter().take(avail).position(|&l| l < tau) {
                Some(k) => (k + 1, false),
                None => (avail, true),
            }
        })
        .unzip()
}

/// The offline basis: for every edge its singular values and leading modes.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeBasisSet {
    pub nc: usize,
    pub nf: usize,
    pub coefficient_hash: String,
    pub coefficient: serde_json::Value,
    pub edges: Vec<EdgeSvd>,
}

impl EdgeBasisSet {
    pub fn check_provenance(&self, g: &GridHierarchy, field: &CoefficientField) -> Result<()> {
        if self.nc != g.nc() || self.nf != g.nf() {
            return Err(Error::ProvenanceMismatch(format!(
                "basis built for nc={}, nf={} but grid has nc={}, nf={}",
                self.nc,
                self.nf,
                g.nc(),
                g.nf()
            )));
        }
        if self.coefficient_hash != field.hash() {
            return Err(Error::ProvenanceMismatch("coefficient hash differs".into()));
        }
        Ok(())
    }

    pub fn max_modes(&self) -> usize {
        self.edges.iter().map(|b| b.modes.len()).max().unwrap_or(0)
    }

    /// Keeps at most `m_e[e]` modes per edge.
    pub fn truncated(&self, m_e: &[usize]) -> Self {
        let mut out = self.clone();
        for (b, &m) in out.edges.iter_mut().zip(m_e) {
            b.modes.truncate(m);
        }
        out
    }

    pub fn uniform(&self, m: usize) -> Self {
        self.truncated(&vec![m; self.edges.len()])
    }
}

/// Offline stage for all edges. Returns the basis with `m_max` modes per edge
/// and, if a load vector is given, one oversampling bubble per edge.
pub fn build_edge_basis(
    g: &GridHierarchy,
    field: &CoefficientField,
    schur: &ElementSchur,
    cache: &SymbolicCache,
    m_max: usize,
    load: Option<&[f64]>,
) -> Result<(EdgeBasisSet, Option<Vec<EdgeFunction>>)> {
    let results = try_par_map(g.num_edges(), |e| edge_svd(g, field, schur, cache, e, m_max, load))?;
    let mut edges = Vec::with_capacity(results.len());
    let mut bubbles = Vec::with_capacity(results.len());
    for r in results {
        edges.push(r.svd);
        if let Some(b) = r.os_bubble {
            bubbles.push(b);
        }
    }
    let set = EdgeBasisSet {
        nc: g.nc(),
        nf: g.nf(),
        coefficient_hash: field.hash(),
        coefficient: field.sidecar(),
        edges,
    };
    Ok((set, load.map(|_| bubbles)))
}

/// Oversampling bubbles of every edge for one load vector.
pub fn build_os_bubbles(
    g: &GridHierarchy,
    field: &CoefficientField,
    cache: &SymbolicCache,
    load: &[f64],
) -> Result<Vec<EdgeFunction>> {
    try_par_map(g.num_edges(), |e| oversampling_bubble_edge(g, field, cache, e, load))
}

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestEdge {
    edge: usize,
    offset: usize,
    m_e: usize,
    rank_deficient: bool,
    lambda: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    nc: usize,
    nf: usize,
    coefficient: serde_json::Value,
    coefficient_hash: String,
    values_per_function: usize,
    edges: Vec<ManifestEdge>,
}

/// Writes `manifest.json` and `payload.bin` into `dir`.
pub fn save_store(set: &EdgeBasisSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let per = set.nf / set.nc + 1;
    let mut payload = Vec::new();
    let mut edges = Vec::with_capacity(set.edges.len());
    let mut offset = 0;
    for (e, b) in set.edges.iter().enumerate() {
        edges.push(ManifestEdge {
            edge: e,
            offset,
            m_e: b.modes.len(),
            rank_deficient: b.rank_deficient,
            lambda: b.lambda.clone(),
        });
        for m in &b.modes {
            for v in &m.values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            offset += per;
        }
    }
    let manifest = Manifest {
        format_version: STORE_FORMAT_VERSION,
        nc: set.nc,
        nf: set.nf,
        coefficient: set.coefficient.clone(),
        coefficient_hash: set.coefficient_hash.clone(),
        values_per_function: per,
        edges,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    std::fs::write(dir.join("payload.bin"), payload)?;
    Ok(())
}

/// Reads a store and checks it against the grid and coefficient.
pub fn load_store(dir: &Path, g: &GridHierarchy, field: &CoefficientField) -> Result<EdgeBasisSet> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != STORE_FORMAT_VERSION {
        return Err(Error::ProvenanceMismatch(format!(
            "unsupported store format {}",
            manifest.format_version
        )));
    }
    let payload = std::fs::read(dir.join("payload.bin"))?;
    let per = manifest.values_per_function;
    let mut edges = Vec::with_capacity(manifest.edges.len());
    for me in &manifest.edges {
        let mut modes = Vec::with_capacity(me.m_e);
        for k in 0..me.m_e {
            let start = (me.offset + k * per) * 8;
            let bytes = payload
                .get(start..start + per * 8)
                .ok_or_else(|| Error::ProvenanceMismatch("payload too short".into()))?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            modes.push(EdgeFunction { edge: me.edge, values });
        }
        edges.push(EdgeSvd { lambda: me.lambda.clone(), modes, rank_deficient: me.rank_deficient });
    }
    let set = EdgeBasisSet {
        nc: manifest.nc,
        nf: manifest.nf,
        coefficient_hash: manifest.coefficient_hash,
        coefficient: manifest.coefficient,
        edges,
    };
    set.check_provenance(g, field)?;
    if set.edges.len() != g.num_edges() || per != g.ratio() + 1 {
        return Err(Error::ProvenanceMismatch("edge layout does not match the grid".into()));
    }
    Ok(set)
}
