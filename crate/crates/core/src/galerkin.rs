//! The coarse space spanned by a-harmonic extensions of tent traces and edge
//! enrichments, the coarse Galerkin solve, and error reports.
//!
//! Every basis function is a-harmonic inside each coarse element, so it is
//! fully described by its trace on the coarse skeleton. Element stiffness
//! entries are `phi^T S_T psi` with the element Schur complement `S_T`, and
//! the element load is `b_B - A_BI u^b_T` where `u^b_T` is the element
//! bubble; neither needs the fine-scale basis functions themselves.

use serde::{Deserialize, Serialize};

use crate::coefficient::CoefficientField;
use crate::dense::quad;
use crate::edge_basis::{h_half_gram, node_edges, EdgeBasisSet, EdgeFunction};
use crate::error::{Error, Result};
use crate::fem::{
    element_patch, energy_norm, gather_rect, l2_norm, load_vector, rect_load, scatter, ElementSchur, FineFunction,
    FineRect, Rhs, SymbolicCache,
};
use crate::mesh::GridHierarchy;
use crate::sparse::{Ordering, SparseCholesky, SymCsc};
use crate::util::{par_map, try_par_map};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    Tent { node: usize },
    SvdEnrichment { edge: usize, k: usize },
    OsBubble { edge: usize },
}

/// Coarse space described by skeleton traces.
#[derive(Clone, Debug)]
pub struct GalerkinSpace {
    pub nc: usize,
    pub nf: usize,
    pub kinds: Vec<BasisKind>,
    /// Per edge: `(dof, values at the s + 1 edge nodes)` of every basis
    /// function with a nonzero trace on that edge.
    edge_traces: Vec<Vec<(usize, Vec<f64>)>>,
    /// Edges whose oversampling bubble was dropped as dependent on the modes.
    pub pruned_os_bubbles: Vec<usize>,
}

/// Relative threshold below which an oversampling bubble counts as lying in
/// the span of its edge's modes.
pub const PRUNE_TOLERANCE: f64 = 1e-12;

impl GalerkinSpace {
    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn count(&self, pred: impl Fn(&BasisKind) -> bool) -> usize {
        self.kinds.iter().filter(|k| pred(k)).count()
    }

    /// Perimeter traces (length `4s`) of the basis functions touching element `t`.
    fn element_traces(&self, g: &GridHierarchy, schur: &ElementSchur, t: usize) -> Vec<(usize, Vec<f64>)> {
        let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
        for e in g.edges_of_element(t) {
            let pos = schur.edge_positions(g, t, e);
            for (dof, vals) in &self.edge_traces[e] {
                let slot = match out.iter().position(|(d, _)| d == dof) {
                    Some(i) => i,
                    None => {
                        out.push((*dof, vec![0.0; schur.size()]));
                        out.len() - 1
                    }
                };
                for (p, v) in pos.iter().zip(vals) {
                    out[slot].1[*p] = *v;
                }
            }
        }
        out.sort_by_key(|(d, _)| *d);
        out
    }

    /// Skeleton trace of `sum_j c_j phi_j` on the perimeter of element `t`.
    fn element_trace_of(&self, g: &GridHierarchy, schur: &ElementSchur, t: usize, c: &[f64]) -> Vec<f64> {
        let mut trace = vec![0.0; schur.size()];
        for e in g.edges_of_element(t) {
            let pos = schur.edge_positions(g, t, e);
            let mut vals = vec![0.0; pos.len()];
            for (dof, v) in &self.edge_traces[e] {
                for (a, b) in vals.iter_mut().zip(v) {
                    *a += c[*dof] * b;
                }
            }
            for (p, v) in pos.iter().zip(&vals) {
                trace[*p] = *v;
            }
        }
        trace
    }

    /// The basis function `j` as a fine function (for checks on small meshes).
    pub fn basis_function(
        &self,
        g: &GridHierarchy,
        field: &CoefficientField,
        schur: &ElementSchur,
        cache: &SymbolicCache,
        j: usize,
    ) -> Result<FineFunction> {
        let mut c = vec![0.0; self.dim()];
        c[j] = 1.0;
        let mut u = FineFunction::zeros(g.nf());
        for t in self.support(g, j) {
            let patch = element_patch(g, field, cache, t)?;
            let ext = patch.harmonic_extension(&self.element_trace_of(g, schur, t, &c))?;
            scatter(&mut u, patch.rect, &ext);
        }
        Ok(u)
    }

    /// Coarse elements in the support of basis function `j`.
    pub fn support(&self, g: &GridHierarchy, j: usize) -> Vec<usize> {
        match self.kinds[j] {
            BasisKind::Tent { node } => g.support_of_tent(node),
            BasisKind::SvdEnrichment { edge, .. } | BasisKind::OsBubble { edge } => {
                g.elements_of_edge(edge).to_vec()
            }
        }
    }
}

/// Tents plus the modes of `basis`, plus (optionally) one oversampling
/// bubble column per edge. Bubbles that are numerically in the span of
/// their edge's modes are left out and listed in `pruned_os_bubbles`.
pub fn build_space(
    g: &GridHierarchy,
    field: &CoefficientField,
    schur: &ElementSchur,
    basis: &EdgeBasisSet,
    os_bubbles: Option<&[EdgeFunction]>,
) -> Result<GalerkinSpace> {
    basis.check_provenance(g, field)?;
    let ne = g.num_edges();
    let mut kinds = Vec::new();
    let mut edge_traces: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); ne];
    let s = g.ratio();
    for node in 0..g.num_nodes() {
        let dof = kinds.len();
        kinds.push(BasisKind::Tent { node });
        for (e, end) in node_edges(g, node) {
            let vals = (0..=s)
                .map(|k| {
                    let t = k as f64 / s as f64;
                    if end == 0 { 1.0 - t } else { t }
                })
                .collect();
            edge_traces[e].push((dof, vals));
        }
    }
    for (e, b) in basis.edges.iter().enumerate() {
        for (k, m) in b.modes.iter().enumerate() {
            edge_traces[e].push((kinds.len(), m.values.clone()));
            kinds.push(BasisKind::SvdEnrichment { edge: e, k });
        }
    }
    let mut pruned = Vec::new();
    if let Some(bubbles) = os_bubbles {
        if bubbles.len() != ne {
            return Err(Error::DimensionMismatch { expected: ne, got: bubbles.len() });
        }
        let keep = par_map(ne, |e| {
            let gram = h_half_gram(g, schur, e);
            let b = bubbles[e].interior();
            let bb = quad(&gram, b, b);
            if !(bb > 0.0) {
                return false;
            }
            let mut r = b.to_vec();
            for m in &basis.edges[e].modes {
                let v = m.interior();
                let c = quad(&gram, v, b) / quad(&gram, v, v);
                for (ri, vi) in r.iter_mut().zip(v) {
                    *ri -= c * vi;
                }
            }
            quad(&gram, &r, &r) >= PRUNE_TOLERANCE * bb
        });
        for (e, bubble) in bubbles.iter().enumerate() {
            if keep[e] {
                edge_traces[e].push((kinds.len(), bubble.values.clone()));
                kinds.push(BasisKind::OsBubble { edge: e });
            } else {
                pruned.push(e);
            }
        }
    }
    Ok(GalerkinSpace { nc: g.nc(), nf: g.nf(), kinds, edge_traces, pruned_os_bubbles: pruned })
}

/// Right-hand-side dependent data shared by all coarse solves for one load:
/// element bubbles and the element load vectors on the skeleton.
pub struct OnlineData<'a> {
    pub g: &'a GridHierarchy,
    pub field: &'a CoefficientField,
    pub schur: &'a ElementSchur,
    pub cache: &'a SymbolicCache,
    pub load: Vec<f64>,
    /// Sum of the element bubbles.
    pub bubble: FineFunction,
    element_loads: Vec<Vec<f64>>,
}

impl<'a> OnlineData<'a> {
    pub fn new(
        g: &'a GridHierarchy,
        field: &'a CoefficientField,
        schur: &'a ElementSchur,
        cache: &'a SymbolicCache,
        f: Rhs,
    ) -> Result<Self> {
        let load = load_vector(g, f);
        let h = g.fine_h();
        let per = try_par_map(g.num_elements(), |t| {
            let patch = element_patch(g, field, cache, t)?;
            let interior = patch.solve(&patch.gather(&load));
            let perimeter = patch.rect.perimeter();
            let coupling = patch.boundary_coupling(&perimeter, &interior);
            // the element's own share of the load on its perimeter
            let local = rect_load(f, h, patch.rect);
            let gt: Vec<f64> = perimeter
                .iter()
                .zip(&coupling)
                .map(|(&(x, y), c)| local[patch.rect.local(x, y)] - c)
                .collect();
            Ok::<_, Error>((patch.expand(&interior, |_, _| 0.0), gt))
        })?;
        let mut bubble = FineFunction::zeros(g.nf());
        let mut element_loads = Vec::with_capacity(per.len());
        for (t, (local, gt)) in per.into_iter().enumerate() {
            scatter(&mut bubble, FineRect::from_coarse(g, g.element_rect(t)), &local);
            element_loads.push(gt);
        }
        Ok(Self { g, field, schur, cache, load, bubble, element_loads })
    }

    /// Coarse stiffness matrix and load vector.
    pub fn assemble(&self, space: &GalerkinSpace) -> (SymCsc, Vec<f64>) {
        let (g, schur) = (self.g, self.schur);
        let nb = schur.size();
        let locals = par_map(g.num_elements(), |t| {
            let traces = space.element_traces(g, schur, t);
            let st = schur.get(t);
            let sphi: Vec<Vec<f64>> = traces
                .iter()
                .map(|(_, phi)| (0..nb).map(|i| (0..nb).map(|j| st[i * nb + j] * phi[j]).sum()).collect())
                .collect();
            let mut trip = Vec::new();
            let mut rhs = Vec::new();
            for (a, (da, phia)) in traces.iter().enumerate() {
                for (b, (db, _)) in traces.iter().enumerate().take(a + 1) {
                    let v: f64 = phia.iter().zip(&sphi[b]).map(|(x, y)| x * y).sum();
                    trip.push((*da, *db, v));
                }
                let f: f64 = phia.iter().zip(&self.element_loads[t]).map(|(x, y)| x * y).sum();
                rhs.push((*da, f));
            }
            (trip, rhs)
        });
        let n = space.dim();
        let mut triplets = Vec::new();
        let mut rhs = vec![0.0; n];
        for (trip, r) in locals {
            triplets.extend(trip);
            for (d, v) in r {
                rhs[d] += v;
            }
        }
        (SymCsc::from_triplets(n, &triplets), rhs)
    }

    /// Assembles and solves the coarse system; returns the coefficients and
    /// the reconstructed fine-scale Galerkin solution.
    pub fn solve(&self, space: &GalerkinSpace) -> Result<(Vec<f64>, FineFunction)> {
        let (a, rhs) = self.assemble(space);
        let n = space.dim();
        let coeffs = if n == 0 {
            vec![]
        } else {
            let diag = a.diagonal();
            if let Some(d) = diag.iter().position(|&d| !(d > 0.0)) {
                return Err(Error::SingularCoarseSystem(format!("zero diagonal at basis function {d}")));
            }
            let scale: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
            let factor = SparseCholesky::new(&a.scaled(&scale), &Ordering::Amd)
                .map_err(|e| Error::SingularCoarseSystem(e.to_string()))?;
            let scaled_rhs: Vec<f64> = rhs.iter().zip(&scale).map(|(r, s)| r * s).collect();
            factor.solve(&scaled_rhs).iter().zip(&scale).map(|(y, s)| y * s).collect()
        };
        let u = self.reconstruct(space, &coeffs)?;
        Ok((coeffs, u))
    }

    /// Fine function `sum_j c_j phi_j`.
    pub fn reconstruct(&self, space: &GalerkinSpace, coeffs: &[f64]) -> Result<FineFunction> {
        let (g, schur) = (self.g, self.schur);
        let locals = try_par_map(g.num_elements(), |t| {
            let patch = element_patch(g, self.field, self.cache, t)?;
            patch.harmonic_extension(&space.element_trace_of(g, schur, t, coeffs))
        })?;
        let mut u = FineFunction::zeros(g.nf());
        for (t, local) in locals.iter().enumerate() {
            scatter(&mut u, FineRect::from_coarse(g, g.element_rect(t)), local);
        }
        Ok(u)
    }
}

/// Relative energy and L2 errors of `u` against `u_ref`.
pub fn error_report(u: &FineFunction, u_ref: &FineFunction, field: &CoefficientField) -> Result<(f64, f64)> {
    let diff = u_ref.sub(u);
    let (de, dl) = (energy_norm(field, &diff)?, l2_norm(&diff));
    let (re, rl) = (energy_norm(field, u_ref)?, l2_norm(u_ref));
    if re == 0.0 || rl == 0.0 {
        if de == 0.0 && dl == 0.0 {
            return Ok((0.0, 0.0));
        }
        return Err(Error::ZeroReference);
    }
    Ok((de / re, dl / rl))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timings {
    pub offline_s: f64,
    pub online_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionReport {
    pub variant: u8,
    pub nc: usize,
    pub nf: usize,
    /// Modes per edge when uniform.
    pub m: Option<usize>,
    pub m_total: usize,
    pub num_basis: usize,
    pub coefficient: serde_json::Value,
    pub rhs: String,
    pub e_energy: f64,
    pub e_l2: f64,
    pub pruned_os_bubbles: Vec<usize>,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indicators: Option<Vec<f64>>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// Variant `k` of the solution: `1` coarse Galerkin only, `2` plus the
/// element bubbles, `3` Galerkin with oversampling bubble columns plus the
/// element bubbles. `os_bubbles` is required for `k = 3` and ignored otherwise.
pub fn solve_variant(
    online: &OnlineData,
    basis: &EdgeBasisSet,
    os_bubbles: Option<&[EdgeFunction]>,
    k: u8,
) -> Result<(FineFunction, GalerkinSpace)> {
    let os = match k {
        1 | 2 => None,
        3 => Some(os_bubbles.ok_or_else(|| Error::Config("variant 3 needs oversampling bubbles".into()))?),
        _ => return Err(Error::Config(format!("unknown variant {k}"))),
    };
    let space = build_space(online.g, online.field, online.schur, basis, os)?;
    let (_, mut u) = online.solve(&space)?;
    if k >= 2 {
        u.axpy(1.0, &online.bubble);
    }
    Ok((u, space))
}

/// Largest normalized Galerkin defect `|a(u_ref - u_H, phi)| / (|u_ref| |phi|)`
/// over the basis, evaluated with fine-scale basis functions.
pub fn residual_orthogonality_check(
    online: &OnlineData,
    space: &GalerkinSpace,
    u_h: &FineFunction,
    u_ref: &FineFunction,
) -> Result<f64> {
    let (g, field) = (online.g, online.field);
    let diff = u_ref.sub(u_h);
    let norm_ref = energy_norm(field, u_ref)?;
    if norm_ref == 0.0 {
        return Ok(0.0);
    }
    let defects = try_par_map(space.dim(), |j| {
        let mut c = vec![0.0; space.dim()];
        c[j] = 1.0;
        let (mut num, mut den) = (0.0, 0.0);
        for t in space.support(g, j) {
            let patch = element_patch(g, field, online.cache, t)?;
            let phi = patch.harmonic_extension(&space.element_trace_of(g, online.schur, t, &c))?;
            let d = gather_rect(&diff, patch.rect);
            num += patch.energy_bilinear(&d, &phi);
            den += patch.energy_bilinear(&phi, &phi);
        }
        Ok::<_, Error>(num.abs() / (norm_ref * den.sqrt()))
    })?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}

/// Per-edge indicators `lambda_{e, m_e + 1} * |u|_{a, omega_e}` (zero when no
/// further singular value is available).
pub fn edge_indicators(
    g: &GridHierarchy,
    field: &CoefficientField,
    basis: &EdgeBasisSet,
    u: &FineFunction,
) -> Vec<f64> {
    par_map(g.num_edges(), |e| {
        let b = &basis.edges[e];
        let Some(&lam) = b.lambda.get(b.modes.len()) else { return 0.0 };
        let r = FineRect::from_coarse(g, g.oversampling_rect(e));
        let mut energy = 0.0;
        for cy in r.y0..r.y1 {
            for cx in r.x0..r.x1 {
                let a = field.cell(cx, cy);
                let v = [u.at(cx, cy), u.at(cx + 1, cy), u.at(cx, cy + 1), u.at(cx + 1, cy + 1)];
                for i in 0..4 {
                    for j in 0..4 {
                        energy += a * crate::fem::Q1_STIFFNESS[i][j] * v[i] * v[j];
                    }
                }
            }
        }
        lam * energy.max(0.0).sqrt()
    })
}
