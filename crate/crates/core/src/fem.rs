//! Q1 finite elements on the fine grid: element matrices, load vectors,
//! local Dirichlet/Neumann patches with cached factorizations, discrete norms
//! and the global reference solve.
//!
//! Local node order inside a fine cell is `(0,0), (1,0), (0,1), (1,1)`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::json;

use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::mesh::{CoarseRect, GridHierarchy};
use crate::sparse::{nested_dissection, Ordering, SparseCholesky, SymCsc, SymbolicFactor};

/// Bilinear stiffness on a square for unit coefficient (independent of the side length).
pub const Q1_STIFFNESS: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

const Q1_MASS: [[f64; 4]; 4] = [
    [4.0, 2.0, 2.0, 1.0],
    [2.0, 4.0, 1.0, 2.0],
    [2.0, 1.0, 4.0, 2.0],
    [1.0, 2.0, 2.0, 4.0],
];

const CELL_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

pub fn cell_stiffness(a_cell: f64, _h: f64) -> [[f64; 4]; 4] {
    let mut k = Q1_STIFFNESS;
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v *= a_cell;
        }
    }
    k
}

pub fn cell_mass(h: f64) -> [[f64; 4]; 4] {
    let mut m = Q1_MASS;
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v *= h * h / 36.0;
        }
    }
    m
}

/// Right-hand side `f(x)` evaluated pointwise.
pub type Rhs<'a> = &'a (dyn Fn([f64; 2]) -> f64 + Sync);

/// Load contributions of fine cell `(cx, cy)` to its four nodes (2x2 Gauss).
pub fn cell_load(f: Rhs, h: f64, cx: usize, cy: usize) -> [f64; 4] {
    let q = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let w = h * h / 4.0;
    let mut local = [0.0; 4];
    for &qy in &q {
        for &qx in &q {
            let fx = f([(cx as f64 + qx) * h, (cy as f64 + qy) * h]) * w;
            let phi = [(1.0 - qx) * (1.0 - qy), qx * (1.0 - qy), (1.0 - qx) * qy, qx * qy];
            for k in 0..4 {
                local[k] += fx * phi[k];
            }
        }
    }
    local
}

/// Load vector over all fine nodes (boundary entries included; callers
/// ignore them).
pub fn load_vector(g: &GridHierarchy, f: Rhs) -> Vec<f64> {
    let nf = g.nf();
    let h = g.fine_h();
    let mut b = vec![0.0; (nf + 1) * (nf + 1)];
    for cy in 0..nf {
        for cx in 0..nf {
            let local = cell_load(f, h, cx, cy);
            for (k, &(dx, dy)) in CELL_OFFSETS.iter().enumerate() {
                b[(cy + dy) * (nf + 1) + cx + dx] += local[k];
            }
        }
    }
    b
}

/// Load assembled from the cells of `rect` only, on the rectangle's nodes (row-major).
pub fn rect_load(f: Rhs, h: f64, rect: FineRect) -> Vec<f64> {
    let w = rect.nx() + 1;
    let mut b = vec![0.0; rect.num_nodes()];
    for cy in rect.y0..rect.y1 {
        for cx in rect.x0..rect.x1 {
            let local = cell_load(f, h, cx, cy);
            for (k, &(dx, dy)) in CELL_OFFSETS.iter().enumerate() {
                b[(cy + dy - rect.y0) * w + cx + dx - rect.x0] += local[k];
            }
        }
    }
    b
}

/// Values at all fine nodes, row-major `gy * (nf + 1) + gx`.
#[derive(Clone, Debug, PartialEq)]
pub struct FineFunction {
    pub nf: usize,
    pub values: Vec<f64>,
}

impl FineFunction {
    pub fn zeros(nf: usize) -> Self {
        Self { nf, values: vec![0.0; (nf + 1) * (nf + 1)] }
    }

    /// Nodal interpolant, forced to zero on the domain boundary.
    pub fn interpolate(nf: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        let h = 1.0 / nf as f64;
        let mut u = Self::zeros(nf);
        for gy in 1..nf {
            for gx in 1..nf {
                u.values[gy * (nf + 1) + gx] = f([gx as f64 * h, gy as f64 * h]);
            }
        }
        u
    }

    pub fn at(&self, gx: usize, gy: usize) -> f64 {
        self.values[gy * (self.nf + 1) + gx]
    }

    pub fn axpy(&mut self, alpha: f64, other: &FineFunction) {
        for (u, v) in self.values.iter_mut().zip(&other.values) {
            *u += alpha * v;
        }
    }

    pub fn sub(&self, other: &FineFunction) -> FineFunction {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn boundary_max_abs(&self) -> f64 {
        let nf = self.nf;
        let mut m: f64 = 0.0;
        for k in 0..=nf {
            for (x, y) in [(k, 0), (k, nf), (0, k), (nf, k)] {
                m = m.max(self.at(x, y).abs());
            }
        }
        m
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json`.
    pub fn export(&self, dir: &Path, stem: &str, description: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        let sidecar = json!({ "nf": self.nf, "description": description });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }
}

fn check_len(field: &CoefficientField, u: &FineFunction) -> Result<()> {
    let n = (field.nf() + 1) * (field.nf() + 1);
    if u.nf != field.nf() || u.values.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: u.values.len() });
    }
    Ok(())
}

fn cell_form(nf: usize, u: &[f64], v: &[f64], mut weight: impl FnMut(usize, usize) -> ([[f64; 4]; 4], f64)) -> f64 {
    let mut total = 0.0;
    for cy in 0..nf {
        let mut row = 0.0;
        for cx in 0..nf {
            let base = cy * (nf + 1) + cx;
            let idx = [base, base + 1, base + nf + 1, base + nf + 2];
            let (m, scale) = weight(cx, cy);
            let mut s = 0.0;
            for i in 0..4 {
                let ui = u[idx[i]];
                let mut mv = 0.0;
                for j in 0..4 {
                    mv += m[i][j] * v[idx[j]];
                }
                s += ui * mv;
            }
            row += scale * s;
        }
        total += row;
    }
    total
}

/// `∫ a ∇u · ∇v` over the whole domain.
pub fn energy_inner(field: &CoefficientField, u: &FineFunction, v: &FineFunction) -> Result<f64> {
    check_len(field, u)?;
    check_len(field, v)?;
    Ok(cell_form(field.nf(), &u.values, &v.values, |cx, cy| (Q1_STIFFNESS, field.cell(cx, cy))))
}

pub fn energy_norm(field: &CoefficientField, u: &FineFunction) -> Result<f64> {
    Ok(energy_inner(field, u, u)?.max(0.0).sqrt())
}

pub fn l2_norm(u: &FineFunction) -> f64 {
    let h = 1.0 / u.nf as f64;
    cell_form(u.nf, &u.values, &u.values, |_, _| (Q1_MASS, h * h / 36.0))
        .max(0.0)
        .sqrt()
}

/// Fine-node rectangle `[x0, x1] x [y0, y1]` (inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FineRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl FineRect {
    pub fn from_coarse(g: &GridHierarchy, r: CoarseRect) -> Self {
        let s = g.ratio();
        Self { x0: r.ex0 * s, x1: r.ex1 * s, y0: r.ey0 * s, y1: r.ey1 * s }
    }

    pub fn whole(nf: usize) -> Self {
        Self { x0: 0, x1: nf, y0: 0, y1: nf }
    }

    pub fn nx(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn ny(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx() + 1) * (self.ny() + 1)
    }

    pub fn local(&self, gx: usize, gy: usize) -> usize {
        (gy - self.y0) * (self.nx() + 1) + gx - self.x0
    }

    pub fn contains(&self, gx: usize, gy: usize) -> bool {
        (self.x0..=self.x1).contains(&gx) && (self.y0..=self.y1).contains(&gy)
    }

    pub fn on_perimeter(&self, gx: usize, gy: usize) -> bool {
        self.contains(gx, gy) && (gx == self.x0 || gx == self.x1 || gy == self.y0 || gy == self.y1)
    }

    /// Perimeter nodes counter-clockwise from `(x0, y0)`; `2 (nx + ny)` entries.
    pub fn perimeter(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * (self.nx() + self.ny()));
        out.extend((self.x0..self.x1).map(|x| (x, self.y0)));
        out.extend((self.y0..self.y1).map(|y| (self.x1, y)));
        out.extend((self.x0 + 1..=self.x1).rev().map(|x| (x, self.y1)));
        out.extend((self.y0 + 1..=self.y1).rev().map(|y| (self.x0, y)));
        out
    }

    /// Which sides lie on the domain boundary: `[bottom, right, top, left]`.
    pub fn touches(&self, nf: usize) -> [bool; 4] {
        [self.y0 == 0, self.x1 == nf, self.y1 == nf, self.x0 == 0]
    }
}

/// Boundary treatment of the patch perimeter (the domain boundary always
/// carries homogeneous Dirichlet values).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatchKind {
    /// Perimeter values are prescribed; unknowns are the strictly interior nodes.
    Dirichlet,
    /// Natural boundary condition on the parts of the perimeter inside the
    /// domain. If the patch does not touch the domain boundary one node is
    /// pinned to zero to remove the constant nullspace.
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct PatchKey {
    kind: PatchKind,
    nx: usize,
    ny: usize,
    touches: [bool; 4],
}

/// Shared symbolic factorizations, keyed by patch shape.
#[derive(Default, Debug)]
pub struct SymbolicCache {
    map: Mutex<HashMap<PatchKey, SymbolicFactor>>,
}

impl SymbolicCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_insert(
        &self,
        key: PatchKey,
        build: impl FnOnce() -> Result<SymbolicFactor>,
    ) -> Result<SymbolicFactor> {
        if let Some(s) = self.map.lock().unwrap().get(&key) {
            return Ok(s.clone());
        }
        let s = build()?;
        Ok(self.map.lock().unwrap().entry(key).or_insert(s).clone())
    }
}

/// A rectangle of fine cells with its assembled and factorized stiffness
/// block on the patch unknowns.
#[derive(Clone, Debug)]
pub struct LocalPatch {
    pub rect: FineRect,
    pub kind: PatchKind,
    nf: usize,
    /// Local node → unknown index (`usize::MAX` if not an unknown).
    dof: Vec<usize>,
    /// Unknown index → local node.
    nodes: Vec<usize>,
    coeff: Vec<f64>,
    matrix: SymCsc,
    factor: Arc<SparseCholesky>,
}

const NONE: usize = usize::MAX;

impl LocalPatch {
    pub fn assemble(
        g: &GridHierarchy,
        field: &CoefficientField,
        rect: FineRect,
        kind: PatchKind,
        cache: Option<&SymbolicCache>,
    ) -> Result<Self> {
        let nf = g.nf();
        if field.nf() != nf {
            return Err(Error::DimensionMismatch { expected: nf, got: field.nf() });
        }
        let touches = rect.touches(nf);
        let pin = kind == PatchKind::Neumann && !touches.iter().any(|&t| t);
        let is_dof = |gx: usize, gy: usize| -> bool {
            if g.is_domain_boundary_node(gx, gy) {
                return false;
            }
            match kind {
                PatchKind::Dirichlet => !rect.on_perimeter(gx, gy),
                PatchKind::Neumann => !(pin && gx == rect.x0 && gy == rect.y0),
            }
        };
        let mut dof = vec![NONE; rect.num_nodes()];
        let mut nodes = Vec::new();
        for gy in rect.y0..=rect.y1 {
            for gx in rect.x0..=rect.x1 {
                if is_dof(gx, gy) {
                    let l = rect.local(gx, gy);
                    dof[l] = nodes.len();
                    nodes.push(l);
                }
            }
        }
        let n = nodes.len();
        let mut coeff = Vec::with_capacity(rect.nx() * rect.ny());
        let mut triplets = Vec::with_capacity(rect.nx() * rect.ny() * 10);
        let w = rect.nx() + 1;
        for cy in 0..rect.ny() {
            for cx in 0..rect.nx() {
                let a = field.cell(rect.x0 + cx, rect.y0 + cy);
                coeff.push(a);
                let base = cy * w + cx;
                let idx = [base, base + 1, base + w, base + w + 1];
                for i in 0..4 {
                    let di = dof[idx[i]];
                    if di == NONE {
                        continue;
                    }
                    for j in 0..4 {
                        let dj = dof[idx[j]];
                        if dj != NONE && dj <= di {
                            triplets.push((di, dj, a * Q1_STIFFNESS[i][j]));
                        }
                    }
                }
            }
        }
        let matrix = SymCsc::from_triplets(n, &triplets);
        let key = PatchKey { kind, nx: rect.nx(), ny: rect.ny(), touches };
        let analyze = || {
            let order = nested_dissection(
                rect.nx(),
                rect.ny(),
                |x, y| dof[y * w + x] != NONE,
                |x, y| dof[y * w + x],
            );
            SymbolicFactor::analyze(&matrix, &Ordering::Custom(order))
        };
        let symbolic = match cache {
            Some(c) => c.get_or_insert(key, analyze)?,
            None => analyze()?,
        };
        let factor = SparseCholesky::with_symbolic(symbolic, &matrix)?;
        Ok(Self { rect, kind, nf, dof, nodes, coeff, matrix, factor: Arc::new(factor) })
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes.len()
    }

    pub fn dof_of(&self, gx: usize, gy: usize) -> Option<usize> {
        if !self.rect.contains(gx, gy) {
            return None;
        }
        let d = self.dof[self.rect.local(gx, gy)];
        (d != NONE).then_some(d)
    }

    /// Fine coordinates of an unknown.
    pub fn dof_coords(&self, d: usize) -> (usize, usize) {
        let l = self.nodes[d];
        let w = self.rect.nx() + 1;
        (self.rect.x0 + l % w, self.rect.y0 + l / w)
    }

    pub fn matrix(&self) -> &SymCsc {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }

    /// Solves in place for a column-major block of right-hand sides.
    pub fn solve_block(&self, rhs: &mut [f64], ncols: usize) {
        self.factor.solve_block(rhs, ncols)
    }

    fn cells(&self) -> impl Iterator<Item = ([usize; 4], f64)> + '_ {
        let w = self.rect.nx() + 1;
        let nx = self.rect.nx();
        self.coeff.iter().enumerate().map(move |(c, &a)| {
            let (cx, cy) = (c % nx, c / nx);
            let base = cy * w + cx;
            ([base, base + 1, base + w, base + w + 1], a)
        })
    }

    /// Restricts a global fine-node vector (e.g. a load) to the unknowns.
    pub fn gather(&self, global: &[f64]) -> Vec<f64> {
        (0..self.num_dofs())
            .map(|d| {
                let (gx, gy) = self.dof_coords(d);
                global[gy * (self.nf + 1) + gx]
            })
            .collect()
    }

    /// Local-rect vector (row-major over the rectangle) from unknown values,
    /// with `fill` supplying the remaining nodes.
    pub fn expand(&self, x: &[f64], fill: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let w = self.rect.nx() + 1;
        (0..self.rect.num_nodes())
            .map(|l| match self.dof[l] {
                NONE => fill(self.rect.x0 + l % w, self.rect.y0 + l / w),
                d => x[d],
            })
            .collect()
    }

    /// Discrete a-harmonic extension of Dirichlet data given on the patch
    /// perimeter (in [`FineRect::perimeter`] order). Values on the domain
    /// boundary are taken as zero. Returns values on the whole rectangle.
    pub fn harmonic_extension(&self, boundary: &[f64]) -> Result<Vec<f64>> {
        let per = self.rect.perimeter();
        if boundary.len() != per.len() {
            return Err(Error::DimensionMismatch { expected: per.len(), got: boundary.len() });
        }
        let mut known = vec![0.0; self.rect.num_nodes()];
        for (&(gx, gy), &v) in per.iter().zip(boundary) {
            if !(gx == 0 || gy == 0 || gx == self.nf || gy == self.nf) {
                known[self.rect.local(gx, gy)] = v;
            }
        }
        let mut rhs = vec![0.0; self.num_dofs()];
        for (idx, a) in self.cells() {
            for i in 0..4 {
                let di = self.dof[idx[i]];
                if di == NONE {
                    continue;
                }
                for j in 0..4 {
                    if self.dof[idx[j]] == NONE {
                        rhs[di] -= a * Q1_STIFFNESS[i][j] * known[idx[j]];
                    }
                }
            }
        }
        let x = self.solve(&rhs);
        let w = self.rect.nx() + 1;
        Ok(self.expand(&x, |gx, gy| known[(gy - self.rect.y0) * w + gx - self.rect.x0]))
    }

    /// Local Dirichlet solve with the given global load vector and zero
    /// values on every non-unknown node. Returns values on the rectangle.
    pub fn bubble(&self, load: &[f64]) -> Vec<f64> {
        let x = self.solve(&self.gather(load));
        self.expand(&x, |_, _| 0.0)
    }

    /// Schur complement of the patch stiffness onto a set of non-unknown
    /// nodes, together with the discrete harmonic extension operator.
    ///
    /// Returns `(S, X)` with `S` dense `nb x nb` (row-major) and `X` of size
    /// `num_dofs x nb` (column-major): column `p` holds the unknown values of
    /// the extension of the unit vector on boundary node `p`.
    pub fn schur_complement(&self, boundary: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
        let nb = boundary.len();
        let n = self.num_dofs();
        let mut bpos = vec![NONE; self.rect.num_nodes()];
        for (p, &(gx, gy)) in boundary.iter().enumerate() {
            bpos[self.rect.local(gx, gy)] = p;
        }
        let mut s = vec![0.0; nb * nb];
        let mut x = vec![0.0; n * nb];
        for (idx, a) in self.cells() {
            for i in 0..4 {
                for j in 0..4 {
                    let k = a * Q1_STIFFNESS[i][j];
                    let (di, pj) = (self.dof[idx[i]], bpos[idx[j]]);
                    if di != NONE && pj != NONE {
                        x[pj * n + di] -= k;
                    }
                    let pi = bpos[idx[i]];
                    if pi != NONE && pj != NONE {
                        s[pi * nb + pj] += k;
                    }
                }
            }
        }
        self.solve_block(&mut x, nb);
        for (idx, a) in self.cells() {
            for i in 0..4 {
                let pq = bpos[idx[i]];
                if pq == NONE {
                    continue;
                }
                for j in 0..4 {
                    let dj = self.dof[idx[j]];
                    if dj == NONE {
                        continue;
                    }
                    let k = a * Q1_STIFFNESS[i][j];
                    for p in 0..nb {
                        s[pq * nb + p] += k * x[p * n + dj];
                    }
                }
            }
        }
        // symmetrize rounding noise
        for i in 0..nb {
            for j in 0..i {
                let m = 0.5 * (s[i * nb + j] + s[j * nb + i]);
                s[i * nb + j] = m;
                s[j * nb + i] = m;
            }
        }
        (s, x)
    }

    /// Energy `∫_patch a |∇u|²` of rectangle values.
    pub fn energy(&self, local: &[f64]) -> f64 {
        let mut e = 0.0;
        for (idx, a) in self.cells() {
            for i in 0..4 {
                for j in 0..4 {
                    e += a * Q1_STIFFNESS[i][j] * local[idx[i]] * local[idx[j]];
                }
            }
        }
        e
    }

    /// `∫_patch a ∇u · ∇v` of rectangle values.
    pub fn energy_bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut e = 0.0;
        for (idx, a) in self.cells() {
            for i in 0..4 {
                for j in 0..4 {
                    e += a * Q1_STIFFNESS[i][j] * u[idx[i]] * v[idx[j]];
                }
            }
        }
        e
    }

    /// `(A_BI u)` for boundary nodes: the coupling of interior values `u`
    /// (given per unknown) into the listed non-unknown nodes.
    pub fn boundary_coupling(&self, boundary: &[(usize, usize)], u: &[f64]) -> Vec<f64> {
        let mut bpos = vec![NONE; self.rect.num_nodes()];
        for (p, &(gx, gy)) in boundary.iter().enumerate() {
            bpos[self.rect.local(gx, gy)] = p;
        }
        let mut out = vec![0.0; boundary.len()];
        for (idx, a) in self.cells() {
            for i in 0..4 {
                let p = bpos[idx[i]];
                if p == NONE {
                    continue;
                }
                for j in 0..4 {
                    let d = self.dof[idx[j]];
                    if d != NONE {
                        out[p] += a * Q1_STIFFNESS[i][j] * u[d];
                    }
                }
            }
        }
        out
    }
}

/// Writes rectangle values into a global fine function (overwriting).
pub fn scatter(u: &mut FineFunction, rect: FineRect, local: &[f64]) {
    let nf = u.nf;
    let w = rect.nx() + 1;
    for (l, &v) in local.iter().enumerate() {
        let (gx, gy) = (rect.x0 + l % w, rect.y0 + l / w);
        u.values[gy * (nf + 1) + gx] = v;
    }
}

/// Values of a global function on a rectangle, row-major.
pub fn gather_rect(u: &FineFunction, rect: FineRect) -> Vec<f64> {
    let mut out = Vec::with_capacity(rect.num_nodes());
    for gy in rect.y0..=rect.y1 {
        for gx in rect.x0..=rect.x1 {
            out.push(u.at(gx, gy));
        }
    }
    out
}

pub fn element_patch(
    g: &GridHierarchy,
    field: &CoefficientField,
    cache: &SymbolicCache,
    t: usize,
) -> Result<LocalPatch> {
    let rect = FineRect::from_coarse(g, g.element_rect(t));
    LocalPatch::assemble(g, field, rect, PatchKind::Dirichlet, Some(cache))
}

/// Element-wise a-harmonic extension of the skeleton trace of `u`.
pub fn harmonic_part(
    g: &GridHierarchy,
    field: &CoefficientField,
    cache: &SymbolicCache,
    u: &FineFunction,
) -> Result<FineFunction> {
    let locals = crate::util::try_par_map(g.num_elements(), |t| {
        let patch = element_patch(g, field, cache, t)?;
        let trace: Vec<f64> = patch.rect.perimeter().iter().map(|&(x, y)| u.at(x, y)).collect();
        patch.harmonic_extension(&trace)
    })?;
    let mut out = FineFunction::zeros(g.nf());
    for (t, local) in locals.iter().enumerate() {
        scatter(&mut out, FineRect::from_coarse(g, g.element_rect(t)), local);
    }
    Ok(out)
}

/// Sum of the local Dirichlet solves of the load on every coarse element.
pub fn elementwise_bubble(
    g: &GridHierarchy,
    field: &CoefficientField,
    cache: &SymbolicCache,
    load: &[f64],
) -> Result<FineFunction> {
    let locals = crate::util::try_par_map(g.num_elements(), |t| {
        Ok::<_, Error>(element_patch(g, field, cache, t)?.bubble(load))
    })?;
    let mut out = FineFunction::zeros(g.nf());
    for (t, local) in locals.iter().enumerate() {
        scatter(&mut out, FineRect::from_coarse(g, g.element_rect(t)), local);
    }
    Ok(out)
}

/// Fine-grid Galerkin solution of the full Dirichlet problem.
pub fn reference_solve(g: &GridHierarchy, field: &CoefficientField, f: Rhs) -> Result<FineFunction> {
    let load = load_vector(g, f);
    reference_solve_load(g, field, &load)
}

pub fn reference_solve_load(g: &GridHierarchy, field: &CoefficientField, load: &[f64]) -> Result<FineFunction> {
    let nf = g.nf();
    let patch = LocalPatch::assemble(g, field, FineRect::whole(nf), PatchKind::Dirichlet, None)?;
    let mut u = FineFunction::zeros(nf);
    scatter(&mut u, FineRect::whole(nf), &patch.bubble(load));
    Ok(u)
}

/// Position of a fine node on the perimeter of an `s x s` element, in
/// [`FineRect::perimeter`] order, from element-local coordinates.
pub fn perimeter_pos(s: usize, lx: usize, ly: usize) -> usize {
    if ly == 0 {
        lx
    } else if lx == s {
        s + ly
    } else if ly == s {
        3 * s - lx
    } else {
        debug_assert_eq!(lx, 0);
        4 * s - ly
    }
}

/// Dense Schur complement of every coarse element onto its `4s` perimeter
/// nodes (the discrete Dirichlet-to-Neumann energy of the element).
#[derive(Clone, Debug)]
pub struct ElementSchur {
    pub s: usize,
    mats: Vec<Vec<f64>>,
}

impl ElementSchur {
    pub fn compute(g: &GridHierarchy, field: &CoefficientField, cache: &SymbolicCache) -> Result<Self> {
        let mats = crate::util::try_par_map(g.num_elements(), |t| {
            let rect = FineRect::from_coarse(g, g.element_rect(t));
            let patch = LocalPatch::assemble(g, field, rect, PatchKind::Dirichlet, Some(cache))?;
            Ok::<_, Error>(patch.schur_complement(&rect.perimeter()).0)
        })?;
        Ok(Self { s: g.ratio(), mats })
    }

    /// Row-major `4s x 4s` matrix of element `t`.
    pub fn get(&self, t: usize) -> &[f64] {
        &self.mats[t]
    }

    pub fn size(&self) -> usize {
        4 * self.s
    }

    /// Perimeter positions of the `s + 1` fine nodes of edge `e` inside element `t`.
    pub fn edge_positions(&self, g: &GridHierarchy, t: usize, e: usize) -> Vec<usize> {
        let (ex, ey) = g.element_coords(t);
        let s = self.s;
        g.edge_fine_coords(e)
            .into_iter()
            .map(|(gx, gy)| perimeter_pos(s, gx - ex * s, gy - ey * s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{build_multiscale_trig, build_unit};
    use std::f64::consts::PI;

    #[test]
    fn element_matrices() {
        let k = cell_stiffness(1.0, 0.37);
        for i in 0..4 {
            assert!((k[i].iter().sum::<f64>()).abs() < 1e-15);
            assert!((k[i][i] - 2.0 / 3.0).abs() < 1e-15);
            for j in 0..4 {
                assert_eq!(k[i][j], k[j][i]);
                assert_eq!(cell_stiffness(5.0, 1.0)[i][j], 5.0 * k[i][j]);
            }
        }
        let m = cell_mass(0.5);
        let total: f64 = m.iter().flatten().sum();
        assert!((total - 0.25).abs() < 1e-15);
    }

    #[test]
    fn perimeter_positions_agree() {
        let r = FineRect { x0: 0, x1: 5, y0: 0, y1: 5 };
        for (p, (x, y)) in r.perimeter().into_iter().enumerate() {
            assert_eq!(perimeter_pos(5, x, y), p);
        }
    }

    #[test]
    fn perimeter_order() {
        let r = FineRect { x0: 2, x1: 4, y0: 1, y1: 2 };
        assert_eq!(
            r.perimeter(),
            vec![(2, 1), (3, 1), (4, 1), (4, 2), (3, 2), (2, 2)]
        );
    }

    #[test]
    fn linear_data_is_reproduced() {
        let g = GridHierarchy::new(8, 32).unwrap();
        let field = build_unit(&g);
        // interior horizontal edge, oversampling block away from the boundary
        let rect = FineRect::from_coarse(&g, g.oversampling_rect(3 * 8 + 3));
        assert!(!rect.touches(32).contains(&true));
        let patch = LocalPatch::assemble(&g, &field, rect, PatchKind::Dirichlet, None).unwrap();
        let h = g.fine_h();
        let data: Vec<f64> = rect.perimeter().iter().map(|&(x, _)| 3.0 + x as f64 * h).collect();
        let ext = patch.harmonic_extension(&data).unwrap();
        let w = rect.nx() + 1;
        for (l, v) in ext.iter().enumerate() {
            let x = (rect.x0 + l % w) as f64 * h;
            assert!((v - (3.0 + x)).abs() < 1e-12);
        }
    }

    #[test]
    fn schur_energy_matches_extension() {
        let g = GridHierarchy::new(2, 8).unwrap();
        let field = build_multiscale_trig(&g);
        let rect = FineRect::from_coarse(&g, g.element_rect(3));
        let patch = LocalPatch::assemble(&g, &field, rect, PatchKind::Dirichlet, None).unwrap();
        let per = rect.perimeter();
        let (s, _) = patch.schur_complement(&per);
        let data: Vec<f64> = (0..per.len()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let ext = patch.harmonic_extension(&data).unwrap();
        // zero the domain-boundary entries as the extension does
        let data: Vec<f64> = per
            .iter()
            .zip(&data)
            .map(|(&(x, y), &v)| if g.is_domain_boundary_node(x, y) { 0.0 } else { v })
            .collect();
        let nb = per.len();
        let quad: f64 = (0..nb)
            .map(|i| (0..nb).map(|j| data[i] * s[i * nb + j] * data[j]).sum::<f64>())
            .sum();
        let direct = patch.energy(&ext);
        assert!((quad - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn sine_energy() {
        let nf = 64;
        let g = GridHierarchy::new(2, nf).unwrap();
        let field = build_unit(&g);
        let u = FineFunction::interpolate(nf, |x| (PI * x[0]).sin() * (PI * x[1]).sin());
        let e = energy_inner(&field, &u, &u).unwrap();
        assert!((e - PI * PI / 2.0).abs() / (PI * PI / 2.0) < 0.01);
        assert!((l2_norm(&u) - 0.5).abs() < 0.01);
    }

    #[test]
    fn reference_sign_and_zero() {
        let g = GridHierarchy::new(2, 16).unwrap();
        let field = build_unit(&g);
        let u = reference_solve(&g, &field, &|_| 0.0).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        let u = reference_solve(&g, &field, &|_| -1.0).unwrap();
        assert!(u.values.iter().all(|&v| v <= 0.0));
        assert!(u.max_abs() > 0.0);
    }
}
