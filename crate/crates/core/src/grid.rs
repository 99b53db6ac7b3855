//! Rectangular lattices, node and cell fields, forward differences and local
//! norms.
//!
//! Nodes are numbered with axis 0 varying fastest. A cell is identified with
//! its lower-left node; its gradient holds the forward differences taken from
//! that node, so for `n = 2` only three of its four corners enter `D_h u`.
//! This is the stencil whose adjoint is the backward divergence used by the
//! solver and the duality certificates.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::CompensatedSum;

/// A uniform lattice on a rectangle of dimension `n ∈ {1, 2}` carrying maps
/// into `R^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
    target_dim: usize,
}

impl Lattice {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>, target_dim: usize) -> Result<Self> {
        let n = lower.len();
        if !(1..=2).contains(&n) {
            return Err(LabError::param("dim", format!("lattice dimension must be 1 or 2, got {n}")));
        }
        if upper.len() != n || nodes.len() != n {
            return Err(LabError::param("bounds", "lower, upper and nodes must have equal length"));
        }
        if target_dim == 0 {
            return Err(LabError::param("target_dim", "target dimension must be at least 1"));
        }
        for a in 0..n {
            if !lower[a].is_finite() || !upper[a].is_finite() || lower[a] >= upper[a] {
                return Err(LabError::param("bounds", format!("axis {a}: need finite lower < upper")));
            }
            if nodes[a] < 3 {
                return Err(LabError::param("nodes", format!("axis {a}: need at least 3 nodes")));
            }
        }
        Ok(Self { lower, upper, nodes, target_dim })
    }

    /// `[0,1]^n` with `nodes` nodes per axis.
    pub fn unit_cube(dim: usize, nodes: usize, target_dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim], vec![nodes; dim], target_dim)
    }

    pub fn square(lower: f64, upper: f64, nodes: usize, target_dim: usize) -> Result<Self> {
        Self::new(vec![lower; 2], vec![upper; 2], vec![nodes; 2], target_dim)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.nodes[axis] - 1
    }

    pub fn cell_count(&self) -> usize {
        self.nodes.iter().map(|m| m - 1).product()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.upper[a] - self.lower[a]).product()
    }

    /// Linear index stride of a node step along `axis`.
    pub fn node_stride(&self, axis: usize) -> usize {
        self.nodes[..axis].iter().product()
    }

    pub fn node_multi(&self, idx: usize) -> [usize; 2] {
        let mut out = [0usize; 2];
        let mut rest = idx;
        for a in 0..self.dim() {
            out[a] = rest % self.nodes[a];
            rest /= self.nodes[a];
        }
        out
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim() {
            idx += multi[a] * stride;
            stride *= self.nodes[a];
        }
        idx
    }

    pub fn cell_multi(&self, idx: usize) -> [usize; 2] {
        let mut out = [0usize; 2];
        let mut rest = idx;
        for a in 0..self.dim() {
            let c = self.nodes[a] - 1;
            out[a] = rest % c;
            rest /= c;
        }
        out
    }

    pub fn cell_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim() {
            idx += multi[a] * stride;
            stride *= self.nodes[a] - 1;
        }
        idx
    }

    /// Lower-left node of a cell.
    pub fn cell_base_node(&self, cell: usize) -> usize {
        let m = self.cell_multi(cell);
        self.node_index(&m[..self.dim()])
    }

    pub fn node_coords(&self, idx: usize) -> [f64; 2] {
        let m = self.node_multi(idx);
        let mut x = [0.0; 2];
        for a in 0..self.dim() {
            x[a] = self.lower[a] + m[a] as f64 * self.spacing(a);
        }
        x
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let m = self.cell_multi(cell);
        let mut x = [0.0; 2];
        for a in 0..self.dim() {
            x[a] = self.lower[a] + (m[a] as f64 + 0.5) * self.spacing(a);
        }
        x
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        let m = self.node_multi(idx);
        (0..self.dim()).any(|a| m[a] == 0 || m[a] + 1 == self.nodes[a])
    }

    /// Indices of interior (free) nodes in increasing order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| !self.is_boundary_node(i)).collect()
    }

    /// True when `fine` refines `self` by an integer factor on the same rectangle.
    pub fn is_refined_by(&self, fine: &Lattice) -> bool {
        if self.dim() != fine.dim() {
            return false;
        }
        (0..self.dim()).all(|a| {
            let same_bounds = (self.lower[a] - fine.lower[a]).abs() <= 1e-12 * (1.0 + self.lower[a].abs())
                && (self.upper[a] - fine.upper[a]).abs() <= 1e-12 * (1.0 + self.upper[a].abs());
            let (c, f) = (self.nodes[a] - 1, fine.nodes[a] - 1);
            same_bounds && f >= c && f % c == 0
        })
    }

    fn with_axis(&self, axis: usize, lower: f64, upper: f64, nodes: usize) -> Result<Lattice> {
        let mut l = self.clone();
        l.lower[axis] = lower;
        l.upper[axis] = upper;
        l.nodes[axis] = nodes;
        Lattice::new(l.lower, l.upper, l.nodes, l.target_dim)
    }

    /// Sub-lattice of nodes `[first, first + count)` along every axis.
    pub fn sub_lattice(&self, first: &[usize], count: &[usize]) -> Result<Lattice> {
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            if first[a] + count[a] > self.nodes[a] {
                return Err(LabError::param("sub_lattice", "window exceeds lattice"));
            }
            let h = self.spacing(a);
            lower.push(self.lower[a] + first[a] as f64 * h);
            upper.push(self.lower[a] + (first[a] + count[a] - 1) as f64 * h);
        }
        Lattice::new(lower, upper, count.to_vec(), self.target_dim)
    }
}

/// A closed ball; membership of a cell is decided by its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallRegion {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(LabError::param("radius", "ball radius must be positive and finite"));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(LabError::param("center", "ball center must be finite"));
        }
        Ok(Self { center, radius })
    }

    /// A ball containing every cell center of `lattice`.
    pub fn covering(lattice: &Lattice) -> Self {
        let center: Vec<f64> = (0..lattice.dim()).map(|a| 0.5 * (lattice.lower()[a] + lattice.upper()[a])).collect();
        let radius = (0..lattice.dim()).map(|a| (lattice.upper()[a] - lattice.lower()[a]).powi(2)).sum::<f64>().sqrt();
        Self { center, radius }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let d2: f64 = self.center.iter().zip(x).map(|(c, x)| (x - c) * (x - c)).sum();
        d2 <= self.radius * self.radius
    }

    /// Distance from the ball to the boundary of the lattice rectangle
    /// (negative when the ball sticks out).
    pub fn clearance(&self, lattice: &Lattice) -> f64 {
        (0..lattice.dim())
            .map(|a| {
                let lo = self.center[a] - self.radius - lattice.lower()[a];
                let hi = lattice.upper()[a] - self.center[a] - self.radius;
                lo.min(hi)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// A map from lattice nodes into `R^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    lattice: Lattice,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        let expect = lattice.node_count() * lattice.target_dim();
        if values.len() != expect {
            return Err(LabError::ShapeMismatch(format!("node field needs {expect} values, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { what: "node field", index: i / lattice.target_dim() });
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        let len = lattice.node_count() * lattice.target_dim();
        Self { lattice, values: vec![0.0; len] }
    }

    /// Samples `f(x, out)` at every node.
    pub fn from_fn(lattice: Lattice, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let big_n = lattice.target_dim();
        let dim = lattice.dim();
        let mut values = vec![0.0; lattice.node_count() * big_n];
        for (i, chunk) in values.chunks_mut(big_n).enumerate() {
            let x = lattice.node_coords(i);
            f(&x[..dim], chunk);
        }
        Self::new(lattice, values)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable node values in lattice order.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, idx: usize) -> &[f64] {
        let n = self.lattice.target_dim();
        &self.values[idx * n..(idx + 1) * n]
    }

    /// Writes one CSV row per node: coordinates, then components.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.lattice.dim();
        let big_n = self.lattice.target_dim();
        let mut header: Vec<String> = (1..=dim).map(|a| format!("x{a}")).collect();
        header.extend((1..=big_n).map(|c| format!("u{c}")));
        w.write_record(&header)?;
        for i in 0..self.lattice.node_count() {
            let x = self.lattice.node_coords(i);
            let mut row: Vec<String> = x[..dim].iter().map(|v| fmt_f64(*v)).collect();
            row.extend(self.node(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field written by [`GridField::write_csv`] onto `lattice`.
    /// Coordinates are checked against the lattice nodes.
    pub fn read_csv<R: Read>(lattice: Lattice, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = lattice.dim();
        let big_n = lattice.target_dim();
        let mut values = Vec::with_capacity(lattice.node_count() * big_n);
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != dim + big_n {
                return Err(LabError::ShapeMismatch(format!("row {i} has {} columns", rec.len())));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| LabError::param("csv", format!("row {i}: {e}")));
            let x = lattice.node_coords(i);
            for a in 0..dim {
                let xa = parse(&rec[a])?;
                if (xa - x[a]).abs() > 1e-9 * (1.0 + x[a].abs()) {
                    return Err(LabError::ShapeMismatch(format!("row {i}: coordinate mismatch")));
                }
            }
            for c in 0..big_n {
                values.push(parse(&rec[dim + c])?);
            }
        }
        Self::new(lattice, values)
    }

    /// Writes `<stem>.csv` and the lattice header `<stem>.json`.
    pub fn export(&self, stem: &std::path::Path) -> Result<Vec<std::path::PathBuf>> {
        let csv_path = stem.with_extension("csv");
        let json_path = stem.with_extension("json");
        self.write_csv(std::fs::File::create(&csv_path)?)?;
        std::fs::write(&json_path, serde_json::to_string_pretty(&self.lattice)?)?;
        Ok(vec![csv_path, json_path])
    }

    pub fn import(stem: &std::path::Path) -> Result<Self> {
        let lattice: Lattice = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let lattice =
            Lattice::new(lattice.lower.clone(), lattice.upper.clone(), lattice.nodes.clone(), lattice.target_dim)?;
        Self::read_csv(lattice, std::fs::File::open(stem.with_extension("csv"))?)
    }
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// A cellwise `N × n` matrix field, stored row-major per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    lattice: Lattice,
    values: Vec<f64>,
}

impl GradientField {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        let block = lattice.target_dim() * lattice.dim();
        let expect = lattice.cell_count() * block;
        if values.len() != expect {
            return Err(LabError::ShapeMismatch(format!("cell field needs {expect} values, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { what: "cell field", index: i / block });
        }
        Ok(Self { lattice, values })
    }

    /// Samples a matrix-valued map at cell centers.
    pub fn from_fn(lattice: Lattice, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let block = lattice.target_dim() * lattice.dim();
        let dim = lattice.dim();
        let mut values = vec![0.0; lattice.cell_count() * block];
        for (c, chunk) in values.chunks_mut(block).enumerate() {
            let x = lattice.cell_center(c);
            f(&x[..dim], chunk);
        }
        Self::new(lattice, values)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self) -> usize {
        self.lattice.target_dim() * self.lattice.dim()
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let b = self.block();
        &self.values[c * b..(c + 1) * b]
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.block())
    }

    /// Applies `f` to every cell matrix, producing a field of the same shape.
    pub fn map(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<GradientField> {
        let b = self.block();
        let mut out = vec![0.0; self.values.len()];
        for (src, dst) in self.values.chunks_exact(b).zip(out.chunks_exact_mut(b)) {
            f(src, dst);
        }
        GradientField::new(self.lattice.clone(), out)
    }

    /// Writes one CSV row per cell: center coordinates, then the scalar `data[c]`.
    pub fn write_scalar_csv<W: Write>(lattice: &Lattice, data: &[f64], name: &str, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = lattice.dim();
        let mut header: Vec<String> = (1..=dim).map(|a| format!("x{a}")).collect();
        header.push(name.to_string());
        w.write_record(&header)?;
        for (c, v) in data.iter().enumerate() {
            let x = lattice.cell_center(c);
            let mut row: Vec<String> = x[..dim].iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(*v));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cellwise forward differences `(u(x + h e_s) - u(x)) / h` of a node field.
pub fn forward_gradient(u: &GridField) -> Result<GradientField> {
    let lat = u.lattice();
    if let Some(i) = u.values().iter().position(|v| !v.is_finite()) {
        return Err(LabError::NonFinite { what: "node field", index: i / lat.target_dim() });
    }
    let mut out = vec![0.0; lat.cell_count() * lat.target_dim() * lat.dim()];
    forward_gradient_into(lat, u.values(), &mut out);
    GradientField::new(lat.clone(), out)
}

/// [`forward_gradient`] on raw node values without the finiteness check.
pub fn forward_gradient_into(lat: &Lattice, vals: &[f64], out: &mut [f64]) {
    let dim = lat.dim();
    let big_n = lat.target_dim();
    let block = big_n * dim;
    let inv_h: Vec<f64> = (0..dim).map(|a| 1.0 / lat.spacing(a)).collect();
    let strides: Vec<usize> = (0..dim).map(|a| lat.node_stride(a)).collect();
    for c in 0..lat.cell_count() {
        let base = lat.cell_base_node(c);
        for r in 0..big_n {
            let u0 = vals[base * big_n + r];
            for s in 0..dim {
                let u1 = vals[(base + strides[s]) * big_n + r];
                out[c * block + r * dim + s] = (u1 - u0) * inv_h[s];
            }
        }
    }
}

/// Adjoint of [`forward_gradient`] with respect to the cell-volume weighted
/// inner products: `Σ_c ⟨σ_c, (D_h φ)_c⟩ vol = Σ_x ⟨(D_h^* σ)_x, φ_x⟩ vol`.
/// Written in difference form, so it is the negative backward divergence and
/// vanishes exactly on constant fields at interior nodes.
pub fn adjoint_divergence(sigma: &GradientField) -> Vec<f64> {
    let lat = sigma.lattice();
    let mut out = vec![0.0; lat.node_count() * lat.target_dim()];
    adjoint_divergence_into(lat, sigma.values(), &mut out);
    out
}

/// [`adjoint_divergence`] on raw cell values, writing every node of `out`.
pub fn adjoint_divergence_into(lat: &Lattice, sigma: &[f64], out: &mut [f64]) {
    let dim = lat.dim();
    let big_n = lat.target_dim();
    let block = big_n * dim;
    let inv_h: Vec<f64> = (0..dim).map(|a| 1.0 / lat.spacing(a)).collect();
    for node in 0..lat.node_count() {
        let m = lat.node_multi(node);
        let own = (0..dim).all(|a| m[a] + 1 < lat.nodes(a));
        let own_cell = if own { Some(lat.cell_index(&m[..dim])) } else { None };
        let mut prev_cells = [None; 2];
        for s in 0..dim {
            if m[s] >= 1 {
                let mut prev = m;
                prev[s] -= 1;
                if (0..dim).all(|a| prev[a] + 1 < lat.nodes(a)) {
                    prev_cells[s] = Some(lat.cell_index(&prev[..dim]));
                }
            }
        }
        for r in 0..big_n {
            let mut acc = 0.0;
            for s in 0..dim {
                let a_prev = prev_cells[s].map_or(0.0, |c| sigma[c * block + r * dim + s]);
                let a_own = own_cell.map_or(0.0, |c| sigma[c * block + r * dim + s]);
                acc += (a_prev - a_own) * inv_h[s];
            }
            out[node * big_n + r] = acc;
        }
    }
}

/// `Δ_{s,h} w(x) = w(x + h e_s) - w(x)` with `h = step · h_grid`, returned on
/// the overlap sub-lattice where both nodes exist.
pub fn delta_sh(w: &GridField, axis: usize, step: isize) -> Result<GridField> {
    let lat = w.lattice();
    if axis >= lat.dim() {
        return Err(LabError::param("axis", format!("axis {axis} out of range")));
    }
    let m = lat.nodes(axis);
    let k = step.unsigned_abs();
    if step == 0 || k >= m || m - k < 3 {
        return Err(LabError::StepOutOfRange { axis, step, nodes: m });
    }
    let h = lat.spacing(axis);
    let (first, lo, hi) = if step > 0 {
        (0usize, lat.lower()[axis], lat.lower()[axis] + (m - 1 - k) as f64 * h)
    } else {
        (k, lat.lower()[axis] + k as f64 * h, lat.upper()[axis])
    };
    let sub = lat.with_axis(axis, lo, hi, m - k)?;
    let big_n = lat.target_dim();
    let stride = lat.node_stride(axis);
    let mut values = Vec::with_capacity(sub.node_count() * big_n);
    for j in 0..sub.node_count() {
        let mut mm = sub.node_multi(j);
        mm[axis] += first;
        let src = lat.node_index(&mm[..lat.dim()]);
        let dst = if step > 0 { src + k * stride } else { src - k * stride };
        for r in 0..big_n {
            values.push(w.values()[dst * big_n + r] - w.values()[src * big_n + r]);
        }
    }
    GridField::new(sub, values)
}

/// Fields that can be integrated with the cell quadrature.
pub trait CellSampled {
    fn lattice(&self) -> &Lattice;
    /// Euclidean magnitude of the field's cell value.
    fn cell_magnitude(&self, cell: usize) -> f64;
}

impl CellSampled for GradientField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn cell_magnitude(&self, cell: usize) -> f64 {
        crate::numeric::norm(self.cell(cell))
    }
}

impl CellSampled for GridField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Zero-order terms use the average of the cell's corner nodes.
    fn cell_magnitude(&self, cell: usize) -> f64 {
        let lat = &self.lattice;
        let dim = lat.dim();
        let big_n = lat.target_dim();
        let base = lat.cell_base_node(cell);
        let corners = 1usize << dim;
        let mut acc = [0.0f64; 8];
        let acc = &mut acc[..big_n.min(8)];
        let mut big = vec![0.0; if big_n > 8 { big_n } else { 0 }];
        for k in 0..corners {
            let mut idx = base;
            for a in 0..dim {
                if k >> a & 1 == 1 {
                    idx += lat.node_stride(a);
                }
            }
            for r in 0..big_n {
                let v = self.values[idx * big_n + r];
                if big_n <= 8 {
                    acc[r] += v;
                } else {
                    big[r] += v;
                }
            }
        }
        let s = if big_n <= 8 { crate::numeric::norm(acc) } else { crate::numeric::norm(&big) };
        s / corners as f64
    }
}

/// Cells whose centers lie in `region`, in increasing order.
pub fn cells_in_region(lattice: &Lattice, region: &BallRegion) -> Vec<usize> {
    (0..lattice.cell_count()).filter(|&c| region.contains(&lattice.cell_center(c)[..lattice.dim()])).collect()
}

/// Discrete `L^r(B)` norm `(Σ_{cells ∩ B} |w|^r vol)^{1/r}`; `r = ∞` gives the max.
pub fn local_norm<F: CellSampled + ?Sized>(w: &F, region: &BallRegion, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(LabError::param("r", "norm exponent must be at least 1"));
    }
    let lat = w.lattice();
    let cells = cells_in_region(lat, region);
    if cells.is_empty() {
        return Err(LabError::EmptyRegion);
    }
    if r.is_infinite() {
        return Ok(cells.iter().map(|&c| w.cell_magnitude(c)).fold(0.0, f64::max));
    }
    let vol = lat.cell_volume();
    let sum: CompensatedSum = cells.iter().map(|&c| w.cell_magnitude(c).powf(r) * vol).collect();
    Ok(sum.value().powf(1.0 / r))
}

/// The norm of [`local_norm`] divided by the measure of `cells ∩ B`, so that
/// it is nondecreasing in `r`.
pub fn local_mean_norm<F: CellSampled + ?Sized>(w: &F, region: &BallRegion, r: f64) -> Result<f64> {
    let lat = w.lattice();
    let count = cells_in_region(lat, region).len();
    if count == 0 {
        return Err(LabError::EmptyRegion);
    }
    let measure = count as f64 * lat.cell_volume();
    let total = local_norm(w, region, r)?;
    if r.is_infinite() {
        Ok(total)
    } else {
        Ok(total / measure.powf(1.0 / r))
    }
}
