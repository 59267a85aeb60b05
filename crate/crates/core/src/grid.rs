//! Lattice geometry and the step-function space on the unit box.
//!
//! The domain is `[0,1)^d` tiled by `(1/eps)^d` congruent cells
//! `V_i = prod_j [i_j*eps, (i_j+1)*eps)`. A [`Field`] holds one real value per
//! cell and is read as a step function constant on each cell. The discrete
//! Laplacian and one-sided gradients act on fields with reflective (Neumann)
//! or wrapped (periodic) handling of out-of-domain neighbors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum spatial dimension supported.
pub const MAX_D: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Neumann,
    Periodic,
}

/// The lattice `D_eps`: dimension, mesh size and boundary mode.
///
/// `inv_eps = 1/eps` is stored so the mesh is exact in integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    d: usize,
    inv_eps: usize,
    boundary: Boundary,
}

/// One directed lattice link of a site along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Neighbor inside the grid.
    Interior(usize),
    /// Fictitious out-of-domain neighbor (Neumann); its value reflects the
    /// site's own value.
    Ghost,
    /// Periodic wrap-around neighbor.
    Wrapped(usize),
}

impl Link {
    /// Site index the link points to, if it points anywhere.
    pub fn target(&self) -> Option<usize> {
        match self {
            Link::Interior(j) | Link::Wrapped(j) => Some(*j),
            Link::Ghost => None,
        }
    }
}

/// All `2d` directed links of one site, in axis-major `(axis, -), (axis, +)` order.
#[derive(Debug, Clone)]
pub struct SiteNeighborhood {
    pub site: usize,
    pub links: Vec<Link>,
}

pub fn build_grid(d: usize, inv_eps: usize, boundary: Boundary) -> Result<GridSpec> {
    if !(1..=MAX_D).contains(&d) {
        return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3, got {d}")));
    }
    if inv_eps == 0 {
        return Err(Error::InvalidGrid("1/eps must be a positive integer".into()));
    }
    if (inv_eps as u128).pow(d as u32) > usize::MAX as u128 {
        return Err(Error::InvalidGrid(format!("grid 1/eps = {inv_eps}, d = {d} overflows")));
    }
    Ok(GridSpec { d, inv_eps, boundary })
}

impl GridSpec {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn inv_eps(&self) -> usize {
        self.inv_eps
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.inv_eps as f64
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn n_sites(&self) -> usize {
        self.inv_eps.pow(self.d as u32)
    }

    /// Cell volume `eps^d`.
    pub fn cell_volume(&self) -> f64 {
        self.eps().powi(self.d as i32)
    }

    /// Multi-index of a flat site index; axis 0 varies fastest.
    pub fn unflatten(&self, site: usize) -> [usize; MAX_D] {
        debug_assert!(site < self.n_sites());
        let mut m = [0usize; MAX_D];
        let mut rest = site;
        for j in 0..self.d {
            m[j] = rest % self.inv_eps;
            rest /= self.inv_eps;
        }
        m
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        let mut site = 0usize;
        for j in (0..self.d).rev() {
            debug_assert!(multi[j] < self.inv_eps);
            site = site * self.inv_eps + multi[j];
        }
        site
    }

    /// Representative point `x_i = i * eps` (the cell's lower corner).
    pub fn site_coord(&self, site: usize) -> [f64; MAX_D] {
        let m = self.unflatten(site);
        let mut x = [0.0; MAX_D];
        for j in 0..self.d {
            x[j] = m[j] as f64 * self.eps();
        }
        x
    }

    /// Center of cell `V_i`.
    pub fn cell_center(&self, site: usize) -> [f64; MAX_D] {
        let m = self.unflatten(site);
        let mut x = [0.0; MAX_D];
        for j in 0..self.d {
            x[j] = (m[j] as f64 + 0.5) * self.eps();
        }
        x
    }

    /// Link of `site` along `axis` in direction `sign` (+1 or -1).
    pub fn neighbor(&self, site: usize, axis: usize, sign: i8) -> Link {
        debug_assert!(axis < self.d);
        let m = self.unflatten(site);
        let n = self.inv_eps;
        let stride = n.pow(axis as u32);
        if sign > 0 {
            if m[axis] + 1 < n {
                Link::Interior(site + stride)
            } else {
                match self.boundary {
                    Boundary::Neumann => Link::Ghost,
                    Boundary::Periodic => Link::Wrapped(site + stride - n * stride),
                }
            }
        } else if m[axis] > 0 {
            Link::Interior(site - stride)
        } else {
            match self.boundary {
                Boundary::Neumann => Link::Ghost,
                Boundary::Periodic => Link::Wrapped(site + (n - 1) * stride),
            }
        }
    }

    pub fn neighborhood(&self, site: usize) -> SiteNeighborhood {
        let mut links = Vec::with_capacity(2 * self.d);
        for axis in 0..self.d {
            links.push(self.neighbor(site, axis, -1));
            links.push(self.neighbor(site, axis, 1));
        }
        SiteNeighborhood { site, links }
    }
}

/// An element of `H^eps`: one value per cell, read as a step function on `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_sites() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {} sites",
                values.len(),
                grid.n_sites()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Field { grid, values: vec![c; grid.n_sites()] }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at the neighbor of `site` along `(axis, sign)`, with ghost links
    /// reflecting the site's own value.
    fn link_value(&self, site: usize, axis: usize, sign: i8) -> f64 {
        match self.grid.neighbor(site, axis, sign) {
            Link::Interior(j) | Link::Wrapped(j) => self.values[j],
            Link::Ghost => self.values[site],
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        check_same_grid(self, other)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn axpy(&mut self, a: f64, x: &Field) {
        debug_assert_eq!(self.grid, x.grid);
        for (v, &xv) in self.values.iter_mut().zip(&x.values) {
            *v += a * xv;
        }
    }

    /// `eps^d * sum_i v_i`, the integral of the step function over `D`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_same_grid(f: &Field, g: &Field) -> Result<()> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", f.grid, g.grid)));
    }
    Ok(())
}

/// `(D_eps f)(x_i) = eps^-2 sum_j [f(x_i+eps e_j) - 2 f(x_i) + f(x_i-eps e_j)]`
/// with reflective ghost values under Neumann and wrapped values under periodic
/// boundary.
pub fn discrete_laplacian(f: &Field) -> Field {
    let grid = f.grid;
    let inv_eps2 = (grid.inv_eps as f64) * (grid.inv_eps as f64);
    let mut out = vec![0.0; grid.n_sites()];
    for site in 0..grid.n_sites() {
        let center = f.values[site];
        let mut acc = 0.0;
        for axis in 0..grid.d {
            acc += f.link_value(site, axis, 1) - 2.0 * center + f.link_value(site, axis, -1);
        }
        out[site] = inv_eps2 * acc;
    }
    Field { grid, values: out }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSign {
    Forward,
    Backward,
}

/// One-sided difference quotient along `axis`:
/// forward `(f(x+eps e_j) - f(x))/eps`, backward `(f(x) - f(x-eps e_j))/eps`,
/// ghost links reflecting as in [`discrete_laplacian`].
pub fn gradient(f: &Field, axis: usize, sign: GradSign) -> Result<Field> {
    let grid = f.grid;
    if axis >= grid.d {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for dimension {}",
            grid.d
        )));
    }
    let inv_eps = grid.inv_eps as f64;
    let mut out = vec![0.0; grid.n_sites()];
    for site in 0..grid.n_sites() {
        out[site] = match sign {
            GradSign::Forward => inv_eps * (f.link_value(site, axis, 1) - f.values[site]),
            GradSign::Backward => inv_eps * (f.values[site] - f.link_value(site, axis, -1)),
        };
    }
    Ok(Field { grid, values: out })
}

/// `max_i |f_i|`.
pub fn sup_norm(f: &Field) -> f64 {
    f.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}

/// `sum_j |u_j|`.
pub fn l1_norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v.abs()).sum()
}

/// `eps^d sum_i f_i g_i`, the L2 inner product of the two step functions.
pub fn inner(f: &Field, g: &Field) -> Result<f64> {
    check_same_grid(f, g)?;
    let dot: f64 = f.values.iter().zip(&g.values).map(|(&a, &b)| a * b).sum();
    Ok(f.grid.cell_volume() * dot)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
///
/// Newton iteration on the Legendre polynomial; plenty for the small orders
/// used by cell quadrature.
pub fn gauss_legendre_unit(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be >= 1");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Chebyshev-based initial guess on [-1, 1].
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Evaluate P_n and P_n' by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dpn = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dpn;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let mut p0 = 1.0;
        let mut p1 = x;
        for j in 2..=n {
            let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
            p0 = p1;
            p1 = p2;
        }
        let dpn = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[n - 1 - k] = 0.5 * (x + 1.0);
        weights[n - 1 - k] = 1.0 / ((1.0 - x * x) * dpn * dpn);
    }
    if n == 1 {
        nodes[0] = 0.5;
        weights[0] = 1.0;
    }
    (nodes, weights)
}

/// Cell-average projection `P_eps phi`: on each cell the mean of `phi`,
/// computed by tensor Gauss quadrature of the given order per axis.
pub fn project<F>(phi: F, grid: GridSpec, quad_order: usize) -> Field
where
    F: Fn(&[f64]) -> f64,
{
    let (nodes, weights) = gauss_legendre_unit(quad_order);
    let eps = grid.eps();
    let d = grid.d;
    let q = nodes.len();
    let n_points = q.pow(d as u32);
    let mut values = vec![0.0; grid.n_sites()];
    for site in 0..grid.n_sites() {
        let corner = grid.site_coord(site);
        let mut acc = 0.0;
        for p in 0..n_points {
            let mut rest = p;
            let mut w = 1.0;
            let mut x = [0.0f64; MAX_D];
            for j in 0..d {
                let idx = rest % q;
                rest /= q;
                x[j] = corner[j] + eps * nodes[idx];
                w *= weights[idx];
            }
            acc += w * phi(&x[..d]);
        }
        values[site] = acc;
    }
    Field { grid, values }
}
