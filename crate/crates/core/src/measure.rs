//! One-dimensional probability measures on truncated uniform grids, their
//! quantile-function representation, and the 1D 2-Wasserstein distance.

use serde::{Deserialize, Serialize};

use crate::error::{MfviError, Result};

/// Densities below this value are treated as zero inside logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Smallest admissible number of grid cells.
pub const MIN_CELLS: usize = 8;

/// A uniform grid of `cells` cells covering `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    cells: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) {
            return Err(MfviError::InvalidGrid("bounds must be finite".into()));
        }
        if x_min >= x_max {
            return Err(MfviError::InvalidGrid(format!(
                "x_min ({x_min}) must be below x_max ({x_max})"
            )));
        }
        if cells < MIN_CELLS {
            return Err(MfviError::InvalidGrid(format!(
                "need at least {MIN_CELLS} cells, got {cells}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            cells,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Number of cells `M`.
    pub fn len(&self) -> usize {
        self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    /// Center of cell `j`.
    pub fn center(&self, j: usize) -> f64 {
        self.x_min + (j as f64 + 0.5) * self.dx()
    }

    /// Left edge of cell `j`; `edge(M)` is the right boundary.
    pub fn edge(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.center(j)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell_of(&self, x: f64) -> usize {
        let s = ((x - self.x_min) / self.dx()).floor();
        if s <= 0.0 {
            0
        } else {
            (s as usize).min(self.cells - 1)
        }
    }

    /// The same grid translated by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            x_min: self.x_min + c,
            x_max: self.x_max + c,
            cells: self.cells,
        }
    }
}

/// Default quantile resolution for a grid: four levels per cell.
pub fn default_quantile_count(grid: &Grid1D) -> usize {
    4 * grid.len()
}

/// A probability density sampled at the cell centers of a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure1D {
    grid: Grid1D,
    density: Vec<f64>,
}

impl GridMeasure1D {
    /// Rescales nonnegative weights so that `dx * sum(density) == 1`.
    pub fn normalize(raw: &[f64], grid: Grid1D) -> Result<Self> {
        if raw.len() != grid.len() {
            return Err(MfviError::DimensionMismatch {
                expected: grid.len(),
                got: raw.len(),
            });
        }
        if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(MfviError::NonFinite(format!("density entry {bad}")));
        }
        if let Some(neg) = raw.iter().find(|v| **v < 0.0) {
            return Err(MfviError::InvalidArgument(format!(
                "negative density entry {neg}"
            )));
        }
        let total: f64 = raw.iter().sum::<f64>() * grid.dx();
        if total <= 0.0 {
            return Err(MfviError::AllZero);
        }
        let density = raw.iter().map(|v| v / total).collect();
        Ok(Self { grid, density })
    }

    /// Wraps a density that is already on `grid` without renormalizing it,
    /// for evolutions that must expose their own mass drift.
    pub(crate) fn from_unnormalized(density: Vec<f64>, grid: Grid1D) -> Self {
        debug_assert_eq!(density.len(), grid.len());
        Self { grid, density }
    }

    /// Samples `f` at the cell centers and normalizes.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let raw: Vec<f64> = grid.centers().into_iter().map(f).collect();
        Self::normalize(&raw, grid)
    }

    /// Discretized normal density with the given mean and variance.
    pub fn gaussian(grid: Grid1D, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(MfviError::InvalidArgument(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Self::from_fn(grid, |x| (-(x - mean).powi(2) / (2.0 * variance)).exp())
    }

    pub fn uniform(grid: Grid1D) -> Self {
        let v = 1.0 / (grid.x_max - grid.x_min);
        Self {
            grid,
            density: vec![v; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn into_density(self) -> Vec<f64> {
        self.density
    }

    /// Total mass `dx * sum(density)`.
    pub fn mass(&self) -> f64 {
        self.grid.dx() * self.density.iter().sum::<f64>()
    }

    /// Differential entropy `-∫ ρ log ρ` by the midpoint rule, `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let dx = self.grid.dx();
        -dx * self
            .density
            .iter()
            .filter(|&&r| r > DENSITY_FLOOR)
            .map(|&r| r * r.ln())
            .sum::<f64>()
    }

    /// `dx * Σ (x_j - center)^order ρ_j` for `order` 1 or 2.
    pub fn moment(&self, order: u32, center: f64) -> f64 {
        assert!(
            order == 1 || order == 2,
            "moment order must be 1 or 2, got {order}"
        );
        let dx = self.grid.dx();
        dx * self
            .density
            .iter()
            .enumerate()
            .map(|(j, &r)| (self.grid.center(j) - center).powi(order as i32) * r)
            .sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.moment(1, 0.0)
    }

    /// Raw second moment about the origin.
    pub fn second_moment(&self) -> f64 {
        self.moment(2, 0.0)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(2, m)
    }

    /// Inverse CDF of the piecewise-constant density.
    pub fn quantile_fn(&self) -> QuantileFn<'_> {
        let dx = self.grid.dx();
        let mut cdf = Vec::with_capacity(self.density.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for &r in &self.density {
            acc += dx * r;
            cdf.push(acc);
        }
        QuantileFn { measure: self, cdf }
    }

    /// Quantile values at the `k` midpoint levels `(k + 1/2) / K`.
    pub fn to_quantile(&self, k: usize) -> QuantileMeasure1D {
        assert!(k >= 1, "quantile count must be positive");
        let qf = self.quantile_fn();
        let q = (0..k)
            .map(|i| qf.eval((i as f64 + 0.5) / k as f64))
            .collect();
        QuantileMeasure1D { q }
    }
}

/// Cached CDF of a [`GridMeasure1D`], linear inside each cell.
#[derive(Debug, Clone)]
pub struct QuantileFn<'a> {
    measure: &'a GridMeasure1D,
    cdf: Vec<f64>,
}

impl QuantileFn<'_> {
    /// `Q(u)` for `u` in `(0, 1)`.
    pub fn eval(&self, u: f64) -> f64 {
        let total = *self.cdf.last().unwrap();
        let target = u.clamp(0.0, 1.0) * total;
        let grid = &self.measure.grid;
        // first edge index with cdf >= target
        let mut j = self.cdf.partition_point(|&c| c < target);
        if j == 0 {
            // target == 0: leftmost point of the support
            j = self.cdf.iter().position(|&c| c > 0.0).unwrap_or(1);
            return grid.edge(j - 1);
        }
        j = j.min(grid.len());
        let lo = self.cdf[j - 1];
        let mass = self.cdf[j] - lo;
        let frac = if mass > 0.0 {
            ((target - lo) / mass).clamp(0.0, 1.0)
        } else {
            1.0
        };
        grid.edge(j - 1) + frac * grid.dx()
    }
}

/// A 1D measure given by its quantile function at uniform midpoint levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMeasure1D {
    q: Vec<f64>,
}

impl QuantileMeasure1D {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(MfviError::InvalidArgument("empty quantile vector".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(MfviError::NonFinite("quantile value".into()));
        }
        if q.windows(2).any(|w| w[1] < w[0]) {
            return Err(MfviError::InvalidArgument(
                "quantile values must be nondecreasing".into(),
            ));
        }
        Ok(Self { q })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Probability level `u_k = (k + 1/2) / K`.
    pub fn level(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.q.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn into_values(self) -> Vec<f64> {
        self.q
    }

    /// Pushes the quantile mass back onto `grid`.
    ///
    /// The reconstructed CDF equals `(k+½)/K` at `q_k` and is linear between
    /// consecutive quantiles, so each gap carries mass `1/K` spread uniformly.
    /// The half masses below `q_0` and above `q_{K-1}` continue the end gaps'
    /// densities. Zero-width pieces land in the single cell containing them.
    pub fn to_density(&self, grid: Grid1D) -> Result<GridMeasure1D> {
        if let Some(&v) = self.q.iter().find(|v| !grid.contains(**v)) {
            return Err(MfviError::OutOfDomain {
                value: v,
                x_min: grid.x_min(),
                x_max: grid.x_max(),
            });
        }
        let k = self.q.len();
        let w = 1.0 / k as f64;
        let dx = grid.dx();
        let mut mass = vec![0.0; grid.len()];
        let mut deposit = |lo: f64, hi: f64, m: f64| {
            let lo = lo.max(grid.x_min());
            let hi = hi.min(grid.x_max());
            let width = hi - lo;
            if width <= 1e-12 * dx {
                mass[grid.cell_of(0.5 * (lo + hi))] += m;
                return;
            }
            let (c0, c1) = (grid.cell_of(lo), grid.cell_of(hi));
            for c in c0..=c1 {
                let overlap = hi.min(grid.edge(c + 1)) - lo.max(grid.edge(c));
                if overlap > 0.0 {
                    mass[c] += m * overlap / width;
                }
            }
        };
        let q = &self.q;
        if k == 1 {
            deposit(q[0], q[0], 1.0);
        } else {
            // the CDF passes through ((k + 1/2)/K) at q_k and is linear in between;
            // the two half-masses outside continue the end slopes
            deposit(q[0] - 0.5 * (q[1] - q[0]), q[0], 0.5 * w);
            for pair in q.windows(2) {
                deposit(pair[0], pair[1], w);
            }
            deposit(q[k - 1], q[k - 1] + 0.5 * (q[k - 1] - q[k - 2]), 0.5 * w);
        }
        GridMeasure1D::normalize(&mass, grid)
    }

    /// `sqrt(mean_k (Q_k - R_k)^2)` for two quantile vectors of equal length.
    pub fn w2(&self, other: &Self) -> f64 {
        assert_eq!(self.q.len(), other.q.len(), "quantile resolutions differ");
        let s: f64 = self
            .q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (s / self.q.len() as f64).sqrt()
    }
}

/// 1D 2-Wasserstein distance via the monotone (quantile) coupling at `k` levels.
pub fn w2(mu: &GridMeasure1D, nu: &GridMeasure1D, k: usize) -> f64 {
    mu.to_quantile(k).w2(&nu.to_quantile(k))
}

/// A product of one-dimensional marginals, the mean-field state `ν = ⊗ν_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMeasure {
    marginals: Vec<GridMeasure1D>,
}

impl ProductMeasure {
    pub fn new(marginals: Vec<GridMeasure1D>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(MfviError::InvalidArgument(
                "a product measure needs at least one marginal".into(),
            ));
        }
        Ok(Self { marginals })
    }

    /// Product of Gaussians with the given `(mean, variance)` pairs.
    pub fn gaussian(grids: &[Grid1D], params: &[(f64, f64)]) -> Result<Self> {
        if grids.len() != params.len() {
            return Err(MfviError::DimensionMismatch {
                expected: grids.len(),
                got: params.len(),
            });
        }
        let marginals = grids
            .iter()
            .zip(params)
            .map(|(g, &(m, v))| GridMeasure1D::gaussian(*g, m, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(marginals)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginal(&self, i: usize) -> &GridMeasure1D {
        &self.marginals[i]
    }

    pub fn marginals(&self) -> &[GridMeasure1D] {
        &self.marginals
    }

    pub fn set_marginal(&mut self, i: usize, m: GridMeasure1D) {
        self.marginals[i] = m;
    }

    /// A copy with marginal `i` replaced.
    pub fn with_marginal(&self, i: usize, m: GridMeasure1D) -> Self {
        let mut out = self.clone();
        out.set_marginal(i, m);
        out
    }

    pub fn grids(&self) -> Vec<Grid1D> {
        self.marginals.iter().map(|m| *m.grid()).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.marginals.iter().map(GridMeasure1D::mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.marginals.iter().map(GridMeasure1D::variance).collect()
    }

    pub fn second_moments(&self) -> Vec<f64> {
        self.marginals
            .iter()
            .map(GridMeasure1D::second_moment)
            .collect()
    }

    /// Sum of marginal entropies.
    pub fn entropy(&self) -> f64 {
        self.marginals.iter().map(GridMeasure1D::entropy).sum()
    }

    /// Per-coordinate W2 distances, each at the default resolution of the
    /// coordinate's grid.
    pub fn w2_per_coordinate(&self, other: &Self) -> Result<Vec<f64>> {
        if self.dim() != other.dim() {
            return Err(MfviError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self
            .marginals
            .iter()
            .zip(&other.marginals)
            .map(|(a, b)| w2(a, b, default_quantile_count(a.grid())))
            .collect())
    }

    /// ℓ2 combination of the per-coordinate distances.
    pub fn w2_l2(&self, other: &Self) -> Result<f64> {
        Ok(self
            .w2_per_coordinate(other)?
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt())
    }
}
