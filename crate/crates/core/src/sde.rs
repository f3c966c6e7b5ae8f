//! The McKean–Vlasov particle system
//!
//! ```text
//! dX_i = −∂_xΨ_i(X_i; Law(X_{−i})) dt + √2 dB_i
//! ```
//!
//! simulated with Euler–Maruyama. The law of the other coordinates is read off
//! the particle cloud by projecting each coordinate onto its grid (histogram
//! plus a small triangular smoother), which makes the drift a grid profile
//! exactly like the deterministic solvers use.
//!
//! Gaussian increments come from a counter-based generator keyed by
//! `(seed, step, coordinate, chunk)` with a fixed chunk length, so a run is
//! reproducible bit for bit whatever the thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MfviError, Result};
use crate::functionals::{psi_profile, PsiOptions, PsiProfile};
use crate::measure::{Grid1D, GridMeasure1D, ProductMeasure};
use crate::model::Model;
use crate::par;
use crate::rng::CounterRng;

/// Particles per independently keyed random stream and per parallel task.
pub const CHUNK: usize = 1024;
/// Out-of-grid fraction above which a warning is logged.
const OUT_OF_BOUNDS_WARN: f64 = 0.01;
/// Step index used to key the initial draws.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub n_particles: usize,
    pub dt: f64,
    /// Half-width, in cells, of the triangular smoother (`0`: plain histogram).
    pub bandwidth: usize,
    pub seed: u64,
    /// Switch the Brownian term off for deterministic drift-only runs.
    pub noise: bool,
    /// Projected marginals are averaged over steps with `t > burn_in`.
    pub burn_in: f64,
    /// Record moments every this many steps (`0`: final step only).
    pub output_every: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            n_particles: 20_000,
            dt: 1e-3,
            bandwidth: 1,
            seed: 0,
            noise: true,
            burn_in: 5.0,
            output_every: 100,
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MfviError::InvalidArgument(format!("SdeConfig.{m}")));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.burn_in >= 0.0) {
            return bad("burn_in must be nonnegative");
        }
        Ok(())
    }
}

/// Particle positions stored coordinate by coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    coords: Vec<Vec<f64>>,
}

impl ParticleCloud {
    pub fn new(coords: Vec<Vec<f64>>) -> Result<Self> {
        let n = coords.first().map(Vec::len).unwrap_or(0);
        if n == 0 || coords.iter().any(|c| c.len() != n) {
            return Err(MfviError::InvalidArgument(
                "particle cloud needs equally many particles in every coordinate".into(),
            ));
        }
        Ok(Self { coords })
    }

    /// `n` particles drawn independently from each marginal of `nu` by
    /// inverse-CDF sampling.
    pub fn sample(nu: &ProductMeasure, n: usize, seed: u64) -> Result<Self> {
        let coords = nu
            .marginals()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let qf = m.quantile_fn();
                let mut xs = vec![0.0; n];
                for (c, chunk) in xs.chunks_mut(CHUNK).enumerate() {
                    let mut rng = CounterRng::new(seed, &[INIT_STREAM, i as u64, c as u64]);
                    for x in chunk {
                        *x = qf.eval(rng.random::<f64>());
                    }
                }
                xs
            })
            .collect();
        Self::new(coords)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn len(&self) -> usize {
        self.coords[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coordinate(&self, i: usize) -> &[f64] {
        &self.coords[i]
    }

    pub fn means(&self) -> Vec<f64> {
        self.coords
            .iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.coords
            .iter()
            .zip(self.means())
            .map(|(c, m)| c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Result of projecting a cloud onto grids.
#[derive(Debug, Clone)]
pub struct Projection {
    pub measure: ProductMeasure,
    /// Particles outside the grid, per coordinate; they are left out of the
    /// histogram.
    pub out_of_bounds: Vec<usize>,
}

fn histogram(xs: &[f64], grid: &Grid1D) -> (Vec<u64>, usize) {
    let partial = par::map_chunks(xs, CHUNK, |chunk| {
        let mut counts = vec![0u64; grid.len()];
        let mut outside = 0;
        for &x in chunk {
            if grid.contains(x) {
                counts[grid.cell_of(x)] += 1;
            } else {
                outside += 1;
            }
        }
        (counts, outside)
    });
    let mut counts = vec![0u64; grid.len()];
    let mut outside = 0;
    for (c, o) in partial {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        outside += o;
    }
    (counts, outside)
}

/// Convolves with the triangular kernel of half-width `bw` cells; mass that
/// would leave the grid is dropped before normalization.
fn smooth(counts: &[u64], bw: usize) -> Vec<f64> {
    if bw == 0 {
        return counts.iter().map(|&c| c as f64).collect();
    }
    let n = counts.len() as isize;
    let b = bw as isize;
    let kernel: Vec<f64> = (-b..=b).map(|k| (b + 1 - k.abs()) as f64).collect();
    (0..n)
        .map(|j| {
            (-b..=b)
                .filter(|k| (0..n).contains(&(j + k)))
                .map(|k| kernel[(k + b) as usize] * counts[(j + k) as usize] as f64)
                .sum()
        })
        .collect()
}

/// Empirical marginals of `cloud` on `grids`, smoothed with half-width
/// `bandwidth` cells.
pub fn project_marginals(cloud: &ParticleCloud, grids: &[Grid1D], bandwidth: usize) -> Result<Projection> {
    if grids.len() != cloud.dim() {
        return Err(MfviError::DimensionMismatch {
            expected: cloud.dim(),
            got: grids.len(),
        });
    }
    let mut out_of_bounds = Vec::with_capacity(cloud.dim());
    let mut marginals = Vec::with_capacity(cloud.dim());
    for (i, grid) in grids.iter().enumerate() {
        let (counts, outside) = histogram(cloud.coordinate(i), grid);
        out_of_bounds.push(outside);
        marginals.push(GridMeasure1D::normalize(&smooth(&counts, bandwidth), *grid)?);
    }
    Ok(Projection {
        measure: ProductMeasure::new(marginals)?,
        out_of_bounds,
    })
}

/// Linear interpolation of the sampled slopes, extended linearly past the
/// outer cell centers.
fn drift_slope(psi: &PsiProfile, x: f64) -> f64 {
    let n = psi.slopes.len();
    let s = (x - psi.grid.center(0)) / psi.grid.dx();
    let j = (s.floor().max(0.0) as usize).min(n - 2);
    let t = s - j as f64;
    psi.slopes[j] + t * (psi.slopes[j + 1] - psi.slopes[j])
}

fn move_particles(
    cloud: &ParticleCloud,
    profiles: &[PsiProfile],
    cfg: &SdeConfig,
    step: u64,
) -> Result<ParticleCloud> {
    let scale = (2.0 * cfg.dt).sqrt();
    let mut coords = cloud.coords.clone();
    for (i, xs) in coords.iter_mut().enumerate() {
        let psi = &profiles[i];
        par::for_each_chunk_mut(xs, CHUNK, |c, chunk| {
            let mut rng = CounterRng::new(cfg.seed, &[step, i as u64, c as u64]);
            for x in chunk.iter_mut() {
                let mut next = *x - drift_slope(psi, *x) * cfg.dt;
                if cfg.noise {
                    let xi: f64 = rng.sample(StandardNormal);
                    next += scale * xi;
                }
                *x = next;
            }
        });
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(MfviError::NonFinite(format!("particle positions of coordinate {i}")));
        }
    }
    Ok(ParticleCloud { coords })
}

fn profiles_for(model: &Model, law: &ProductMeasure, opts: &PsiOptions) -> Result<Vec<PsiProfile>> {
    (0..law.dim()).map(|i| psi_profile(model, i, law, opts)).collect()
}

/// One Euler–Maruyama step; `step` keys the random stream.
pub fn mkv_step(
    model: &Model,
    cloud: &ParticleCloud,
    grids: &[Grid1D],
    cfg: &SdeConfig,
    step: u64,
    opts: &PsiOptions,
) -> Result<ParticleCloud> {
    cfg.validate()?;
    let law = project_marginals(cloud, grids, cfg.bandwidth)?.measure;
    move_particles(cloud, &profiles_for(model, &law, opts)?, cfg, step)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdeMoments {
    pub step: usize,
    pub t: f64,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Largest per-coordinate fraction of particles outside the grid.
    pub out_of_bounds: f64,
}

#[derive(Debug, Clone)]
pub struct SdeOutcome {
    pub config: SdeConfig,
    /// Projected marginals averaged over the post-burn-in window.
    pub averaged: ProductMeasure,
    pub cloud: ParticleCloud,
    pub moments: Vec<SdeMoments>,
    /// Largest out-of-grid fraction seen in any projection.
    pub max_out_of_bounds: f64,
    pub steps: usize,
}

fn outside_fraction(cloud: &ParticleCloud, grids: &[Grid1D]) -> f64 {
    grids
        .iter()
        .enumerate()
        .map(|(i, g)| cloud.coordinate(i).iter().filter(|&&x| !g.contains(x)).count())
        .max()
        .unwrap_or(0) as f64
        / cloud.len().max(1) as f64
}

/// Simulates to `t_end` from particles drawn from `nu0`.
pub fn mkv_run(
    model: &Model,
    nu0: &ProductMeasure,
    cfg: &SdeConfig,
    t_end: f64,
    opts: &PsiOptions,
) -> Result<SdeOutcome> {
    cfg.validate()?;
    if t_end <= cfg.burn_in {
        return Err(MfviError::EmptyWindow);
    }
    if model.dim() != nu0.dim() {
        return Err(MfviError::DimensionMismatch {
            expected: model.dim(),
            got: nu0.dim(),
        });
    }
    let grids = nu0.grids();
    let n_steps = (t_end / cfg.dt - 1e-9).ceil() as usize;
    let mut cloud = ParticleCloud::sample(nu0, cfg.n_particles, cfg.seed)?;
    let mut sums: Vec<Vec<f64>> = grids.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut window = 0usize;
    let mut moments = Vec::new();
    let mut max_out: f64 = 0.0;
    let n = cfg.n_particles as f64;
    for k in 0..n_steps {
        let proj = project_marginals(&cloud, &grids, cfg.bandwidth)?;
        let out = proj.out_of_bounds.iter().copied().max().unwrap_or(0) as f64 / n;
        if out > OUT_OF_BOUNDS_WARN && out > max_out {
            log::warn!(
                "{:.2}% of particles lie outside the grid at step {k}",
                100.0 * out
            );
        }
        max_out = max_out.max(out);
        if k as f64 * cfg.dt > cfg.burn_in + 1e-12 {
            for (acc, m) in sums.iter_mut().zip(proj.measure.marginals()) {
                for (a, r) in acc.iter_mut().zip(m.density()) {
                    *a += r;
                }
            }
            window += 1;
        }
        let profiles = profiles_for(model, &proj.measure, opts)?;
        cloud = move_particles(&cloud, &profiles, cfg, k as u64)?;
        let done = k + 1;
        if done == n_steps || (cfg.output_every > 0 && done % cfg.output_every == 0) {
            moments.push(SdeMoments {
                step: done,
                t: done as f64 * cfg.dt,
                means: cloud.means(),
                variances: cloud.variances(),
                out_of_bounds: outside_fraction(&cloud, &grids),
            });
        }
    }
    // the final cloud also belongs to the window
    let proj = project_marginals(&cloud, &grids, cfg.bandwidth)?;
    for (acc, m) in sums.iter_mut().zip(proj.measure.marginals()) {
        for (a, r) in acc.iter_mut().zip(m.density()) {
            *a += r;
        }
    }
    window += 1;
    let averaged = ProductMeasure::new(
        sums.iter()
            .zip(&grids)
            .map(|(s, g)| {
                let avg: Vec<f64> = s.iter().map(|v| v / window as f64).collect();
                GridMeasure1D::normalize(&avg, *g)
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    Ok(SdeOutcome {
        config: *cfg,
        averaged,
        cloud,
        moments,
        max_out_of_bounds: max_out,
        steps: n_steps,
    })
}
