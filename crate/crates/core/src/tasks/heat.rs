//! Heat flow around an excluded rectangle, integrated with the explicit 5-point stencil.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{sample_rng, FieldDataset};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatConfig {
    /// Side of the square grid in pixels.
    pub grid: usize,
    pub n_samples: usize,
    pub alpha: f64,
    pub dt: f64,
    /// Pixel spacing.
    pub spacing: f64,
    pub n_steps: usize,
    /// `[x0, y0, x1, y1]` in grid fractions.
    pub exclusion: [f64; 4],
    pub boundary_value: f64,
    pub amplitude: [f64; 2],
    /// Periods per grid side.
    pub frequency: [f64; 2],
    pub seed: u64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            n_samples: 2000,
            alpha: 1.0,
            dt: 0.2,
            spacing: 1.0,
            n_steps: 3,
            exclusion: [0.1, 0.2, 0.3, 0.5],
            boundary_value: std::f64::consts::SQRT_2,
            amplitude: [0.5, 1.5],
            frequency: [1.0, 4.0],
            seed: 0,
        }
    }
}

impl HeatConfig {
    /// `alpha * dt / h^2`.
    pub fn courant(&self) -> f64 {
        self.alpha * self.dt / (self.spacing * self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.courant();
        if !r.is_finite() || r > 0.25 {
            return Err(Error::Unstable(r));
        }
        if r < 0.0 {
            return Err(Error::Config(format!("negative diffusion number {r}")));
        }
        if self.grid < 3 {
            return Err(Error::Config(format!("grid {} too small", self.grid)));
        }
        let [x0, y0, x1, y1] = self.exclusion;
        let inside = |v: f64| v > 0.0 && v < 1.0;
        if !(inside(x0) && inside(x1) && inside(y0) && inside(y1) && x0 < x1 && y0 < y1) {
            return Err(Error::Config(format!(
                "exclusion rectangle {:?} must lie inside (0, 1)^2",
                self.exclusion
            )));
        }
        if self.amplitude[0] > self.amplitude[1] || self.frequency[0] > self.frequency[1] {
            return Err(Error::Config("parameter ranges must be ordered low, high".into()));
        }
        Ok(())
    }

    /// Pixel mask of cells held at the boundary value.
    pub fn fixed_mask(&self) -> Vec<bool> {
        let n = self.grid;
        let to_px = |f: f64| (f * (n as f64 - 1.0)).round() as usize;
        let [x0, y0, x1, y1] = self.exclusion;
        let (c0, c1, r0, r1) = (to_px(x0), to_px(x1), to_px(y0), to_px(y1));
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let edge = i == 0 || j == 0 || i == n - 1 || j == n - 1;
                let excluded = (r0..=r1).contains(&i) && (c0..=c1).contains(&j);
                mask[i * n + j] = edge || excluded;
            }
        }
        mask
    }

    /// Sum of a vertical and a horizontal sinusoid with random parameters.
    pub fn initial_field(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.grid;
        let mut draw = || {
            let a = rng.random_range(self.amplitude[0]..=self.amplitude[1]);
            let f = rng.random_range(self.frequency[0]..=self.frequency[1]);
            let p = rng.random_range(0.0..2.0 * PI);
            (a, f, p)
        };
        let (av, fv, pv) = draw();
        let (ah, fh, ph) = draw();
        let mut u = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let y = i as f64 / n as f64;
                let x = j as f64 / n as f64;
                u[i * n + j] = av * (2.0 * PI * fv * y + pv).sin() + ah * (2.0 * PI * fh * x + ph).sin();
            }
        }
        u
    }
}

/// One explicit step; cells flagged in `fixed` keep their value.
pub fn heat_step(u: &[f64], n: usize, r: f64, fixed: &[bool]) -> Vec<f64> {
    let mut out = u.to_vec();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let k = i * n + j;
            if fixed[k] {
                continue;
            }
            let lap = u[k - n] + u[k + n] + u[k - 1] + u[k + 1] - 4.0 * u[k];
            out[k] = u[k] + r * lap;
        }
    }
    out
}

/// Evolves a full grid `n_steps` times with Dirichlet cells set to the boundary value.
pub fn evolve(cfg: &HeatConfig, initial: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let fixed = cfg.fixed_mask();
    let mut u = initial.to_vec();
    for (v, &f) in u.iter_mut().zip(&fixed) {
        if f {
            *v = cfg.boundary_value;
        }
    }
    let r = cfg.courant();
    for _ in 0..cfg.n_steps {
        u = heat_step(&u, cfg.grid, r, &fixed);
    }
    Ok(u)
}

pub fn gen_heat_dataset(cfg: &HeatConfig) -> Result<FieldDataset> {
    cfg.validate()?;
    let n = cfg.grid;
    let fixed = cfg.fixed_mask();
    let mut xs = Vec::with_capacity(cfg.n_samples * n * n);
    let mut ys = Vec::with_capacity(cfg.n_samples * n * n);
    for s in 0..cfg.n_samples {
        let mut rng = sample_rng(cfg.seed, s as u64);
        let mut u = cfg.initial_field(&mut rng);
        for (v, &f) in u.iter_mut().zip(&fixed) {
            if f {
                *v = cfg.boundary_value;
            }
        }
        let y = evolve(cfg, &u)?;
        xs.extend_from_slice(&u);
        ys.extend_from_slice(&y);
    }
    let shape = vec![cfg.n_samples, 1, n, n];
    FieldDataset::new(Tensor::new(shape.clone(), xs)?, Tensor::new(shape, ys)?)
}
