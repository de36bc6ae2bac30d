//! Charts, atlases, pullbacks to local patches, and the two group actions.
//!
//! Local coordinates are pixel offsets from the chart center with `x` along
//! columns and `y` along rows. A linear map acts the same way whether offsets are
//! measured in pixels or rescaled to `[-1, 1]^2`, so no unit conversion is needed.

use serde::{Deserialize, Serialize};

use crate::autodiff::grid_sample;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Tensor;

/// Smallest `|det g|` accepted for a group element.
pub const MIN_ABS_DET: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    /// Center pixel as `(row, col)`.
    pub center: (usize, usize),
    pub in_radius: usize,
    pub out_radius: usize,
    /// Linear part of the chart map in local coordinates; `None` is the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart_map: Option<[[f64; 2]; 2]>,
}

impl Chart {
    pub fn new(center: (usize, usize), in_radius: usize, out_radius: usize) -> Self {
        Self {
            center,
            in_radius,
            out_radius,
            chart_map: None,
        }
    }

    pub fn with_map(mut self, map: [[f64; 2]; 2]) -> Self {
        self.chart_map = Some(map);
        self
    }

    /// Chart centered at fractional grid coordinates `(x, y)` = (column, row) fractions.
    pub fn from_fraction(frac: (f64, f64), grid: (usize, usize), in_radius: usize, out_radius: usize) -> Result<Self> {
        let (fx, fy) = frac;
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return Err(Error::Config(format!(
                "chart center ({fx}, {fy}) must lie in [0, 1]^2"
            )));
        }
        let row = (fy * (grid.0 as f64 - 1.0)).round() as usize;
        let col = (fx * (grid.1 as f64 - 1.0)).round() as usize;
        Ok(Self::new((row, col), in_radius, out_radius))
    }

    pub fn in_side(&self) -> usize {
        2 * self.in_radius + 1
    }

    pub fn out_side(&self) -> usize {
        2 * self.out_radius + 1
    }

    fn map_tensor(&self) -> Option<Tensor> {
        self.chart_map.map(|m| Tensor::from_rows(&m))
    }

    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        if self.in_radius < self.out_radius {
            return Err(Error::Config(format!(
                "chart at {:?}: in_radius {} < out_radius {}",
                self.center, self.in_radius, self.out_radius
            )));
        }
        if self.center.0 >= grid.0 || self.center.1 >= grid.1 {
            return Err(Error::Config(format!(
                "chart center {:?} outside {}x{} grid",
                self.center, grid.0, grid.1
            )));
        }
        if self.in_side() > grid.0.min(grid.1) {
            return Err(Error::Config(format!(
                "chart radius {} larger than {}x{} grid",
                self.in_radius, grid.0, grid.1
            )));
        }
        if let Some(m) = self.map_tensor() {
            let d = linalg::det(&m)?;
            if !m.all_finite() || d.abs() <= MIN_ABS_DET {
                return Err(Error::Config(format!(
                    "chart map at {:?} is not invertible (det {d:e})",
                    self.center
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub charts: Vec<Chart>,
}

impl Atlas {
    pub fn new(charts: Vec<Chart>) -> Self {
        Self { charts }
    }

    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        if self.charts.is_empty() {
            return Err(Error::Config("atlas has no charts".into()));
        }
        self.charts.iter().try_for_each(|c| c.validate(grid))
    }
}

/// A `d x H x W` field on the global grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    values: Tensor,
}

impl FeatureField {
    pub fn new(values: Tensor) -> Result<Self> {
        match values.shape() {
            [_, h, w] if *h >= 1 && *w >= 1 => {}
            s => return Err(Error::shape("feature field", format!("expected d x H x W, got {s:?}"))),
        }
        if !values.all_finite() {
            return Err(Error::NonFinite("feature field".into()));
        }
        Ok(Self { values })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }
}

/// Square window of `radius` around `center`; pixels off the grid read 0.
fn window(field: &Tensor, center: (usize, usize), radius: usize) -> Tensor {
    let (d, h, w) = (field.shape()[0], field.shape()[1], field.shape()[2]);
    let side = 2 * radius + 1;
    let mut out = vec![0.0; d * side * side];
    for c in 0..d {
        for i in 0..side {
            let r = center.0 as isize + i as isize - radius as isize;
            if r < 0 || r >= h as isize {
                continue;
            }
            for j in 0..side {
                let col = center.1 as isize + j as isize - radius as isize;
                if col >= 0 && col < w as isize {
                    out[(c * side + i) * side + j] = field.data()[(c * h + r as usize) * w + col as usize];
                }
            }
        }
    }
    Tensor::new(vec![d, side, side], out).expect("shape")
}

/// Center `radius` crop of a `d x S x S` patch.
pub fn crop_center(patch: &Tensor, radius: usize) -> Result<Tensor> {
    let [d, s, s2] = patch.shape() else {
        return Err(Error::shape("crop_center", format!("expected d x S x S, got {:?}", patch.shape())));
    };
    let side = 2 * radius + 1;
    if s != s2 || s % 2 == 0 || side > *s {
        return Err(Error::shape(
            "crop_center",
            format!("cannot take radius {radius} from {:?}", patch.shape()),
        ));
    }
    let off = (s - side) / 2;
    let mut out = Vec::with_capacity(d * side * side);
    for c in 0..*d {
        for i in 0..side {
            let start = (c * s + off + i) * s + off;
            out.extend_from_slice(&patch.data()[start..start + side]);
        }
    }
    Tensor::new(vec![*d, side, side], out)
}

/// Pulls the field back to the chart's local coordinates at the given radius.
///
/// With a chart map `A`, local point `p` reads the field at `center + A^-1 p`.
pub fn pullback(field: &FeatureField, chart: &Chart, radius: usize) -> Result<Tensor> {
    if radius != chart.in_radius && radius != chart.out_radius {
        return Err(Error::Config(format!(
            "pullback radius {radius} is neither the in- nor out-radius of the chart"
        )));
    }
    let Some(map) = chart.map_tensor() else {
        return Ok(window(field.values(), chart.center, radius));
    };
    let inv = linalg::inverse(&map)?;
    // Widen the raw window so every preimage of the local patch is covered.
    let reach = (0..2)
        .map(|i| inv.at2(i, 0).abs() + inv.at2(i, 1).abs())
        .fold(0.0, f64::max);
    let wide = (radius as f64 * reach).ceil() as usize + 1;
    let wide = wide.max(radius);
    let raw = window(field.values(), chart.center, wide);
    let warped = grid_sample(&raw, &inv, 0.0)?;
    crop_center(&warped, radius)
}

/// `(g . E)(p) = E(g^-1 p)` on a local patch.
pub fn act_on_patch(g: &Tensor, patch: &Tensor) -> Result<Tensor> {
    check_invertible(g)?;
    grid_sample(patch, &linalg::inverse(g)?, 0.0)
}

pub fn check_invertible(g: &Tensor) -> Result<f64> {
    let d = linalg::det(g)?;
    if !d.is_finite() || d.abs() <= MIN_ABS_DET {
        return Err(Error::Singular { det: d });
    }
    Ok(d)
}

/// Applies `v -> g v` to every row of an `n x m` array.
pub fn act_on_vectors(g: &Tensor, vectors: &Tensor) -> Result<Tensor> {
    let m = linalg::square_dim(g)?;
    match vectors.shape() {
        [_, c] if *c == m => {}
        [c] if *c == m => return g.matmul(&vectors.clone().reshape(&[m, 1])?)?.reshape(&[m]),
        s => {
            return Err(Error::shape(
                "act_on_vectors",
                format!("vectors {s:?} do not match a {m}x{m} action"),
            ))
        }
    }
    vectors.matmul(&g.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Planar group acting on field patches by resampling.
    FieldWarp,
    /// Linear action on inputs; the scalar output is unchanged.
    VectorLinearInvariant,
    /// Linear action on inputs and outputs alike.
    VectorLinearEquivariant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub mode: ActionMode,
    pub m: usize,
}

impl ActionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ActionMode::FieldWarp && self.m != 2 {
            return Err(Error::Config(format!(
                "field warping acts on planar patches, m must be 2 (got {})",
                self.m
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("action dimension must be positive".into()));
        }
        Ok(())
    }
}
