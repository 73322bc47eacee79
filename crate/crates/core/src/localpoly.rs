//! Kernels and one-sided weighted local polynomial regression.

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::linalg::WeightedQr;
use crate::model::{Dataset, DesignSpec, FitSide, KernelKind, Side};

impl KernelKind {
    /// Kernel at normalised distance `u = |z - center| / h`.
    pub fn at(self, u: f64) -> f64 {
        let u = u.abs();
        match self {
            KernelKind::Triangular => (1.0 - u).max(0.0),
            KernelKind::Uniform => {
                if u < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Constant used by the rule-of-thumb pilot bandwidth.
    pub(crate) fn pilot_constant(self) -> f64 {
        match self {
            KernelKind::Triangular => 2.576,
            KernelKind::Uniform => 1.843,
        }
    }
}

pub fn kernel_weight(kernel: KernelKind, z: f64, center: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(RdError::Parameter(format!("bandwidth must be positive, got {h}")));
    }
    let d = (z - center).abs();
    Ok(match kernel {
        KernelKind::Triangular => (1.0 - d / h).max(0.0),
        KernelKind::Uniform => {
            if d < h {
                1.0
            } else {
                0.0
            }
        }
    })
}

/// Which column of the dataset a side fit regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Outcome,
    Treatment,
}

pub(crate) fn basis_names(order: usize) -> Vec<String> {
    (0..=order)
        .map(|j| match j {
            0 => "intercept".to_string(),
            1 => "(z-c)".to_string(),
            j => format!("(z-c)^{j}"),
        })
        .collect()
}

fn constant_response(values: &[f64], weights: &[f64]) -> Option<f64> {
    let mut it = values.iter().zip(weights).filter(|(_, &w)| w > 0.0);
    let (&first, _) = it.next()?;
    it.all(|(&v, _)| v == first).then_some(first)
}

/// Minimises `sum w_i (y_i - sum_j c_j (z_i - center)^j)^2` over `c`.
///
/// Points are `(z, y, w)`; rows with zero weight are ignored.
pub fn weighted_polyfit(points: &[(f64, f64, f64)], center: f64, order: usize) -> Result<Vec<f64>> {
    let active: Vec<_> = points.iter().filter(|p| p.2 > 0.0).collect();
    if active.len() < order + 1 {
        return Err(RdError::SampleSize {
            needed: order + 1,
            available: active.len(),
        });
    }
    let scale = active
        .iter()
        .fold(0.0_f64, |m, p| m.max((p.0 - center).abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let weights: Vec<f64> = active.iter().map(|p| p.2).collect();
    let ys: Vec<f64> = active.iter().map(|p| p.1).collect();
    let columns = scaled_basis(active.iter().map(|p| p.0 - center), scale, order);
    let qr = WeightedQr::new(&columns, &weights, &basis_names(order))?;
    if let Some(c) = constant_response(&ys, &weights) {
        let mut out = vec![0.0; order + 1];
        out[0] = c;
        return Ok(out);
    }
    let gamma = qr.solve(&ys);
    Ok(unscale(&gamma, scale))
}

fn scaled_basis(offsets: impl Iterator<Item = f64> + Clone, scale: f64, order: usize) -> Vec<Vec<f64>> {
    (0..=order)
        .map(|j| offsets.clone().map(|d| (d / scale).powi(j as i32)).collect())
        .collect()
}

fn unscale(gamma: &[f64], scale: f64) -> Vec<f64> {
    gamma
        .iter()
        .enumerate()
        .map(|(j, g)| g / scale.powi(j as i32))
        .collect()
}

/// Rows of one side, sorted by distance to the cutoff so that every kernel
/// window is a prefix.
#[derive(Debug, Clone)]
pub(crate) struct SideSample {
    pub side: Side,
    /// Signed offsets `z - cutoff`.
    pub dz: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub survey_weight: Vec<f64>,
}

impl SideSample {
    pub fn len(&self) -> usize {
        self.dz.len()
    }

    /// Number of rows strictly within distance `h`.
    pub fn window(&self, h: f64) -> usize {
        self.dz.partition_point(|d| d.abs() < h)
    }

    /// Largest distance on this side.
    pub fn reach(&self) -> f64 {
        self.dz.last().map(|d| d.abs()).unwrap_or(0.0)
    }

    pub fn response(&self, var: Variable) -> &[f64] {
        match var {
            Variable::Outcome => &self.y,
            Variable::Treatment => &self.x,
        }
    }
}

/// Dataset split at the cutoff.
#[derive(Debug, Clone)]
pub(crate) struct SplitSample {
    pub left: SideSample,
    pub right: SideSample,
}

impl SplitSample {
    pub fn new(d: &Dataset) -> Self {
        let build = |side: Side| {
            let mut rows: Vec<_> = d
                .observations
                .iter()
                .filter(|o| d.side_of(o.z) == side)
                .collect();
            rows.sort_by(|a, b| {
                (a.z - d.cutoff)
                    .abs()
                    .total_cmp(&(b.z - d.cutoff).abs())
            });
            SideSample {
                side,
                dz: rows.iter().map(|o| o.z - d.cutoff).collect(),
                y: rows.iter().map(|o| o.y).collect(),
                x: rows.iter().map(|o| o.x).collect(),
                survey_weight: rows.iter().map(|o| o.weight).collect(),
            }
        };
        Self {
            left: build(Side::Left),
            right: build(Side::Right),
        }
    }

    pub fn side(&self, side: Side) -> &SideSample {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn n_total(&self) -> usize {
        self.left.len() + self.right.len()
    }
}

/// A factorised one-sided local design: kernel window, weights and QR.
/// Coefficients of any response on the same rows come from [`LocalDesign::coefficients`].
#[derive(Debug, Clone)]
pub(crate) struct LocalDesign {
    pub side: Side,
    pub h: f64,
    pub order: usize,
    /// Rows of the side sample used (a prefix).
    pub m: usize,
    pub dz: Vec<f64>,
    pub weights: Vec<f64>,
    qr: WeightedQr,
}

impl LocalDesign {
    pub fn new(
        sample: &SideSample,
        kernel: KernelKind,
        h: f64,
        order: usize,
        survey_weights: bool,
    ) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(RdError::Parameter(format!("bandwidth must be positive, got {h}")).on_side(sample.side));
        }
        let m = sample.window(h);
        let dz = sample.dz[..m].to_vec();
        let weights: Vec<f64> = (0..m)
            .map(|i| {
                let k = kernel.at(dz[i] / h);
                if survey_weights {
                    k * sample.survey_weight[i]
                } else {
                    k
                }
            })
            .collect();
        let columns = scaled_basis(dz.iter().copied(), h, order);
        let qr = WeightedQr::new(&columns, &weights, &basis_names(order))
            .map_err(|e| e.on_side(sample.side))?;
        Ok(Self {
            side: sample.side,
            h,
            order,
            m,
            dz,
            weights,
            qr,
        })
    }

    pub fn n_effective(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Coefficients of `response` (a full side column; only the window prefix is used).
    pub fn coefficients(&self, response: &[f64]) -> Vec<f64> {
        let r = &response[..self.m];
        if let Some(c) = constant_response(r, &self.weights) {
            let mut out = vec![0.0; self.order + 1];
            out[0] = c;
            return out;
        }
        unscale(&self.qr.solve(r), self.h)
    }

    /// Weights `l_i` with `coefficients(r)[coef] == sum_i l_i r_i`.
    pub fn functional(&self, coef: usize) -> Vec<f64> {
        let g = self.qr.inverse_gram_column(coef);
        let scale = self.h.powi(coef as i32);
        (0..self.m)
            .map(|i| {
                let u = self.dz[i] / self.h;
                let mut basis = 1.0;
                let mut s = 0.0;
                for gj in &g {
                    s += gj * basis;
                    basis *= u;
                }
                self.weights[i] * s / scale
            })
            .collect()
    }

    /// Coefficient `coef` of the fit to `(z - cutoff)^power`: the leading
    /// misspecification bias per unit of a neglected `power` term.
    pub fn projection(&self, coef: usize, power: usize) -> f64 {
        let scale = self.h.powi(power as i32);
        let l = self.functional(coef);
        let s: f64 = l
            .iter()
            .zip(&self.dz)
            .map(|(l, d)| l * (d / self.h).powi(power as i32))
            .sum();
        s * scale
    }

    pub fn to_fit_side(&self, response: &[f64]) -> FitSide {
        FitSide {
            side: self.side,
            coefficients: self.coefficients(response),
            n_effective: self.n_effective(),
            bandwidth: self.h,
            weight_sum: self.weight_sum(),
        }
    }
}

/// One-sided local polynomial fit of order `spec.p` at the cutoff.
pub fn fit_side(
    d: &Dataset,
    spec: &DesignSpec,
    var: Variable,
    side: Side,
    h: f64,
    survey_weights: bool,
) -> Result<FitSide> {
    let split = SplitSample::new(d);
    let sample = split.side(side);
    let design = LocalDesign::new(sample, spec.kernel, h, spec.p, survey_weights)?;
    Ok(design.to_fit_side(sample.response(var)))
}
