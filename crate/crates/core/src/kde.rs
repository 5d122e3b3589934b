//! Weighted one-dimensional Gaussian kernel density estimation.
//!
//! The density is `f(x) = (1/h) * sum_i w_i * K((x - x_i) / h)` with the
//! standard normal kernel `K`. Note that it is not divided by the weight sum,
//! so it integrates to `sum_i w_i`.
//!
//! Peak search is restricted to the sample locations, so a selected value is
//! always one of the inputs.

use crate::error::{Error, Result};

/// `1 / sqrt(2 pi)`
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard Gaussian kernel.
#[inline]
pub fn gaussian_kernel(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Sample values with non-negative weights and a kernel bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSamples<'a> {
    values: &'a [f64],
    weights: &'a [f64],
    bandwidth: f64,
}

impl<'a> WeightedSamples<'a> {
    pub fn new(values: &'a [f64], weights: &'a [f64], bandwidth: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("KDE needs at least one sample".into()));
        }
        if values.len() != weights.len() {
            return Err(Error::Input(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Input(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite sample value".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Input(
                "weights must be finite and non-negative".into(),
            ));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Input("at least one weight must be positive".into()));
        }
        Ok(Self {
            values,
            weights,
            bandwidth,
        })
    }

    pub fn values(&self) -> &[f64] {
        self.values
    }

    pub fn weights(&self) -> &[f64] {
        self.weights
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Evaluate the weighted density at `x`.
pub fn density_at(samples: &WeightedSamples<'_>, x: f64) -> f64 {
    let h = samples.bandwidth;
    let sum: f64 = samples
        .values
        .iter()
        .zip(samples.weights)
        .map(|(xi, wi)| wi * gaussian_kernel((x - xi) / h))
        .sum();
    sum / h
}

/// The sample with the highest density at its own location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub value: f64,
    pub index: usize,
    pub density: f64,
}

/// Arg-max of the density over the sample locations.
///
/// Ties in density go to the larger weight, then to the lower index.
pub fn peak_sample(samples: &WeightedSamples<'_>) -> Peak {
    let mut best = Peak {
        value: samples.values[0],
        index: 0,
        density: density_at(samples, samples.values[0]),
    };
    for (i, &x) in samples.values.iter().enumerate().skip(1) {
        let d = density_at(samples, x);
        let better = d > best.density
            || (d == best.density && samples.weights[i] > samples.weights[best.index]);
        if better {
            best = Peak {
                value: x,
                index: i,
                density: d,
            };
        }
    }
    best
}

/// Value of [`peak_sample`].
pub fn weighted_peak_stat(samples: &WeightedSamples<'_>) -> f64 {
    peak_sample(samples).value
}
