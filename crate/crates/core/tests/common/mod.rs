#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use phdfit::{GaussianComponent, GaussianMixture};
use proptest::prelude::*;

/// Positive-definite `B B^T + 0.1 I` from a random square `B`.
pub fn cov(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |b| {
        let b = DMatrix::from_row_slice(n, n, &b);
        &b * b.transpose() + DMatrix::identity(n, n) * 0.1
    })
}

pub fn gaussian(n: usize, spread: f64) -> impl Strategy<Value = GaussianComponent> {
    (0.05..2.0f64, prop::collection::vec(-spread..spread, n), cov(n))
        .prop_map(move |(w, m, c)| GaussianComponent::new(w, DVector::from_vec(m), c).unwrap())
}

pub fn mixture(n: usize, max: usize, spread: f64) -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec(gaussian(n, spread), 1..=max)
        .prop_map(move |c| GaussianMixture::from_components(n, c).unwrap())
}

/// Two mixtures of one shared random dimension.
pub fn mixture_pair(max: usize, spread: f64) -> impl Strategy<Value = (GaussianMixture, GaussianMixture)> {
    (1usize..=4).prop_flat_map(move |n| (mixture(n, max, spread), mixture(n, max, spread)))
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}
