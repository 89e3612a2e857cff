use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::float::Float;
use crate::tensor::Tensor;

/// LeCun normal: `N(0, 1/fan_in)`.
pub fn lecun_normal<T: Float, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (1.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape/data agree")
}
