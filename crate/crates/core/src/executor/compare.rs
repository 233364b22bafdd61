//! Tolerance-based output comparison.
//!
//! Element `i` passes when `|c[i] - r[i]| <= atol + rtol * |r[i]|`. Shapes
//! must match exactly; a mismatch fails with an infinite error.

use serde::{Deserialize, Serialize};

/// Dense row-major array of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl HostTensor {
    /// Panics if `data.len()` does not match the product of `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not hold {} elements",
            data.len()
        );
        Self { shape, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::new(vec![data.len()], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub passed: bool,
    /// `+inf` on shape mismatch or when any difference is NaN.
    pub max_abs_err: f64,
}

pub fn compare_outputs(
    candidate: &HostTensor,
    reference: &HostTensor,
    rtol: f64,
    atol: f64,
) -> Comparison {
    if candidate.shape != reference.shape || candidate.data.len() != reference.data.len() {
        return Comparison {
            passed: false,
            max_abs_err: f64::INFINITY,
        };
    }
    let mut passed = true;
    let mut max_abs_err = 0.0f64;
    for (&c, &r) in candidate.data.iter().zip(&reference.data) {
        let err = (c - r).abs();
        if err.is_nan() {
            passed = false;
            max_abs_err = f64::INFINITY;
            continue;
        }
        let tol = atol + rtol * r.abs();
        if tol.is_nan() || err > tol {
            passed = false;
        }
        max_abs_err = max_abs_err.max(err);
    }
    Comparison {
        passed,
        max_abs_err,
    }
}
