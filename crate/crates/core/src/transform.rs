//! Value rescaling `h(z) = sign(z)(√(|z|+1) − 1) + εz` and its inverse.

use serde::{Deserialize, Serialize};

pub fn h_transform(z: f64, epsilon: f64) -> f64 {
    let mag = (z.abs() + 1.0).sqrt() - 1.0;
    mag.copysign(z) + epsilon * z
}

/// Closed-form inverse of [`h_transform`].
///
/// With `u = √(|y|+1)`, `h(y) = x` becomes `εu² + u − (1 + ε + |x|) = 0`; the
/// root is rearranged as `u − 1 = 2|x| / (√((1+2ε)² + 4ε|x|) + 1 + 2ε)` so no
/// cancellation occurs near zero, and `|y| = (u − 1)(u + 1)`.
pub fn h_inverse(z: f64, epsilon: f64) -> f64 {
    let x = z.abs();
    let a = 1.0 + 2.0 * epsilon;
    let u_minus_1 = 2.0 * x / ((a * a + 4.0 * epsilon * x).sqrt() + a);
    (u_minus_1 * (u_minus_1 + 2.0)).copysign(z)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueTransform {
    Identity,
    Rescale { epsilon: f64 },
}

impl ValueTransform {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ValueTransform::Identity => z,
            ValueTransform::Rescale { epsilon } => h_transform(z, epsilon),
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            ValueTransform::Identity => z,
            ValueTransform::Rescale { epsilon } => h_inverse(z, epsilon),
        }
    }
}

/// Backward recursion `out[t] = h(r[t] + γ·h⁻¹(out[t+1]))` seeded with `bootstrap`
/// (already in transformed space). With the identity transform this is the
/// plain discounted n-step return.
pub fn transformed_recursion(rewards: &[f64], bootstrap: f64, gamma: f64, transform: ValueTransform) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        next = transform.apply(rewards[t] + gamma * transform.inverse(next));
        out[t] = next;
    }
    out
}
