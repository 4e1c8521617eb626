//! Small numeric helpers shared by the learners.

/// Margins beyond this saturate; keeps `sigmoid` strictly inside (0, 1).
const MAX_MARGIN: f64 = 36.0;

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-MAX_MARGIN, MAX_MARGIN);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Numerically stable `ln(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic loss in nats for margin `z` and label `y`, exact (unclipped).
pub fn logistic_loss(z: f64, y: u8) -> f64 {
    softplus(z) - f64::from(y) * z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_stays_open_interval() {
        for z in [-1e6, -800.0, -36.0, 0.0, 36.0, 800.0, 1e6] {
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0, "sigmoid({z}) = {p}");
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn logistic_loss_matches_direct_formula() {
        for &(z, y) in &[(0.3, 1u8), (-2.0, 0), (4.0, 0), (-0.7, 1)] {
            let p = 1.0 / (1.0 + f64::exp(-z));
            let direct = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
            assert!((logistic_loss(z, y) - direct).abs() < 1e-12);
        }
    }
}
