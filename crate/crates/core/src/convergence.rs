//! Observed orders of convergence from refinement sequences.

/// `ln(e_{i−1}/e_i) / ln(ratio)` for consecutive errors.
pub fn observed_orders(errors: &[f64], ratio: f64) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| (w[0].abs() / w[1].abs()).ln() / ratio.ln())
        .collect()
}

/// Orders from successive differences when no exact value is known:
/// `ln(|v_{i−1} − v_{i−2}| / |v_i − v_{i−1}|) / ln(ratio)`.
pub fn orders_without_reference(values: &[f64], ratio: f64) -> Vec<f64> {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    observed_orders(&diffs, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_sequence_has_order_two() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = hs.iter().map(|h| 3.0 * h * h).collect();
        for o in observed_orders(&errs, 2.0) {
            assert!((o - 2.0).abs() < 1e-12);
        }
        let vals: Vec<f64> = hs.iter().map(|h| 1.0 + 3.0 * h * h).collect();
        for o in orders_without_reference(&vals, 2.0) {
            assert!((o - 2.0).abs() < 1e-9);
        }
    }
}
