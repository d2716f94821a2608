//! Least-squares line through (dimension, runtime) points.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearFit {
    Line { slope: f64, intercept: f64, r2: f64 },
    /// Fewer than two distinct abscissae.
    Degenerate,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.is_empty() {
        return LinearFit::Degenerate;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return LinearFit::Degenerate;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // A flat response is fitted exactly.
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LinearFit::Line { slope, intercept, r2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [2.0, 10.0, 20.0, 30.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let LinearFit::Line { slope, intercept, r2 } = linear_fit(&x, &y) else {
            panic!("expected a line")
        };
        assert!((slope - 3.0).abs() < 1e-12);
        assert!((intercept - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_r2_below_one() {
        let LinearFit::Line { r2, .. } = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 2.0, 1.0, 3.0]) else {
            panic!("expected a line")
        };
        assert!((r2 - 0.64).abs() < 1e-12);
    }

    #[test]
    fn single_dimension_is_degenerate() {
        assert_eq!(linear_fit(&[10.0], &[4.0]), LinearFit::Degenerate);
        assert_eq!(linear_fit(&[10.0, 10.0], &[4.0, 5.0]), LinearFit::Degenerate);
        assert_eq!(linear_fit(&[], &[]), LinearFit::Degenerate);
    }
}
