/// Mean with a 95% normal-approximation interval (mean ± 1.96·sem).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

impl MeanCi {
    /// A single observation has no spread estimate.
    pub fn degenerate(&self) -> bool {
        self.count < 2
    }
}

pub const Z95: f64 = 1.96;

pub fn mean_ci(xs: &[f64]) -> MeanCi {
    let k = xs.len();
    if k == 0 {
        return MeanCi { mean: f64::NAN, ci_low: f64::NAN, ci_high: f64::NAN, count: 0 };
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return MeanCi { mean, ci_low: mean, ci_high: mean, count: 1 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let half = Z95 * (var / k as f64).sqrt();
    MeanCi { mean, ci_low: mean - half, ci_high: mean + half, count: k }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let m = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sample sd = sqrt(5/3), sem = sd/2
        let half = 1.96 * (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((m.ci_high - 2.5 - half).abs() < 1e-12);
        assert!((2.5 - m.ci_low - half).abs() < 1e-12);
        assert!(!m.degenerate());
    }

    #[test]
    fn single_value_is_degenerate() {
        let m = mean_ci(&[0.7]);
        assert!(m.degenerate());
        assert_eq!((m.ci_low, m.mean, m.ci_high), (0.7, 0.7, 0.7));
    }

    #[test]
    fn constant_sample_collapses() {
        let m = mean_ci(&[0.5; 5]);
        assert_eq!((m.ci_low, m.ci_high), (0.5, 0.5));
    }
}
