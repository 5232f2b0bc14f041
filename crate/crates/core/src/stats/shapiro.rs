//! Shapiro–Wilk W test, Royston (1995) algorithm AS R94.
//!
//! Coefficients come from normal order-statistic approximations corrected by
//! Royston's polynomials; the p-value from his normalizing transformation of
//! `ln(1 - W)` (separate fits for n <= 11 and n >= 12, exact for n = 3).

use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_values, StatsError, TestMethod, TestResult};

const SMALL: f64 = 1e-19;

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Antisymmetric weights `a_1..a_{n/2}` for the largest order statistics.
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let normal = Normal::standard();
    let an25 = n as f64 + 0.25;
    // m_i for the smallest order statistics (negative)
    let m: Vec<f64> = (1..=half).map(|i| normal.inverse_cdf((i as f64 - 0.375) / an25)).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = Vec::with_capacity(half);
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        a.push(a1);
        a.push(a2);
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        a.push(a1);
        (1, fac)
    };
    a.extend(m[first..].iter().map(|mi| -mi / fac));
    a
}

pub fn shapiro_wilk(values: &[f64]) -> Result<TestResult, StatsError> {
    check_values(values)?;
    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::SampleSizeOutOfRange(n));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(StatsError::DegenerateSample);
    }

    let a = coefficients(n);
    let mut weights = vec![0.0; n];
    for (i, &ai) in a.iter().enumerate() {
        weights[i] = -ai;
        weights[n - 1 - i] = ai;
    }
    // W is the squared correlation between the data and the weights.
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let mean_w = weights.iter().sum::<f64>() / n as f64;
    let mean_x = xs.iter().sum::<f64>() / n as f64;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (w, v) in weights.iter().zip(&xs) {
        let (da, dx) = (w - mean_w, v - mean_x);
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    let ssassx = (ssa * ssx).sqrt();
    // 1 - W, computed to avoid cancellation when W is close to 1
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    let p_value = if n == 3 {
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        (PI6 * (w.sqrt().asin() - STQR)).clamp(0.0, 1.0)
    } else {
        let y = w1.ln();
        let nf = n as f64;
        if n <= 11 {
            let gamma = poly(&G, nf);
            if y >= gamma {
                1e-99
            } else {
                let y = -(gamma - y).ln();
                let mean = poly(&C3, nf);
                let sd = poly(&C4, nf).exp();
                Normal::new(mean, sd).expect("sd > 0").sf(y)
            }
        } else {
            let ln_n = nf.ln();
            let mean = poly(&C5, ln_n);
            let sd = poly(&C6, ln_n).exp();
            Normal::new(mean, sd).expect("sd > 0").sf(y)
        }
    };
    Ok(TestResult { statistic: w, p_value, method: TestMethod::ShapiroWilk })
}
