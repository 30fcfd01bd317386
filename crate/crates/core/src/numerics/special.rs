//! Elementary special functions with removable singularities handled
//! explicitly, plus the sine/cosine integrals used for oscillatory tails.

use num_complex::Complex64;

/// Below this argument `sin(x)/x` and `sinh(x)/x` switch to a Taylor series.
pub const SINC_SERIES_THRESHOLD: f64 = 1e-4;

/// Below this modulus the complex `g_k` moments use their power series.
pub const MOMENT_SERIES_RADIUS: f64 = 4.0;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `sin(x)/x`, with a six-term Taylor expansion for `|x| < 1e-4`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < SINC_SERIES_THRESHOLD {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0))))
    } else {
        x.sin() / x
    }
}

/// `sinh(x)/x`, with a six-term Taylor expansion for `|x| < 1e-4`.
pub fn sinhc(x: f64) -> f64 {
    if x.abs() < SINC_SERIES_THRESHOLD {
        let x2 = x * x;
        1.0 + x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0 * (1.0 + x2 / 72.0 * (1.0 + x2 / 110.0))))
    } else {
        x.sinh() / x
    }
}

/// `(e^z - 1)/z`, equal to 1 at `z = 0`.
pub fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

/// `∫_0^1 v e^{zv} dv = (z e^z - e^z + 1)/z²`.
pub fn phi_v(z: f64) -> f64 {
    if z.abs() < 1.0 {
        // sum_n z^n / (n! (n + 2))
        let mut term = 1.0;
        let mut sum = 0.5;
        for n in 1..40 {
            term *= z / n as f64;
            let add = term / (n as f64 + 2.0);
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

/// `(e^z - 1 - z)/z²`, equal to 1/2 at `z = 0`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1.0 {
        let mut term = 1.0;
        let mut sum = 0.5;
        for n in 1..40 {
            term *= z / n as f64;
            let add = term / ((n + 1) as f64 * (n + 2) as f64);
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Complex `(e^w - 1)/w`.
pub fn cphi1(w: Complex64) -> Complex64 {
    moment(0, w)
}

/// `g_k(w) = ∫_0^1 v^k e^{wv} dv` for complex `w`.
///
/// Series for `|w| < 4`, otherwise the upward recursion
/// `g_k = (e^w - k g_{k-1}) / w` which is stable in that range for small `k`.
pub fn moment(k: u32, w: Complex64) -> Complex64 {
    if w.norm() < MOMENT_SERIES_RADIUS {
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(1.0 / (k as f64 + 1.0), 0.0);
        for n in 1..80 {
            term = term * w / n as f64;
            let add = term / (n as f64 + k as f64 + 1.0);
            sum += add;
            if add.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum
    } else {
        let ew = w.exp();
        let mut g = (ew - 1.0) / w;
        for j in 1..=k {
            g = (ew - g * j as f64) / w;
        }
        g
    }
}

/// Sine and cosine integrals `(Si(x), Ci(x))` for `x > 0`.
///
/// Power series for `x <= 2`, a complex continued fraction for `E1(ix)` above.
pub fn sici(x: f64) -> (f64, f64) {
    assert!(x > 0.0, "sici requires a positive argument");
    if x <= 2.0 {
        let x2 = x * x;
        let mut si = 0.0;
        let mut ci = 0.0;
        // Si = sum (-1)^k x^{2k+1} / ((2k+1)(2k+1)!)
        let mut term = x; // x^{2k+1}/(2k+1)!
        for k in 0..30 {
            let add = term / (2 * k + 1) as f64;
            si += if k % 2 == 0 { add } else { -add };
            term *= x2 / ((2 * k + 2) as f64 * (2 * k + 3) as f64);
            if add.abs() < 1e-18 {
                break;
            }
        }
        let mut term = 1.0; // x^{2k}/(2k)!
        for k in 1..30 {
            term *= x2 / ((2 * k - 1) as f64 * (2 * k) as f64);
            let add = term / (2 * k) as f64;
            ci += if k % 2 == 0 { add } else { -add };
            if add.abs() < 1e-18 {
                break;
            }
        }
        (si, EULER_GAMMA + x.ln() + ci)
    } else {
        let tiny = 1e-300;
        let mut b = Complex64::new(1.0, x);
        let mut c = Complex64::new(1.0 / tiny, 0.0);
        let mut d = Complex64::new(1.0, 0.0) / b;
        let mut h = d;
        for i in 2..200 {
            let a = -((i - 1) * (i - 1)) as f64;
            b += 2.0;
            d = Complex64::new(1.0, 0.0) / (d * a + b);
            c = b + Complex64::new(a, 0.0) / c;
            let del = c * d;
            h *= del;
            if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
                break;
            }
        }
        h *= Complex64::new(x.cos(), -x.sin());
        (std::f64::consts::FRAC_PI_2 + h.im, -h.re)
    }
}

/// `∫_{x0}^∞ e^{iωξ} ξ^{-n} dξ` for `x0 > 0` and `n >= 1` (`ω ≠ 0` when `n = 1`).
pub fn fourier_tail(omega: f64, n: u32, x0: f64) -> Complex64 {
    assert!(n >= 1 && x0 > 0.0);
    if omega < 0.0 {
        return fourier_tail(-omega, n, x0).conj();
    }
    if omega == 0.0 {
        assert!(n >= 2, "non-oscillatory tail with n = 1 diverges");
        return Complex64::new(x0.powi(1 - n as i32) / (n - 1) as f64, 0.0);
    }
    let (si, ci) = sici(omega * x0);
    let mut e = Complex64::new(-ci, std::f64::consts::FRAC_PI_2 - si);
    let phase = Complex64::from_polar(1.0, omega * x0);
    for m in 2..=n {
        let m1 = (m - 1) as f64;
        e = phase * x0.powi(1 - m as i32) / m1 + Complex64::new(0.0, omega / m1) * e;
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinc_series_matches_direct_near_threshold() {
        for &x in &[0.9e-4f64, 0.5e-4, 1e-6] {
            let direct = x.sin() / x;
            assert!((sinc(x) - direct).abs() < 1e-15);
            assert!((sinhc(x) - x.sinh() / x).abs() < 1e-15);
        }
        assert_eq!(sinc(0.0), 1.0);
        assert_eq!(sinhc(0.0), 1.0);
    }

    #[test]
    fn phi_functions_limits() {
        assert_eq!(phi1(0.0), 1.0);
        assert!((phi_v(0.0) - 0.5).abs() < 1e-16);
        assert!((phi2(0.0) - 0.5).abs() < 1e-16);
        // continuity across the series switch
        for &z in &[0.999_999, -0.999_999] {
            let a = phi_v(z);
            let b = (z * f64::exp(z) - f64::exp_m1(z)) / (z * z);
            assert!((a - b).abs() < 1e-13, "{a} {b}");
            let a = phi2(z);
            let b = (f64::exp_m1(z) - z) / (z * z);
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn complex_moments_agree_across_switch() {
        for k in 0..4 {
            let w = Complex64::new(2.0, 3.4);
            let series = moment(k, w);
            let ew = w.exp();
            let mut g = (ew - 1.0) / w;
            for j in 1..=k {
                g = (ew - g * j as f64) / w;
            }
            assert!((series - g).norm() < 1e-12 * g.norm(), "k={k}");
        }
    }

    #[test]
    fn sici_reference_values() {
        // Abramowitz & Stegun table 5.1
        let (si, ci) = sici(1.0);
        assert!((si - 0.946_083_070_367_183).abs() < 1e-14);
        assert!((ci - 0.337_403_922_900_968_1).abs() < 1e-14);
        let (si, ci) = sici(10.0);
        assert!((si - 1.658_347_594_218_874).abs() < 1e-13);
        assert!((ci + 0.045_456_433_004_455_37).abs() < 1e-13);
        // continuity at the switch
        let (a, b) = sici(2.0);
        let (c, d) = sici(2.0 + 1e-12);
        assert!((a - c).abs() < 1e-11 && (b - d).abs() < 1e-11);
    }

    #[test]
    fn fourier_tail_against_integration_by_parts() {
        // ∫_x0^∞ cos(ωξ)/ξ² dξ = cos(ωx0)/x0 - ω(π/2 - Si(ωx0))
        let (w, x0) = (1.7, 3.0);
        let (si, _) = sici(w * x0);
        let expect = (w * x0).cos() / x0 - w * (std::f64::consts::FRAC_PI_2 - si);
        assert!((fourier_tail(w, 2, x0).re - expect).abs() < 1e-14);
        assert!((fourier_tail(0.0, 3, 2.0).re - 0.125).abs() < 1e-16);
        let neg = fourier_tail(-w, 3, x0);
        let pos = fourier_tail(w, 3, x0);
        assert!((neg - pos.conj()).norm() < 1e-16);
    }
}
