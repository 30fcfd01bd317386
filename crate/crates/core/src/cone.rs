//! Exact integration of exponentially weighted light-cone overlaps.
//!
//! Every second moment of the critically damped field reduces to
//! `∫ e^{rate·s} · len(⋂ₖ [loₖ(s), hiₖ(s)]) ds` with endpoints linear in `s`.
//! The overlap length is then piecewise linear, with breakpoints where two
//! endpoints cross, and each piece integrates in closed form.

use crate::numerics::special::{phi1, phi_v};

/// `c0 + c1 · s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub c0: f64,
    pub c1: f64,
}

impl Linear {
    pub const fn new(c0: f64, c1: f64) -> Self {
        Self { c0, c1 }
    }

    #[inline]
    pub fn at(&self, s: f64) -> f64 {
        self.c0 + self.c1 * s
    }
}

/// An interval `[lo(s), hi(s)]` in `y` whose endpoints move linearly in `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: Linear,
    pub hi: Linear,
}

impl Band {
    pub const fn new(lo: Linear, hi: Linear) -> Self {
        Self { lo, hi }
    }

    /// Backward light cone of `(t, x)` sliced at time `s`: `[x − (t − s), x + (t − s)]`.
    pub fn cone(t: f64, x: f64) -> Self {
        Self { lo: Linear::new(x - t, 1.0), hi: Linear::new(x + t, -1.0) }
    }

    /// A fixed interval `[lo, hi]` in `y`.
    pub fn fixed(lo: f64, hi: f64) -> Self {
        Self { lo: Linear::new(lo, 0.0), hi: Linear::new(hi, 0.0) }
    }
}

/// Length of `⋂ bands` at time `s` (zero when empty).
pub fn overlap_length(bands: &[Band], s: f64) -> f64 {
    let lo = bands.iter().map(|b| b.lo.at(s)).fold(f64::NEG_INFINITY, f64::max);
    let hi = bands.iter().map(|b| b.hi.at(s)).fold(f64::INFINITY, f64::min);
    (hi - lo).max(0.0)
}

/// `∫_{s0}^{s1} exp(rate·s + log_scale) · len(⋂ bands)(s) ds`, exactly.
///
/// `log_scale` is folded into each piece's exponent so that large opposite
/// exponentials never meet in floating point.
pub fn exp_weighted_overlap(bands: &[Band], s0: f64, s1: f64, rate: f64, log_scale: f64) -> f64 {
    assert!(!bands.is_empty(), "overlap of an empty family is unbounded");
    if !(s1 > s0) {
        return 0.0;
    }
    let lines: Vec<Linear> = bands.iter().flat_map(|b| [b.lo, b.hi]).collect();
    let mut cuts = vec![s0, s1];
    for (i, p) in lines.iter().enumerate() {
        for q in &lines[i + 1..] {
            let dc = p.c1 - q.c1;
            if dc != 0.0 {
                let s = (q.c0 - p.c0) / dc;
                if s > s0 && s < s1 {
                    cuts.push(s);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    for piece in cuts.windows(2) {
        let (p, q) = (piece[0], piece[1]);
        let d = q - p;
        if d <= 0.0 {
            continue;
        }
        let mid = 0.5 * (p + q);
        let lo = bands.iter().map(|b| b.lo).max_by(|u, v| u.at(mid).total_cmp(&v.at(mid))).unwrap();
        let hi = bands.iter().map(|b| b.hi).min_by(|u, v| u.at(mid).total_cmp(&v.at(mid))).unwrap();
        if hi.at(mid) <= lo.at(mid) {
            continue;
        }
        let c = (hi.c0 - lo.c0) + (hi.c1 - lo.c1) * p;
        let beta = hi.c1 - lo.c1;
        let rd = rate * d;
        total += (rate * p + log_scale).exp() * (c * d * phi1(rd) + beta * d * d * phi_v(rd));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quadrature::integrate;

    #[test]
    fn single_cone_wave_case() {
        // ∫_0^t 2(t − s) ds = t²
        let v = exp_weighted_overlap(&[Band::cone(1.5, 0.3)], 0.0, 1.5, 0.0, 0.0);
        assert!((v - 2.25).abs() < 1e-15);
    }

    #[test]
    fn matches_quadrature_with_kinks() {
        let bands = [Band::cone(2.0, 0.0), Band::cone(1.3, 0.9), Band::fixed(-0.4, 10.0)];
        let exact = exp_weighted_overlap(&bands, 0.0, 1.3, 0.7, -0.2);
        let mut kinks = vec![];
        for i in 0..3 {
            for j in 0..3 {
                for (u, v) in [(bands[i].lo, bands[j].hi), (bands[i].lo, bands[j].lo), (bands[i].hi, bands[j].hi)] {
                    if u.c1 != v.c1 {
                        kinks.push((v.c0 - u.c0) / (u.c1 - v.c1));
                    }
                }
            }
        }
        let q = integrate(|s| (0.7 * s - 0.2f64).exp() * overlap_length(&bands, s), 0.0, 1.3, &kinks, 1e-15, 0.0, 200);
        assert!((exact - q.value).abs() < 1e-13 * q.value.abs(), "{exact} {}", q.value);
    }

    #[test]
    fn disjoint_cones_give_zero() {
        let v = exp_weighted_overlap(&[Band::cone(1.0, 0.0), Band::cone(1.0, 100.0)], 0.0, 1.0, 1.0, 0.0);
        assert_eq!(v, 0.0);
    }
}
