//! One-dimensional maximization of the negative-binomial shape parameter.
//!
//! Every shape update in the crate maximizes a function of the form
//! `h(r) = sum_i ln C(x_i + r - 1, x_i) + r * linear`, with `linear < 0`.
//! `h` is strictly concave in `r`, so its maximizer is the unique root of the
//! decreasing derivative `sum_i [digamma(x_i + r) - digamma(r)] + linear`,
//! which is bracketed and then located with Brent's method in `ln r`.

use crate::nb::{log_binom_coef, rising_digamma};

pub const SHAPE_FLOOR: f64 = 1e-6;
pub const SHAPE_CEILING: f64 = 1e7;

/// Where a bounded maximization ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Interior,
    Floor,
    Ceiling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeUpdate {
    pub r: f64,
    pub bound: Bound,
}

/// `sum_i ln C(x_i + r - 1, x_i) + r * linear`. Zero counts contribute nothing
/// to the first sum and may be omitted from `counts`.
pub fn shape_objective(counts: &[u64], linear: f64, r: f64) -> f64 {
    counts.iter().map(|&x| log_binom_coef(r, x)).sum::<f64>() + r * linear
}

fn shape_slope(counts: &[u64], linear: f64, r: f64) -> f64 {
    counts.iter().map(|&x| rising_digamma(r, x)).sum::<f64>() + linear
}

/// Maximize [`shape_objective`] over `[SHAPE_FLOOR, SHAPE_CEILING]`.
///
/// The returned point never has a lower objective than `current`.
pub fn maximize_shape(counts: &[u64], linear: f64, current: f64) -> ShapeUpdate {
    let slope = |u: f64| shape_slope(counts, linear, u.exp());
    let (lo, hi) = (SHAPE_FLOOR.ln(), SHAPE_CEILING.ln());
    let (g_lo, g_hi) = (slope(lo), slope(hi));

    let candidate = if g_lo <= 0.0 {
        ShapeUpdate {
            r: SHAPE_FLOOR,
            bound: Bound::Floor,
        }
    } else if g_hi >= 0.0 {
        ShapeUpdate {
            r: SHAPE_CEILING,
            bound: Bound::Ceiling,
        }
    } else {
        let u = brent_root(slope, lo, hi, g_lo, g_hi, 1e-12);
        ShapeUpdate {
            r: u.exp(),
            bound: Bound::Interior,
        }
    };

    if (SHAPE_FLOOR..=SHAPE_CEILING).contains(&current)
        && shape_objective(counts, linear, current) > shape_objective(counts, linear, candidate.r)
    {
        ShapeUpdate {
            r: current,
            bound: candidate.bound,
        }
    } else {
        candidate
    }
}

/// Brent's root finder for `f` on `[a, b]` with `f(a) * f(b) < 0`.
fn brent_root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, tol: f64) -> f64 {
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    b
}
