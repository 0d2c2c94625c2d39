//! Independent reference computations used by the integration tests. None of
//! these call into the library's numerics.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Fixed-point fraction bits for the power-series oracle. Terms of the J0/Y0
/// series reach ~1e43 at x = 100 before cancelling, so the working precision
/// has to cover that plus the final 1e-16.
const FRAC_BITS: u64 = 400;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn to_fixed(x: f64) -> BigInt {
    assert!(x.is_finite() && x >= 0.0);
    if x == 0.0 {
        return BigInt::zero();
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = if exp == 0 {
        (bits & ((1 << 52) - 1)) << 1
    } else {
        (bits & ((1 << 52) - 1)) | (1 << 52)
    };
    let shift = exp - 1075 + FRAC_BITS as i64;
    assert!(shift >= 0, "x too small for the oracle");
    BigInt::from(mant) << shift as usize
}

fn from_fixed(v: &BigInt) -> f64 {
    // Keep 64 significant bits before converting so to_f64 never overflows.
    let excess = v.bits().saturating_sub(64);
    let top = (v.abs() >> excess as usize).to_f64().unwrap();
    let val = top * 2f64.powi(excess as i32 - FRAC_BITS as i32);
    if v.is_negative() {
        -val
    } else {
        val
    }
}

/// `(J0(x), Y0(x))` from the ascending power series evaluated exactly in
/// big fixed-point arithmetic:
///
/// J0 = sum (-1)^k q^k / (k!)^2,  q = x^2/4
/// Y0 = (2/pi) [ (ln(x/2) + gamma) J0 + sum_{k>=1} (-1)^{k+1} H_k q^k / (k!)^2 ]
pub fn bessel_series(x: f64) -> (f64, f64) {
    assert!(x > 0.0);
    let one = BigInt::one() << FRAC_BITS as usize;
    let xf = to_fixed(x);
    let q = (&xf * &xf) >> (FRAC_BITS as usize + 2);
    let mut term = one.clone(); // q^k / (k!)^2
    let mut harmonic = BigInt::zero(); // H_k
    let mut j = one.clone();
    let mut s = BigInt::zero();
    let mut k: u64 = 0;
    loop {
        k += 1;
        term = ((&term * &q) >> FRAC_BITS as usize) / BigInt::from(k * k);
        harmonic += &one / BigInt::from(k);
        let ht = (&term * &harmonic) >> FRAC_BITS as usize;
        if k % 2 == 1 {
            j -= &term;
            s += &ht;
        } else {
            j += &term;
            s -= &ht;
        }
        if term.is_zero() || (k as f64 > x && term.bits() < 8) {
            break;
        }
    }
    let j0 = from_fixed(&j);
    let series = from_fixed(&s);
    let y0 = std::f64::consts::FRAC_2_PI * (((0.5 * x).ln() + EULER_GAMMA) * j0 + series);
    (j0, y0)
}

/// Root of the oracle's J0 in `[a, b]` by bisection.
pub fn bessel_zero(mut a: f64, mut b: f64) -> f64 {
    let mut fa = bessel_series(a).0;
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let fm = bessel_series(m).0;
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// `(i/4) H0(kd)` from the oracle Bessel pair.
pub fn green_oracle(d: f64, f: f64) -> Complex64 {
    let (j, y) = bessel_series(2.0 * std::f64::consts::PI * f * d);
    Complex64::new(0.0, 0.25) * Complex64::new(j, y)
}

pub fn inv_alpha_oracle(f_res: f64, chi: f64, gamma_l: f64, f: f64) -> Complex64 {
    let k = 2.0 * std::f64::consts::PI * f;
    Complex64::new((f_res * f_res - f * f) / chi, -(k * k / 4.0 + gamma_l))
}

/// Inverse of a dense complex matrix by Gauss-Jordan elimination with
/// partial pivoting (row-major).
pub fn dense_inverse(a: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut m = a.to_vec();
    let mut inv: Vec<Complex64> = (0..n * n)
        .map(|i| {
            if i / n == i % n {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x * n + c].norm().total_cmp(&m[y * n + c].norm()))
            .unwrap();
        for j in 0..n {
            m.swap(c * n + j, p * n + j);
            inv.swap(c * n + j, p * n + j);
        }
        let d = m[c * n + c];
        for j in 0..n {
            m[c * n + j] /= d;
            inv[c * n + j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r * n + c];
                for j in 0..n {
                    let (mv, iv) = (m[c * n + j], inv[c * n + j]);
                    m[r * n + j] -= f * mv;
                    inv[r * n + j] -= f * iv;
                }
            }
        }
    }
    inv
}

/// Direct O(N^2) inverse DFT with the `1/N` convention.
pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|t| {
            x.iter()
                .enumerate()
                .map(|(k, v)| {
                    let ph = 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    v * Complex64::new(ph.cos(), ph.sin())
                })
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

/// Relative difference `|a - b| / max(|a|, |b|)`.
pub fn rel(a: Complex64, b: Complex64) -> f64 {
    let s = a.norm().max(b.norm());
    if s == 0.0 {
        0.0
    } else {
        (a - b).norm() / s
    }
}
