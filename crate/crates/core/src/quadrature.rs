//! Adaptive quadrature: Simpson for the pathwise probe integrals and a
//! globally adaptive Gauss–Kronrod (7/15) rule for vector-valued integrands.

use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not reach tolerance {tolerance} within {cap} subintervals (estimate {estimate})")]
    NotConverged {
        tolerance: f64,
        cap: usize,
        estimate: f64,
    },
    #[error("integrand is not finite at x = {0}")]
    NonFinite(f64),
}

/// Subdivision cap used by the probe integrals.
pub const SIMPSON_CAP: usize = 1 << 16;

struct SimpsonPanel<const N: usize> {
    a: f64,
    b: f64,
    fa: [f64; N],
    fm: [f64; N],
    fb: [f64; N],
    whole: [f64; N],
    tol: f64,
}

fn simpson<const N: usize>(h: f64, fa: &[f64; N], fm: &[f64; N], fb: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| h / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i]))
}

fn checked<const N: usize>(x: f64, v: [f64; N]) -> Result<[f64; N], QuadratureError> {
    if v.iter().all(|y| y.is_finite()) {
        Ok(v)
    } else {
        Err(QuadratureError::NonFinite(x))
    }
}

/// Adaptive Simpson rule for an `N`-vector integrand over `[a, b]`.
///
/// A panel is accepted when `max_c |S_left + S_right - S_whole| ≤ 15 tol_panel`
/// (with Richardson correction); the tolerance is split in half at each
/// bisection so the total absolute error stays near `abs_tol`. At most
/// `cap` panels are created.
pub fn adaptive_simpson<const N: usize, F>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    cap: usize,
) -> Result<[f64; N], QuadratureError>
where
    F: FnMut(f64) -> [f64; N],
{
    if a == b {
        return Ok([0.0; N]);
    }
    let fa = checked(a, f(a))?;
    let fb = checked(b, f(b))?;
    let m = 0.5 * (a + b);
    let fm = checked(m, f(m))?;
    let mut stack = vec![SimpsonPanel {
        a,
        b,
        whole: simpson(b - a, &fa, &fm, &fb),
        fa,
        fm,
        fb,
        tol: abs_tol,
    }];
    let mut total = [0.0; N];
    let mut comp = [0.0; N];
    let mut panels = 1usize;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = checked(lm, f(lm))?;
        let frm = checked(rm, f(rm))?;
        let left = simpson(m - p.a, &p.fa, &flm, &p.fm);
        let right = simpson(p.b - m, &p.fm, &frm, &p.fb);
        let err = (0..N)
            .map(|c| (left[c] + right[c] - p.whole[c]).abs())
            .fold(0.0, f64::max);
        // Bisection cannot improve once the panel width hits machine resolution.
        let tiny = (p.b - p.a) <= 4.0 * f64::EPSILON * p.a.abs().max(p.b.abs());
        if err <= 15.0 * p.tol || tiny {
            for c in 0..N {
                let v = left[c] + right[c] + (left[c] + right[c] - p.whole[c]) / 15.0;
                let t = total[c] + v;
                comp[c] += if total[c].abs() >= v.abs() {
                    (total[c] - t) + v
                } else {
                    (v - t) + total[c]
                };
                total[c] = t;
            }
            continue;
        }
        panels += 1;
        if panels > cap {
            return Err(QuadratureError::NotConverged {
                tolerance: abs_tol,
                cap,
                estimate: total[0] + comp[0],
            });
        }
        let tol = 0.5 * p.tol;
        stack.push(SimpsonPanel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
            tol,
        });
        stack.push(SimpsonPanel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
            tol,
        });
    }
    Ok(std::array::from_fn(|c| total[c] + comp[c]))
}

/// Scalar convenience wrapper around [`adaptive_simpson`].
pub fn simpson_scalar<F>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64, QuadratureError>
where
    F: FnMut(f64) -> f64,
{
    adaptive_simpson::<1, _>(|x| [f(x)], a, b, abs_tol, SIMPSON_CAP).map(|v| v[0])
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct GkPanel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for GkPanel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for GkPanel {}
impl PartialOrd for GkPanel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for GkPanel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F>(f: &mut F, a: f64, b: f64) -> Result<GkPanel, QuadratureError>
where
    F: FnMut(f64) -> Vec<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron: Option<Vec<f64>> = None;
    let mut gauss: Option<Vec<f64>> = None;
    let mut accumulate = |x: f64, wk: f64, wg: Option<f64>| -> Result<(), QuadratureError> {
        let v = f(x);
        if v.iter().any(|y| !y.is_finite()) {
            return Err(QuadratureError::NonFinite(x));
        }
        let k = kron.get_or_insert_with(|| vec![0.0; v.len()]);
        for (s, y) in k.iter_mut().zip(&v) {
            *s += wk * y;
        }
        if let Some(wg) = wg {
            let g = gauss.get_or_insert_with(|| vec![0.0; v.len()]);
            for (s, y) in g.iter_mut().zip(&v) {
                *s += wg * y;
            }
        }
        Ok(())
    };
    for (idx, (&x, &wk)) in XGK.iter().zip(&WGK).enumerate() {
        let wg = if idx % 2 == 1 { Some(WG[idx / 2]) } else { None };
        if x == 0.0 {
            accumulate(c, wk, wg)?;
        } else {
            accumulate(c - h * x, wk, wg)?;
            accumulate(c + h * x, wk, wg)?;
        }
    }
    let kron: Vec<f64> = kron.unwrap_or_default().into_iter().map(|s| s * h).collect();
    let gauss: Vec<f64> = gauss.unwrap_or_default().into_iter().map(|s| s * h).collect();
    let error = kron
        .iter()
        .zip(&gauss)
        .map(|(k, g)| (k - g).abs())
        .fold(0.0, f64::max);
    Ok(GkPanel {
        a,
        b,
        value: kron,
        error,
    })
}

/// Globally adaptive Gauss–Kronrod 7/15 for a vector-valued integrand.
///
/// `initial` splits `[a, b]` into that many equal panels before adapting;
/// the panel with the largest max-norm error estimate is bisected until the
/// summed estimate is below `abs_tol`.
pub fn gauss_kronrod_vec<F>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    initial: usize,
    cap: usize,
) -> Result<Vec<f64>, QuadratureError>
where
    F: FnMut(f64) -> Vec<f64>,
{
    let initial = initial.max(1);
    let mut heap = BinaryHeap::new();
    let width = (b - a) / initial as f64;
    for p in 0..initial {
        let lo = a + width * p as f64;
        let hi = if p + 1 == initial { b } else { lo + width };
        heap.push(gk15(&mut f, lo, hi)?);
    }
    loop {
        let total_err: f64 = heap.iter().map(|p| p.error).sum();
        if total_err <= abs_tol {
            break;
        }
        if heap.len() >= cap {
            return Err(QuadratureError::NotConverged {
                tolerance: abs_tol,
                cap,
                estimate: total_err,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let m = 0.5 * (worst.a + worst.b);
        heap.push(gk15(&mut f, worst.a, m)?);
        heap.push(gk15(&mut f, m, worst.b)?);
    }
    // Sum in position order so the result does not depend on heap layout.
    let mut panels = heap.into_vec();
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let len = panels[0].value.len();
    let mut out = vec![0.0; len];
    for p in &panels {
        for (o, v) in out.iter_mut().zip(&p.value) {
            *o += v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_polynomials_and_arctan() {
        let v = simpson_scalar(|x| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(v, 4.0, max_relative = 1e-14);
        let v = simpson_scalar(|u| 1.0 / ((1.0 + u) * (1.0 + u) + 1.0), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - (2f64.atan() - 1f64.atan())).abs() < 1e-11);
    }

    #[test]
    fn simpson_vector_and_cap() {
        let v = adaptive_simpson::<2, _>(|x| [x.exp(), x.sin()], 0.0, 1.0, 1e-12, SIMPSON_CAP)
            .unwrap();
        assert!((v[0] - (1f64.exp() - 1.0)).abs() < 1e-11);
        assert!((v[1] - (1.0 - 1f64.cos())).abs() < 1e-11);
        let r = adaptive_simpson::<1, _>(|x| [(1.0 / x).sin()], 1e-9, 1.0, 1e-14, 8);
        assert!(matches!(r, Err(QuadratureError::NotConverged { .. })));
    }

    #[test]
    fn kronrod_matches_closed_forms() {
        let v = gauss_kronrod_vec(|x| vec![(-x).exp(), x * x], 0.0, 40.0, 1e-13, 4, 1000).unwrap();
        assert!((v[0] - (1.0 - (-40f64).exp())).abs() < 1e-12);
        assert_relative_eq!(v[1], 40f64.powi(3) / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let r = simpson_scalar(|x| 1.0 / x, 0.0, 1.0, 1e-8);
        assert!(matches!(r, Err(QuadratureError::NonFinite(_))));
    }
}
