// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference computations written without touching the library's numerics:
//! batch conjugate posteriors, closed-form marginal likelihoods, brute-force
//! segmentation, quadrature, and exhaustive matching.

#![allow(dead_code)]

use bocpd::Observation;

/// Log-gamma via the Lanczos approximation (g = 7, n = 9), good to ~1e-15
/// relative for the positive arguments used here.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Batch Normal-Gamma posterior `(mu, kappa, alpha, beta)` from sufficient statistics.
pub fn ng_batch(prior: (f64, f64, f64, f64), xs: &[f64]) -> (f64, f64, f64, f64) {
    let (mu0, k0, a0, b0) = prior;
    let n = xs.len() as f64;
    if xs.is_empty() {
        return prior;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let kn = k0 + n;
    (
        (k0 * mu0 + n * mean) / kn,
        kn,
        a0 + n / 2.0,
        b0 + 0.5 * ss + k0 * n * (mean - mu0) * (mean - mu0) / (2.0 * kn),
    )
}

/// Log marginal likelihood of a univariate segment under a Normal-Gamma prior.
pub fn ng_log_marginal(prior: (f64, f64, f64, f64), xs: &[f64]) -> f64 {
    let (_, k0, a0, b0) = prior;
    let (_, kn, an, bn) = ng_batch(prior, xs);
    let n = xs.len() as f64;
    ln_gamma(an) - ln_gamma(a0) + a0 * b0.ln() - an * bn.ln() + 0.5 * (k0 / kn).ln()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// 2x2 or 1x1 symmetric matrices stored row-major.
pub fn det(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => panic!("oracle determinant only for d <= 2"),
    }
}

/// Batch NIW posterior `(mu, kappa, nu, psi)`; `psi` row-major.
pub fn niw_batch(
    mu0: &[f64],
    k0: f64,
    nu0: f64,
    psi0: &[f64],
    xs: &[Vec<f64>],
) -> (Vec<f64>, f64, f64, Vec<f64>) {
    let d = mu0.len();
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (mu0.to_vec(), k0, nu0, psi0.to_vec());
    }
    let mean: Vec<f64> = (0..d).map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / n).collect();
    let kn = k0 + n;
    let mut psi = psi0.to_vec();
    for i in 0..d {
        for j in 0..d {
            let scatter: f64 = xs.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum();
            psi[i * d + j] += scatter + k0 * n / kn * (mean[i] - mu0[i]) * (mean[j] - mu0[j]);
        }
    }
    let mu = (0..d).map(|i| (k0 * mu0[i] + n * mean[i]) / kn).collect();
    (mu, kn, nu0 + n, psi)
}

fn ln_multigamma(a: f64, d: usize) -> f64 {
    let pi = std::f64::consts::PI;
    d as f64 * (d as f64 - 1.0) / 4.0 * pi.ln()
        + (0..d).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// Log marginal likelihood of a segment under an NIW prior (d <= 2).
pub fn niw_log_marginal(mu0: &[f64], k0: f64, nu0: f64, psi0: &[f64], xs: &[Vec<f64>]) -> f64 {
    let d = mu0.len();
    let n = xs.len() as f64;
    let (_, kn, nun, psin) = niw_batch(mu0, k0, nu0, psi0, xs);
    -0.5 * n * d as f64 * std::f64::consts::PI.ln() + ln_multigamma(nun / 2.0, d)
        - ln_multigamma(nu0 / 2.0, d)
        + nu0 / 2.0 * det(psi0, d).ln()
        - nun / 2.0 * det(&psin, d).ln()
        + d as f64 / 2.0 * (k0 / kn).ln()
}

/// Log marginal likelihood of one segment of observations.
pub type SegmentScore<'a> = dyn Fn(&[Observation]) -> f64 + 'a;

/// Factorized Normal-Gamma segment score: product over dimensions.
pub fn factorized_segment(prior: (f64, f64, f64, f64)) -> impl Fn(&[Observation]) -> f64 {
    move |seg: &[Observation]| {
        let d = seg[0].values.len();
        (0..d)
            .map(|i| {
                let xs: Vec<f64> = seg.iter().map(|o| o.values[i]).collect();
                ng_log_marginal(prior, &xs)
            })
            .sum()
    }
}

/// Run-length log posterior after every prefix of `stream`, by enumerating
/// every placement of boundaries between observations. Boundaries occur
/// independently with probability `h`; run length `r` after step `t` counts
/// the observations in the current segment, with `r = 0` meaning a boundary
/// directly after `z_t`.
pub fn brute_force_posteriors(stream: &[Observation], h: f64, score: &SegmentScore) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for t in 1..=stream.len() {
        let prefix = &stream[..t];
        // terms[r] collects log joint weights of segmentations ending in run length r
        let mut terms: Vec<Vec<f64>> = vec![Vec::new(); t + 1];
        for mask in 0u32..(1 << (t - 1)) {
            let mut log_w = 0.0;
            let mut start = 0;
            for s in 0..t {
                let boundary_after = s + 1 < t && mask & (1 << s) != 0;
                if s + 1 < t {
                    log_w += if boundary_after { h.ln() } else { (1.0 - h).ln() };
                }
                if boundary_after || s + 1 == t {
                    log_w += score(&prefix[start..=s]);
                    if boundary_after {
                        start = s + 1;
                    }
                }
            }
            let last_len = t - start;
            terms[0].push(log_w + h.ln());
            terms[last_len].push(log_w + (1.0 - h).ln());
        }
        let per_r: Vec<f64> = terms.iter().map(|v| log_sum_exp(v)).collect();
        let z = log_sum_exp(&per_r);
        out.push(per_r.iter().map(|v| v - z).collect());
    }
    out
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, eps, 50)
}

/// Largest matching between `truth` and `detected` with `|t - d| <= margin`,
/// by exhaustive search.
pub fn max_matching(truth: &[i64], detected: &[i64], margin: i64) -> usize {
    fn go(i: usize, truth: &[i64], detected: &[i64], used: &mut Vec<bool>, margin: i64) -> usize {
        if i == truth.len() {
            return 0;
        }
        let mut best = go(i + 1, truth, detected, used, margin);
        for j in 0..detected.len() {
            if !used[j] && (truth[i] - detected[j]).abs() <= margin {
                used[j] = true;
                best = best.max(1 + go(i + 1, truth, detected, used, margin));
                used[j] = false;
            }
        }
        best
    }
    go(0, truth, detected, &mut vec![false; detected.len()], margin)
}

/// Relative difference with an absolute floor of 1 for values near zero.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn obs(t: i64, values: &[f64]) -> Observation {
    Observation::new(t, values.to_vec())
}
