//! First-stage conditional quantile estimation by kernel-weighted check-loss
//! minimization.
//!
//! The production solver is an exact vertex-to-vertex descent on the
//! piecewise-linear objective: a basic solution interpolates `p + 1`
//! observations, and each step releases one of them and moves along the
//! resulting edge to the best breakpoint (a weighted-quantile line search).
//! A vertex with no improving edge is a global minimizer by convexity.
//! [`quantile_fit_oracle`] enumerates all basic solutions for `p = 1` and is
//! the reference the solver is tested against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg;
use crate::locfit::{check_bandwidth, count_distinct};
use crate::sample::{EvalSide, Sample};

/// Largest in-window sample the enumeration oracle accepts.
pub const ORACLE_MAX_N: usize = 200;

#[inline]
pub fn check_fn(v: f64, eta: f64) -> f64 {
    v * (eta - if v <= 0.0 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub eta: f64,
    pub x0: f64,
    pub a: f64,
    pub q0_hat: f64,
    pub q1_hat: f64,
    pub order: usize,
    /// Coefficients in powers of `x − x0`.
    pub coeffs: Vec<f64>,
    pub n_eff: usize,
    /// Attained value of `Σ k_a(x_i − x0) ρ_η(y_i − Q̂(x_i))`.
    pub loss: f64,
}

impl QuantileFit {
    pub fn predict(&self, x: f64) -> f64 {
        let d = x - self.x0;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * d + c)
    }
}

/// In-window design in scaled units `u = (x − x0)/a`.
struct Window {
    idx: Vec<usize>,
    u: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

fn gather(
    sample: &Sample,
    x0: f64,
    a: f64,
    kernel: &KernelSpec,
    side: EvalSide,
    keep: Option<&[bool]>,
) -> Result<Window> {
    check_bandwidth(a)?;
    let (x, y) = (sample.x(), sample.y());
    let mut win = Window {
        idx: Vec::new(),
        u: Vec::new(),
        y: Vec::new(),
        w: Vec::new(),
    };
    for i in 0..x.len() {
        if keep.is_some_and(|k| !k[i]) || !side.admits(x[i], x0) {
            continue;
        }
        let u = (x[i] - x0) / a;
        let k = kernel.eval(u) / a;
        if k > 0.0 {
            win.idx.push(i);
            win.u.push(u);
            win.y.push(y[i]);
            win.w.push(k);
        }
    }
    if win.idx.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(win)
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile level must lie in (0, 1), got {eta}")))
    }
}

fn design(u: &[f64], d: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(u.len() * d);
    for &ui in u {
        let mut t = 1.0;
        for _ in 0..d {
            z.push(t);
            t *= ui;
        }
    }
    z
}

/// Local polynomial quantile regression of order `p` at `x0` with bandwidth `a`.
#[allow(clippy::too_many_arguments)]
pub fn local_quantile_fit(
    sample: &Sample,
    x0: f64,
    a: f64,
    eta: f64,
    p: usize,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<QuantileFit> {
    local_quantile_fit_masked(sample, None, x0, a, eta, p, kernel, side, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn local_quantile_fit_masked(
    sample: &Sample,
    keep: Option<&[bool]>,
    x0: f64,
    a: f64,
    eta: f64,
    p: usize,
    kernel: &KernelSpec,
    side: EvalSide,
    warm: Option<&[f64]>,
) -> Result<QuantileFit> {
    check_eta(eta)?;
    let win = gather(sample, x0, a, kernel, side, keep)?;
    let d = p + 1;
    if count_distinct(win.idx.iter().map(|&i| sample.x()[i]), d) < d {
        return Err(Error::RankDeficient { needed: d });
    }
    let z = design(&win.u, d);
    // warm start is given in unscaled coefficients
    let start: Option<Vec<f64>> = warm.map(|c| c.iter().enumerate().map(|(j, v)| v * a.powi(j as i32)).collect());
    let (gamma, loss) = solve_check(&z, &win.y, &win.w, d, eta, start.as_deref())?;
    let coeffs: Vec<f64> = gamma.iter().enumerate().map(|(j, g)| g / a.powi(j as i32)).collect();
    Ok(QuantileFit {
        eta,
        x0,
        a,
        q0_hat: coeffs[0],
        q1_hat: coeffs.get(1).copied().unwrap_or(0.0),
        order: p,
        coeffs,
        n_eff: win.idx.len(),
        loss,
    })
}

/// Exhaustive reference solver for the local linear case: evaluates the
/// weighted check loss of every line through two in-window observations
/// (and every horizontal line through one) and keeps the best. Ties are
/// broken towards the smallest `|q1|`, then the smallest `|q0|`.
pub fn quantile_fit_oracle(
    sample: &Sample,
    x0: f64,
    a: f64,
    eta: f64,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<QuantileFit> {
    check_eta(eta)?;
    let win = gather(sample, x0, a, kernel, side, None)?;
    let n = win.idx.len();
    if n > ORACLE_MAX_N {
        return Err(Error::TooLarge {
            n_eff: n,
            max: ORACLE_MAX_N,
        });
    }
    let xs: Vec<f64> = win.idx.iter().map(|&i| sample.x()[i]).collect();
    let loss_of = |b0: f64, b1: f64| -> f64 {
        (0..n)
            .map(|i| win.w[i] * check_fn(win.y[i] - b0 - b1 * (xs[i] - x0), eta))
            .sum()
    };
    let scale = 1.0 + win.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut best: Option<(f64, f64, f64)> = None;
    let mut consider = |b0: f64, b1: f64| {
        let l = loss_of(b0, b1);
        let better = match best {
            None => true,
            Some((bl, bb0, bb1)) => {
                let tol = 1e-12 * scale * (1.0 + bl.abs());
                l < bl - tol
                    || (l <= bl + tol && (b1.abs() < bb1.abs() || (b1.abs() == bb1.abs() && b0.abs() < bb0.abs())))
            }
        };
        if better {
            best = Some((l, b0, b1));
        }
    };
    let mut any_pair = false;
    for i in 0..n {
        consider(win.y[i], 0.0);
        for j in (i + 1)..n {
            if xs[i] != xs[j] {
                any_pair = true;
                let b1 = (win.y[j] - win.y[i]) / (xs[j] - xs[i]);
                consider(win.y[i] - b1 * (xs[i] - x0), b1);
            }
        }
    }
    if !any_pair {
        return Err(Error::RankDeficient { needed: 2 });
    }
    let (loss, q0, q1) = best.expect("window is not empty");
    Ok(QuantileFit {
        eta,
        x0,
        a,
        q0_hat: q0,
        q1_hat: q1,
        order: 1,
        coeffs: vec![q0, q1],
        n_eff: n,
        loss,
    })
}

/// Unweighted check-loss regression on a global polynomial of `degree`.
/// Returns coefficients in powers of `x`.
pub fn global_poly_quantile(sample: &Sample, eta: f64, degree: usize) -> Result<Vec<f64>> {
    let g = global_poly_quantile_scaled(sample.x(), sample.y(), eta, degree)?;
    Ok(g.raw_coefficients())
}

/// Polynomial in `t = (x − center)/scale`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledPoly {
    pub center: f64,
    pub scale: f64,
    pub gamma: Vec<f64>,
}

impl ScaledPoly {
    pub fn for_data(x: &[f64]) -> (f64, f64) {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        (center, scale)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.scale;
        self.gamma.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// Second derivative with respect to `x`.
    pub fn second_derivative(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.scale;
        let mut acc = 0.0;
        let mut tp = 1.0;
        for j in 2..self.gamma.len() {
            acc += (j * (j - 1)) as f64 * self.gamma[j] * tp;
            tp *= t;
        }
        acc / (self.scale * self.scale)
    }

    pub fn raw_coefficients(&self) -> Vec<f64> {
        let d = self.gamma.len();
        let mut out = vec![0.0; d];
        for (j, g) in self.gamma.iter().enumerate() {
            let f = g / self.scale.powi(j as i32);
            let mut binom = 1.0;
            for m in 0..=j {
                if m > 0 {
                    binom = binom * (j - m + 1) as f64 / m as f64;
                }
                out[m] += f * binom * (-self.center).powi((j - m) as i32);
            }
        }
        out
    }
}

pub(crate) fn global_poly_quantile_scaled(x: &[f64], y: &[f64], eta: f64, degree: usize) -> Result<ScaledPoly> {
    check_eta(eta)?;
    let d = degree + 1;
    if count_distinct(x.iter().copied(), d) < d {
        return Err(Error::RankDeficient { needed: d });
    }
    let (center, scale) = ScaledPoly::for_data(x);
    let t: Vec<f64> = x.iter().map(|v| (v - center) / scale).collect();
    let z = design(&t, d);
    let w = vec![1.0; x.len()];
    let start = irls_start(&z, y, &w, d, eta, 30)?;
    let (gamma, _) = solve_check(&z, y, &w, d, eta, Some(&start))?;
    Ok(ScaledPoly { center, scale, gamma })
}

/// Unweighted least-squares polynomial on the same scaled basis.
pub(crate) fn global_poly_ls(x: &[f64], y: &[f64], degree: usize) -> Result<ScaledPoly> {
    let d = degree + 1;
    if count_distinct(x.iter().copied(), d) < d {
        return Err(Error::RankDeficient { needed: d });
    }
    let (center, scale) = ScaledPoly::for_data(x);
    let t: Vec<f64> = x.iter().map(|v| (v - center) / scale).collect();
    let z = design(&t, d);
    let gamma = weighted_ls(&z, y, &vec![1.0; x.len()], d).ok_or(Error::RankDeficient { needed: d })?;
    Ok(ScaledPoly { center, scale, gamma })
}

fn weighted_ls(z: &[f64], y: &[f64], w: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for (i, &wi) in w.iter().enumerate() {
        let zi = &z[i * d..(i + 1) * d];
        for r in 0..d {
            b[r] += wi * zi[r] * y[i];
            for c in r..d {
                a[r * d + c] += wi * zi[r] * zi[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            a[r * d + c] = a[c * d + r];
        }
    }
    linalg::solve(&a, &b, d, 1e-13)
}

/// Majorize-minimize iterations on the check loss, `|r| ≤ r²/(2|r₀|) + |r₀|/2`.
fn irls_start(z: &[f64], y: &[f64], w: &[f64], d: usize, eta: f64, iters: usize) -> Result<Vec<f64>> {
    let n = y.len();
    let mut beta = weighted_ls(z, y, w, d).ok_or(Error::RankDeficient { needed: d })?;
    let spread = {
        let mut s: Vec<f64> = y.to_vec();
        s.sort_by(f64::total_cmp);
        (s[(3 * n) / 4] - s[n / 4]).abs().max(1e-12)
    };
    let eps = 1e-6 * spread;
    let mut ww = vec![0.0; n];
    let mut yy = vec![0.0; n];
    for _ in 0..iters {
        for i in 0..n {
            let r = y[i] - dot(&z[i * d..(i + 1) * d], &beta);
            let a = r.abs().max(eps);
            ww[i] = w[i] / (2.0 * a);
            // shifted response absorbs the linear (η − ½) term
            yy[i] = y[i] + (eta - 0.5) * 2.0 * a;
        }
        match weighted_ls(z, &yy, &ww, d) {
            Some(b) => beta = b,
            None => break,
        }
    }
    Ok(beta)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn total_loss(r: &[f64], w: &[f64], eta: f64) -> f64 {
    r.iter().zip(w).map(|(ri, wi)| wi * check_fn(*ri, eta)).sum()
}

/// Minimizes `Σ w_i ρ_η(r_i − t c_i)` over `t`. Returns the minimizing
/// breakpoint and the observation that defines it.
fn line_min(r: &[f64], c: &[f64], w: &[f64], eta: f64, buf: &mut Vec<(f64, f64, usize)>) -> Option<(f64, usize)> {
    buf.clear();
    let mut slope = 0.0;
    for i in 0..r.len() {
        let ci = c[i];
        if ci.abs() <= 1e-14 {
            continue;
        }
        let wc = w[i] * ci.abs();
        slope -= if ci > 0.0 { wc * eta } else { wc * (1.0 - eta) };
        buf.push((r[i] / ci, wc, i));
    }
    if buf.is_empty() {
        return None;
    }
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    for &(s, wc, i) in buf.iter() {
        slope += wc;
        if slope >= 0.0 {
            return Some((s, i));
        }
    }
    let last = buf.last().expect("non-empty");
    Some((last.0, last.2))
}

/// Exact minimizer of `Σ w_i ρ_η(y_i − z_i·β)` for a row-major `n × d` design.
pub(crate) fn solve_check(
    z: &[f64],
    y: &[f64],
    w: &[f64],
    d: usize,
    eta: f64,
    start: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let rank_err = Error::RankDeficient { needed: d };
    let beta0 = match start {
        Some(s) => s.to_vec(),
        None => weighted_ls(z, y, w, d).ok_or(rank_err.clone())?,
    };
    let row = |i: usize| &z[i * d..(i + 1) * d];
    let mut r: Vec<f64> = (0..n).map(|i| y[i] - dot(row(i), &beta0)).collect();
    let scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // initial basis: most nearly interpolated rows that are linearly independent
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()));
    let mut basis: Vec<usize> = Vec::with_capacity(d);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(d);
    for &i in &order {
        let mut v = row(i).to_vec();
        let norm0 = dot(&v, &v).sqrt();
        for q in &ortho {
            let proj = dot(&v, q);
            for (vk, qk) in v.iter_mut().zip(q) {
                *vk -= proj * qk;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 * norm0.max(1e-300) {
            for vk in v.iter_mut() {
                *vk /= norm;
            }
            ortho.push(v);
            basis.push(i);
            if basis.len() == d {
                break;
            }
        }
    }
    if basis.len() < d {
        return Err(rank_err);
    }

    let mut beta = vec![0.0; d];
    let mut loss = f64::INFINITY;
    let mut binv = vec![0.0; d * d];
    let mut c = vec![0.0; n];
    let mut buf = Vec::with_capacity(n);
    let refresh = |basis: &[usize], beta: &mut Vec<f64>, binv: &mut Vec<f64>, r: &mut Vec<f64>| -> bool {
        let mut zb = vec![0.0; d * d];
        let mut yb = vec![0.0; d];
        for (l, &i) in basis.iter().enumerate() {
            zb[l * d..(l + 1) * d].copy_from_slice(row(i));
            yb[l] = y[i];
        }
        match linalg::inverse(&zb, d, 1e-13) {
            Some(inv) => {
                *binv = inv;
                for rr in 0..d {
                    beta[rr] = (0..d).map(|cc| binv[rr * d + cc] * yb[cc]).sum();
                }
                for i in 0..n {
                    r[i] = y[i] - dot(row(i), beta);
                }
                true
            }
            None => false,
        }
    };
    if !refresh(&basis, &mut beta, &mut binv, &mut r) {
        return Err(rank_err);
    }
    loss = loss.min(total_loss(&r, w, eta));

    let max_iter = 50 * n + 100;
    let mut iter = 0;
    'outer: while iter < max_iter {
        iter += 1;
        let tol = 1e-13 * scale * (1.0 + loss.abs());
        let mut best: Option<(f64, usize, usize)> = None; // (new loss, leaving slot, entering row)
        for j in 0..d {
            for i in 0..n {
                c[i] = (0..d).map(|k| row(i)[k] * binv[k * d + j]).sum();
            }
            if let Some((t, k)) = line_min(&r, &c, w, eta, &mut buf) {
                if k == basis[j] || t == 0.0 {
                    continue;
                }
                let new_loss: f64 = (0..n).map(|i| w[i] * check_fn(r[i] - t * c[i], eta)).sum();
                if new_loss < loss - tol && best.is_none_or(|b| new_loss < b.0) {
                    best = Some((new_loss, j, k));
                }
            }
        }
        if let Some((_, j, k)) = best {
            let prev = basis[j];
            basis[j] = k;
            if !refresh(&basis, &mut beta, &mut binv, &mut r) {
                basis[j] = prev;
                refresh(&basis, &mut beta, &mut binv, &mut r);
                break;
            }
            loss = total_loss(&r, w, eta);
            continue;
        }
        // Degenerate vertex in the local linear case: more than two rows are
        // interpolated, so also try rotating about each of them.
        if d == 2 {
            let zero_tol = 1e-11 * scale;
            let interpolated: Vec<usize> = (0..n).filter(|&i| r[i].abs() <= zero_tol).collect();
            if interpolated.len() > 2 {
                for &a in &interpolated {
                    let za = row(a);
                    // direction keeping row `a` fixed: z_a·δ = 0
                    let delta = [-za[1], za[0]];
                    for i in 0..n {
                        c[i] = dot(row(i), &delta);
                    }
                    if let Some((t, k)) = line_min(&r, &c, w, eta, &mut buf) {
                        let new_loss: f64 = (0..n).map(|i| w[i] * check_fn(r[i] - t * c[i], eta)).sum();
                        if new_loss < loss - tol && k != a {
                            let prev = basis.clone();
                            basis = vec![a, k];
                            if refresh(&basis, &mut beta, &mut binv, &mut r) {
                                loss = total_loss(&r, w, eta);
                                continue 'outer;
                            }
                            basis = prev;
                            refresh(&basis, &mut beta, &mut binv, &mut r);
                        }
                    }
                }
            }
        }
        break;
    }
    Ok((beta, loss))
}

/// Approximate first-order conditions of a local linear quantile fit:
/// returns `(gaps, bound)` where `gaps[j] = |(1/n) Σ k_a,i u_iʲ (η − 1{y_i ≤ Q̂(x_i)})|`
/// and `bound = (2/n) max_i k_a,i max(1, |u_i|)` over the window.
pub fn first_order_gaps(
    sample: &Sample,
    fit: &QuantileFit,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<([f64; 2], f64)> {
    let win = gather(sample, fit.x0, fit.a, kernel, side, None)?;
    let n = sample.len() as f64;
    let scale = 1.0 + win.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut g = [0.0; 2];
    let mut bound: f64 = 0.0;
    for (l, &i) in win.idx.iter().enumerate() {
        let q = fit.predict(sample.x()[i]);
        let below = if win.y[l] <= q + 1e-10 * scale { 1.0 } else { 0.0 };
        let s = eta_minus(fit.eta, below);
        g[0] += win.w[l] * s;
        g[1] += win.w[l] * win.u[l] * s;
        bound = bound.max(win.w[l] * win.u[l].abs().max(1.0));
    }
    Ok(([g[0].abs() / n, g[1].abs() / n], 2.0 * bound / n))
}

#[inline]
fn eta_minus(eta: f64, ind: f64) -> f64 {
    eta - ind
}
