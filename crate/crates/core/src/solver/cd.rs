//! Proximal Newton with a Gram-matrix inner solver.
//!
//! Within predictor block `j`, row `i` has ones in exactly the first
//! `level_ij` columns, so weighted column sums are suffix sums over per-level
//! bins and cross products come from joint level histograms. The quadratic
//! model is built once per outer step on a working set and minimized by
//! coordinate descent on its Gram matrix, with an occasional sign-preserving
//! Newton step on the nonzero set to finish ill-conditioned problems.

use super::{kkt_term, logit, sigmoid, soft_threshold, softplus, FitOptions, FitResult, WeightSpec};
use crate::basis::DesignMatrix;
use crate::error::{Error, Result};

const PROB_CLAMP: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;
/// Zero columns whose gradient is below this fraction of λ sit out a
/// Newton step. The outer KKT check still covers every column.
const SCREEN: f64 = 0.9;
const REFINE_EVERY: usize = 5;

/// Solves `A x = b` for symmetric positive definite `A` (row-major, `m × m`,
/// overwritten). `None` if `A` is numerically singular.
fn cholesky_solve(a: &mut [f64], mut b: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if d <= 1e-12 * a[j * m + j].abs().max(f64::MIN_POSITIVE) {
            return None;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut v = a[i * m + j];
            for k in 0..j {
                v -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = v / d;
        }
    }
    for i in 0..m {
        for k in 0..i {
            b[i] -= a[i * m + k] * b[k];
        }
        b[i] /= a[i * m + i];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            b[i] -= a[k * m + i] * b[k];
        }
        b[i] /= a[i * m + i];
    }
    Some(b)
}

struct Problem<'a> {
    design: &'a DesignMatrix,
    y: &'a [u8],
    wts: Vec<f64>,
    lambda: f64,
    center: bool,
}

impl Problem<'_> {
    fn loss(&self, eta: &[f64]) -> f64 {
        eta.iter()
            .zip(self.y)
            .zip(&self.wts)
            .map(|((&e, &yi), &w)| w * (softplus(e) - f64::from(yi) * e))
            .sum()
    }

    fn penalty(&self, beta: &[f64]) -> f64 {
        self.lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn eta(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        let d = self.design;
        let mut offset = intercept;
        if self.center {
            offset -= d.means().iter().zip(beta).map(|(m, b)| m * b).sum::<f64>();
        }
        let mut eta = vec![offset; d.n_rows()];
        let mut cum = Vec::new();
        for j in 0..d.n_predictors() {
            let r = d.block(j);
            cum.clear();
            cum.push(0.0);
            let mut acc = 0.0;
            for &b in &beta[r] {
                acc += b;
                cum.push(acc);
            }
            for (e, &l) in eta.iter_mut().zip(d.levels(j)) {
                *e += cum[l as usize];
            }
        }
        eta
    }

    /// Gradient of the smooth loss given per-row derivatives `a_i = ω_i (p_i − y_i)`.
    fn gradient(&self, a: &[f64], bins: &mut Vec<f64>) -> (f64, Vec<f64>) {
        let d = self.design;
        let g0: f64 = a.iter().sum();
        let mut g = vec![0.0; d.n_cols()];
        for j in 0..d.n_predictors() {
            let r = d.block(j);
            bins.clear();
            bins.resize(r.len() + 1, 0.0);
            for (&ai, &l) in a.iter().zip(d.levels(j)) {
                bins[l as usize] += ai;
            }
            let mut acc = 0.0;
            for k in (1..=r.len()).rev() {
                acc += bins[k];
                let c = r.start + k - 1;
                g[c] = if self.center {
                    acc - d.means()[c] * g0
                } else {
                    acc
                };
            }
        }
        (g0, g)
    }
}

/// Quadratic model restricted to a working set, in covariance form. Index 0
/// is the intercept and index `t + 1` is column `cols[t]`.
struct Gram {
    cols: Vec<usize>,
    dim: usize,
    h: Vec<f64>,
}

impl Gram {
    /// Builds `X̃ᵀ V X̃` over the working columns from per-level histograms of
    /// the curvature. Pairs of blocks need one pass over the rows each.
    fn build(prob: &Problem<'_>, v: &[f64], cols: Vec<usize>) -> Gram {
        let d = prob.design;
        let dim = cols.len() + 1;
        let mut h = vec![0.0; dim * dim];

        // (block, [(model index, within-block index)])
        let mut blocks: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
        for (t, &c) in cols.iter().enumerate() {
            let j = d.block_of(c);
            let k = c - d.block(j).start;
            match blocks.last_mut() {
                Some((bj, members)) if *bj == j => members.push((t + 1, k)),
                _ => blocks.push((j, vec![(t + 1, k)])),
            }
        }

        let vtot: f64 = v.iter().sum();
        h[0] = vtot;
        let mut suf = Vec::new();
        for (j, members) in &blocks {
            let kmax = d.block(*j).len();
            suf.clear();
            suf.resize(kmax + 2, 0.0);
            for (&l, &vi) in d.levels(*j).iter().zip(v) {
                suf[l as usize] += vi;
            }
            for l in (0..=kmax).rev() {
                suf[l] += suf[l + 1];
            }
            for &(a, ka) in members {
                h[a] = suf[ka + 1];
                h[a * dim] = suf[ka + 1];
                for &(b, kb) in members {
                    h[a * dim + b] = suf[ka.max(kb) + 1];
                }
            }
        }

        let mut joint = Vec::new();
        for (x, (j, mj)) in blocks.iter().enumerate() {
            for (l, ml) in &blocks[x + 1..] {
                let (kj, kl) = (d.block(*j).len() + 2, d.block(*l).len() + 2);
                joint.clear();
                joint.resize(kj * kl, 0.0);
                for ((&a, &b), &vi) in d.levels(*j).iter().zip(d.levels(*l)).zip(v) {
                    joint[a as usize * kl + b as usize] += vi;
                }
                for a in (0..kj - 1).rev() {
                    for b in (0..kl - 1).rev() {
                        joint[a * kl + b] += joint[(a + 1) * kl + b] + joint[a * kl + b + 1]
                            - joint[(a + 1) * kl + b + 1];
                    }
                }
                for &(p, kp) in mj {
                    for &(q, kq) in ml {
                        let val = joint[(kp + 1) * kl + kq + 1];
                        h[p * dim + q] = val;
                        h[q * dim + p] = val;
                    }
                }
            }
        }

        if prob.center {
            let m: Vec<f64> = std::iter::once(0.0)
                .chain(cols.iter().map(|&c| d.means()[c]))
                .collect();
            let s: Vec<f64> = (0..dim).map(|a| h[a]).collect();
            for a in 1..dim {
                for b in 1..dim {
                    h[a * dim + b] += -m[a] * s[b] - m[b] * s[a] + m[a] * m[b] * vtot;
                }
                h[a] = s[a] - m[a] * vtot;
                h[a * dim] = h[a];
            }
        }
        Gram { cols, dim, h }
    }

    /// Cyclic coordinate descent on `gᵀδ + ½ δᵀHδ + λ‖x + δ‖₁` (intercept
    /// unpenalized). `x` is updated in place; returns the sweeps used.
    fn minimize(&self, grad: &[f64], x: &mut [f64], lambda: f64, tol: f64, max_sweeps: usize) -> usize {
        let dim = self.dim;
        let mut r = grad.to_vec();
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            let mut change: f64 = 0.0;
            for t in 0..dim {
                let hd = self.h[t * dim + t];
                if hd <= 0.0 {
                    continue;
                }
                let old = x[t];
                let new = if t == 0 {
                    old - r[0] / hd
                } else {
                    soft_threshold(old * hd - r[t], lambda) / hd
                };
                let delta = new - old;
                if delta == 0.0 {
                    continue;
                }
                x[t] = new;
                for (ri, hi) in r.iter_mut().zip(&self.h[t * dim..(t + 1) * dim]) {
                    *ri += hi * delta;
                }
                change = change.max(delta.abs() * hd);
            }
            sweeps += 1;
            if change <= tol {
                break;
            }
            if sweeps % REFINE_EVERY == 0 {
                self.refine(x, &mut r, lambda);
            }
        }
        sweeps
    }

    /// Newton step on the current nonzero set with signs held fixed, cut
    /// short where a coefficient would cross zero. Coordinate descent alone
    /// crawls on the strongly correlated nested columns.
    fn refine(&self, x: &mut [f64], r: &mut [f64], lambda: f64) {
        let dim = self.dim;
        let act: Vec<usize> = (0..dim).filter(|&t| t == 0 || x[t] != 0.0).collect();
        let m = act.len();
        let mut a = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for (p, &s) in act.iter().enumerate() {
            for (q, &t) in act.iter().enumerate() {
                a[p * m + q] = self.h[s * dim + t];
            }
            let pen = if s == 0 { 0.0 } else { lambda * x[s].signum() };
            rhs[p] = -(r[s] + pen);
        }
        let Some(d) = cholesky_solve(&mut a, rhs, m) else {
            return;
        };
        let mut alpha = 1.0;
        let mut blocking = None;
        for (p, &s) in act.iter().enumerate() {
            if s > 0 && (x[s] + d[p]) * x[s] < 0.0 {
                let a = -x[s] / d[p];
                if a < alpha {
                    alpha = a;
                    blocking = Some(s);
                }
            }
        }
        for (p, &s) in act.iter().enumerate() {
            let delta = if Some(s) == blocking { -x[s] } else { alpha * d[p] };
            x[s] += delta;
            if Some(s) == blocking {
                x[s] = 0.0;
            }
            for (ri, hi) in r.iter_mut().zip(&self.h[s * dim..(s + 1) * dim]) {
                *ri += hi * delta;
            }
        }
    }

    /// Change of the linear predictor for a step `delta` on the model indices.
    fn apply(&self, prob: &Problem<'_>, delta: &[f64], deta: &mut [f64]) {
        let d = prob.design;
        let mut offset = delta[0];
        if prob.center {
            offset -= self
                .cols
                .iter()
                .zip(&delta[1..])
                .map(|(&c, x)| d.means()[c] * x)
                .sum::<f64>();
        }
        deta.iter_mut().for_each(|e| *e = offset);
        let mut t = 0;
        let mut shift = Vec::new();
        while t < self.cols.len() {
            let j = d.block_of(self.cols[t]);
            let r = d.block(j);
            shift.clear();
            shift.resize(r.len() + 1, 0.0);
            let mut any = false;
            while t < self.cols.len() && self.cols[t] < r.end {
                let k = self.cols[t] - r.start;
                shift[k + 1] += delta[t + 1];
                any |= delta[t + 1] != 0.0;
                t += 1;
            }
            if any {
                for l in 1..shift.len() {
                    shift[l] += shift[l - 1];
                }
                for (e, &l) in deta.iter_mut().zip(d.levels(j)) {
                    *e += shift[l as usize];
                }
            }
        }
    }
}

pub(super) fn solve(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = design.n_rows();
    let prob = Problem {
        design,
        y,
        wts: y.iter().map(|&v| w.row_weight(v)).collect(),
        lambda,
        center: opts.center,
    };

    let (mut b0, mut beta) = match &opts.warm_start {
        Some((b0, b)) => (*b0, b.clone()),
        None => (
            logit(w.weighted_prevalence(y)),
            vec![0.0; design.n_cols()],
        ),
    };
    let mut eta = prob.eta(b0, &beta);
    let mut f_cur = prob.loss(&eta) + prob.penalty(&beta);

    let mut v = vec![0.0; n];
    let mut deta = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut bins = Vec::new();
    let mut sweeps = 0usize;

    loop {
        for i in 0..n {
            let p = sigmoid(eta[i]);
            a[i] = prob.wts[i] * (p - f64::from(y[i]));
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            v[i] = prob.wts[i] * pc * (1.0 - pc);
        }
        let (g0, g) = prob.gradient(&a, &mut bins);
        let kkt = g
            .iter()
            .zip(&beta)
            .map(|(&gc, &b)| kkt_term(gc, b, lambda))
            .fold(g0.abs(), f64::max);

        let current = |b0: f64, beta: &[f64], sweeps: usize| FitResult {
            intercept: b0,
            coefficients: beta.to_vec(),
            lambda,
            objective: f_cur,
            kkt_violation: kkt,
            iterations: sweeps,
            centered: opts.center,
        };
        if kkt <= opts.tolerance {
            return Ok(current(b0, &beta, sweeps));
        }
        if sweeps >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations: sweeps,
                kkt_violation: kkt,
                best: Box::new(current(b0, &beta, sweeps)),
            });
        }

        // Minimize the quadratic model plus penalty over the working set.
        let cols: Vec<usize> = (0..design.n_cols())
            .filter(|&c| beta[c] != 0.0 || g[c].abs() >= SCREEN * lambda)
            .collect();
        let gram = Gram::build(&prob, &v, cols);
        let mut x: Vec<f64> = std::iter::once(b0)
            .chain(gram.cols.iter().map(|&c| beta[c]))
            .collect();
        let start = x.clone();
        let grad: Vec<f64> = std::iter::once(g0)
            .chain(gram.cols.iter().map(|&c| g[c]))
            .collect();
        let inner_tol = (1e-3 * kkt).max(1e-2 * opts.tolerance);
        sweeps += gram.minimize(&grad, &mut x, lambda, inner_tol, opts.max_iterations - sweeps);
        let step: Vec<f64> = x.iter().zip(&start).map(|(a, b)| a - b).collect();
        gram.apply(&prob, &step, &mut deta);
        let nb0 = x[0];
        let mut nbeta = beta.clone();
        for (&c, &xv) in gram.cols.iter().zip(&x[1..]) {
            nbeta[c] = xv;
        }

        // Backtracking on the true objective along the model step.
        let d0 = nb0 - b0;
        let dbeta: Vec<f64> = nbeta.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let predicted = g0 * d0
            + g.iter().zip(&dbeta).map(|(a, b)| a * b).sum::<f64>()
            + prob.penalty(&nbeta)
            - prob.penalty(&beta);
        let noise = 1e-11 * (1.0 + f_cur.abs());
        let mut t = 1.0;
        let mut accepted = None;
        let mut trial_eta = vec![0.0; n];
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                trial_eta[i] = eta[i] + t * deta[i];
            }
            let trial_beta: Vec<f64> = if t == 1.0 {
                nbeta.clone()
            } else {
                beta.iter().zip(&dbeta).map(|(b, d)| b + t * d).collect()
            };
            let f_new = prob.loss(&trial_eta) + prob.penalty(&trial_beta);
            let sufficient = f_new <= f_cur + ARMIJO * t * predicted;
            let within_noise = predicted.abs() <= noise && f_new <= f_cur + noise;
            if sufficient || within_noise {
                accepted = Some((t, trial_beta, f_new));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((t, trial_beta, f_new)) => {
                debug_assert!(
                    f_new <= f_cur + noise,
                    "objective increased: {f_cur} -> {f_new}"
                );
                b0 += t * d0;
                beta = trial_beta;
                std::mem::swap(&mut eta, &mut trial_eta);
                f_cur = f_new;
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations: sweeps,
                    kkt_violation: kkt,
                    best: Box::new(current(b0, &beta, sweeps)),
                });
            }
        }
    }
}
