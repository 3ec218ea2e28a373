//! Gaussian approximation of the `sqrt(N)` fluctuations around the limit.
//!
//! With `G_t` the limit of `sqrt(N)((M_t, C_t) - (m_t, c_t))` written as a
//! column vector, one step of the linearized dynamics is
//! `G_{t+1} = J_t^T G_t + W_t` where
//!
//! ```text
//! J_t = [ P   E + P F ]      cov W_t = [ D     D F     ]
//!       [ Q   H + Q F ]                [ F^T D F^T D F ]
//! ```
//!
//! `P = K(a_t, c_t)`, `Q_kj = sum_i m_i dK_ij/dc_k`, `E_ik = dg_k/dm_i` for the
//! measure before the step, `F_ik = dg_k/dm'_i` for the measure after it,
//! `H_lk = dg_k/dc_l` and `D` is the one-step multinomial covariance. When
//! `g` reads only the measure before the step (`F = 0`) this is
//! `Gamma_{t+1} = J^T Gamma_t J + [D 0; 0 0]`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::meanfield::LimitTrajectory;
use crate::model::ModelSpec;
use crate::rng::SeedStreams;
use crate::sim::{estimate_reward, Policy};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = -1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CltMatrices {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Coordinates differentiated one-sidedly at the context box face.
    pub warnings: Vec<String>,
}

impl CltMatrices {
    /// The block matrix `J_t`.
    pub fn transition(&self) -> DMatrix<f64> {
        let s = self.p.nrows();
        let d = self.h.nrows();
        let mut j = DMatrix::zeros(s + d, s + d);
        j.view_mut((0, 0), (s, s)).copy_from(&self.p);
        j.view_mut((0, s), (s, d)).copy_from(&(&self.e + &self.p * &self.f));
        j.view_mut((s, 0), (d, s)).copy_from(&self.q);
        j.view_mut((s, s), (d, d)).copy_from(&(&self.h + &self.q * &self.f));
        j
    }

    /// Covariance of the noise `W_t`.
    pub fn noise(&self) -> DMatrix<f64> {
        let s = self.p.nrows();
        let d = self.h.nrows();
        let mut n = DMatrix::zeros(s + d, s + d);
        let df = &self.d * &self.f;
        n.view_mut((0, 0), (s, s)).copy_from(&self.d);
        n.view_mut((0, s), (s, d)).copy_from(&df);
        n.view_mut((s, 0), (d, s)).copy_from(&df.transpose());
        n.view_mut((s, s), (d, d)).copy_from(&(self.f.transpose() * &df));
        n
    }
}

/// Multinomial covariance `D` of one step from `m` under `p`.
pub fn one_step_noise(m: &[f64], p: &DMatrix<f64>) -> DMatrix<f64> {
    let s = m.len();
    let mut d = DMatrix::zeros(s, s);
    for (i, &mi) in m.iter().enumerate() {
        if mi == 0.0 {
            continue;
        }
        for j in 0..s {
            let pij = p[(i, j)];
            d[(j, j)] += mi * pij * (1.0 - pij);
            for k in 0..s {
                if k != j {
                    d[(j, k)] -= mi * pij * p[(i, k)];
                }
            }
        }
    }
    d
}

/// Difference quotient along coordinate `k`: central unless the point is
/// within `step` of the lower face `lower`, then forward.
fn derivative<F>(x: &[f64], k: usize, step: f64, lower: Option<f64>, f: F) -> (Vec<f64>, bool)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut hi = x.to_vec();
    hi[k] += step;
    let one_sided = lower.is_some_and(|l| x[k] - step < l);
    let (a, b, width) = if one_sided {
        (f(&hi), f(x), step)
    } else {
        let mut lo = x.to_vec();
        lo[k] -= step;
        (f(&hi), f(&lo), 2.0 * step)
    };
    (a.iter().zip(&b).map(|(u, v)| (u - v) / width).collect(), one_sided)
}

fn lower_face(spec: &ModelSpec, k: usize) -> Option<f64> {
    spec.context_box.as_ref().map(|b| b[k].0)
}

/// The matrices of the covariance recursion at time `t` along `traj`.
pub fn clt_matrices_at(spec: &ModelSpec, traj: &LimitTrajectory, t: usize, fd_step: f64) -> Result<CltMatrices> {
    if t >= traj.actions.len() {
        return Err(Error::Domain(format!("no action at t={t} on the trajectory")));
    }
    if !(fd_step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {fd_step}")));
    }
    let s = spec.num_states();
    let dim = spec.context_dim;
    let m = traj.measure(t);
    let c = traj.context(t);
    let m1 = traj.measure(t + 1);
    let a = &traj.actions[t];
    let kern = spec.kernel.eval(t, a, c);
    let p = DMatrix::from_fn(s, s, |i, j| kern.get(i, j));
    let mut warnings = Vec::new();

    let mut q = DMatrix::zeros(dim, s);
    let mut h = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let (dk, one) = derivative(c, k, fd_step, lower_face(spec, k), |cc| {
            let kk = spec.kernel.eval(t, a, cc);
            (0..s).map(|j| (0..s).map(|i| m[i] * kk.get(i, j)).sum()).collect()
        });
        for j in 0..s {
            q[(k, j)] = dk[j];
        }
        let (dg, _) = derivative(c, k, fd_step, lower_face(spec, k), |cc| spec.env.eval(cc, m, m1, a, t));
        for (l, v) in dg.into_iter().enumerate() {
            h[(k, l)] = v;
        }
        if one {
            warnings.push(format!(
                "t={t}: context {k} within {fd_step} of its lower bound, one-sided difference used"
            ));
        }
    }
    let mut e = DMatrix::zeros(s, dim);
    let mut f = DMatrix::zeros(s, dim);
    if dim > 0 {
        for i in 0..s {
            let (de, _) = derivative(m, i, fd_step, None, |mm| spec.env.eval(c, mm, m1, a, t));
            let (df, _) = derivative(m1, i, fd_step, None, |mm| spec.env.eval(c, m, mm, a, t));
            for k in 0..dim {
                e[(i, k)] = de[k];
                f[(i, k)] = df[k];
            }
        }
    }
    let d = one_step_noise(m, &p);
    Ok(CltMatrices { p, q, e, f, h, d, warnings })
}

/// `Gamma_t` along a limit trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceState {
    pub t: usize,
    pub gamma: DMatrix<f64>,
}

impl CovarianceState {
    pub fn measure_block(&self, states: usize) -> DMatrix<f64> {
        self.gamma.view((0, 0), (states, states)).into_owned()
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::Domain(format!("covariance is not symmetric (gap {asym})")));
    }
    let lo = min_eigenvalue(m);
    if lo < EIGEN_FLOOR * m.amax().max(1.0) {
        return Err(Error::Domain(format!("covariance has negative eigenvalue {lo}")));
    }
    Ok(())
}

/// Matrices for every step of `traj`.
pub fn clt_series(spec: &ModelSpec, traj: &LimitTrajectory, fd_step: f64) -> Result<Vec<CltMatrices>> {
    (0..traj.actions.len())
        .map(|t| clt_matrices_at(spec, traj, t, fd_step))
        .collect()
}

/// Applies the recursion along `traj` from `gamma0`; returns
/// `Gamma_0 .. Gamma_T`.
pub fn propagate_covariance(
    spec: &ModelSpec,
    traj: &LimitTrajectory,
    gamma0: &DMatrix<f64>,
    fd_step: f64,
) -> Result<Vec<CovarianceState>> {
    let n = spec.num_states() + spec.context_dim;
    if gamma0.nrows() != n || gamma0.ncols() != n {
        return Err(Error::Domain(format!("initial covariance must be {n}x{n}")));
    }
    check_psd(gamma0)?;
    let mats = clt_series(spec, traj, fd_step)?;
    let mut out = vec![CovarianceState {
        t: 0,
        gamma: gamma0.clone(),
    }];
    for (t, mt) in mats.iter().enumerate() {
        let j = mt.transition();
        let g = j.transpose() * &out[t].gamma * &j + mt.noise();
        let g = (&g + g.transpose()) * 0.5;
        out.push(CovarianceState { t: t + 1, gamma: g });
    }
    Ok(out)
}

/// Covariance of `G_0` implied by the class structure of the initial law:
/// a class holding a fraction `phi` of the particles and splitting them
/// with probabilities `p` contributes `phi (diag(p) - p p^T)`. The random
/// rounding of class sizes vanishes in the limit and is not included.
pub fn initial_covariance(spec: &ModelSpec) -> DMatrix<f64> {
    let s = spec.num_states();
    let n = s + spec.context_dim;
    let mut g = DMatrix::zeros(n, n);
    let base = spec.initial.base_size;
    for class in &spec.initial.classes {
        let phi = class.share / base;
        for &(i, pi) in &class.split {
            for &(j, pj) in &class.split {
                let delta = if i == j { pi } else { 0.0 };
                g[(i, j)] += phi * (delta - pi * pj);
            }
        }
    }
    g
}

fn gradient<F>(spec: &ModelSpec, m: &[f64], c: &[f64], step: f64, f: F) -> DVector<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let s = m.len();
    let mut g = DVector::zeros(s + c.len());
    for i in 0..s {
        let (d, _) = derivative(m, i, step, None, |mm| vec![f(mm, c)]);
        g[i] = d[0];
    }
    for k in 0..c.len() {
        let (d, _) = derivative(c, k, step, lower_face(spec, k), |cc| vec![f(m, cc)]);
        g[s + k] = d[0];
    }
    g
}

/// Variances of the Gaussian limit of `sqrt(N)` times the reward gap.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardGapVariance {
    /// `Var(Dr_t . G_t)` for `t = 1..=T`.
    pub per_step: Vec<f64>,
    /// `Var(sum_{s=1}^{t} Dr_s . G_s)` for `t = 1..=T`.
    pub cumulative: Vec<f64>,
    pub total: f64,
}

/// Variance of `sum_t Dr_t(m_t, c_t) . G_t`, with joint laws across times
/// obtained by propagating the reward functional backward through the
/// linear recursion.
pub fn reward_gap_gaussian(
    spec: &ModelSpec,
    traj: &LimitTrajectory,
    covariances: &[CovarianceState],
    fd_step: f64,
) -> Result<RewardGapVariance> {
    let horizon = traj.actions.len();
    if covariances.len() != horizon + 1 {
        return Err(Error::Domain("need one covariance per time on the trajectory".into()));
    }
    let mats = clt_series(spec, traj, fd_step)?;
    let jac: Vec<DMatrix<f64>> = mats.iter().map(|m| m.transition()).collect();
    let noise: Vec<DMatrix<f64>> = mats.iter().map(|m| m.noise()).collect();
    let grads: Vec<DVector<f64>> = (1..=horizon)
        .map(|t| {
            gradient(spec, traj.measure(t), traj.context(t), fd_step, |m, c| spec.reward_at(t, m, c))
        })
        .collect();
    let per_step = (1..=horizon)
        .map(|t| (grads[t - 1].transpose() * &covariances[t].gamma * &grads[t - 1])[(0, 0)])
        .collect();
    let gamma0 = &covariances[0].gamma;
    let cumulative: Vec<f64> = (1..=horizon)
        .map(|h| {
            let mut lambda = grads[h - 1].clone();
            let mut var = (lambda.transpose() * &noise[h - 1] * &lambda)[(0, 0)];
            for t in (1..h).rev() {
                lambda = &grads[t - 1] + &jac[t] * &lambda;
                var += (lambda.transpose() * &noise[t - 1] * &lambda)[(0, 0)];
            }
            let lambda0 = &jac[0] * &lambda;
            var + (lambda0.transpose() * gamma0 * &lambda0)[(0, 0)]
        })
        .collect();
    Ok(RewardGapVariance {
        per_step,
        total: cumulative.last().copied().unwrap_or(0.0),
        cumulative,
    })
}

/// Covariance of sample vectors around `center`, or around their mean when
/// no center is given (then with the `R - 1` divisor).
pub fn empirical_covariance(samples: &[Vec<f64>], center: Option<&[f64]>) -> DMatrix<f64> {
    let r = samples.len();
    let n = samples.first().map_or(0, |s| s.len());
    let mean: Vec<f64> = match center {
        Some(c) => c.to_vec(),
        None => (0..n).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / r as f64).collect(),
    };
    let divisor = if center.is_some() { r as f64 } else { (r as f64 - 1.0).max(1.0) };
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let x = DVector::from_iterator(n, s.iter().zip(&mean).map(|(a, b)| a - b));
        cov += &x * x.transpose();
    }
    cov / divisor
}

/// `||a - b||_F / ||b||_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// `t,g_<i>_<j>...` with `Gamma_t` flattened row-major.
pub fn gamma_csv(covs: &[CovarianceState]) -> String {
    let n = covs.first().map_or(0, |c| c.gamma.nrows());
    let mut out = String::from("t");
    for i in 0..n {
        for j in 0..n {
            let _ = write!(out, ",g_{i}_{j}");
        }
    }
    out.push('\n');
    for c in covs {
        let _ = write!(out, "{}", c.t);
        for i in 0..n {
            for j in 0..n {
                let _ = write!(out, ",{}", c.gamma[(i, j)]);
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapRecord {
    pub n: u64,
    pub mean: f64,
    pub gap: f64,
    pub scaled_gap: f64,
    /// Standard error of the scaled gap.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledGapSeries {
    pub records: Vec<GapRecord>,
}

impl ScaledGapSeries {
    /// `max / min` of the scaled gaps.
    pub fn spread(&self) -> f64 {
        let gaps: Vec<f64> = self.records.iter().map(|r| r.scaled_gap).collect();
        let hi = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi == 0.0 {
            1.0
        } else {
            hi / lo
        }
    }

    /// Scaled gaps strictly increase along the whole series.
    pub fn diverges(&self) -> bool {
        self.records.len() > 2 && self.records.windows(2).all(|w| w[1].scaled_gap > w[0].scaled_gap)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,scaled_gap,stderr\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.n, r.scaled_gap, r.stderr);
        }
        out
    }
}

/// `sqrt(N) |V^N - v*|` by Monte Carlo for each `N`. System size `N` uses
/// the seed family `child(N)` of `seed`.
pub fn scaled_gap_series(
    spec: &ModelSpec,
    policy: &Policy,
    v_star: f64,
    n_list: &[u64],
    replications: usize,
    seed: u64,
) -> Result<ScaledGapSeries> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list.is_empty() {
        return Err(Error::Domain("N list must be nonempty and strictly increasing".into()));
    }
    if replications < 30 {
        return Err(Error::Domain("scaled gaps need at least 30 replications".into()));
    }
    let streams = SeedStreams::new(seed);
    let records = n_list
        .iter()
        .map(|&n| {
            let est = estimate_reward(spec, policy, n, replications, streams.child(n).master())?;
            let root = (n as f64).sqrt();
            let gap = (est.mean - v_star).abs();
            Ok(GapRecord {
                n,
                mean: est.mean,
                gap,
                scaled_gap: root * gap,
                stderr: root * est.stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaledGapSeries { records })
}
