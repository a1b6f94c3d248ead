//! Stochastic projected subgradient method `x^{k+1} = Π_S(x^k − β_k d̃^k)`
//! with unbiased oracles `E(d̃ | x) = d`, and a Monte Carlo driver that
//! compares trial averages against the expected-value bounds.
//!
//! Iteration numbering and trace layout follow [`crate::psm`]. Each trial
//! draws from its own ChaCha8 stream keyed by `(seed, trial)`.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_spsm, BoundParameters, Schedule};
use crate::model::{DenseVector, LeastSquaresData};
use crate::penalty::PenaltyObjective;
use crate::psm::{SolverConfig, Termination, TraceRecord};
use crate::sparse::project_sparse;
use crate::{Error, Result};

pub const MIN_MOMENT_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "oracle", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `∇f` from a uniform batch of `batch` distinct least-squares rows;
    /// constraint terms stay exact.
    Minibatch { batch: usize },
    /// `d + ζ` with `ζ ~ N(0, (η²/n) I)`, so `E‖ζ‖² = η²`.
    AdditiveNoise { eta: f64 },
}

#[derive(Debug, Clone)]
pub struct StochasticOracle {
    objective: PenaltyObjective,
    model: NoiseModel,
    data: Option<LeastSquaresData>,
}

impl StochasticOracle {
    pub fn new(objective: PenaltyObjective, model: NoiseModel) -> Result<Self> {
        let data = match model {
            NoiseModel::Minibatch { batch } => {
                let data = objective
                    .problem()
                    .structure()
                    .and_then(|s| s.least_squares.clone())
                    .ok_or_else(|| Error::Config("minibatch oracle needs least-squares data".into()))?;
                if batch == 0 || batch > data.samples() {
                    return Err(Error::Config(format!(
                        "batch size must lie in [1, {}], got {batch}",
                        data.samples()
                    )));
                }
                Some(data)
            }
            NoiseModel::AdditiveNoise { eta } => {
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(Error::Config(format!("noise scale must be >= 0, got {eta}")));
                }
                None
            }
        };
        Ok(Self { objective, model, data })
    }

    pub fn objective(&self) -> &PenaltyObjective {
        &self.objective
    }

    pub fn model(&self) -> NoiseModel {
        self.model
    }

    /// The exact selected subgradient `d` at `x`.
    pub fn exact(&self, x: &DenseVector) -> Result<DenseVector> {
        Ok(self.objective.select_subgradient(x)?.d)
    }

    /// One draw of `d̃` at `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &DenseVector, rng: &mut R) -> Result<DenseVector> {
        match self.model {
            NoiseModel::AdditiveNoise { eta } => {
                let mut d = self.exact(x)?;
                if eta > 0.0 {
                    let scale = eta / (d.len() as f64).sqrt();
                    for v in d.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += scale * z;
                    }
                }
                Ok(d)
            }
            NoiseModel::Minibatch { batch } => {
                let data = self.data.as_ref().expect("checked in new");
                let n_samples = data.samples();
                if batch == n_samples {
                    return self.exact(x);
                }
                self.objective.problem().check_dim(x)?;
                let mut grad = DVector::zeros(x.len());
                for t in sample(rng, n_samples, batch).iter() {
                    let row = data.a.row(t);
                    let resid = (row * x)[0] - data.b[t];
                    grad += row.transpose() * (2.0 * resid);
                }
                grad /= batch as f64;
                let (part, _, _) = self.objective.constraint_subgradient(x)?;
                Ok(grad + part)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticParams {
    pub schedule: Schedule,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub seed: u64,
    pub trials: usize,
}

impl StochasticParams {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        for (name, v) in [("M1", self.m1), ("M2", self.m2)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let (Some(m1), Some(m2)) = (self.m1, self.m2) {
            if m2 < m1 * m1 {
                return Err(Error::Config(format!("M2 = {m2} is below M1² = {}", m1 * m1)));
            }
        }
        Ok(())
    }
}

/// Penalized values of the running averages after iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageRecord {
    pub k: usize,
    /// `F_τ(x̄_k)` with `x̄_k = (1/k) Σ_{i≤k} x^i`.
    pub f_uniform: f64,
    /// `F_τ(x̂_k)` with `x̂_k = Σ_{i≤k} 2i/(k(k+1)) x^i`.
    pub f_weighted: f64,
    /// `‖x^{k+1} − x*‖²` when a reference point was supplied.
    pub dist_sq_next: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SpsmResult {
    pub x: DenseVector,
    /// `grad_norm` holds `‖d̃^k‖` and `alpha` holds `β_k`.
    pub trace: Vec<TraceRecord>,
    pub averages: Vec<AverageRecord>,
    pub uniform_average: DenseVector,
    pub weighted_average: DenseVector,
    pub termination: Termination,
    pub iterations: usize,
}

pub fn run_spsm<R: Rng + ?Sized>(
    oracle: &StochasticOracle,
    schedule: Schedule,
    cfg: &SolverConfig,
    reference: Option<&DenseVector>,
    rng: &mut R,
) -> Result<SpsmResult> {
    schedule.validate()?;
    cfg.validate()?;
    let objective = oracle.objective();
    let n = objective.n();
    let s = objective.problem().sparsity();
    if let Some(r) = reference {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
    }
    let mut x = cfg.start(n, s)?;
    let mut uniform = DVector::zeros(n);
    let mut weighted = DVector::zeros(n);
    let mut trace = Vec::new();
    let mut averages = Vec::new();
    let mut best = f64::INFINITY;
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;
    let record =
        |k: usize, x: &DenseVector, e: &crate::penalty::PenaltyEval, best: f64, beta: f64, norm: f64| TraceRecord {
            k,
            x: cfg.keep_iterates.then(|| x.clone()),
            f: e.value,
            best_f: best,
            alpha: beta,
            grad_norm: norm,
            dist_sq: reference.map(|r| (x - r).norm_squared()),
            residual_g: e.gplus_norm1,
            residual_h: e.h_norm1,
        };

    let mut k = 1;
    loop {
        let eval = objective.evaluate(&x)?;
        best = best.min(eval.value);
        if k > cfg.max_iters {
            trace.push(record(k, &x, &eval, best, 0.0, eval.selection.d.norm()));
            break;
        }
        let kf = k as f64;
        uniform += (&x - &uniform) / kf;
        weighted = &weighted * ((kf - 1.0) / (kf + 1.0)) + &x * (2.0 / (kf + 1.0));
        let d = oracle.sample(&x, rng)?;
        let beta = schedule.step(k);
        let keep = k == 1 || k % cfg.record_every == 0;
        if keep {
            trace.push(record(k, &x, &eval, best, beta, d.norm()));
        }
        let next = project_sparse(&(&x - &d * beta), s);
        if keep {
            averages.push(AverageRecord {
                k,
                f_uniform: objective.value(&uniform)?,
                f_weighted: objective.value(&weighted)?,
                dist_sq_next: reference.map(|r| (&next - r).norm_squared()),
            });
        }
        let moved = (&next - &x).norm();
        x = next;
        iterations = k;
        k += 1;
        if let Some(tol) = cfg.stop_tol {
            if moved <= tol {
                termination = Termination::Converged;
                let eval = objective.evaluate(&x)?;
                best = best.min(eval.value);
                trace.push(record(k, &x, &eval, best, 0.0, eval.selection.d.norm()));
                break;
            }
        }
    }
    Ok(SpsmResult {
        x,
        trace,
        averages,
        uniform_average: uniform,
        weighted_average: weighted,
        termination,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub m1_hat: f64,
    pub m2_hat: f64,
    pub unbiasedness_gap: f64,
    /// `unbiasedness_gap ≤ 4 (M2_hat / samples)^{1/2}`.
    pub within_clt_scale: bool,
}

/// Sample moments of `‖d̃‖` maximized over `cloud`.
pub fn estimate_moments<R: Rng + ?Sized>(
    oracle: &StochasticOracle,
    cloud: &[DenseVector],
    samples_per_point: usize,
    rng: &mut R,
) -> Result<MomentEstimate> {
    if samples_per_point < MIN_MOMENT_SAMPLES {
        return Err(Error::Config(format!(
            "samples_per_point must be >= {MIN_MOMENT_SAMPLES}, got {samples_per_point}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::Precondition("empty point cloud".into()));
    }
    let (mut m1, mut m2, mut gap) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut clt_ok = true;
    let count = samples_per_point as f64;
    for x in cloud {
        let d = oracle.exact(x)?;
        let mut mean: DenseVector = DVector::zeros(x.len());
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..samples_per_point {
            let dt = oracle.sample(x, rng)?;
            let nrm = dt.norm();
            s1 += nrm;
            s2 += nrm * nrm;
            mean += dt - &d;
        }
        mean /= count;
        let point_m2 = s2 / count;
        let point_gap = mean.norm();
        m1 = m1.max(s1 / count);
        m2 = m2.max(point_m2);
        gap = gap.max(point_gap);
        clt_ok &= point_gap <= 4.0 * (point_m2 / count).sqrt();
    }
    Ok(MomentEstimate {
        m1_hat: m1,
        m2_hat: m2,
        unbiasedness_gap: gap,
        within_clt_scale: clt_ok,
    })
}

/// Trial RNG for `(seed, trial)`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Per-`k` Monte Carlo statistics. Bound arrays not implied by the schedule are `None`.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub trials: usize,
    pub schedule: Schedule,
    pub m1: f64,
    pub m2: f64,
    pub eps: f64,
    pub x_star_norm: f64,
    #[serde(rename = "F_star")]
    pub f_star: f64,
    pub k: Vec<usize>,
    pub mean_gap_uniform: Vec<f64>,
    pub mean_gap_weighted: Vec<f64>,
    pub mean_dist_sq: Vec<f64>,
    pub stderr_gap_uniform: Vec<f64>,
    pub stderr_gap_weighted: Vec<f64>,
    pub stderr_dist_sq: Vec<f64>,
    pub bound_fixed: Option<Vec<f64>>,
    pub bound_sc_dist: Option<Vec<f64>>,
    pub bound_sc_gap: Option<Vec<f64>>,
    /// Previous-generation bounds with the larger `M₂` coefficients.
    pub bound_fixed_old: Option<Vec<f64>>,
    pub bound_sc_dist_old: Option<Vec<f64>>,
    pub bound_sc_gap_old: Option<Vec<f64>>,
    /// Counts of `k` with `mean > bound + 3·stderr`.
    pub violations_fixed: usize,
    pub violations_sc_dist: usize,
    pub violations_sc_gap: usize,
}

impl McReport {
    pub fn passes(&self) -> bool {
        self.violations_fixed == 0 && self.violations_sc_dist == 0 && self.violations_sc_gap == 0
    }
}

fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `params.trials` independent trials and compares the trial means of
/// the averaged gaps and distances with the expected-value bounds. Missing
/// moment bounds are estimated over the iterates of the first trial.
pub fn monte_carlo(
    oracle: &StochasticOracle,
    params: &StochasticParams,
    cfg: &SolverConfig,
    x_star: &DenseVector,
    f_star: f64,
    moment_samples: usize,
) -> Result<McReport> {
    params.validate()?;
    let cfg = SolverConfig {
        stop_tol: None,
        ..cfg.clone()
    };
    let runs: Vec<SpsmResult> = (0..params.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(params.seed, t);
            let trial_cfg = SolverConfig {
                keep_iterates: t == 0 && (params.m1.is_none() || params.m2.is_none()),
                ..cfg.clone()
            };
            run_spsm(oracle, params.schedule, &trial_cfg, Some(x_star), &mut rng)
        })
        .collect::<Result<_>>()?;
    let (m1, m2) = match (params.m1, params.m2) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            let cloud: Vec<DenseVector> = runs[0].trace.iter().filter_map(|r| r.x.clone()).collect();
            let mut rng = trial_rng(params.seed ^ 0x6d6f_6d65_6e74, 0);
            let est = estimate_moments(oracle, &cloud, moment_samples, &mut rng)?;
            (params.m1.unwrap_or(est.m1_hat), params.m2.unwrap_or(est.m2_hat))
        }
    };
    let eps = match &cfg.initial_point {
        Some(v) => (DVector::from_column_slice(v) - x_star).norm(),
        None => x_star.norm(),
    };
    let bp = BoundParameters::new(1.0, eps, x_star.norm(), f_star)?.with_moments(m1, m2);
    let ks: Vec<usize> = runs[0].averages.iter().map(|a| a.k).collect();
    let mut report = McReport {
        trials: params.trials,
        schedule: params.schedule,
        m1,
        m2,
        eps,
        x_star_norm: x_star.norm(),
        f_star,
        k: ks.clone(),
        mean_gap_uniform: Vec::new(),
        mean_gap_weighted: Vec::new(),
        mean_dist_sq: Vec::new(),
        stderr_gap_uniform: Vec::new(),
        stderr_gap_weighted: Vec::new(),
        stderr_dist_sq: Vec::new(),
        bound_fixed: None,
        bound_sc_dist: None,
        bound_sc_gap: None,
        bound_fixed_old: None,
        bound_sc_dist_old: None,
        bound_sc_gap_old: None,
        violations_fixed: 0,
        violations_sc_dist: 0,
        violations_sc_gap: 0,
    };
    let (mut fixed, mut fixed_old, mut scd, mut scd_old, mut scg, mut scg_old) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (j, &k) in ks.iter().enumerate() {
        let column =
            |f: &dyn Fn(&AverageRecord) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r.averages[j])).collect() };
        let (gu, su) = mean_stderr(&column(&|a| a.f_uniform - f_star));
        let (gw, sw) = mean_stderr(&column(&|a| a.f_weighted - f_star));
        let (dd, sd) = mean_stderr(&column(&|a| a.dist_sq_next.expect("reference supplied")));
        report.mean_gap_uniform.push(gu);
        report.mean_gap_weighted.push(gw);
        report.mean_dist_sq.push(dd);
        report.stderr_gap_uniform.push(su);
        report.stderr_gap_weighted.push(sw);
        report.stderr_dist_sq.push(sd);
        let b = bound_spsm(&bp, k, params.schedule)?;
        match params.schedule {
            Schedule::Fixed { .. } => {
                fixed.push(b.gap_new);
                fixed_old.push(b.gap_old);
                report.violations_fixed += usize::from(gu > b.gap_new + 3.0 * su);
            }
            Schedule::StronglyConvex { .. } => {
                let (dn, dold) = (b.dist_new.expect("set"), b.dist_old.expect("set"));
                scd.push(dn);
                scd_old.push(dold);
                scg.push(b.gap_new);
                scg_old.push(b.gap_old);
                report.violations_sc_dist += usize::from(dd > dn + 3.0 * sd);
                report.violations_sc_gap += usize::from(gw > b.gap_new + 3.0 * sw);
            }
        }
    }
    match params.schedule {
        Schedule::Fixed { .. } => {
            report.bound_fixed = Some(fixed);
            report.bound_fixed_old = Some(fixed_old);
        }
        Schedule::StronglyConvex { .. } => {
            report.bound_sc_dist = Some(scd);
            report.bound_sc_dist_old = Some(scd_old);
            report.bound_sc_gap = Some(scg);
            report.bound_sc_gap_old = Some(scg_old);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psm::{run_psm, StepsizeRule};

    fn lsq_objective() -> PenaltyObjective {
        PenaltyObjective::new(crate::corpus::lsq50().to_instance().unwrap(), 5.0).unwrap()
    }

    fn fixed_cfg(iters: usize) -> SolverConfig {
        SolverConfig {
            max_iters: iters,
            stop_tol: None,
            keep_iterates: true,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn zero_noise_matches_psm() {
        let objective = PenaltyObjective::new(crate::corpus::qp10().to_instance().unwrap(), 4.0).unwrap();
        let oracle = StochasticOracle::new(objective.clone(), NoiseModel::AdditiveNoise { eta: 0.0 }).unwrap();
        let cfg = fixed_cfg(200);
        let det = run_psm(&objective, StepsizeRule::Constant { alpha: 0.01 }, &cfg, None).unwrap();
        let sto = run_spsm(
            &oracle,
            Schedule::Fixed { beta: 0.01 },
            &cfg,
            None,
            &mut trial_rng(1, 0),
        )
        .unwrap();
        assert_eq!(det.trace, sto.trace);
        assert_eq!(det.x, sto.x);
    }

    #[test]
    fn full_batch_is_deterministic() {
        let objective = lsq_objective();
        let oracle = StochasticOracle::new(objective.clone(), NoiseModel::Minibatch { batch: 50 }).unwrap();
        let x = DVector::from_fn(10, |i, _| if i < 3 { 0.5 } else { 0.0 });
        let mut rng = trial_rng(3, 0);
        assert_eq!(oracle.sample(&x, &mut rng).unwrap(), oracle.exact(&x).unwrap());
        let est = estimate_moments(&oracle, std::slice::from_ref(&x), 100, &mut rng).unwrap();
        assert_eq!(est.unbiasedness_gap, 0.0);
        let cfg = fixed_cfg(100);
        let det = run_psm(&objective, StepsizeRule::Constant { alpha: 0.05 }, &cfg, None).unwrap();
        let sto = run_spsm(&oracle, Schedule::Fixed { beta: 0.05 }, &cfg, None, &mut rng).unwrap();
        assert_eq!(det.trace, sto.trace);
    }

    #[test]
    fn minibatch_of_one_averages_to_full_gradient() {
        // Exhaustive expectation over the N singleton batches.
        let objective = lsq_objective();
        let data = objective.problem().structure().unwrap().least_squares.clone().unwrap();
        let x = DVector::from_fn(10, |i, _| if i % 4 == 0 { 0.3 } else { 0.0 });
        let mut mean = DVector::zeros(10);
        for t in 0..data.samples() {
            let row = data.a.row(t);
            mean += row.transpose() * (2.0 * ((row * &x)[0] - data.b[t]));
        }
        mean /= data.samples() as f64;
        let (part, _, _) = objective.constraint_subgradient(&x).unwrap();
        let d = objective.select_subgradient(&x).unwrap().d;
        assert!((mean + part - &d).amax() < 1e-12 * d.amax().max(1.0));
    }

    #[test]
    fn zero_noise_moments() {
        let objective = lsq_objective();
        let oracle = StochasticOracle::new(objective.clone(), NoiseModel::AdditiveNoise { eta: 0.0 }).unwrap();
        let cloud: Vec<DenseVector> = (0..4)
            .map(|i| DVector::from_fn(10, |j, _| if j == i { 1.0 } else { 0.0 }))
            .collect();
        let est = estimate_moments(&oracle, &cloud, 100, &mut trial_rng(0, 0)).unwrap();
        let max_d = cloud
            .iter()
            .map(|x| objective.select_subgradient(x).unwrap().d.norm())
            .fold(0.0, f64::max);
        assert!((est.m1_hat - max_d).abs() <= 1e-12 * max_d);
        assert_eq!(est.unbiasedness_gap, 0.0);
    }

    #[test]
    fn isotropic_noise_second_moment() {
        // f = ½‖x − e₁‖² has d = 0 at e₁.
        let n = 8;
        let mut c = DVector::zeros(n);
        c[0] = -1.0;
        let sp = crate::model::StructuredProblem::quadratic(nalgebra::DMatrix::identity(n, n), c, 0.5, 2).unwrap();
        let objective = PenaltyObjective::new(sp.to_instance().unwrap(), 1.0).unwrap();
        let oracle = StochasticOracle::new(objective, NoiseModel::AdditiveNoise { eta: 1.0 }).unwrap();
        let mut x = DVector::zeros(n);
        x[0] = 1.0;
        let samples = 20_000;
        let est = estimate_moments(&oracle, &[x], samples, &mut trial_rng(11, 0)).unwrap();
        // ‖ζ‖² ~ χ²_n / n has standard deviation sqrt(2/n).
        let se = (2.0 / n as f64 / samples as f64).sqrt();
        assert!((est.m2_hat - 1.0).abs() < 4.0 * se, "{}", est.m2_hat);
        assert!(est.within_clt_scale);
    }

    #[test]
    fn minibatch_unbiased_at_clt_scale() {
        let oracle = StochasticOracle::new(lsq_objective(), NoiseModel::Minibatch { batch: 5 }).unwrap();
        let cloud: Vec<DenseVector> = (0..5)
            .map(|i| DVector::from_fn(10, |j, _| if j == i || j == i + 3 { 0.7 } else { 0.0 }))
            .collect();
        let est = estimate_moments(&oracle, &cloud, 4000, &mut trial_rng(5, 2)).unwrap();
        assert!(est.within_clt_scale, "{est:?}");
        assert!(est.m2_hat >= est.m1_hat * est.m1_hat);
    }

    #[test]
    fn incremental_averages_match_batch_recompute() {
        let oracle = StochasticOracle::new(lsq_objective(), NoiseModel::Minibatch { batch: 4 }).unwrap();
        let res = run_spsm(
            &oracle,
            Schedule::StronglyConvex { sigma: 0.8 },
            &fixed_cfg(300),
            None,
            &mut trial_rng(2, 7),
        )
        .unwrap();
        let iterates: Vec<DenseVector> = res.trace[..300].iter().map(|r| r.x.clone().unwrap()).collect();
        let k = iterates.len() as f64;
        let uniform = iterates.iter().fold(DVector::zeros(10), |acc, x| acc + x) / k;
        let weighted = iterates.iter().enumerate().fold(DVector::zeros(10), |acc, (i, x)| {
            acc + x * (2.0 * (i + 1) as f64 / (k * (k + 1.0)))
        });
        assert!((&uniform - &res.uniform_average).norm() <= 1e-12 * uniform.norm());
        assert!((&weighted - &res.weighted_average).norm() <= 1e-12 * weighted.norm());
    }

    #[test]
    fn trials_are_reproducible_and_independent() {
        let oracle = StochasticOracle::new(lsq_objective(), NoiseModel::Minibatch { batch: 3 }).unwrap();
        let cfg = fixed_cfg(50);
        let run = |t| {
            run_spsm(
                &oracle,
                Schedule::Fixed { beta: 0.01 },
                &cfg,
                None,
                &mut trial_rng(9, t),
            )
            .unwrap()
            .x
        };
        assert_eq!(run(0), run(0));
        assert_ne!(run(0), run(1));
    }

    #[test]
    fn invalid_configurations() {
        let objective = lsq_objective();
        assert!(StochasticOracle::new(objective.clone(), NoiseModel::Minibatch { batch: 0 }).is_err());
        assert!(StochasticOracle::new(objective.clone(), NoiseModel::Minibatch { batch: 51 }).is_err());
        assert!(StochasticOracle::new(objective.clone(), NoiseModel::AdditiveNoise { eta: -1.0 }).is_err());
        let qp = PenaltyObjective::new(crate::corpus::qp10().to_instance().unwrap(), 1.0).unwrap();
        assert!(StochasticOracle::new(qp, NoiseModel::Minibatch { batch: 2 }).is_err());
        let oracle = StochasticOracle::new(objective, NoiseModel::AdditiveNoise { eta: 1.0 }).unwrap();
        let sc0 = Schedule::StronglyConvex { sigma: 0.0 };
        assert!(matches!(
            run_spsm(&oracle, sc0, &fixed_cfg(5), None, &mut trial_rng(0, 0)),
            Err(Error::Config(_))
        ));
        let bad = StochasticParams {
            schedule: Schedule::Fixed { beta: 0.1 },
            m1: Some(2.0),
            m2: Some(3.0),
            seed: 0,
            trials: 5,
        };
        assert!(bad.validate().is_err());
        assert!(estimate_moments(&oracle, &[DVector::zeros(10)], 99, &mut trial_rng(0, 0)).is_err());
    }

    #[test]
    fn monte_carlo_fold_is_deterministic() {
        let oracle = StochasticOracle::new(lsq_objective(), NoiseModel::Minibatch { batch: 5 }).unwrap();
        let x_star = crate::oracle::solve_global(oracle.objective(), crate::oracle::Mode::Penalized).unwrap();
        let params = StochasticParams {
            schedule: Schedule::Fixed { beta: 0.01 },
            m1: None,
            m2: None,
            seed: 4,
            trials: 8,
        };
        let cfg = SolverConfig {
            max_iters: 100,
            record_every: 10,
            ..SolverConfig::default()
        };
        let a = monte_carlo(&oracle, &params, &cfg, &x_star.x_star, x_star.f_star, 100).unwrap();
        let b = monte_carlo(&oracle, &params, &cfg, &x_star.x_star, x_star.f_star, 100).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.k, vec![1, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
        assert!(a.passes());
        assert!(a.bound_sc_gap.is_none());
    }
}
