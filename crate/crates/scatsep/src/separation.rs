//! Source-separation problem assembly: normalization statistics estimated
//! from reference snippets, the three normalized loss terms, and the
//! quasi-Newton solve.

use crate::error::{Error, Result};
use crate::grad::{objective, LossBreakdown};
use crate::lbfgs::{self, LbfgsOptions, Termination};
use crate::par::{self, ExecMode};
use crate::scattering::{
    cross_cov_values, scat_forward, self_cov_values, ScatForward, ScatLayout, Workspace,
};
use crate::signal::{energy_of, Waveform};
use crate::wavelet::FilterBank;
use num_complex::Complex64;
use std::sync::Arc;

/// Relative variance floor, applied per coefficient against the squared
/// mean magnitude of that coefficient across snippets.
const VAR_FLOOR_REL: f64 = 1e-6;
/// Absolute variance floor.
const VAR_FLOOR_ABS: f64 = 1e-30;
/// SNR report cap in dB for exact reconstructions.
const SNR_CAP_DB: f64 = 300.0;

/// L-BFGS and line-search configuration.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub history_size: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Relative per-step loss-decrease tolerance; zero disables the check.
    pub loss_decrease_tol: f64,
    /// Gradient-norm tolerance relative to the initial gradient norm.
    pub grad_norm_tol: f64,
    /// Stop once the total loss falls to this fraction of the problem's
    /// statistical floor (the loss level a fresh realization of the
    /// background would score, estimated from pairwise snippet
    /// distances). Descending past that level fits estimation noise, not
    /// signal. Zero disables the check.
    pub floor_safety: f64,
    pub seed: u64,
    pub exec: ExecMode,
    /// Weights of the (data, prior, cross) terms; unit by default.
    pub term_weights: [f64; 3],
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 500,
            history_size: 10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            loss_decrease_tol: 0.0,
            grad_norm_tol: 1e-9,
            floor_safety: 0.85,
            seed: 0,
            exec: ExecMode::Parallel,
            term_weights: [1.0, 1.0, 1.0],
        }
    }
}

impl SolverConfig {
    /// Stylized-experiment preset (500 iterations).
    pub fn stylized() -> Self {
        SolverConfig::default()
    }

    /// Deglitching preset (1000 iterations).
    pub fn deglitch() -> Self {
        SolverConfig {
            max_iterations: 1000,
            ..SolverConfig::default()
        }
    }

    /// Long-window event preset (200 iterations).
    pub fn quake() -> Self {
        SolverConfig {
            max_iterations: 200,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be >= 1".to_string()));
        }
        if self.history_size < 1 {
            return Err(Error::invalid("history_size must be >= 1".to_string()));
        }
        if !(self.wolfe_c1 > 0.0 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        Ok(())
    }
}

/// Per-coefficient variances of the snippet ensemble, the shifted-data
/// ensemble, and the cross ensemble, floored away from zero.
#[derive(Debug, Clone)]
pub struct NormalizationStats {
    pub var_prior: Vec<f64>,
    pub var_data: Vec<f64>,
    pub var_cross: Vec<f64>,
    /// Number of floored entries per term (prior, data, cross).
    pub floored: [usize; 3],
    /// True when an entire term's variances collapsed to the floor
    /// (e.g. identical snippets); downstream tooling surfaces a warning.
    pub degenerate: bool,
}

/// Complex sample variance `sum |z_k - mean|^2 / (K - 1)` per coefficient,
/// floored at `max(abs_floor, rel_floor * mean(|z|)^2)`.
fn floored_variance(ensemble: &[Vec<Complex64>]) -> (Vec<f64>, usize) {
    let k = ensemble.len();
    let m = ensemble[0].len();
    let mut out = vec![0.0; m];
    let mut floored = 0;
    for i in 0..m {
        let mean: Complex64 = ensemble.iter().map(|v| v[i]).sum::<Complex64>() / k as f64;
        let var: f64 = ensemble
            .iter()
            .map(|v| (v[i] - mean).norm_sqr())
            .sum::<f64>()
            / (k - 1) as f64;
        let mean_mag: f64 = ensemble.iter().map(|v| v[i].norm()).sum::<f64>() / k as f64;
        let floor = (VAR_FLOOR_REL * mean_mag * mean_mag).max(VAR_FLOOR_ABS);
        if var < floor {
            floored += 1;
            out[i] = floor;
        } else {
            out[i] = var;
        }
    }
    (out, floored)
}

/// Estimate per-coefficient normalization variances from the snippets:
/// prior from the snippet ensemble itself, data from the observation
/// shifted by each snippet, cross from the observation correlated with
/// each snippet. The data and cross surrogates keep the normalization
/// independent of the unknown source.
pub fn estimate_normalization(
    x: &Waveform,
    snippets: &[Waveform],
    fb: &FilterBank,
) -> Result<NormalizationStats> {
    estimate_normalization_with(x, snippets, fb, ExecMode::Parallel)
}

pub fn estimate_normalization_with(
    x: &Waveform,
    snippets: &[Waveform],
    fb: &FilterBank,
    exec: ExecMode,
) -> Result<NormalizationStats> {
    if snippets.len() < 2 {
        return Err(Error::invalid(format!(
            "variance estimation requires at least two snippets, got {}",
            snippets.len()
        )));
    }
    check_problem_lengths(x, snippets, fb)?;
    let layout = ScatLayout::new(fb.n_band_pass());

    let mut ws = Workspace::new(fb);
    let fwd_x = scat_forward(x.samples(), fb, &layout, &mut ws);

    let per_snippet: Vec<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> =
        par::map_slice(exec, snippets, |_, n| {
            let mut ws = Workspace::new(fb);
            let fwd_n = scat_forward(n.samples(), fb, &layout, &mut ws);
            let phi_n = self_cov_values(&fwd_n, &layout);
            let shifted: Vec<f64> = x
                .samples()
                .iter()
                .zip(n.samples())
                .map(|(a, b)| a + b)
                .collect();
            let fwd_shift = scat_forward(&shifted, fb, &layout, &mut ws);
            let phi_shift = self_cov_values(&fwd_shift, &layout);
            let phi_cross = cross_cov_values(&fwd_x, &fwd_n, &layout);
            (phi_n, phi_shift, phi_cross)
        });

    let prior_ens: Vec<Vec<Complex64>> = per_snippet.iter().map(|t| t.0.clone()).collect();
    let data_ens: Vec<Vec<Complex64>> = per_snippet.iter().map(|t| t.1.clone()).collect();
    let cross_ens: Vec<Vec<Complex64>> = per_snippet.iter().map(|t| t.2.clone()).collect();

    let (var_prior, f_prior) = floored_variance(&prior_ens);
    let (var_data, f_data) = floored_variance(&data_ens);
    let (var_cross, f_cross) = floored_variance(&cross_ens);
    let degenerate = f_prior == var_prior.len();

    Ok(NormalizationStats {
        var_prior,
        var_data,
        var_cross,
        floored: [f_prior, f_data, f_cross],
        degenerate,
    })
}

fn check_problem_lengths(x: &Waveform, snippets: &[Waveform], fb: &FilterBank) -> Result<()> {
    if x.len() != fb.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: fb.len(),
            context: "observation vs filter bank".into(),
        });
    }
    for (k, n) in snippets.iter().enumerate() {
        if n.len() != x.len() {
            return Err(Error::LengthMismatch {
                left: n.len(),
                right: x.len(),
                context: format!("snippet {k} vs observation"),
            });
        }
        if n.sample_rate() != x.sample_rate() {
            return Err(Error::invalid(format!(
                "snippet {k} sample rate {} differs from observation rate {}",
                n.sample_rate(),
                x.sample_rate()
            )));
        }
    }
    Ok(())
}

/// A fully configured separation problem with precomputed targets,
/// normalization weights, and cached snippet scatterings. Immutable during
/// a solve and shareable across threads.
pub struct SeparationProblem {
    pub x: Waveform,
    pub a1: f64,
    pub snippets: Vec<Waveform>,
    pub bank: Arc<FilterBank>,
    pub norms: NormalizationStats,
    pub solver: SolverConfig,
    pub(crate) layout: Arc<ScatLayout>,
    /// Target self-covariance of the observation.
    pub(crate) phi_x: Vec<Complex64>,
    /// Mean of the snippet covariances.
    pub(crate) phi_n_mean: Vec<Complex64>,
    /// Mean squared scatter of snippet covariances around their mean,
    /// per coefficient (closes the prior term without a per-snippet loop).
    pub(crate) phi_n_spread: Vec<f64>,
    /// Loss weights `1 / (M * sigma^2)` per coefficient and term.
    pub(crate) w_prior: Vec<f64>,
    pub(crate) w_data: Vec<f64>,
    pub(crate) w_cross: Vec<f64>,
    /// Cached snippet scatterings for the data and cross terms.
    pub(crate) snippet_tapes: Vec<ScatForward>,
    /// Statistical floor of the total loss: the level a fresh background
    /// realization would score, estimated leave-one-out from the snippet
    /// ensemble (prior and data terms; the cross floor is conservatively
    /// zero).
    pub loss_floor: f64,
}

impl SeparationProblem {
    pub fn new(
        x: Waveform,
        a1: f64,
        snippets: Vec<Waveform>,
        bank: Arc<FilterBank>,
        solver: SolverConfig,
    ) -> Result<Self> {
        solver.validate()?;
        if !a1.is_finite() || a1 == 0.0 {
            return Err(Error::invalid(format!(
                "mixing coefficient a1 must be finite and nonzero, got {a1}"
            )));
        }
        if snippets.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least two snippets, got {}",
                snippets.len()
            )));
        }
        check_problem_lengths(&x, &snippets, &bank)?;
        let norms = estimate_normalization_with(&x, &snippets, &bank, solver.exec)?;
        let layout = ScatLayout::new(bank.n_band_pass());

        let mut ws = Workspace::new(&bank);
        let fwd_x = scat_forward(x.samples(), &bank, &layout, &mut ws);
        let phi_x = self_cov_values(&fwd_x, &layout);

        let bank_ref = &bank;
        let layout_ref = &layout;
        let tapes: Vec<ScatForward> = par::map_slice(solver.exec, &snippets, |_, n| {
            let mut ws = Workspace::new(bank_ref);
            scat_forward(n.samples(), bank_ref, layout_ref, &mut ws)
        });

        let k = snippets.len();
        let m_self = layout.self_len();
        let mut phi_n_mean = vec![Complex64::new(0.0, 0.0); m_self];
        let phi_n: Vec<Vec<Complex64>> = tapes
            .iter()
            .map(|t| self_cov_values(t, &layout))
            .collect();
        for phi in &phi_n {
            for (acc, v) in phi_n_mean.iter_mut().zip(phi) {
                *acc += v;
            }
        }
        for acc in phi_n_mean.iter_mut() {
            *acc /= k as f64;
        }
        let mut phi_n_spread = vec![0.0; m_self];
        for phi in &phi_n {
            for ((s, v), mu) in phi_n_spread.iter_mut().zip(phi).zip(&phi_n_mean) {
                *s += (v - mu).norm_sqr();
            }
        }
        for s in phi_n_spread.iter_mut() {
            *s /= k as f64;
        }

        let m_cross = layout.cross_len();
        let w_prior: Vec<f64> = norms
            .var_prior
            .iter()
            .map(|v| 1.0 / (m_self as f64 * v))
            .collect();
        let w_data: Vec<f64> = norms
            .var_data
            .iter()
            .map(|v| 1.0 / (m_self as f64 * v))
            .collect();
        let w_cross: Vec<f64> = norms
            .var_cross
            .iter()
            .map(|v| 1.0 / (m_cross as f64 * v))
            .collect();

        // Mean pairwise weighted distance between snippet covariances:
        // the loss a held-out background realization scores against the
        // ensemble, under each term's weighting.
        let pairwise_floor = |w: &[f64]| -> f64 {
            let mut acc = 0.0;
            let mut count = 0usize;
            for j in 0..k {
                for i in j + 1..k {
                    let mut dist = 0.0;
                    for ((wm, a), b) in w.iter().zip(&phi_n[j]).zip(&phi_n[i]) {
                        dist += wm * (a - b).norm_sqr();
                    }
                    acc += dist;
                    count += 1;
                }
            }
            acc / count as f64
        };
        let [tw_data, tw_prior, _] = solver.term_weights;
        let loss_floor = tw_prior * pairwise_floor(&w_prior) + tw_data * pairwise_floor(&w_data);

        Ok(SeparationProblem {
            x,
            a1,
            snippets,
            bank,
            norms,
            solver,
            layout,
            phi_x,
            phi_n_mean,
            phi_n_spread,
            w_prior,
            w_data,
            w_cross,
            snippet_tapes: tapes,
            loss_floor,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_snippets(&self) -> usize {
        self.snippets.len()
    }
}

/// Evaluate the three normalized loss terms and their sum at `s1`.
pub fn evaluate_losses(s1: &[f64], problem: &SeparationProblem) -> Result<LossBreakdown> {
    let (breakdown, _) = objective(s1, problem, false)?;
    Ok(breakdown)
}

/// Per-iteration record of the loss terms at an accepted step.
#[derive(Debug, Clone, Copy)]
pub struct LossRecord {
    pub iteration: usize,
    pub data: f64,
    pub prior: f64,
    pub cross: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    MaxIterations,
    GradientTolerance,
    LossTolerance,
    /// The loss reached the statistical floor of the snippet ensemble;
    /// further descent would fit estimation noise.
    StatisticalFloor,
    LineSearchFailed,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminationReason::MaxIterations => write!(f, "max_iterations"),
            TerminationReason::GradientTolerance => write!(f, "gradient_tolerance"),
            TerminationReason::LossTolerance => write!(f, "loss_tolerance"),
            TerminationReason::StatisticalFloor => write!(f, "statistical_floor"),
            TerminationReason::LineSearchFailed => write!(f, "line_search_failed"),
        }
    }
}

/// Result of a separation solve. The reconstruction identity
/// `x = a1 * s1_hat + background_hat` holds bit-exactly by construction.
pub struct SeparationResult {
    pub s1_hat: Waveform,
    pub background_hat: Waveform,
    pub loss_trace: Vec<LossRecord>,
    pub iterations_used: usize,
    pub termination_reason: TerminationReason,
    pub best_loss: f64,
}

/// Minimize the total loss from `s1 = 0` with L-BFGS and a strong-Wolfe
/// line search; returns the best-loss iterate.
pub fn separate(problem: &SeparationProblem) -> Result<SeparationResult> {
    problem.solver.validate()?;
    let d = problem.len();
    let opts = LbfgsOptions {
        max_iterations: problem.solver.max_iterations,
        history_size: problem.solver.history_size,
        c1: problem.solver.wolfe_c1,
        c2: problem.solver.wolfe_c2,
        grad_tol_rel: problem.solver.grad_norm_tol,
        loss_tol_rel: problem.solver.loss_decrease_tol,
        loss_floor: problem.solver.floor_safety * problem.loss_floor,
    };

    let mut trace: Vec<LossRecord> = Vec::new();
    let outcome = lbfgs::minimize(
        |s1| {
            let (breakdown, grad) = objective(s1, problem, true)?;
            Ok((breakdown.total, grad.expect("gradient requested"), breakdown))
        },
        vec![0.0; d],
        &opts,
        |iteration, breakdown: &LossBreakdown| {
            trace.push(LossRecord {
                iteration,
                data: breakdown.data,
                prior: breakdown.prior,
                cross: breakdown.cross,
                total: breakdown.total,
            });
        },
    )?;

    let termination_reason = match outcome.termination {
        Termination::MaxIterations => TerminationReason::MaxIterations,
        Termination::GradientTolerance => TerminationReason::GradientTolerance,
        Termination::LossTolerance => TerminationReason::LossTolerance,
        Termination::ReachedFloor => TerminationReason::StatisticalFloor,
        Termination::LineSearchFailed => TerminationReason::LineSearchFailed,
    };

    let s1_hat = Waveform::new(outcome.best_x, problem.x.sample_rate())?;
    let background: Vec<f64> = problem
        .x
        .samples()
        .iter()
        .zip(s1_hat.samples())
        .map(|(x, s)| x - problem.a1 * s)
        .collect();
    let background_hat = Waveform::new(background, problem.x.sample_rate())?;

    Ok(SeparationResult {
        s1_hat,
        background_hat,
        loss_trace: trace,
        iterations_used: outcome.iterations,
        termination_reason,
        best_loss: outcome.best_f,
    })
}

/// Signal-to-noise ratio in dB of an estimate against the ground truth,
/// capped at 300 dB for exact reconstructions.
pub fn snr(estimate: &Waveform, truth: &Waveform) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimate.len(),
            right: truth.len(),
            context: "snr estimate vs truth".into(),
        });
    }
    let truth_energy = energy_of(truth.samples());
    if truth_energy == 0.0 {
        return Err(Error::invalid("snr undefined for zero truth".to_string()));
    }
    let err: f64 = estimate
        .samples()
        .iter()
        .zip(truth.samples())
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    if err == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (truth_energy / err).log10()).min(SNR_CAP_DB))
}
