//! Reproducible experiment runners shared by the CLI and the acceptance
//! suite: the stylized mixture (multifractal background plus transient
//! train) and the recovery-quality-versus-snippet-count sweep.

use crate::error::Result;
use crate::par::{self, ExecMode};
use crate::separation::{separate, snr, SeparationProblem, SeparationResult, SolverConfig};
use crate::signal::{energy_of, Waveform};
use crate::synth::{glitch_train, mix, mrw_increments, GlitchParams, MrwParams};
use crate::wavelet::{build_filter_bank, FilterBank, WaveletFamily};
use std::sync::Arc;

/// Full configuration of one stylized separation run with known ground
/// truth. `glitch_peaks = 0` produces the pure-noise corner case.
#[derive(Debug, Clone)]
pub struct StylizedConfig {
    pub d: usize,
    pub j: usize,
    pub q: usize,
    pub family: WaveletFamily,
    pub k: usize,
    pub iterations: usize,
    pub lambda2: f64,
    pub corr_scale: usize,
    pub glitch_peaks: usize,
    pub glitch_amp_min: f64,
    pub glitch_amp_max: f64,
    pub glitch_left_decay: f64,
    pub glitch_right_decay: f64,
    pub glitch_min_separation: usize,
    pub a1: f64,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for StylizedConfig {
    fn default() -> Self {
        StylizedConfig {
            d: 2048,
            j: 8,
            q: 1,
            family: WaveletFamily::BattleLemarie,
            k: 100,
            iterations: 500,
            lambda2: 0.04,
            corr_scale: 512,
            glitch_peaks: 8,
            glitch_amp_min: 3.0,
            glitch_amp_max: 8.0,
            glitch_left_decay: 4.0,
            glitch_right_decay: 32.0,
            glitch_min_separation: 128,
            a1: 1.0,
            seed: 0,
            exec: ExecMode::Parallel,
        }
    }
}

impl StylizedConfig {
    pub fn glitch_params(&self, seed: u64) -> GlitchParams {
        GlitchParams {
            d: self.d,
            n_peaks: self.glitch_peaks,
            amp_min: self.glitch_amp_min,
            amp_max: self.glitch_amp_max,
            left_decay: self.glitch_left_decay,
            right_decay: self.glitch_right_decay,
            min_separation: self.glitch_min_separation,
            seed,
        }
    }

    pub fn mrw_params(&self, seed: u64) -> MrwParams {
        MrwParams {
            d: self.d,
            lambda2: self.lambda2,
            corr_scale: self.corr_scale,
            seed,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            max_iterations: self.iterations,
            seed: self.seed,
            exec: self.exec,
            ..SolverConfig::default()
        }
    }
}

/// Outcome of one stylized run, with ground-truth quality metrics.
pub struct StylizedRun {
    pub s1_true: Waveform,
    pub background_true: Waveform,
    pub observation: Waveform,
    pub result: SeparationResult,
    /// Background SNR of the do-nothing estimate (observation as-is).
    pub snr_zero_db: f64,
    /// Background SNR of the separated estimate.
    pub snr_separated_db: f64,
    /// Normalized cross-correlation between the background residual and
    /// the true transient train (coherence of the leftover error).
    pub residual_glitch_corr: f64,
    /// Energy of the recovered source relative to the observation.
    pub source_energy_fraction: f64,
}

/// Generate the stylized data for a seed without solving; returns
/// (source, background, observation).
pub fn stylized_data(cfg: &StylizedConfig) -> Result<(Waveform, Waveform, Waveform)> {
    let noise_seed = par::derive_seed(cfg.seed, 1);
    let glitch_seed = par::derive_seed(cfg.seed, 2);
    let background = mrw_increments(&cfg.mrw_params(noise_seed))?.waveform;
    let source = if cfg.glitch_peaks == 0 {
        Waveform::new(vec![0.0; cfg.d], 1.0)?
    } else {
        glitch_train(&cfg.glitch_params(glitch_seed))?
    };
    let observation = mix(&source, &background, cfg.a1)?;
    Ok((source, background, observation))
}

pub fn stylized_snippets(cfg: &StylizedConfig) -> Result<Vec<Waveform>> {
    (0..cfg.k)
        .map(|i| {
            let seed = par::derive_seed(cfg.seed, 100 + i as u64);
            Ok(mrw_increments(&cfg.mrw_params(seed))?.waveform)
        })
        .collect()
}

pub fn run_stylized(cfg: &StylizedConfig) -> Result<StylizedRun> {
    let (s1_true, background_true, observation) = stylized_data(cfg)?;
    let snippets = stylized_snippets(cfg)?;
    let bank: Arc<FilterBank> = Arc::new(build_filter_bank(cfg.j, cfg.q, cfg.d, cfg.family)?);
    let problem =
        SeparationProblem::new(observation.clone(), cfg.a1, snippets, bank, cfg.solver())?;
    let result = separate(&problem)?;

    let snr_zero_db = snr(&observation, &background_true)?;
    let snr_separated_db = snr(&result.background_hat, &background_true)?;

    let residual: Vec<f64> = result
        .background_hat
        .samples()
        .iter()
        .zip(background_true.samples())
        .map(|(a, b)| a - b)
        .collect();
    let res_norm = energy_of(&residual).sqrt();
    let glitch_norm = energy_of(s1_true.samples()).sqrt();
    let residual_glitch_corr = if res_norm > 0.0 && glitch_norm > 0.0 {
        let dot: f64 = residual
            .iter()
            .zip(s1_true.samples())
            .map(|(a, b)| a * b)
            .sum();
        (dot / (res_norm * glitch_norm)).abs()
    } else {
        0.0
    };

    let source_energy_fraction = cfg.a1 * cfg.a1 * energy_of(result.s1_hat.samples())
        / energy_of(observation.samples()).max(1e-300);

    Ok(StylizedRun {
        s1_true,
        background_true,
        observation,
        result,
        snr_zero_db,
        snr_separated_db,
        residual_glitch_corr,
        source_energy_fraction,
    })
}

#[derive(Debug, Clone)]
pub struct SnrExperimentConfig {
    pub k_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub base: StylizedConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct SnrTrialRow {
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub snr_db: f64,
}

/// Run `trials` seeded stylized separations per snippet count and report
/// the separated-background SNR of each.
pub fn snr_experiment(cfg: &SnrExperimentConfig) -> Result<Vec<SnrTrialRow>> {
    let jobs: Vec<(usize, usize)> = cfg
        .k_values
        .iter()
        .flat_map(|&k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let outcomes: Vec<Result<SnrTrialRow>> =
        par::map_slice(cfg.base.exec, &jobs, |job_idx, &(k, trial)| {
            let seed = par::derive_seed(cfg.seed, job_idx as u64);
            let run_cfg = StylizedConfig {
                k,
                seed,
                ..cfg.base.clone()
            };
            let run = run_stylized(&run_cfg)?;
            Ok(SnrTrialRow {
                k,
                trial,
                seed,
                snr_db: run.snr_separated_db,
            })
        });
    outcomes.into_iter().collect()
}

/// Percentile of a sample by linear interpolation (p in [0, 100]).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}
