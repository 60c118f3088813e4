//! Synthetic data for the stylized experiments: multifractal random walk
//! increments, glitch-like transient trains, and linear mixtures with known
//! ground truth.

use crate::error::{Error, Result};
use crate::fourier::FftPlan;
use crate::signal::Waveform;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Parameters of the multifractal-random-walk increment generator.
///
/// `lambda2` is the intermittency parameter; zero reduces the process to
/// Gaussian white noise. `corr_scale` is the integral scale in samples.
#[derive(Debug, Clone, Copy)]
pub struct MrwParams {
    pub d: usize,
    pub lambda2: f64,
    pub corr_scale: usize,
    pub seed: u64,
}

impl MrwParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidLength {
                len: self.d,
                reason: "mrw length must be >= 2".into(),
            });
        }
        if self.lambda2 < 0.0 || !self.lambda2.is_finite() {
            return Err(Error::invalid(format!(
                "lambda2 must be finite and >= 0, got {}",
                self.lambda2
            )));
        }
        if self.corr_scale <= 1 || self.corr_scale > self.d {
            return Err(Error::invalid(format!(
                "corr_scale must satisfy 1 < T_c <= d, got {}",
                self.corr_scale
            )));
        }
        Ok(())
    }
}

/// Parameters of the exponential-peak transient train.
#[derive(Debug, Clone, Copy)]
pub struct GlitchParams {
    pub d: usize,
    pub n_peaks: usize,
    pub amp_min: f64,
    pub amp_max: f64,
    /// Decay constant in samples on the rising (left) side of a peak.
    pub left_decay: f64,
    /// Decay constant in samples on the falling (right) side.
    pub right_decay: f64,
    pub min_separation: usize,
    pub seed: u64,
}

impl GlitchParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidLength {
                len: 0,
                reason: "glitch train length must be positive".into(),
            });
        }
        if self.left_decay.is_nan()
            || self.right_decay.is_nan()
            || self.left_decay <= 0.0
            || self.right_decay <= 0.0
        {
            return Err(Error::invalid("decay constants must be positive".to_string()));
        }
        if self.amp_min > self.amp_max {
            return Err(Error::invalid("amplitude range inverted".to_string()));
        }
        Ok(())
    }
}

/// Outcome of the circulant embedding step; negative eigenvalues are
/// clipped to zero (with a flag) when the wrapped covariance is not PSD.
pub struct MrwRealization {
    pub waveform: Waveform,
    pub eigenvalues_clipped: bool,
}

/// Generate multifractal-random-walk increments:
/// `x_t = eps_t * exp(omega_t - sigma_omega^2)` where `eps` is unit white
/// noise and `omega` is a zero-mean Gaussian vector with covariance
/// `lambda2 * max(0, ln(T_c / (|tau| + 1)))`, sampled exactly by circulant
/// embedding on the circular grid. The correction makes the output unit
/// variance in expectation.
pub fn mrw_increments(p: &MrwParams) -> Result<MrwRealization> {
    p.validate()?;
    let d = p.d;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    // Draw the log-volatility field first, then the Gaussian carrier, so
    // the stream layout is stable.
    let mut clipped = false;
    let log_vol: Vec<f64> = if p.lambda2 == 0.0 {
        vec![0.0; d]
    } else {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let (omega, was_clipped) = sample_log_volatility(&g, p.lambda2, p.corr_scale);
        clipped = was_clipped;
        omega
    };
    let sigma2 = p.lambda2 * (p.corr_scale as f64).ln();

    let samples: Vec<f64> = log_vol
        .iter()
        .map(|w| {
            let eps: f64 = rng.sample(StandardNormal);
            eps * (w - sigma2).exp()
        })
        .collect();

    Ok(MrwRealization {
        waveform: Waveform::new(samples, 1.0)?,
        eigenvalues_clipped: clipped,
    })
}

/// Sample the log-correlated Gaussian field via circulant embedding:
/// `omega = C^{1/2} g` with `C^{1/2} = F^{-1} diag(sqrt(eig)) F`.
fn sample_log_volatility(g: &[f64], lambda2: f64, corr_scale: usize) -> (Vec<f64>, bool) {
    let d = g.len();
    let tc = corr_scale as f64;
    let cov: Vec<f64> = (0..d)
        .map(|tau| {
            let circ = tau.min(d - tau) as f64;
            lambda2 * (tc / (circ + 1.0)).ln().max(0.0)
        })
        .collect();

    let plan = FftPlan::new(d);
    let mut scratch = plan.make_scratch();
    let mut eig: Vec<Complex64> = cov.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    plan.forward(&mut eig, &mut scratch);

    let max_eig = eig.iter().map(|e| e.re).fold(0.0f64, f64::max);
    let mut clipped = false;
    let sqrt_eig: Vec<f64> = eig
        .iter()
        .map(|e| {
            if e.re < 0.0 {
                if e.re < -1e-9 * max_eig {
                    clipped = true;
                }
                0.0
            } else {
                e.re.sqrt()
            }
        })
        .collect();

    let mut buf: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward(&mut buf, &mut scratch);
    for (b, s) in buf.iter_mut().zip(sqrt_eig.iter()) {
        *b *= *s;
    }
    plan.inverse(&mut buf, &mut scratch);
    (buf.iter().map(|z| z.re).collect(), clipped)
}

/// Generate a train of transient peaks with exponential decay on both
/// flanks (possibly asymmetric). Peak positions are uniform with a minimum
/// separation enforced by rejection.
pub fn glitch_train(p: &GlitchParams) -> Result<Waveform> {
    p.validate()?;
    let d = p.d;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut samples = vec![0.0; d];
    if p.n_peaks == 0 {
        return Waveform::new(samples, 1.0);
    }

    let mut positions: Vec<usize> = Vec::with_capacity(p.n_peaks);
    let max_attempts = 1000 * p.n_peaks;
    let mut attempts = 0;
    while positions.len() < p.n_peaks {
        if attempts >= max_attempts {
            return Err(Error::invalid(format!(
                "cannot place {} peaks with separation {} in {} samples",
                p.n_peaks, p.min_separation, d
            )));
        }
        attempts += 1;
        let cand = rng.gen_range(0..d);
        if positions
            .iter()
            .all(|&pos| pos.abs_diff(cand) >= p.min_separation)
        {
            positions.push(cand);
        }
    }

    for &t0 in &positions {
        let amp = if p.amp_max > p.amp_min {
            rng.gen_range(p.amp_min..p.amp_max)
        } else {
            p.amp_min
        };
        add_peak(&mut samples, t0, amp, p.left_decay, p.right_decay);
    }
    Waveform::new(samples, 1.0)
}

fn add_peak(samples: &mut [f64], t0: usize, amp: f64, left: f64, right: f64) {
    let d = samples.len();
    // Support is truncated where the tail drops below exp(-40).
    let reach_left = (40.0 * left).ceil() as usize;
    let reach_right = (40.0 * right).ceil() as usize;
    let lo = t0.saturating_sub(reach_left);
    let hi = (t0 + reach_right).min(d - 1);
    for (t, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let v = if t < t0 {
            amp * (-((t0 - t) as f64) / left).exp()
        } else {
            amp * (-((t - t0) as f64) / right).exp()
        };
        *s += v;
    }
}

/// Linear single-channel mixture `x = a1 * s1 + n`.
pub fn mix(s1: &Waveform, n: &Waveform, a1: f64) -> Result<Waveform> {
    if s1.len() != n.len() {
        return Err(Error::LengthMismatch {
            left: s1.len(),
            right: n.len(),
            context: "mix source vs background".into(),
        });
    }
    let samples: Vec<f64> = s1
        .samples()
        .iter()
        .zip(n.samples())
        .map(|(s, b)| a1 * s + b)
        .collect();
    Waveform::new(samples, n.sample_rate())
}
