//! Exact gradients of the separation objective with respect to the unknown
//! source samples, by reverse-mode sweeps through the scattering pipeline.
//!
//! The pipeline stages and their adjoints:
//!   frequency-domain convolution  ->  convolution with the conjugate filter
//!   complex modulus               ->  g * z/|z| (zero at z = 0)
//!   time averages and products    ->  linear spreading
//! Normalization variances are treated as constants; they are estimated
//! from the observation and the snippets, neither of which depends on the
//! optimization variable.

use crate::error::{Error, Result};
use crate::par;
use crate::scattering::{
    cross_cov_values, scat_forward, self_cov_values, ScatForward, ScatLayout, Workspace,
};
use crate::separation::SeparationProblem;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Snippets per parallel work unit; fixed so floating-point reduction
/// order does not depend on the thread count.
const SNIPPET_CHUNK: usize = 8;

/// The three loss terms (unweighted) and their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub data: f64,
    pub prior: f64,
    pub cross: f64,
    pub total: f64,
}

/// Gradient accumulators for one scattering tape.
pub(crate) struct ScatAdjoint {
    g_layer1: Vec<Vec<Complex64>>,
    g_env: Vec<Vec<f64>>,
    g_layer2: Vec<Vec<Complex64>>,
}

impl ScatAdjoint {
    pub(crate) fn zero(layout: &ScatLayout, d: usize) -> ScatAdjoint {
        ScatAdjoint {
            g_layer1: vec![vec![Complex64::new(0.0, 0.0); d]; layout.n_channels],
            g_env: vec![vec![0.0; d]; layout.n_channels],
            g_layer2: vec![vec![Complex64::new(0.0, 0.0); d]; layout.pairs.len()],
        }
    }

    fn merge(&mut self, other: &ScatAdjoint) {
        for (a, b) in self.g_layer1.iter_mut().zip(&other.g_layer1) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.g_env.iter_mut().zip(&other.g_env) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.g_layer2.iter_mut().zip(&other.g_layer2) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Scatter self-covariance cotangents into the tape accumulators.
pub(crate) fn accumulate_self_adjoint(
    fwd: &ScatForward,
    layout: &ScatLayout,
    g_values: &[Complex64],
    adj: &mut ScatAdjoint,
) {
    let d = fwd.layer1[0].len();
    let inv_d = 1.0 / d as f64;
    let [phi1_at, phi2_at, phi3_at, phi4_at] = layout.segments();

    for ch in 0..layout.n_channels {
        let g = g_values[phi1_at + ch].re * inv_d;
        if g != 0.0 {
            for ge in adj.g_env[ch].iter_mut() {
                *ge += g;
            }
        }
    }
    for ch in 0..layout.n_channels {
        let g = 2.0 * g_values[phi2_at + ch].re * inv_d;
        if g != 0.0 {
            for (gz, z) in adj.g_layer1[ch].iter_mut().zip(&fwd.layer1[ch]) {
                *gz += g * z;
            }
        }
    }
    for (k, &(cj, ce)) in layout.phi3_ops.iter().enumerate() {
        let g = g_values[phi3_at + k] * inv_d;
        if g == Complex64::new(0.0, 0.0) {
            continue;
        }
        let (head, env) = (&mut adj.g_layer1[cj], &fwd.env[ce]);
        for (gz, e) in head.iter_mut().zip(env) {
            *gz += g * *e;
        }
        let gc = g.conj();
        for ((ge, z), _) in adj.g_env[ce].iter_mut().zip(&fwd.layer1[cj]).zip(env) {
            *ge += (gc * z).re;
        }
    }
    for (k, &(p1, p2)) in layout.phi4_ops.iter().enumerate() {
        let g = g_values[phi4_at + k] * inv_d;
        if g == Complex64::new(0.0, 0.0) {
            continue;
        }
        let m1 = fwd.layer2_mean[p1];
        let m2 = fwd.layer2_mean[p2];
        if p1 == p2 {
            // a = 0: derivative of the centered second moment
            let gsum = g + g.conj();
            for (gv, v) in adj.g_layer2[p1].iter_mut().zip(&fwd.layer2[p1]) {
                *gv += gsum * (v - m1);
            }
        } else {
            let gc = g.conj();
            let (gl2_1, gl2_2) = {
                let (a, b) = adj.g_layer2.split_at_mut(p1.max(p2));
                if p1 < p2 {
                    (&mut a[p1], &mut b[0])
                } else {
                    (&mut b[0], &mut a[p2])
                }
            };
            for ((gv, v2), v1) in gl2_1
                .iter_mut()
                .zip(&fwd.layer2[p2])
                .zip(&fwd.layer2[p1])
            {
                let _ = v1;
                *gv += g * (v2 - m2);
            }
            for (gv, v1) in gl2_2.iter_mut().zip(&fwd.layer2[p1]) {
                *gv += gc * (v1 - m1);
            }
        }
    }
}

/// Scatter cross-covariance cotangents into the x-side tape accumulators;
/// the y-side is a constant.
pub(crate) fn accumulate_cross_adjoint(
    fwd_y: &ScatForward,
    layout: &ScatLayout,
    g_values: &[Complex64],
    adj: &mut ScatAdjoint,
) {
    let d = fwd_y.layer1[0].len();
    let inv_d = 1.0 / d as f64;
    let [phi2_at, phi3_at, phi4_at] = layout.cross_segments();

    for ch in 0..layout.n_channels {
        let g = g_values[phi2_at + ch] * inv_d;
        if g == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (gz, zy) in adj.g_layer1[ch].iter_mut().zip(&fwd_y.layer1[ch]) {
            *gz += g * zy;
        }
    }
    for (k, &(cj, ce)) in layout.phi3_ops.iter().enumerate() {
        let g = g_values[phi3_at + k] * inv_d;
        if g == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (gz, ey) in adj.g_layer1[cj].iter_mut().zip(&fwd_y.env[ce]) {
            *gz += g * *ey;
        }
    }
    for (k, &(p1, p2)) in layout.phi4_ops.iter().enumerate() {
        let g = g_values[phi4_at + k] * inv_d;
        if g == Complex64::new(0.0, 0.0) {
            continue;
        }
        let m2 = fwd_y.layer2_mean[p2];
        for (gv, v2) in adj.g_layer2[p1].iter_mut().zip(&fwd_y.layer2[p2]) {
            *gv += g * (v2 - m2);
        }
    }
}

/// Run the reverse sweep from the channel accumulators down to the real
/// input signal.
pub(crate) fn adjoint_to_signal(
    fwd: &ScatForward,
    layout: &ScatLayout,
    fb: &crate::wavelet::FilterBank,
    mut adj: ScatAdjoint,
    ws: &mut Workspace,
) -> Vec<f64> {
    let plan = fb.plan();
    let d = fwd.layer1[0].len();

    // second layer -> band-pass envelope gradients
    let mut genv_hat = vec![vec![Complex64::new(0.0, 0.0); d]; layout.n_bp];
    for (p, &(c1, c2)) in layout.pairs.iter().enumerate() {
        let mut buf = std::mem::take(&mut adj.g_layer2[p]);
        plan.forward(&mut buf, &mut ws.scratch);
        fb.accumulate_adjoint_spectrum(&buf, c2, &mut genv_hat[c1]);
    }
    for (c1, mut spec) in genv_hat.into_iter().enumerate() {
        plan.inverse(&mut spec, &mut ws.scratch);
        for (ge, s) in adj.g_env[c1].iter_mut().zip(&spec) {
            *ge += s.re;
        }
    }

    // modulus: g_z = g_env * z / |z|, zero where z vanishes
    for ch in 0..layout.n_channels {
        for ((gz, &ge), z) in adj.g_layer1[ch]
            .iter_mut()
            .zip(&adj.g_env[ch])
            .zip(&fwd.layer1[ch])
        {
            let n = z.norm();
            if n > 0.0 {
                *gz += z * (ge / n);
            }
        }
    }

    // first layer -> signal
    let mut acc = vec![Complex64::new(0.0, 0.0); d];
    for ch in 0..layout.n_channels {
        let mut buf = std::mem::take(&mut adj.g_layer1[ch]);
        plan.forward(&mut buf, &mut ws.scratch);
        fb.accumulate_adjoint_spectrum(&buf, ch, &mut acc);
    }
    plan.inverse(&mut acc, &mut ws.scratch);
    acc.iter().map(|z| z.re).collect()
}

fn ensure_finite(values: &[Complex64], stage: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                stage: stage.into(),
            });
        }
    }
    Ok(())
}

/// Evaluate the three normalized loss terms at `s1`, optionally with the
/// exact gradient of their weighted sum.
pub(crate) fn objective(
    s1: &[f64],
    problem: &SeparationProblem,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let d = problem.len();
    if s1.len() != d {
        return Err(Error::LengthMismatch {
            left: s1.len(),
            right: d,
            context: "source estimate vs problem".into(),
        });
    }
    let a1 = problem.a1;
    let layout = &problem.layout;
    let bank = &problem.bank;
    let k = problem.n_snippets();
    let [w_term_data, w_term_prior, w_term_cross] = problem.solver.term_weights;

    let mut grad: Option<Vec<f64>> = want_grad.then(|| vec![0.0; d]);

    // prior: residual x - a1 s1 against the snippet ensemble
    let residual: Vec<f64> = problem
        .x
        .samples()
        .iter()
        .zip(s1)
        .map(|(x, s)| x - a1 * s)
        .collect();
    let mut ws = Workspace::new(bank);
    let fwd_r = scat_forward(&residual, bank, layout, &mut ws);
    let phi_r = self_cov_values(&fwd_r, layout);
    ensure_finite(&phi_r, "scattering covariance of residual (prior term)")?;
    let mut prior = 0.0;
    for ((w, v), (mu, spread)) in problem
        .w_prior
        .iter()
        .zip(&phi_r)
        .zip(problem.phi_n_mean.iter().zip(&problem.phi_n_spread))
    {
        prior += w * ((v - mu).norm_sqr() + spread);
    }
    if let Some(g) = grad.as_mut() {
        let g_phi: Vec<Complex64> = problem
            .w_prior
            .iter()
            .zip(&phi_r)
            .zip(&problem.phi_n_mean)
            .map(|((w, v), mu)| 2.0 * w_term_prior * w * (v - mu))
            .collect();
        let mut adj = ScatAdjoint::zero(layout, d);
        accumulate_self_adjoint(&fwd_r, layout, &g_phi, &mut adj);
        let g_r = adjoint_to_signal(&fwd_r, layout, bank, adj, &mut ws);
        for (gs, gr) in g.iter_mut().zip(&g_r) {
            *gs -= a1 * gr;
        }
    }

    // data and cross terms, chunked over snippets
    let scaled: Vec<f64> = s1.iter().map(|s| a1 * s).collect();
    let fwd_c = scat_forward(&scaled, bank, layout, &mut ws);

    struct ChunkOut {
        data_sum: f64,
        cross_sum: f64,
        g_data: Option<Vec<f64>>,
        cross_adj: Option<ScatAdjoint>,
    }

    let n_chunks = k.div_ceil(SNIPPET_CHUNK);
    let chunk_results: Vec<Result<ChunkOut>> =
        par::map_range(problem.solver.exec, n_chunks, |ci| {
            let lo = ci * SNIPPET_CHUNK;
            let hi = ((ci + 1) * SNIPPET_CHUNK).min(k);
            let mut ws = Workspace::new(bank);
            let mut data_sum = 0.0;
            let mut cross_sum = 0.0;
            let mut g_data = want_grad.then(|| vec![0.0; d]);
            let mut cross_adj = want_grad.then(|| ScatAdjoint::zero(layout, d));

            for ki in lo..hi {
                let snippet = problem.snippets[ki].samples();
                let shifted: Vec<f64> = scaled
                    .iter()
                    .zip(snippet)
                    .map(|(c, n)| c + n)
                    .collect();
                let fwd_u = scat_forward(&shifted, bank, layout, &mut ws);
                let phi_u = self_cov_values(&fwd_u, layout);
                ensure_finite(&phi_u, "scattering covariance of shifted source (data term)")?;
                for ((w, v), t) in problem.w_data.iter().zip(&phi_u).zip(&problem.phi_x) {
                    data_sum += w * (v - t).norm_sqr();
                }
                if let Some(gd) = g_data.as_mut() {
                    let g_phi: Vec<Complex64> = problem
                        .w_data
                        .iter()
                        .zip(&phi_u)
                        .zip(&problem.phi_x)
                        .map(|((w, v), t)| (2.0 * w_term_data / k as f64) * w * (v - t))
                        .collect();
                    let mut adj = ScatAdjoint::zero(layout, d);
                    accumulate_self_adjoint(&fwd_u, layout, &g_phi, &mut adj);
                    let g_u = adjoint_to_signal(&fwd_u, layout, bank, adj, &mut ws);
                    for (gs, gu) in gd.iter_mut().zip(&g_u) {
                        *gs += a1 * gu;
                    }
                }

                let tape = &problem.snippet_tapes[ki];
                let cross_vals = cross_cov_values(&fwd_c, tape, layout);
                ensure_finite(&cross_vals, "scattering cross-covariance (cross term)")?;
                for (w, v) in problem.w_cross.iter().zip(&cross_vals) {
                    cross_sum += w * v.norm_sqr();
                }
                if let Some(adj) = cross_adj.as_mut() {
                    let g_phi: Vec<Complex64> = problem
                        .w_cross
                        .iter()
                        .zip(&cross_vals)
                        .map(|(w, v)| (2.0 * w_term_cross / k as f64) * w * v)
                        .collect();
                    accumulate_cross_adjoint(tape, layout, &g_phi, adj);
                }
            }
            Ok(ChunkOut {
                data_sum,
                cross_sum,
                g_data,
                cross_adj,
            })
        });

    let mut data = 0.0;
    let mut cross = 0.0;
    let mut cross_adj_total = want_grad.then(|| ScatAdjoint::zero(layout, d));
    for chunk in chunk_results {
        let chunk = chunk?;
        data += chunk.data_sum;
        cross += chunk.cross_sum;
        if let (Some(g), Some(gd)) = (grad.as_mut(), chunk.g_data.as_ref()) {
            for (a, b) in g.iter_mut().zip(gd) {
                *a += b;
            }
        }
        if let (Some(total), Some(part)) = (cross_adj_total.as_mut(), chunk.cross_adj.as_ref()) {
            total.merge(part);
        }
    }
    data /= k as f64;
    cross /= k as f64;

    if let (Some(g), Some(adj)) = (grad.as_mut(), cross_adj_total) {
        let g_c = adjoint_to_signal(&fwd_c, layout, bank, adj, &mut ws);
        for (gs, gc) in g.iter_mut().zip(&g_c) {
            *gs += a1 * gc;
        }
    }

    let total = w_term_data * data + w_term_prior * prior + w_term_cross * cross;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            stage: "total loss".into(),
        });
    }
    if let Some(g) = grad.as_ref() {
        if let Some(idx) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: idx,
                stage: "loss gradient".into(),
            });
        }
    }

    Ok((
        LossBreakdown {
            data,
            prior,
            cross,
            total,
        },
        grad,
    ))
}

/// Loss and exact gradient of the full objective at `s1`.
pub fn loss_value_and_gradient(
    s1: &[f64],
    problem: &SeparationProblem,
) -> Result<(f64, Vec<f64>)> {
    let (breakdown, grad) = objective(s1, problem, true)?;
    Ok((breakdown.total, grad.expect("gradient requested")))
}

/// Max relative error between directional finite differences and the
/// analytic gradient over random unit directions.
pub fn finite_difference_check(
    s1: &[f64],
    problem: &SeparationProblem,
    n_directions: usize,
    step: f64,
) -> Result<f64> {
    let seed = par::derive_seed(problem.solver.seed, 0xFD);
    finite_difference_check_fn(
        |v| {
            let (b, g) = objective(v, problem, true)?;
            Ok((b.total, g.expect("gradient requested")))
        },
        s1,
        n_directions,
        step,
        seed,
    )
}

/// Same check for an arbitrary differentiable scalar function.
pub fn finite_difference_check_fn<F>(
    f: F,
    s1: &[f64],
    n_directions: usize,
    step: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if n_directions < 1 || step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(
            "need n_directions >= 1 and step > 0".to_string(),
        ));
    }
    let (_, grad) = f(s1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = s1.len();
    let mut worst = 0.0f64;
    for _ in 0..n_directions {
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in u.iter_mut() {
            *v /= norm;
        }
        let plus: Vec<f64> = s1.iter().zip(&u).map(|(s, du)| s + step * du).collect();
        let minus: Vec<f64> = s1.iter().zip(&u).map(|(s, du)| s - step * du).collect();
        let (f_plus, _) = f_value_only(&f, &plus)?;
        let (f_minus, _) = f_value_only(&f, &minus)?;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let analytic: f64 = grad.iter().zip(&u).map(|(g, du)| g * du).sum();
        let err = (numeric - analytic).abs() / (analytic.abs() + 1e-30);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn f_value_only<F>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    f(x)
}
