//! Limited-memory BFGS with a strong-Wolfe line search (bracket + zoom,
//! cubic interpolation). The driver keeps the best-loss iterate, records a
//! caller-supplied payload at every accepted step, and falls back to one
//! backtracking steepest-descent step when the line search stalls.

use crate::error::{Error, Result};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    pub history_size: usize,
    pub c1: f64,
    pub c2: f64,
    /// Gradient-norm tolerance relative to the initial gradient norm.
    pub grad_tol_rel: f64,
    /// Relative per-step loss decrease below which the solve stops;
    /// zero disables the check.
    pub loss_tol_rel: f64,
    /// Absolute loss level at or below which the solve stops (checked at
    /// the start and after every accepted step); zero disables the check.
    pub loss_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    GradientTolerance,
    LossTolerance,
    ReachedFloor,
    LineSearchFailed,
}

pub struct Outcome {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub iterations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion producing `-H g` with implicit initial scaling.
fn search_direction(history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let alpha = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y).max(1e-300);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha - beta) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// Minimizer of the cubic through two points with values and slopes,
/// clamped to `bounds`.
fn cubic_interpolate(
    x1: f64,
    f1: f64,
    g1: f64,
    x2: f64,
    f2: f64,
    g2: f64,
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = match bounds {
        Some(b) => b,
        None => {
            if x1 < x2 {
                (x1, x2)
            } else {
                (x2, x1)
            }
        }
    };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        min_pos.clamp(lo, hi)
    } else {
        (lo + hi) / 2.0
    }
}

/// One evaluated point on the search ray. `payload` is None only for the
/// starting point (t = 0), which is never returned as an accepted step.
struct RayPoint<T> {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
    payload: Option<T>,
}

/// Strong-Wolfe line search along `dir` from `x`. Returns the accepted
/// point or None when no strictly improving point was found within the
/// evaluation budget.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<T, F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    gtd0: f64,
    t_init: f64,
    c1: f64,
    c2: f64,
) -> Result<Option<RayPoint<T>>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T)>,
{
    const MAX_EVALS: usize = 25;
    let d_norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if d_norm == 0.0 || !t_init.is_finite() || t_init <= 0.0 {
        return Ok(None);
    }
    let mut evals = 0usize;
    let mut eval_at = |t: f64, evals: &mut usize| -> Result<RayPoint<T>> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect();
        let (fv, gv, payload) = f(&xt)?;
        *evals += 1;
        let gtd = dot(&gv, dir);
        Ok(RayPoint {
            t,
            f: fv,
            g: gv,
            gtd,
            payload: Some(payload),
        })
    };

    let mut prev = RayPoint {
        t: 0.0,
        f: f0,
        g: g0.to_vec(),
        gtd: gtd0,
        payload: None,
    };
    let mut cand = eval_at(t_init, &mut evals)?;

    // Bracketing phase.
    let bracket: Option<(RayPoint<T>, RayPoint<T>)> = loop {
        if cand.f > f0 + c1 * cand.t * gtd0 || (evals > 1 && cand.f >= prev.f) {
            break Some((prev, cand));
        }
        if cand.gtd.abs() <= -c2 * gtd0 {
            return Ok(Some(cand));
        }
        if cand.gtd >= 0.0 {
            break Some((prev, cand));
        }
        if evals >= MAX_EVALS {
            break Some((
                RayPoint {
                    t: 0.0,
                    f: f0,
                    g: g0.to_vec(),
                    gtd: gtd0,
                    payload: None,
                },
                cand,
            ));
        }
        let min_step = cand.t + 0.01 * (cand.t - prev.t);
        let max_step = cand.t * 10.0;
        let next_t = cubic_interpolate(
            prev.t,
            prev.f,
            prev.gtd,
            cand.t,
            cand.f,
            cand.gtd,
            Some((min_step, max_step)),
        );
        prev = cand;
        cand = eval_at(next_t, &mut evals)?;
    };

    let (mut low, mut high) = bracket.expect("bracket always set on break");
    if high.f < low.f {
        std::mem::swap(&mut low, &mut high);
    }

    // Zoom phase.
    let mut insufficient = false;
    while evals < MAX_EVALS {
        let span = (high.t - low.t).abs();
        if span * d_norm < 1e-12 {
            break;
        }
        let (t_lo, t_hi) = (low.t.min(high.t), low.t.max(high.t));
        let mut t = cubic_interpolate(low.t, low.f, low.gtd, high.t, high.f, high.gtd, None);
        let eps = 0.1 * span;
        if (t_hi - t).min(t - t_lo) < eps {
            if insufficient || t >= t_hi || t <= t_lo {
                t = if (t - t_hi).abs() < (t - t_lo).abs() {
                    t_hi - eps
                } else {
                    t_lo + eps
                };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }

        let cand = eval_at(t, &mut evals)?;
        if cand.f > f0 + c1 * cand.t * gtd0 || cand.f >= low.f {
            high = cand;
        } else {
            if cand.gtd.abs() <= -c2 * gtd0 {
                return Ok(Some(cand));
            }
            if cand.gtd * (high.t - low.t) >= 0.0 {
                high = low;
            }
            low = cand;
        }
        if high.f < low.f {
            std::mem::swap(&mut low, &mut high);
        }
    }

    // Budget exhausted: accept the low end if it strictly improves and was
    // actually evaluated on this ray.
    if low.f < f0 && low.payload.is_some() {
        return Ok(Some(low));
    }
    Ok(None)
}

struct AcceptedStep<T> {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    payload: T,
}

fn backtrack_descent<T, F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    g: &[f64],
    c1: f64,
) -> Result<Option<AcceptedStep<T>>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T)>,
{
    let g2 = dot(g, g);
    let mut t = 1.0 / g.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
    for _ in 0..40 {
        let xt: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - t * gi).collect();
        let (fv, gv, payload) = f(&xt)?;
        if fv <= f0 - c1 * t * g2 {
            return Ok(Some(AcceptedStep {
                x: xt,
                f: fv,
                g: gv,
                payload,
            }));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Minimize `f` from `x0`; `on_accept` fires once per accepted iterate
/// (including the starting point as iteration 0) with the payload the
/// objective returned there.
pub fn minimize<T, F, C>(
    mut f: F,
    x0: Vec<f64>,
    opts: &LbfgsOptions,
    mut on_accept: C,
) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T)>,
    C: FnMut(usize, &T),
{
    if opts.max_iterations < 1 {
        return Err(Error::invalid("max_iterations must be >= 1".to_string()));
    }
    let mut x = x0;
    let (mut fx, mut gx, payload0) = f(&x)?;
    on_accept(0, &payload0);
    let g0_norm = norm(&gx);
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut fallback_spent = false;
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;

    if opts.loss_floor > 0.0 && fx <= opts.loss_floor {
        return Ok(Outcome {
            best_x,
            best_f,
            iterations,
            termination: Termination::ReachedFloor,
        });
    }
    if g0_norm == 0.0 {
        return Ok(Outcome {
            best_x,
            best_f,
            iterations,
            termination: Termination::GradientTolerance,
        });
    }

    for iter in 1..=opts.max_iterations {
        let mut dir = search_direction(&history, &gx);
        let mut gtd = dot(&gx, &dir);
        // reset to steepest descent unless dir is a strict descent direction
        if gtd.is_nan() || gtd >= 0.0 {
            history.clear();
            dir = gx.iter().map(|g| -g).collect();
            gtd = -dot(&gx, &gx);
        }
        let t_init = if iter == 1 {
            (1.0 / gx.iter().map(|g| g.abs()).sum::<f64>().max(1e-300)).min(1.0)
        } else {
            1.0
        };

        let step = match strong_wolfe(&mut f, &x, fx, &gx, &dir, gtd, t_init, opts.c1, opts.c2)? {
            Some(point) => {
                let x_new: Vec<f64> = x
                    .iter()
                    .zip(&dir)
                    .map(|(xi, di)| xi + point.t * di)
                    .collect();
                Some(AcceptedStep {
                    x: x_new,
                    f: point.f,
                    g: point.g,
                    payload: point.payload.expect("evaluated point carries payload"),
                })
            }
            None => {
                if fallback_spent {
                    None
                } else {
                    fallback_spent = true;
                    let rescued = backtrack_descent(&mut f, &x, fx, &gx, opts.c1)?;
                    if rescued.is_some() {
                        history.clear();
                    }
                    rescued
                }
            }
        };

        let step = match step {
            Some(s) => s,
            None => {
                termination = Termination::LineSearchFailed;
                break;
            }
        };

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-10 * norm(&y) * norm(&s) {
            if history.len() == opts.history_size {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / ys));
        }

        let f_prev = fx;
        x = step.x;
        fx = step.f;
        gx = step.g;
        iterations = iter;
        on_accept(iter, &step.payload);
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }

        if opts.loss_floor > 0.0 && fx <= opts.loss_floor {
            termination = Termination::ReachedFloor;
            break;
        }
        if norm(&gx) <= opts.grad_tol_rel * g0_norm {
            termination = Termination::GradientTolerance;
            break;
        }
        if opts.loss_tol_rel > 0.0 {
            let rel = (f_prev - fx) / f_prev.abs().max(1.0);
            if (0.0..opts.loss_tol_rel).contains(&rel) {
                termination = Termination::LossTolerance;
                break;
            }
        }
    }

    Ok(Outcome {
        best_x,
        best_f,
        iterations,
        termination,
    })
}
