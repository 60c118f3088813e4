//! Two-layer scattering transform, scattering covariance, cross-covariance,
//! and the normalized dashboard reduction.
//!
//! The covariance vector is partitioned into four families:
//!   phi1[j]      mean envelope per channel (sparsity),
//!   phi2[j]      mean channel power (wavelet spectrum),
//!   phi3[j;a]    correlation of a channel with a finer channel's envelope,
//!   phi4[j;a,b]  correlation of two envelopes seen through a common
//!                coarser channel.
//! Scale positions are 1-based; position J*Q + 1 is the low-pass channel.

use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::wavelet::FilterBank;
use num_complex::Complex64;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffFamily {
    Phi1,
    Phi2,
    Phi3,
    Phi4,
}

impl std::fmt::Display for CoeffFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoeffFamily::Phi1 => write!(f, "phi1"),
            CoeffFamily::Phi2 => write!(f, "phi2"),
            CoeffFamily::Phi3 => write!(f, "phi3"),
            CoeffFamily::Phi4 => write!(f, "phi4"),
        }
    }
}

/// Position of one coefficient in the flattened covariance vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoeffIndex {
    pub family: CoeffFamily,
    /// 1-based scale position of the leading operand; `J*Q + 1` is the
    /// low-pass channel.
    pub j: usize,
    /// Scale lag toward finer channels (`j - a` is the partner position).
    pub a: usize,
    /// Scale lag toward coarser channels (negative; `j - b` is the common
    /// second-layer position). Zero for families that do not use it.
    pub b: i64,
    /// Whether the coefficient is potentially complex.
    pub complex: bool,
}

/// Index structure shared by every covariance evaluation at a fixed
/// (J, Q): admissible second-layer pairs and the four coefficient families.
pub struct ScatLayout {
    /// Number of band-pass channels (J*Q).
    pub n_bp: usize,
    /// Band-pass channels plus the low-pass channel.
    pub n_channels: usize,
    /// Admissible second-layer channel pairs `(c1, c2)`, `c1 < c2`,
    /// 0-based; `c2` may be the low-pass channel.
    pub pairs: Vec<(usize, usize)>,
    pair_pos: Vec<Option<usize>>,
    /// Self-covariance index, ordered phi1, phi2, phi3, phi4.
    pub entries: Vec<CoeffIndex>,
    /// Cross-covariance index: phi2, phi3, phi4 (first-order entries are
    /// excluded; everything is potentially complex).
    pub cross_entries: Vec<CoeffIndex>,
    /// Operand channels `(c_j, c_env)` for each phi3 entry.
    pub phi3_ops: Vec<(usize, usize)>,
    /// Operand pair positions `(p1, p2)` for each phi4 entry.
    pub phi4_ops: Vec<(usize, usize)>,
}

impl ScatLayout {
    pub fn new(n_bp: usize) -> Arc<ScatLayout> {
        let n_channels = n_bp + 1;
        let mut pairs = Vec::new();
        let mut pair_pos = vec![None; n_channels * n_channels];
        for c1 in 0..n_bp {
            for c2 in c1 + 1..n_channels {
                pair_pos[c1 * n_channels + c2] = Some(pairs.len());
                pairs.push((c1, c2));
            }
        }

        let mut entries = Vec::new();
        for ch in 0..n_channels {
            entries.push(CoeffIndex {
                family: CoeffFamily::Phi1,
                j: ch + 1,
                a: 0,
                b: 0,
                complex: false,
            });
        }
        for ch in 0..n_channels {
            entries.push(CoeffIndex {
                family: CoeffFamily::Phi2,
                j: ch + 1,
                a: 0,
                b: 0,
                complex: false,
            });
        }
        let mut phi3_ops = Vec::new();
        for cj in 1..n_channels {
            for a in 1..=cj {
                entries.push(CoeffIndex {
                    family: CoeffFamily::Phi3,
                    j: cj + 1,
                    a,
                    b: 0,
                    complex: true,
                });
                phi3_ops.push((cj, cj - a));
            }
        }
        let mut phi4_ops = Vec::new();
        for cj in 0..n_bp {
            for a in 0..=cj {
                for nb in 1..=(n_bp - cj) {
                    entries.push(CoeffIndex {
                        family: CoeffFamily::Phi4,
                        j: cj + 1,
                        a,
                        b: -(nb as i64),
                        complex: a > 0,
                    });
                    let p1 = pair_pos[cj * n_channels + cj + nb].unwrap();
                    let p2 = pair_pos[(cj - a) * n_channels + cj + nb].unwrap();
                    phi4_ops.push((p1, p2));
                }
            }
        }

        // The enumeration must realize the closed-form family counts.
        let n = n_bp;
        debug_assert_eq!(phi3_ops.len(), n * (n + 1) / 2);
        debug_assert_eq!(phi4_ops.len(), n * (n + 1) * (n + 2) / 6);
        debug_assert_eq!(pairs.len(), n * (n + 1) / 2);

        let mut cross_entries = Vec::new();
        for ch in 0..n_channels {
            cross_entries.push(CoeffIndex {
                family: CoeffFamily::Phi2,
                j: ch + 1,
                a: 0,
                b: 0,
                complex: true,
            });
        }
        for (k, &(cj, ce)) in phi3_ops.iter().enumerate() {
            let _ = k;
            cross_entries.push(CoeffIndex {
                family: CoeffFamily::Phi3,
                j: cj + 1,
                a: cj - ce,
                b: 0,
                complex: true,
            });
        }
        for (k, idx) in entries[2 * n_channels + phi3_ops.len()..].iter().enumerate() {
            let _ = k;
            cross_entries.push(CoeffIndex {
                complex: true,
                ..*idx
            });
        }

        Arc::new(ScatLayout {
            n_bp,
            n_channels,
            pairs,
            pair_pos,
            entries,
            cross_entries,
            phi3_ops,
            phi4_ops,
        })
    }

    pub fn pair_position(&self, c1: usize, c2: usize) -> Option<usize> {
        self.pair_pos[c1 * self.n_channels + c2]
    }

    /// Offsets of the four family segments in the self-covariance vector.
    pub fn segments(&self) -> [usize; 4] {
        let c = self.n_channels;
        [0, c, 2 * c, 2 * c + self.phi3_ops.len()]
    }

    /// Offsets of the three family segments in the cross-covariance vector.
    pub fn cross_segments(&self) -> [usize; 3] {
        let c = self.n_channels;
        [0, c, c + self.phi3_ops.len()]
    }

    pub fn self_len(&self) -> usize {
        self.entries.len()
    }

    pub fn cross_len(&self) -> usize {
        self.cross_entries.len()
    }
}

/// Scratch buffers for one forward/backward evaluation.
pub(crate) struct Workspace {
    pub scratch: Vec<Complex64>,
    pub buf: Vec<Complex64>,
}

impl Workspace {
    pub fn new(fb: &FilterBank) -> Workspace {
        Workspace {
            scratch: fb.plan().make_scratch(),
            buf: Vec::with_capacity(fb.len()),
        }
    }
}

/// All intermediates of one two-layer forward pass; retained so losses can
/// run their reverse sweep without recomputation.
pub(crate) struct ScatForward {
    /// First-layer channels, low-pass last.
    pub layer1: Vec<Vec<Complex64>>,
    /// Pointwise moduli of every first-layer channel.
    pub env: Vec<Vec<f64>>,
    /// Second-layer channels, aligned with `layout.pairs`.
    pub layer2: Vec<Vec<Complex64>>,
    /// Time means of the second-layer channels. Zero for band-pass
    /// terminations (zero-mean filters); for low-pass terminations this is
    /// the envelope mean, which the covariance families subtract so their
    /// second-order entries are genuine covariances.
    pub layer2_mean: Vec<Complex64>,
}

pub(crate) fn scat_forward(
    x: &[f64],
    fb: &FilterBank,
    layout: &ScatLayout,
    ws: &mut Workspace,
) -> ScatForward {
    let plan = fb.plan();
    let x_hat = plan.forward_real(x, &mut ws.scratch);

    let mut layer1 = Vec::with_capacity(layout.n_channels);
    let mut env = Vec::with_capacity(layout.n_channels);
    for ch in 0..layout.n_channels {
        fb.apply_channel_spectrum(&x_hat, ch, &mut ws.buf);
        plan.inverse(&mut ws.buf, &mut ws.scratch);
        env.push(ws.buf.iter().map(|z| z.norm()).collect::<Vec<f64>>());
        layer1.push(std::mem::take(&mut ws.buf));
    }

    let mut env_hat = Vec::with_capacity(layout.n_bp);
    for e in env.iter().take(layout.n_bp) {
        let mut buf: Vec<Complex64> = e.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plan.forward(&mut buf, &mut ws.scratch);
        env_hat.push(buf);
    }

    let d = x.len() as f64;
    let mut layer2 = Vec::with_capacity(layout.pairs.len());
    let mut layer2_mean = Vec::with_capacity(layout.pairs.len());
    for &(c1, c2) in &layout.pairs {
        fb.apply_channel_spectrum(&env_hat[c1], c2, &mut ws.buf);
        plan.inverse(&mut ws.buf, &mut ws.scratch);
        let mean = ws.buf.iter().sum::<Complex64>() / d;
        layer2_mean.push(mean);
        layer2.push(std::mem::take(&mut ws.buf));
    }

    ScatForward {
        layer1,
        env,
        layer2,
        layer2_mean,
    }
}

#[inline]
fn mean_product_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y.conj();
    }
    acc / a.len() as f64
}

/// Complex covariance of two channels given their precomputed means.
#[inline]
fn covariance_conj(
    a: &[Complex64],
    b: &[Complex64],
    mean_a: Complex64,
    mean_b: Complex64,
) -> Complex64 {
    mean_product_conj(a, b) - mean_a * mean_b.conj()
}

#[inline]
fn mean_complex_real(a: &[Complex64], b: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * *y;
    }
    acc / a.len() as f64
}

/// Flattened self-covariance values, aligned with `layout.entries`.
pub(crate) fn self_cov_values(fwd: &ScatForward, layout: &ScatLayout) -> Vec<Complex64> {
    let d = fwd.layer1[0].len() as f64;
    let mut values = Vec::with_capacity(layout.self_len());
    for e in &fwd.env {
        values.push(Complex64::new(e.iter().sum::<f64>() / d, 0.0));
    }
    for e in &fwd.env {
        values.push(Complex64::new(e.iter().map(|v| v * v).sum::<f64>() / d, 0.0));
    }
    for &(cj, ce) in &layout.phi3_ops {
        values.push(mean_complex_real(&fwd.layer1[cj], &fwd.env[ce]));
    }
    for &(p1, p2) in &layout.phi4_ops {
        values.push(covariance_conj(
            &fwd.layer2[p1],
            &fwd.layer2[p2],
            fwd.layer2_mean[p1],
            fwd.layer2_mean[p2],
        ));
    }
    values
}

/// Flattened cross-covariance values, aligned with `layout.cross_entries`.
/// Second-order families correlate the x-side scattering against the
/// y-side; first-order entries are excluded.
pub(crate) fn cross_cov_values(
    fx: &ScatForward,
    fy: &ScatForward,
    layout: &ScatLayout,
) -> Vec<Complex64> {
    let mut values = Vec::with_capacity(layout.cross_len());
    for ch in 0..layout.n_channels {
        values.push(mean_product_conj(&fx.layer1[ch], &fy.layer1[ch]));
    }
    for &(cj, ce) in &layout.phi3_ops {
        values.push(mean_complex_real(&fx.layer1[cj], &fy.env[ce]));
    }
    for &(p1, p2) in &layout.phi4_ops {
        values.push(covariance_conj(
            &fx.layer2[p1],
            &fy.layer2[p2],
            fx.layer2_mean[p1],
            fy.layer2_mean[p2],
        ));
    }
    values
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    SelfCov,
    CrossCov,
}

/// A flattened wavelet scattering covariance vector with its index map.
pub struct ScatCov {
    pub values: Vec<Complex64>,
    pub layout: Arc<ScatLayout>,
    pub kind: CovKind,
    pub j: usize,
    pub q: usize,
    pub len: usize,
}

impl ScatCov {
    pub fn index(&self) -> &[CoeffIndex] {
        match self.kind {
            CovKind::SelfCov => &self.layout.entries,
            CovKind::CrossCov => &self.layout.cross_entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Value of a self-covariance phi2 entry for a 0-based channel.
    pub fn phi2(&self, channel: usize) -> Complex64 {
        debug_assert_eq!(self.kind, CovKind::SelfCov);
        self.values[self.layout.n_channels + channel]
    }
}

fn check_lengths(x: &Waveform, fb: &FilterBank, context: &str) -> Result<()> {
    if x.len() != fb.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: fb.len(),
            context: context.into(),
        });
    }
    Ok(())
}

/// Raw two-layer scattering output.
pub struct ScatteringCoeffs {
    /// First layer `W x`, one row per channel, low-pass last.
    pub layer1: Vec<Vec<Complex64>>,
    /// Admissible `(j1, j2)` scale pairs, 1-based, `j1 < j2`.
    pub pairs: Vec<(usize, usize)>,
    /// Second layer `|x * psi_j1| * psi_j2`, aligned with `pairs`.
    pub layer2: Vec<Vec<Complex64>>,
}

pub fn scattering_transform(x: &Waveform, fb: &FilterBank) -> Result<ScatteringCoeffs> {
    check_lengths(x, fb, "scattering_transform input vs filter bank")?;
    let layout = ScatLayout::new(fb.n_band_pass());
    let mut ws = Workspace::new(fb);
    let fwd = scat_forward(x.samples(), fb, &layout, &mut ws);
    Ok(ScatteringCoeffs {
        layer1: fwd.layer1,
        pairs: layout.pairs.iter().map(|&(a, b)| (a + 1, b + 1)).collect(),
        layer2: fwd.layer2,
    })
}

pub fn scat_cov(x: &Waveform, fb: &FilterBank) -> Result<ScatCov> {
    check_lengths(x, fb, "scat_cov input vs filter bank")?;
    let layout = ScatLayout::new(fb.n_band_pass());
    let mut ws = Workspace::new(fb);
    let fwd = scat_forward(x.samples(), fb, &layout, &mut ws);
    let values = self_cov_values(&fwd, &layout);
    Ok(ScatCov {
        values,
        layout,
        kind: CovKind::SelfCov,
        j: fb.j(),
        q: fb.q(),
        len: fb.len(),
    })
}

pub fn scat_cross_cov(x: &Waveform, y: &Waveform, fb: &FilterBank) -> Result<ScatCov> {
    check_lengths(x, fb, "scat_cross_cov x vs filter bank")?;
    check_lengths(y, fb, "scat_cross_cov y vs filter bank")?;
    let layout = ScatLayout::new(fb.n_band_pass());
    let mut ws = Workspace::new(fb);
    let fx = scat_forward(x.samples(), fb, &layout, &mut ws);
    let fy = scat_forward(y.samples(), fb, &layout, &mut ws);
    let values = cross_cov_values(&fx, &fy, &layout);
    Ok(ScatCov {
        values,
        layout,
        kind: CovKind::CrossCov,
        j: fb.j(),
        q: fb.q(),
        len: fb.len(),
    })
}

// ---------------------------------------------------------------------------
// Dashboard
// ---------------------------------------------------------------------------

/// Relative floor under which a channel power is treated as absent in the
/// dashboard normalization.
const DASHBOARD_POWER_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, Copy)]
pub struct DashboardRow {
    pub family: CoeffFamily,
    /// For phi1/phi2 this is the 1-based scale position; for phi3/phi4 the
    /// scale lag `a`.
    pub a: i64,
    pub b: i64,
    /// None marks an entry suppressed by the power floor.
    pub value: Option<Complex64>,
}

/// Scale-invariant reduction of a self-covariance: power-normalized
/// coefficients averaged over the leading scale.
pub struct DashboardTable {
    pub rows: Vec<DashboardRow>,
}

impl DashboardTable {
    /// One row per reduced coefficient: family, a, b, real, imag.
    /// Absent entries leave real/imag empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,a,b,real,imag\n");
        for row in &self.rows {
            match row.value {
                Some(v) => out.push_str(&format!(
                    "{},{},{},{:.17e},{:.17e}\n",
                    row.family, row.a, row.b, v.re, v.im
                )),
                None => out.push_str(&format!("{},{},{},,\n", row.family, row.a, row.b)),
            }
        }
        out
    }

    pub fn get(&self, family: CoeffFamily, a: i64, b: i64) -> Option<&DashboardRow> {
        self.rows
            .iter()
            .find(|r| r.family == family && r.a == a && r.b == b)
    }
}

/// Normalize a self-covariance by its power spectrum and reduce over scale.
pub fn dashboard(cov: &ScatCov) -> Result<DashboardTable> {
    if cov.kind != CovKind::SelfCov {
        return Err(Error::invalid(
            "dashboard requires a self-covariance".to_string(),
        ));
    }
    let layout = &cov.layout;
    let channels = layout.n_channels;
    let phi2: Vec<f64> = (0..channels).map(|c| cov.phi2(c).re).collect();
    let total_power: f64 = phi2.iter().sum();
    let floor = DASHBOARD_POWER_FLOOR * total_power;
    let ok = |c: usize| phi2[c] > floor;

    let mut rows = Vec::new();
    for (c, p2) in phi2.iter().enumerate() {
        let value = if ok(c) {
            Some(cov.values[c] / p2.sqrt())
        } else {
            None
        };
        rows.push(DashboardRow {
            family: CoeffFamily::Phi1,
            a: (c + 1) as i64,
            b: 0,
            value,
        });
    }
    for (c, p2) in phi2.iter().enumerate() {
        let value = if ok(c) {
            Some(Complex64::new(*p2, 0.0))
        } else {
            None
        };
        rows.push(DashboardRow {
            family: CoeffFamily::Phi2,
            a: (c + 1) as i64,
            b: 0,
            value,
        });
    }

    // phi3 reduced over the leading scale at fixed lag a.
    let [_, _, phi3_start, phi4_start] = layout.segments();
    let max_a = layout.n_bp;
    for a in 1..=max_a {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut count = 0usize;
        for (k, &(cj, ce)) in layout.phi3_ops.iter().enumerate() {
            if cj - ce == a && ok(cj) && ok(ce) {
                acc += cov.values[phi3_start + k] / (phi2[cj] * phi2[ce]).sqrt();
                count += 1;
            }
        }
        rows.push(DashboardRow {
            family: CoeffFamily::Phi3,
            a: a as i64,
            b: 0,
            value: (count > 0).then(|| acc / count as f64),
        });
    }

    // phi4 reduced over the leading scale at fixed (a, b).
    for a in 0..layout.n_bp {
        for nb in 1..=layout.n_bp {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut count = 0usize;
            for (k, idx) in layout.entries[phi4_start..].iter().enumerate() {
                if idx.a == a && idx.b == -(nb as i64) {
                    let cj = idx.j - 1;
                    let ce = cj - a;
                    if ok(cj) && ok(ce) {
                        acc += cov.values[phi4_start + k] / (phi2[cj] * phi2[ce]).sqrt();
                        count += 1;
                    }
                }
            }
            if a + nb <= layout.n_bp {
                rows.push(DashboardRow {
                    family: CoeffFamily::Phi4,
                    a: a as i64,
                    b: -(nb as i64),
                    value: (count > 0).then(|| acc / count as f64),
                });
            }
        }
    }

    Ok(DashboardTable { rows })
}

/// Render labeled dashboards as a four-panel comparison figure:
/// normalized sparsity, power spectrum (log), reduced phase-envelope
/// correlations (real and imaginary), and reduced envelope coherence.
pub fn dashboard_figure(tables: &[(String, DashboardTable)]) -> String {
    use crate::svgplot::{line_chart, stack_charts, ChartOptions, Series};

    let series_for = |family: CoeffFamily, part: fn(Complex64) -> f64| -> Vec<Series> {
        tables
            .iter()
            .map(|(label, table)| {
                let rows: Vec<_> = table.rows.iter().filter(|r| r.family == family).collect();
                Series {
                    label: label.clone(),
                    xs: (0..rows.len()).map(|i| i as f64).collect(),
                    ys: rows
                        .iter()
                        .map(|r| r.value.map(part).unwrap_or(f64::NAN))
                        .collect(),
                }
            })
            .collect()
    };

    let mut phi3 = series_for(CoeffFamily::Phi3, |v| v.re);
    for (s, (label, _)) in phi3.iter_mut().zip(tables) {
        s.label = format!("{label} re");
    }
    let mut phi3_im = series_for(CoeffFamily::Phi3, |v| v.im);
    for (s, (label, _)) in phi3_im.iter_mut().zip(tables) {
        s.label = format!("{label} im");
    }
    phi3.extend(phi3_im);

    let charts = [
        line_chart(
            &series_for(CoeffFamily::Phi1, |v| v.re),
            None,
            &ChartOptions {
                title: "normalized sparsity per scale".into(),
                x_label: "scale index".into(),
                y_label: "phi1 / sqrt(phi2)".into(),
                ..ChartOptions::default()
            },
        ),
        line_chart(
            &series_for(CoeffFamily::Phi2, |v| v.re),
            None,
            &ChartOptions {
                title: "wavelet power spectrum".into(),
                x_label: "scale index".into(),
                y_label: "phi2".into(),
                log_y: true,
                ..ChartOptions::default()
            },
        ),
        line_chart(
            &phi3,
            None,
            &ChartOptions {
                title: "phase-envelope correlation (reduced)".into(),
                x_label: "scale lag a".into(),
                y_label: "phi3 normalized".into(),
                ..ChartOptions::default()
            },
        ),
        line_chart(
            &series_for(CoeffFamily::Phi4, |v| v.norm()),
            None,
            &ChartOptions {
                title: "envelope coherence modulus (reduced)".into(),
                x_label: "(a, b) flattened".into(),
                y_label: "|phi4| normalized".into(),
                ..ChartOptions::default()
            },
        ),
    ];
    stack_charts(&charts, 760.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{glitch_train, mrw_increments, GlitchParams, MrwParams};
    use crate::wavelet::{build_filter_bank, WaveletFamily};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white_noise(d: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..d).map(|_| rng.sample(StandardNormal)).collect(), 1.0).unwrap()
    }

    #[test]
    fn layout_counts_at_paper_configuration() {
        let layout = ScatLayout::new(8);
        assert_eq!(layout.n_channels, 9);
        assert_eq!(layout.pairs.len(), 36);
        assert_eq!(layout.phi3_ops.len(), 36);
        assert_eq!(layout.phi4_ops.len(), 120);
        assert_eq!(layout.self_len(), 9 + 9 + 36 + 120);
        assert_eq!(layout.self_len(), 174);
        assert_eq!(layout.cross_len(), 165);
        // all second-layer pairs satisfy j1 < j2
        for &(c1, c2) in &layout.pairs {
            assert!(c1 < c2);
            assert!(c1 < 8); // first operand is always band-pass
        }
    }

    #[test]
    fn scat_cov_dimension_is_174() {
        let fb = build_filter_bank(8, 1, 2048, WaveletFamily::BattleLemarie).unwrap();
        let cov = scat_cov(&white_noise(2048, 0), &fb).unwrap();
        assert_eq!(cov.dim(), 174);
        // dimension stays far below the coefficient budget log2(d)^3
        let budget = (2048f64.log2()).powi(3);
        assert!((cov.dim() as f64) < budget);
        let counts = |fam: CoeffFamily| cov.index().iter().filter(|e| e.family == fam).count();
        assert_eq!(counts(CoeffFamily::Phi1), 9);
        assert_eq!(counts(CoeffFamily::Phi2), 9);
        assert_eq!(counts(CoeffFamily::Phi3), 36);
        assert_eq!(counts(CoeffFamily::Phi4), 120);
    }

    #[test]
    fn zero_input_gives_zero_everything() {
        let fb = build_filter_bank(4, 1, 128, WaveletFamily::BattleLemarie).unwrap();
        let zero = Waveform::new(vec![0.0; 128], 1.0).unwrap();
        let sc = scattering_transform(&zero, &fb).unwrap();
        assert!(sc
            .layer1
            .iter()
            .chain(sc.layer2.iter())
            .all(|ch| ch.iter().all(|z| z.norm() == 0.0)));
        let cov = scat_cov(&zero, &fb).unwrap();
        assert!(cov.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn real_flagged_coefficients_have_vanishing_imaginary_part() {
        let fb = build_filter_bank(5, 1, 512, WaveletFamily::BattleLemarie).unwrap();
        let cov = scat_cov(&white_noise(512, 4), &fb).unwrap();
        let scale = cov.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (v, idx) in cov.values.iter().zip(cov.index()) {
            if !idx.complex {
                assert!(v.im.abs() < 1e-12 * scale.max(1.0), "{idx:?}: {v}");
            }
        }
    }

    #[test]
    fn second_layer_matches_two_stage_direct_convolution() {
        let d = 128;
        let fb = build_filter_bank(3, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let x = white_noise(d, 17);
        let sc = scattering_transform(&x, &fb).unwrap();

        let direct_conv = |input: &[Complex64], ch: usize| -> Vec<Complex64> {
            let h = fb.impulse_response(ch);
            (0..d)
                .map(|t| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (tau, v) in input.iter().enumerate() {
                        acc += h[(t + d - tau) % d] * v;
                    }
                    acc
                })
                .collect()
        };

        let xc: Vec<Complex64> = x.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for (pair_idx, &(j1, j2)) in sc.pairs.iter().enumerate() {
            let stage1 = direct_conv(&xc, j1 - 1);
            let env: Vec<Complex64> = stage1.iter().map(|z| Complex64::new(z.norm(), 0.0)).collect();
            let stage2 = direct_conv(&env, j2 - 1);
            let scale: f64 = stage2.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-30);
            for (a, b) in sc.layer2[pair_idx].iter().zip(stage2.iter()) {
                assert!(
                    (a - b).norm() <= 1e-8 * scale,
                    "pair ({j1},{j2}): {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn phi2_equals_layer1_mean_power() {
        let fb = build_filter_bank(5, 1, 256, WaveletFamily::BattleLemarie).unwrap();
        let x = white_noise(256, 3);
        let cov = scat_cov(&x, &fb).unwrap();
        let sc = scattering_transform(&x, &fb).unwrap();
        for ch in 0..fb.n_channels() {
            let power: f64 =
                sc.layer1[ch].iter().map(|z| z.norm_sqr()).sum::<f64>() / 256.0;
            assert!((cov.phi2(ch).re - power).abs() <= 1e-12 * power.max(1e-30));
        }
    }

    #[test]
    fn shift_invariance() {
        let d = 512;
        let fb = build_filter_bank(5, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let x = white_noise(d, 8);
        let cov = scat_cov(&x, &fb).unwrap();
        let mut rolled = x.samples().to_vec();
        rolled.rotate_left(137);
        let cov_rolled = scat_cov(&Waveform::new(rolled, 1.0).unwrap(), &fb).unwrap();
        let scale = cov.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in cov.values.iter().zip(cov_rolled.values.iter()) {
            assert!((a - b).norm() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn scaling_law() {
        let d = 256;
        let fb = build_filter_bank(4, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let x = white_noise(d, 12);
        let alpha = 2.5f64;
        let scaled: Vec<f64> = x.samples().iter().map(|v| alpha * v).collect();
        let cov = scat_cov(&x, &fb).unwrap();
        let cov_s = scat_cov(&Waveform::new(scaled, 1.0).unwrap(), &fb).unwrap();
        for ((a, b), idx) in cov.values.iter().zip(cov_s.values.iter()).zip(cov.index()) {
            let factor = match idx.family {
                CoeffFamily::Phi1 => alpha.abs(),
                _ => alpha * alpha,
            };
            let expect = a * factor;
            assert!(
                (b - expect).norm() <= 1e-10 * expect.norm().max(1e-12),
                "{idx:?}"
            );
        }
        // Sign flip: phi3 is the sign-sensitive family, the others are even.
        let negated: Vec<f64> = x.samples().iter().map(|v| -v).collect();
        let cov_n = scat_cov(&Waveform::new(negated, 1.0).unwrap(), &fb).unwrap();
        let scale = cov.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for ((a, b), idx) in cov.values.iter().zip(cov_n.values.iter()).zip(cov.index()) {
            let expect = if idx.family == CoeffFamily::Phi3 { -a } else { *a };
            assert!((b - expect).norm() <= 1e-10 * scale, "{idx:?}");
        }
        // dashboard is invariant under scaling
        let da = dashboard(&cov).unwrap();
        let db = dashboard(&cov_s).unwrap();
        for (ra, rb) in da.rows.iter().zip(db.rows.iter()) {
            if ra.family == CoeffFamily::Phi2 {
                continue; // raw power rows scale by definition
            }
            match (ra.value, rb.value) {
                (Some(va), Some(vb)) => assert!((va - vb).norm() < 1e-9 * va.norm().max(1.0)),
                (None, None) => {}
                other => panic!("absence mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn cross_cov_of_signal_with_itself_matches_self_cov() {
        let d = 512;
        let fb = build_filter_bank(5, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let x = white_noise(d, 23);
        let cov = scat_cov(&x, &fb).unwrap();
        let cross = scat_cross_cov(&x, &x, &fb).unwrap();
        let scale = cov.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        // cross vector = self vector minus the phi1 block
        let offset = fb.n_channels();
        for (k, v) in cross.values.iter().enumerate() {
            let s = cov.values[offset + k];
            assert!((v - s).norm() <= 1e-12 * scale, "entry {k}");
        }
    }

    /// Ensemble mean and standard error per coefficient.
    fn ensemble_stats(covs: &[Vec<Complex64>]) -> (Vec<Complex64>, Vec<f64>) {
        let n = covs.len();
        let m = covs[0].len();
        let mut mean = vec![Complex64::new(0.0, 0.0); m];
        for cov in covs {
            for (mu, v) in mean.iter_mut().zip(cov) {
                *mu += v;
            }
        }
        for mu in mean.iter_mut() {
            *mu /= n as f64;
        }
        let mut se = vec![0.0; m];
        for cov in covs {
            for ((s, v), mu) in se.iter_mut().zip(cov).zip(&mean) {
                *s += (v - mu).norm_sqr();
            }
        }
        for s in se.iter_mut() {
            *s = (*s / ((n - 1) as f64 * n as f64)).sqrt();
        }
        (mean, se)
    }

    #[test]
    fn gaussian_noise_has_vanishing_complex_coefficients() {
        // Complex-flagged coefficients average to zero over independent
        // white-noise realizations (within Monte Carlo error).
        let d = 1024;
        let fb = build_filter_bank(6, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let n_real = 64;
        let covs: Vec<Vec<Complex64>> = (0..n_real)
            .map(|s| scat_cov(&white_noise(d, 1000 + s as u64), &fb).unwrap().values)
            .collect();
        let (mean, se) = ensemble_stats(&covs);
        let layout = ScatLayout::new(fb.n_band_pass());
        let mut worst = 0.0f64;
        for (k, idx) in layout.entries.iter().enumerate() {
            if idx.complex {
                let z = mean[k].norm() / se[k].max(1e-300);
                worst = worst.max(z);
                assert!(z < 4.0, "{idx:?}: |mean|/se = {z}");
            }
        }
        assert!(worst > 0.0);
    }

    #[test]
    fn independent_signals_have_vanishing_cross_covariance() {
        let d = 1024;
        let fb = build_filter_bank(6, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let n_real = 64;
        let covs: Vec<Vec<Complex64>> = (0..n_real)
            .map(|s| {
                let x = white_noise(d, 5000 + s as u64);
                let y = white_noise(d, 9000 + s as u64);
                scat_cross_cov(&x, &y, &fb).unwrap().values
            })
            .collect();
        let (mean, se) = ensemble_stats(&covs);
        for (k, (mu, s)) in mean.iter().zip(&se).enumerate() {
            let z = mu.norm() / s.max(1e-300);
            assert!(z < 4.0, "cross entry {k}: z = {z}");
        }
    }

    #[test]
    fn half_period_shift_decorrelates_like_independence() {
        // Cross-covariance of white noise with its half-period rotation is
        // statistically indistinguishable from the independent-pairs case:
        // per coefficient, |mean_shift - mean_indep| < 4 combined SE.
        let d = 1024;
        let fb = build_filter_bank(6, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let n_real = 64;
        let shift_covs: Vec<Vec<Complex64>> = (0..n_real)
            .map(|s| {
                let x = white_noise(d, 100 + s as u64);
                let mut rolled = x.samples().to_vec();
                rolled.rotate_left(d / 2);
                let y = Waveform::new(rolled, 1.0).unwrap();
                scat_cross_cov(&x, &y, &fb).unwrap().values
            })
            .collect();
        let indep_covs: Vec<Vec<Complex64>> = (0..n_real)
            .map(|s| {
                let x = white_noise(d, 300_000 + s as u64);
                let y = white_noise(d, 700_000 + s as u64);
                scat_cross_cov(&x, &y, &fb).unwrap().values
            })
            .collect();
        let (mean_s, se_s) = ensemble_stats(&shift_covs);
        let (mean_i, se_i) = ensemble_stats(&indep_covs);
        for k in 0..mean_s.len() {
            let combined = (se_s[k] * se_s[k] + se_i[k] * se_i[k]).sqrt();
            let z = (mean_s[k] - mean_i[k]).norm() / combined.max(1e-300);
            assert!(z < 4.0, "entry {k}: z = {z}");
        }
    }

    #[test]
    fn dashboard_white_noise_sparsity_ratio() {
        // E|z| / sqrt(E|z|^2) for a circular complex Gaussian is
        // sqrt(pi)/2 = 0.886...; band-pass channels of white noise behave
        // that way.
        let d = 2048;
        let fb = build_filter_bank(6, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let n_real = 16;
        let mut acc = vec![0.0; fb.n_band_pass()];
        for s in 0..n_real {
            let cov = scat_cov(&white_noise(d, 40 + s), &fb).unwrap();
            let table = dashboard(&cov).unwrap();
            for (c, a) in acc.iter_mut().enumerate() {
                let row = table.get(CoeffFamily::Phi1, (c + 1) as i64, 0).unwrap();
                *a += row.value.unwrap().re;
            }
        }
        let expect = (std::f64::consts::PI / 4.0).sqrt();
        for (c, a) in acc.iter().enumerate() {
            let mean = a / n_real as f64;
            assert!(
                (mean - expect).abs() < 0.02,
                "channel {c}: {mean} vs {expect}"
            );
        }
    }

    #[test]
    fn dashboard_zero_signal_all_absent() {
        let fb = build_filter_bank(4, 1, 128, WaveletFamily::BattleLemarie).unwrap();
        let cov = scat_cov(&Waveform::new(vec![0.0; 128], 1.0).unwrap(), &fb).unwrap();
        let table = dashboard(&cov).unwrap();
        assert!(table.rows.iter().all(|r| r.value.is_none()));
        // and the CSV still has one line per row
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), table.rows.len() + 1);
    }

    #[test]
    fn mrw_envelope_correlations_exceed_white_noise() {
        // The reduced phi4 modulus at a = 0, b < 0 separates an
        // intermittent process from white noise by > 3 combined SEs.
        let d = 1024;
        let fb = build_filter_bank(6, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let n_real = 48;
        let collect = |mrw: bool| -> Vec<f64> {
            (0..n_real)
                .map(|s| {
                    let x = if mrw {
                        mrw_increments(&MrwParams {
                            d,
                            lambda2: 0.06,
                            corr_scale: 256,
                            seed: 7000 + s,
                        })
                        .unwrap()
                        .waveform
                    } else {
                        white_noise(d, 7000 + s)
                    };
                    let table = dashboard(&scat_cov(&x, &fb).unwrap()).unwrap();
                    // pool the a = 0 envelope self-coherence rows
                    let mut acc = 0.0;
                    let mut cnt = 0;
                    for row in &table.rows {
                        if row.family == CoeffFamily::Phi4 && row.a == 0 {
                            acc += row.value.unwrap().norm();
                            cnt += 1;
                        }
                    }
                    acc / cnt as f64
                })
                .collect()
        };
        let mrw_vals = collect(true);
        let wn_vals = collect(false);
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        };
        let (m_mrw, se_mrw) = stats(&mrw_vals);
        let (m_wn, se_wn) = stats(&wn_vals);
        let gap = (m_mrw - m_wn) / (se_mrw * se_mrw + se_wn * se_wn).sqrt();
        assert!(gap > 3.0, "mrw {m_mrw} vs wn {m_wn}, gap {gap} SE");
    }

    #[test]
    fn asymmetric_glitches_break_time_symmetry() {
        // Imaginary parts of the reduced phi3 dashboard rows move away
        // from zero for a time-asymmetric transient train.
        let d = 1024;
        let fb = build_filter_bank(6, 1, d, WaveletFamily::BattleLemarie).unwrap();
        let n_real = 48;
        let rows_per = |seed: u64| -> Vec<f64> {
            let g = glitch_train(&GlitchParams {
                d,
                n_peaks: 6,
                amp_min: 1.0,
                amp_max: 2.0,
                left_decay: 2.0,
                right_decay: 40.0,
                min_separation: 96,
                seed,
            })
            .unwrap();
            let table = dashboard(&scat_cov(&g, &fb).unwrap()).unwrap();
            table
                .rows
                .iter()
                .filter(|r| r.family == CoeffFamily::Phi3)
                .map(|r| r.value.map_or(0.0, |v| v.im))
                .collect()
        };
        let all: Vec<Vec<f64>> = (0..n_real).map(|s| rows_per(123 + s as u64)).collect();
        let m = all[0].len();
        let mut best_z = 0.0f64;
        for k in 0..m {
            let vals: Vec<f64> = all.iter().map(|r| r[k]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            best_z = best_z.max(mean.abs() / se.max(1e-300));
        }
        assert!(best_z > 3.0, "max |mean|/se over phi3 imag = {best_z}");
    }

    #[test]
    fn length_mismatch_rejected() {
        let fb = build_filter_bank(4, 1, 128, WaveletFamily::BattleLemarie).unwrap();
        let x = white_noise(64, 0);
        assert!(scat_cov(&x, &fb).is_err());
        let y = white_noise(128, 1);
        assert!(scat_cross_cov(&y, &x, &fb).is_err());
    }
}
