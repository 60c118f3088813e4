//! Subcommand implementations.

use crate::manifest::RunManifest;
use crate::{
    verbose, BaselineArgs, CliError, DashboardArgs, SeparateArgs, SnrArgs, SynthArgs,
};
use scatsep::baseline::{detect_glitches, detections_to_csv, fit_and_remove, BaselineConfig};
use scatsep::dataio::{
    format_for_path, load_catalog, read_waveform, write_waveform, CatalogEntry, WaveformFormat,
};
use scatsep::experiments::{percentile, snr_experiment, SnrExperimentConfig, StylizedConfig};
use scatsep::scattering::{dashboard, scat_cov, DashboardTable};
use scatsep::separation::{separate, SeparationProblem, SolverConfig};
use scatsep::svgplot::{line_chart, Band, ChartOptions, Series};
use scatsep::synth::{glitch_train, mix, mrw_increments, GlitchParams, MrwParams};
use scatsep::wavelet::{build_filter_bank, FilterBank, WaveletFamily};
use scatsep::Waveform;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

type CliResult = Result<(), CliError>;

fn ensure_output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

fn read_input(path: &Path) -> Result<Waveform, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "input file not found: {}",
            path.display()
        )));
    }
    let outcome = read_waveform(path, format_for_path(path))?;
    for w in &outcome.warnings {
        eprintln!("scatsep: warning: {w}");
    }
    Ok(outcome.waveform)
}

fn parse_family(name: &str) -> Result<WaveletFamily, CliError> {
    name.parse::<WaveletFamily>().map_err(CliError::from)
}

fn build_bank_for(
    len: usize,
    j: usize,
    q: usize,
    family: WaveletFamily,
) -> Result<Arc<FilterBank>, CliError> {
    Ok(Arc::new(build_filter_bank(j, q, len, family)?))
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn record(manifest: &mut RunManifest, path: &Path) -> Result<(), CliError> {
    manifest
        .record_output(path)
        .map_err(|e| CliError::Config(format!("cannot hash {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// separate
// ---------------------------------------------------------------------------

pub fn cmd_separate(args: &SeparateArgs) -> CliResult {
    let t_start = Instant::now();
    ensure_output_dir(&args.output)?;

    let (preset_iters, preset_window) = match args.preset.as_deref() {
        None => (None, None),
        Some("stylized") => (Some(500), Some(2048)),
        Some("deglitch") => (Some(1000), Some(2048)),
        Some("quake") => (Some(200), Some(4096)),
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown preset: {other} (expected stylized, deglitch, or quake)"
            )))
        }
    };
    let iters = args
        .iters
        .or(preset_iters)
        .ok_or_else(|| CliError::Config("either --iters or --preset is required".into()))?;

    let observation = read_input(&args.observation)?;
    if let Some(window) = preset_window {
        if observation.len() != window {
            eprintln!(
                "scatsep: warning: preset expects {window}-sample windows, observation has {}",
                observation.len()
            );
        }
    }
    if !args.snippets.exists() {
        return Err(CliError::Config(format!(
            "snippet manifest not found: {}",
            args.snippets.display()
        )));
    }
    let (_catalog, snippets) = load_catalog(&args.snippets)?;
    if verbose() {
        eprintln!(
            "scatsep: {} snippets of {} samples",
            snippets.len(),
            observation.len()
        );
    }

    let family = parse_family(&args.family)?;
    let bank = build_bank_for(observation.len(), args.j, args.q, family)?;
    let solver = SolverConfig {
        max_iterations: iters,
        seed: args.seed,
        ..SolverConfig::default()
    };
    let t_setup = Instant::now();
    let problem = SeparationProblem::new(observation.clone(), args.a1, snippets, bank, solver)?;
    if problem.norms.degenerate {
        eprintln!("scatsep: warning: snippet variances degenerate (identical snippets?)");
    }
    let t_solve = Instant::now();
    let result = separate(&problem)?;
    let solve_ms = t_solve.elapsed().as_secs_f64() * 1e3;

    // five outputs: two waveforms, the loss trace, a figure, the manifest
    let s1_path = args.output.join("s1_hat.txt");
    let bg_path = args.output.join("background_hat.txt");
    write_waveform(&result.s1_hat, &s1_path, WaveformFormat::Text)?;
    write_waveform(&result.background_hat, &bg_path, WaveformFormat::Text)?;

    let mut trace_csv = String::from("iteration,loss_data,loss_prior,loss_cross,loss_total\n");
    for rec in &result.loss_trace {
        trace_csv.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            rec.iteration, rec.data, rec.prior, rec.cross, rec.total
        ));
    }
    let trace_path = args.output.join("loss_trace.csv");
    write_text(&trace_path, &trace_csv)?;

    let chart = line_chart(
        &[
            Series::from_samples("observation", observation.samples()),
            Series::from_samples("source estimate", result.s1_hat.samples()),
            Series::from_samples("background", result.background_hat.samples()),
        ],
        None,
        &ChartOptions {
            title: "separation overview".into(),
            x_label: "sample".into(),
            y_label: "amplitude".into(),
            ..ChartOptions::default()
        },
    );
    let svg_path = args.output.join("overview.svg");
    write_text(&svg_path, &chart)?;

    let mut manifest = RunManifest::new(
        "separate",
        serde_json::json!({
            "observation": args.observation.display().to_string(),
            "snippets": args.snippets.display().to_string(),
            "iters": iters,
            "a1": args.a1,
            "preset": args.preset,
            "j": args.j,
            "q": args.q,
            "family": args.family,
            "seed": args.seed,
        }),
    );
    manifest.add_input(&args.observation);
    manifest.add_input(&args.snippets);
    manifest.add_timing("setup", (t_solve - t_setup).as_secs_f64() * 1e3);
    manifest.add_timing("solve", solve_ms);
    manifest.add_timing("total", t_start.elapsed().as_secs_f64() * 1e3);
    manifest.add_detail(
        "iterations_used",
        serde_json::json!(result.iterations_used),
    );
    manifest.add_detail(
        "termination_reason",
        serde_json::json!(result.termination_reason.to_string()),
    );
    manifest.add_detail("best_loss", serde_json::json!(result.best_loss));
    for p in [&s1_path, &bg_path, &trace_path, &svg_path] {
        record(&mut manifest, p)?;
    }
    manifest
        .write(&args.output.join("manifest.json"))
        .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(args: &SynthArgs) -> CliResult {
    ensure_output_dir(&args.output)?;
    let format: WaveformFormat = args.format.parse()?;
    let ext = match format {
        WaveformFormat::Text => "txt",
        WaveformFormat::RawF32 => "raw",
    };
    let mut manifest = RunManifest::new(
        "synth",
        serde_json::json!({
            "kind": args.kind,
            "length": args.length,
            "seed": args.seed,
            "count": args.count,
            "format": args.format,
            "lambda2": args.lambda2,
            "corr_scale": args.corr_scale,
            "n_peaks": args.n_peaks,
            "amp_min": args.amp_min,
            "amp_max": args.amp_max,
            "left_decay": args.left_decay,
            "right_decay": args.right_decay,
            "min_separation": args.min_separation,
            "a1": args.a1,
        }),
    );
    let mut outputs: Vec<PathBuf> = Vec::new();

    match args.kind.as_str() {
        "mrw" => {
            let mut entries = Vec::new();
            for i in 0..args.count.max(1) {
                let seed = scatsep::par::derive_seed(args.seed, i as u64);
                let real = mrw_increments(&MrwParams {
                    d: args.length,
                    lambda2: args.lambda2,
                    corr_scale: args.corr_scale,
                    seed,
                })?;
                if real.eigenvalues_clipped {
                    eprintln!("scatsep: warning: circulant embedding clipped eigenvalues");
                }
                let name = format!("mrw_{i:04}.{ext}");
                let path = args.output.join(&name);
                write_waveform(
                    &real.waveform.clone().with_label(format!("mrw_{i:04}")),
                    &path,
                    format,
                )?;
                entries.push(CatalogEntry {
                    file: name.clone(),
                    start: 0,
                    length: args.length,
                    label: Some(format!("mrw_{i:04}")),
                    detrend: None,
                });
                outputs.push(path);
            }
            if args.emit_catalog {
                let path = args.output.join("snippets.json");
                write_text(
                    &path,
                    &serde_json::to_string_pretty(&entries)
                        .expect("catalog entries serialize"),
                )?;
                outputs.push(path);
            }
        }
        "glitch" => {
            let g = glitch_train(&GlitchParams {
                d: args.length,
                n_peaks: args.n_peaks,
                amp_min: args.amp_min,
                amp_max: args.amp_max,
                left_decay: args.left_decay,
                right_decay: args.right_decay,
                min_separation: args.min_separation,
                seed: args.seed,
            })?;
            let path = args.output.join(format!("glitch.{ext}"));
            write_waveform(&g.with_label("glitch"), &path, format)?;
            outputs.push(path);
        }
        "mixture" => {
            let noise = mrw_increments(&MrwParams {
                d: args.length,
                lambda2: args.lambda2,
                corr_scale: args.corr_scale,
                seed: scatsep::par::derive_seed(args.seed, 1),
            })?
            .waveform;
            let glitch = glitch_train(&GlitchParams {
                d: args.length,
                n_peaks: args.n_peaks,
                amp_min: args.amp_min,
                amp_max: args.amp_max,
                left_decay: args.left_decay,
                right_decay: args.right_decay,
                min_separation: args.min_separation,
                seed: scatsep::par::derive_seed(args.seed, 2),
            })?;
            let observation = mix(&glitch, &noise, args.a1)?;
            for (name, w) in [
                ("s1_true", &glitch),
                ("background_true", &noise),
                ("observation", &observation),
            ] {
                let path = args.output.join(format!("{name}.{ext}"));
                write_waveform(&w.clone().with_label(name), &path, format)?;
                outputs.push(path);
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown synth kind: {other} (expected mrw, glitch, or mixture)"
            )))
        }
    }

    for p in &outputs {
        record(&mut manifest, p)?;
    }
    manifest
        .write(&args.output.join("manifest.json"))
        .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// snr-experiment
// ---------------------------------------------------------------------------

pub fn cmd_snr_experiment(args: &SnrArgs) -> CliResult {
    let t_start = Instant::now();
    ensure_output_dir(&args.output)?;
    let k_values: Vec<usize> = args
        .k_values
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Config(format!("bad k value {t:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if k_values.is_empty() || args.trials == 0 {
        return Err(CliError::Config(
            "need at least one k value and one trial".into(),
        ));
    }

    // scale the stylized defaults (tuned for 2048 samples) to the window
    let base = StylizedConfig {
        d: args.length,
        j: args.j,
        iterations: args.iters.unwrap_or(500),
        corr_scale: (args.length / 4).max(2),
        glitch_peaks: (args.length / 256).clamp(2, 8),
        glitch_min_separation: (args.length / 16).max(8),
        ..StylizedConfig::default()
    };
    let cfg = SnrExperimentConfig {
        k_values: k_values.clone(),
        trials: args.trials,
        seed: args.seed,
        base,
    };
    let rows = snr_experiment(&cfg)?;

    let mut csv = String::from("k,trial,seed,snr_db\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.17e}\n",
            row.k, row.trial, row.seed, row.snr_db
        ));
    }
    let csv_path = args.output.join("snr_vs_k.csv");
    write_text(&csv_path, &csv)?;

    // mean with a 5th-95th percentile band per k
    let mut xs = Vec::new();
    let mut means = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for &k in &k_values {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.k == k)
            .map(|r| r.snr_db)
            .collect();
        xs.push(k as f64);
        means.push(vals.iter().sum::<f64>() / vals.len() as f64);
        lo.push(percentile(&vals, 5.0));
        hi.push(percentile(&vals, 95.0));
    }
    let chart = line_chart(
        &[Series {
            label: "mean snr".into(),
            xs: xs.clone(),
            ys: means,
        }],
        Some(&Band { xs, lo, hi }),
        &ChartOptions {
            title: "background recovery vs snippet count".into(),
            x_label: "snippets".into(),
            y_label: "snr (dB)".into(),
            ..ChartOptions::default()
        },
    );
    let svg_path = args.output.join("snr_vs_k.svg");
    write_text(&svg_path, &chart)?;

    let mut manifest = RunManifest::new(
        "snr-experiment",
        serde_json::json!({
            "k_values": k_values,
            "trials": args.trials,
            "seed": args.seed,
            "iters": args.iters.unwrap_or(500),
            "length": args.length,
            "j": args.j,
        }),
    );
    manifest.add_timing("total", t_start.elapsed().as_secs_f64() * 1e3);
    for p in [&csv_path, &svg_path] {
        record(&mut manifest, p)?;
    }
    manifest
        .write(&args.output.join("manifest.json"))
        .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dashboard
// ---------------------------------------------------------------------------

pub fn cmd_dashboard(args: &DashboardArgs) -> CliResult {
    ensure_output_dir(&args.output)?;
    let family = parse_family(&args.family)?;

    let mut waveforms = Vec::new();
    for path in &args.input {
        let w = read_input(path)?;
        waveforms.push((path.clone(), w));
    }
    let len = waveforms[0].1.len();
    for (p, w) in &waveforms {
        if w.len() != len {
            return Err(CliError::Config(format!(
                "incompatible input lengths: {} has {} samples, expected {len}",
                p.display(),
                w.len()
            )));
        }
    }
    let bank = build_bank_for(len, args.j, args.q, family)?;

    let mut manifest = RunManifest::new(
        "dashboard",
        serde_json::json!({
            "inputs": args.input.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "j": args.j,
            "q": args.q,
            "family": args.family,
        }),
    );

    let mut tables: Vec<(String, DashboardTable)> = Vec::new();
    for (idx, (path, w)) in waveforms.iter().enumerate() {
        manifest.add_input(path);
        let cov = scat_cov(w, &bank)?;
        let table = dashboard(&cov)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "input".into());
        // index prefix keeps colliding stems apart
        let csv_path = args.output.join(format!("dashboard_{idx:02}_{stem}.csv"));
        write_text(&csv_path, &table.to_csv())?;
        record(&mut manifest, &csv_path)?;
        tables.push((stem, table));
    }

    let figure = scatsep::scattering::dashboard_figure(&tables);
    let svg_path = args.output.join("dashboard.svg");
    write_text(&svg_path, &figure)?;
    record(&mut manifest, &svg_path)?;

    manifest
        .write(&args.output.join("manifest.json"))
        .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// deglitch-baseline
// ---------------------------------------------------------------------------

pub fn cmd_deglitch_baseline(args: &BaselineArgs) -> CliResult {
    let t_start = Instant::now();
    ensure_output_dir(&args.output)?;
    let x = read_input(&args.input)?;
    let cfg = BaselineConfig {
        decimation: args.decimate,
        band_lo: args.band_lo,
        band_hi: args.band_hi,
        threshold_sigmas: args.threshold,
        refractory: args.refractory,
        fit_window: args.fit_window,
        ..BaselineConfig::default()
    };
    let detections = detect_glitches(&x, &cfg)?;
    if verbose() {
        eprintln!("scatsep: {} detections", detections.len());
    }
    let fit = fit_and_remove(&x, &detections, &cfg)?;

    let det_path = args.output.join("detections.csv");
    write_text(&det_path, &detections_to_csv(&fit.detections))?;
    let deglitched_path = args.output.join("deglitched.txt");
    write_waveform(&fit.deglitched, &deglitched_path, WaveformFormat::Text)?;
    let model_path = args.output.join("glitch_model.txt");
    write_waveform(&fit.glitch_model, &model_path, WaveformFormat::Text)?;

    let chart = line_chart(
        &[
            Series::from_samples("input", x.samples()),
            Series::from_samples("deglitched", fit.deglitched.samples()),
            Series::from_samples("glitch model", fit.glitch_model.samples()),
        ],
        None,
        &ChartOptions {
            title: "baseline deglitching".into(),
            x_label: "sample".into(),
            y_label: "amplitude".into(),
            ..ChartOptions::default()
        },
    );
    let svg_path = args.output.join("overview.svg");
    write_text(&svg_path, &chart)?;

    let mut manifest = RunManifest::new(
        "deglitch-baseline",
        serde_json::json!({
            "input": args.input.display().to_string(),
            "decimate": args.decimate,
            "band_lo": args.band_lo,
            "band_hi": args.band_hi,
            "threshold": args.threshold,
            "refractory": args.refractory,
            "fit_window": args.fit_window,
        }),
    );
    manifest.add_input(&args.input);
    manifest.add_timing("total", t_start.elapsed().as_secs_f64() * 1e3);
    manifest.add_detail("detections", serde_json::json!(fit.detections.len()));
    for p in [&det_path, &deglitched_path, &model_path, &svg_path] {
        record(&mut manifest, p)?;
    }
    manifest
        .write(&args.output.join("manifest.json"))
        .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
    Ok(())
}
