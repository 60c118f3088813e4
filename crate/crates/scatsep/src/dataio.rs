//! Waveform file I/O, window extraction with detrending, and snippet
//! catalogs for real-data workflows.
//!
//! Two formats are supported:
//!   text    one sample per line, `#`-prefixed header lines may carry
//!           `sample_rate = <hz>` and `label = <name>`; written with 17
//!           significant digits so round trips are lossless.
//!   raw     little-endian 32-bit floats, with a JSON sidecar
//!           `<path>.json` holding `{"sample_rate": .., "length": ..,
//!           "label": ..}`. Byte-level round trips are exact; converting
//!           a 64-bit waveform into this format quantizes to f32.

use crate::error::{Error, Result};
use crate::signal::Waveform;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformFormat {
    Text,
    RawF32,
}

impl std::str::FromStr for WaveformFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(WaveformFormat::Text),
            "raw" | "raw_f32" => Ok(WaveformFormat::RawF32),
            other => Err(Error::invalid(format!("unknown waveform format: {other}"))),
        }
    }
}

/// Guess a format from the file extension; text unless `.raw`/`.f32`.
pub fn format_for_path(path: &Path) -> WaveformFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") | Some("f32") => WaveformFormat::RawF32,
        _ => WaveformFormat::Text,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    sample_rate: f64,
    length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Outcome of a read, carrying any non-fatal warnings (e.g. a missing
/// sample rate that defaulted to 1.0).
#[derive(Debug)]
pub struct ReadOutcome {
    pub waveform: Waveform,
    pub warnings: Vec<String>,
}

pub fn read_waveform(path: &Path, format: WaveformFormat) -> Result<ReadOutcome> {
    match format {
        WaveformFormat::Text => read_text(path),
        WaveformFormat::RawF32 => read_raw(path),
    }
}

fn read_text(path: &Path) -> Result<ReadOutcome> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut sample_rate: Option<f64> = None;
    let mut label: Option<String> = None;
    let mut warnings = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = header.split_once('=') {
                match key.trim() {
                    "sample_rate" => {
                        sample_rate =
                            Some(value.trim().parse::<f64>().map_err(|e| Error::Parse {
                                path: path.display().to_string(),
                                line: lineno + 1,
                                reason: format!("bad sample_rate: {e}"),
                            })?)
                    }
                    "label" => label = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let v: f64 = trimmed.parse().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: format!("bad sample: {e}"),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                index: samples.len(),
                stage: format!("samples of {}", path.display()),
            });
        }
        samples.push(v);
    }
    let rate = sample_rate.unwrap_or_else(|| {
        warnings.push(format!(
            "{}: no sample_rate header, defaulting to 1.0",
            path.display()
        ));
        1.0
    });
    let mut waveform = Waveform::new(samples, rate)?;
    if let Some(l) = label {
        waveform = waveform.with_label(l);
    }
    Ok(ReadOutcome { waveform, warnings })
}

fn read_raw(path: &Path) -> Result<ReadOutcome> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidLength {
            len: bytes.len(),
            reason: "raw f32 file length must be a multiple of 4 bytes".into(),
        });
    }
    let mut samples = Vec::with_capacity(bytes.len() / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                stage: format!("samples of {}", path.display()),
            });
        }
        samples.push(v);
    }

    let mut warnings = Vec::new();
    let side = sidecar_path(path);
    let (rate, label) = if side.exists() {
        let text =
            std::fs::read_to_string(&side).map_err(|e| Error::io(side.display().to_string(), e))?;
        let meta: RawSidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: side.display().to_string(),
            source: e,
        })?;
        if meta.length != samples.len() {
            return Err(Error::LengthMismatch {
                left: meta.length,
                right: samples.len(),
                context: format!("sidecar length vs payload of {}", path.display()),
            });
        }
        (meta.sample_rate, meta.label)
    } else {
        warnings.push(format!(
            "{}: no sidecar metadata, sample rate defaulting to 1.0",
            path.display()
        ));
        (1.0, None)
    };
    let mut waveform = Waveform::new(samples, rate)?;
    if let Some(l) = label {
        waveform = waveform.with_label(l);
    }
    Ok(ReadOutcome { waveform, warnings })
}

pub fn write_waveform(w: &Waveform, path: &Path, format: WaveformFormat) -> Result<()> {
    match format {
        WaveformFormat::Text => {
            let mut out = String::new();
            out.push_str(&format!("# sample_rate = {:.17e}\n", w.sample_rate()));
            if let Some(label) = w.label() {
                out.push_str(&format!("# label = {label}\n"));
            }
            for v in w.samples() {
                out.push_str(&format!("{v:.17e}\n"));
            }
            std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
        }
        WaveformFormat::RawF32 => {
            let mut bytes = Vec::with_capacity(w.len() * 4);
            for v in w.samples() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
            let meta = RawSidecar {
                sample_rate: w.sample_rate(),
                length: w.len(),
                label: w.label().map(String::from),
            };
            let side = sidecar_path(path);
            let mut f = std::fs::File::create(&side)
                .map_err(|e| Error::io(side.display().to_string(), e))?;
            let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Json {
                path: side.display().to_string(),
                source: e,
            })?;
            f.write_all(text.as_bytes())
                .map_err(|e| Error::io(side.display().to_string(), e))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detrend {
    None,
    Mean,
    Linear,
}

impl std::str::FromStr for Detrend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Detrend::None),
            "mean" => Ok(Detrend::Mean),
            "linear" => Ok(Detrend::Linear),
            other => Err(Error::invalid(format!("unknown detrend mode: {other}"))),
        }
    }
}

/// Extract `[start, start + length)` from a waveform and remove the
/// selected trend (linear = least-squares line). The source is untouched.
pub fn window_and_detrend(
    x: &Waveform,
    start: usize,
    length: usize,
    detrend: Detrend,
) -> Result<Waveform> {
    if length == 0 {
        return Err(Error::InvalidLength {
            len: 0,
            reason: "window length must be positive".into(),
        });
    }
    let end = start.checked_add(length).ok_or_else(|| Error::InvalidLength {
        len: length,
        reason: "window overflows".into(),
    })?;
    if end > x.len() {
        return Err(Error::invalid(format!(
            "window [{start}, {end}) outside waveform of {} samples",
            x.len()
        )));
    }
    let mut w: Vec<f64> = x.samples()[start..end].to_vec();
    match detrend {
        Detrend::None => {}
        Detrend::Mean => {
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            for v in w.iter_mut() {
                *v -= mean;
            }
        }
        Detrend::Linear => {
            // least-squares line over t = 0..n-1
            let n = w.len() as f64;
            let t_mean = (n - 1.0) / 2.0;
            let y_mean = w.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut den = 0.0;
            for (t, y) in w.iter().enumerate() {
                let dt = t as f64 - t_mean;
                num += dt * (y - y_mean);
                den += dt * dt;
            }
            let slope = if den > 0.0 { num / den } else { 0.0 };
            for (t, v) in w.iter_mut().enumerate() {
                *v -= y_mean + slope * (t as f64 - t_mean);
            }
        }
    }
    let mut out = Waveform::new(w, x.sample_rate())?;
    if let Some(l) = x.label() {
        out = out.with_label(format!("{l}[{start}..{end}]"));
    }
    Ok(out)
}

/// One catalog entry: a window of a source file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub file: String,
    pub start: usize,
    pub length: usize,
    #[serde(default)]
    pub label: Option<String>,
    /// Detrend mode (`none`, `mean`, `linear`); defaults to `none`.
    #[serde(default)]
    pub detrend: Option<String>,
}

/// Parsed snippet catalog; windows share a length and sample rate.
pub struct SnippetCatalog {
    pub entries: Vec<CatalogEntry>,
    pub sample_rate: f64,
    pub window_len: usize,
}

/// Load a catalog manifest (a JSON array of entries; file paths resolve
/// relative to the manifest location) and materialize the snippets.
pub fn load_catalog(manifest: &Path) -> Result<(SnippetCatalog, Vec<Waveform>)> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::io(manifest.display().to_string(), e))?;
    let entries: Vec<CatalogEntry> = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: manifest.display().to_string(),
        source: e,
    })?;
    if entries.is_empty() {
        return Err(Error::invalid(format!(
            "empty snippet manifest: {}",
            manifest.display()
        )));
    }
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));

    let mut snippets = Vec::with_capacity(entries.len());
    let mut rate: Option<f64> = None;
    let mut window_len: Option<usize> = None;
    // Cache source files; catalogs often window one long record.
    let mut cache: std::collections::HashMap<PathBuf, Waveform> = std::collections::HashMap::new();

    for (i, entry) in entries.iter().enumerate() {
        let path = base.join(&entry.file);
        let source = match cache.get(&path) {
            Some(w) => w.clone(),
            None => {
                let outcome = read_waveform(&path, format_for_path(&path))?;
                cache.insert(path.clone(), outcome.waveform.clone());
                outcome.waveform
            }
        };
        let detrend = entry
            .detrend
            .as_deref()
            .unwrap_or("none")
            .parse::<Detrend>()?;
        let mut w = window_and_detrend(&source, entry.start, entry.length, detrend)?;
        if let Some(l) = &entry.label {
            w = w.with_label(l.clone());
        }
        match window_len {
            None => window_len = Some(w.len()),
            Some(expect) if expect != w.len() => {
                return Err(Error::LengthMismatch {
                    left: w.len(),
                    right: expect,
                    context: format!("catalog entry {i} window length"),
                });
            }
            _ => {}
        }
        match rate {
            None => rate = Some(w.sample_rate()),
            Some(expect) if expect != w.sample_rate() => {
                return Err(Error::invalid(format!(
                    "catalog entry {i} sample rate {} differs from {expect}",
                    w.sample_rate()
                )));
            }
            _ => {}
        }
        snippets.push(w);
    }

    Ok((
        SnippetCatalog {
            entries,
            sample_rate: rate.unwrap(),
            window_len: window_len.unwrap(),
        },
        snippets,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("scatsep_dataio_{name}_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn text_parse_basic() {
        let dir = tmpdir("basic");
        let path = dir.join("w.txt");
        std::fs::write(&path, "1.0\n2.0\n3.0\n").unwrap();
        let out = read_waveform(&path, WaveformFormat::Text).unwrap();
        assert_eq!(out.waveform.samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(out.waveform.sample_rate(), 1.0);
        assert_eq!(out.warnings.len(), 1); // defaulted rate
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let dir = tmpdir("roundtrip");
        let path = dir.join("w.txt");
        let w = Waveform::new(
            vec![std::f64::consts::PI, -1.0 / 3.0, 1e-300, 42.0],
            20.0,
        )
        .unwrap()
        .with_label("probe");
        write_waveform(&w, &path, WaveformFormat::Text).unwrap();
        let back = read_waveform(&path, WaveformFormat::Text).unwrap().waveform;
        assert_eq!(back.samples(), w.samples());
        assert_eq!(back.sample_rate(), w.sample_rate());
        assert_eq!(back.label(), w.label());
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let dir = tmpdir("raw");
        let path = dir.join("w.raw");
        // f32-grained samples survive the format exactly
        let samples: Vec<f64> = [0.5f32, -1.25, 3.75e-4, 1234.5]
            .iter()
            .map(|v| *v as f64)
            .collect();
        let w = Waveform::new(samples.clone(), 100.0).unwrap();
        write_waveform(&w, &path, WaveformFormat::RawF32).unwrap();
        let back = read_waveform(&path, WaveformFormat::RawF32).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.waveform.samples(), &samples[..]);
        assert_eq!(back.waveform.sample_rate(), 100.0);
        // and a second write produces identical bytes
        let bytes1 = std::fs::read(&path).unwrap();
        write_waveform(&back.waveform, &path, WaveformFormat::RawF32).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn mission_rate_duration() {
        // 2048 samples at 20 Hz span 102.4 s.
        let dir = tmpdir("rate");
        let path = dir.join("w.txt");
        let mut text = String::from("# sample_rate = 20.0\n");
        for _ in 0..2048 {
            text.push_str("0.0\n");
        }
        std::fs::write(&path, text).unwrap();
        let w = read_waveform(&path, WaveformFormat::Text).unwrap().waveform;
        assert!((w.duration_seconds() - 102.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_garbage() {
        let dir = tmpdir("bad");
        let nan = dir.join("nan.txt");
        std::fs::write(&nan, "1.0\nNaN\n").unwrap();
        match read_waveform(&nan, WaveformFormat::Text) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
        let garbage = dir.join("garbage.txt");
        std::fs::write(&garbage, "1.0\npotato\n").unwrap();
        match read_waveform(&garbage, WaveformFormat::Text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn detrend_modes() {
        let constant = Waveform::new(vec![5.0; 64], 1.0).unwrap();
        let out = window_and_detrend(&constant, 0, 64, Detrend::Mean).unwrap();
        assert!(out.samples().iter().all(|v| v.abs() < 1e-14));

        let ramp =
            Waveform::new((0..64).map(|t| 3.0 + 0.25 * t as f64).collect::<Vec<_>>(), 1.0).unwrap();
        let out = window_and_detrend(&ramp, 0, 64, Detrend::Linear).unwrap();
        assert!(out.samples().iter().all(|v| v.abs() < 1e-10));

        // a fast sinusoid keeps essentially all its power under linear detrend
        let d = 1024;
        let sine: Vec<f64> = (0..d)
            .map(|t| (2.0 * std::f64::consts::PI * 32.0 * t as f64 / d as f64).sin())
            .collect();
        let w = Waveform::new(sine.clone(), 1.0).unwrap();
        let out = window_and_detrend(&w, 0, d, Detrend::Linear).unwrap();
        let p_in: f64 = sine.iter().map(|v| v * v).sum();
        let p_out: f64 = out.samples().iter().map(|v| v * v).sum();
        assert!((p_out - p_in).abs() < 0.01 * p_in);

        // windowing never mutates the source
        assert_eq!(w.samples(), &sine[..]);
        assert!(window_and_detrend(&w, 1000, 64, Detrend::None).is_err());
    }

    #[test]
    fn catalog_workflow() {
        let dir = tmpdir("catalog");
        // one long record, 50 windows of 128 samples, overlapping allowed
        let long: Vec<f64> = (0..4096).map(|t| ((t as f64) * 0.01).sin()).collect();
        let source = Waveform::new(long, 20.0).unwrap();
        write_waveform(&source, &dir.join("long.txt"), WaveformFormat::Text).unwrap();

        let entries: Vec<CatalogEntry> = (0..50)
            .map(|i| CatalogEntry {
                file: "long.txt".into(),
                start: i * 64, // 50% overlap
                length: 128,
                label: Some(format!("w{i}")),
                detrend: Some("linear".into()),
            })
            .collect();
        let manifest = dir.join("catalog.json");
        std::fs::write(&manifest, serde_json::to_string_pretty(&entries).unwrap()).unwrap();

        let (catalog, snippets) = load_catalog(&manifest).unwrap();
        assert_eq!(snippets.len(), 50);
        assert_eq!(catalog.window_len, 128);
        assert_eq!(catalog.sample_rate, 20.0);
        assert!(snippets.iter().all(|w| w.len() == 128));

        // empty manifest is rejected
        let empty = dir.join("empty.json");
        std::fs::write(&empty, "[]").unwrap();
        assert!(load_catalog(&empty).is_err());

        // inconsistent lengths are rejected
        let mut bad = entries.clone();
        bad[3].length = 64;
        let bad_manifest = dir.join("bad.json");
        std::fs::write(&bad_manifest, serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(load_catalog(&bad_manifest).is_err());
    }
}
