//! File formats.
//!
//! * Time series: `<name>.f64le`, raw little-endian IEEE-754 doubles with no
//!   header, plus a sidecar `<name>.meta.toml` ([`StreamMetadata`]).
//! * Spectrum: `<name>.spectrum.csv` with columns
//!   `frequency_hz,psd_rel_vacuum,db_rel_vacuum,segment_index,rbw_hz,n_averages`
//!   and a `<name>.spectrum.json` metadata block ([`SpectrumMetadata`]).
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Band, StitchedSpectrum, VacuumReference, WindowPlan};
use crate::synth::SimScenario;

pub const RAW_EXTENSION: &str = "f64le";
pub const META_SUFFIX: &str = "meta.toml";
pub const STREAM_FORMAT: &str = "f64le";

pub fn raw_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.{RAW_EXTENSION}"))
}

/// Sidecar path for a raw stream path.
pub fn meta_path_for(raw: &Path) -> PathBuf {
    raw.with_extension(META_SUFFIX)
}

pub fn spectrum_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.spectrum.csv")),
        dir.join(format!("{name}.spectrum.json")),
    )
}

/// Fails if `path` exists and `force` is not set.
pub fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "output exists (use --force to overwrite)",
            ),
        ));
    }
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_samples(samples: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    bytes
}

pub fn decode_samples(bytes: &[u8]) -> Option<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamMetadata {
    pub format: String,
    pub name: String,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub scenario_digest: String,
    pub lo_power_uw: f64,
    pub lo_power_ref_uw: f64,
    pub lo_blocked: bool,
    /// SHA-256 of the raw bytes, hex.
    pub data_sha256: String,
}

impl StreamMetadata {
    pub fn for_run(name: &str, scenario: &SimScenario<f64>, samples: &[f64]) -> Self {
        StreamMetadata {
            format: STREAM_FORMAT.to_string(),
            name: name.to_string(),
            sample_rate_hz: scenario.sample_rate_hz,
            duration_s: scenario.duration_s,
            n_samples: samples.len(),
            seed: scenario.seed,
            scenario_digest: scenario.digest(),
            lo_power_uw: scenario.homodyne.lo_power_w * 1e6,
            lo_power_ref_uw: scenario.homodyne.lo_power_ref_w * 1e6,
            lo_blocked: scenario.lo_blocked,
            data_sha256: String::new(),
        }
    }

    /// Vacuum level of this run relative to the reference LO power.
    pub fn lo_scale(&self) -> f64 {
        self.lo_power_uw / self.lo_power_ref_uw
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Writes the raw stream and its sidecar; returns the completed metadata.
pub fn write_stream(
    dir: &Path,
    meta: &StreamMetadata,
    samples: &[f64],
    force: bool,
) -> Result<StreamMetadata> {
    let raw = raw_path(dir, &meta.name);
    let side = meta_path_for(&raw);
    ensure_writable(&raw, force)?;
    ensure_writable(&side, force)?;
    let bytes = encode_samples(samples);
    let mut meta = meta.clone();
    meta.n_samples = samples.len();
    meta.data_sha256 = sha256_hex(&bytes);
    let text = toml::to_string(&meta).map_err(|e| Error::Parse {
        path: side.display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(&raw, &bytes)?;
    write_atomic(&side, text.as_bytes())?;
    Ok(meta)
}

pub fn read_metadata(raw: &Path) -> Result<StreamMetadata> {
    let side = meta_path_for(raw);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: side.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads a stream and checks it against its sidecar.
pub fn read_stream(raw: &Path) -> Result<(StreamMetadata, Vec<f64>)> {
    let meta = read_metadata(raw)?;
    let bytes = fs::read(raw).map_err(|e| Error::io(raw, e))?;
    let parse_err = |message: String| Error::Parse {
        path: raw.display().to_string(),
        message,
    };
    if meta.format != STREAM_FORMAT {
        return Err(parse_err(format!("unsupported format '{}'", meta.format)));
    }
    let samples =
        decode_samples(&bytes).ok_or_else(|| parse_err("length is not a multiple of 8".into()))?;
    if samples.len() != meta.n_samples {
        return Err(parse_err(format!(
            "sidecar declares {} samples, file holds {}",
            meta.n_samples,
            samples.len()
        )));
    }
    if !meta.data_sha256.is_empty() && sha256_hex(&bytes) != meta.data_sha256 {
        return Err(parse_err("data digest does not match sidecar".into()));
    }
    Ok((meta, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRecord {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub rbw_hz: f64,
    pub n_averages: usize,
}

impl From<&Band<f64>> for BandRecord {
    fn from(b: &Band<f64>) -> Self {
        BandRecord {
            f_lo_hz: b.f_lo,
            f_hi_hz: b.f_hi,
            rbw_hz: b.rbw_hz,
            n_averages: b.n_averages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    pub plan: Vec<BandRecord>,
    pub scenario_digest: String,
    pub sample_rate_hz: f64,
    /// Flat vacuum level the dB column is referred to.
    pub vacuum_reference_psd: f64,
    pub dark_subtracted: bool,
    pub dark_scenario_digest: Option<String>,
    pub floored_bins_per_segment: Vec<usize>,
    pub floored_bins_total: usize,
}

impl SpectrumMetadata {
    pub fn new(
        plan: &WindowPlan<f64>,
        spectrum: &StitchedSpectrum<f64>,
        sample_rate_hz: f64,
        vacuum_reference_psd: f64,
        dark_scenario_digest: Option<String>,
    ) -> Self {
        let floored: Vec<usize> = spectrum
            .segments
            .iter()
            .map(|s| s.floored_count())
            .collect();
        SpectrumMetadata {
            plan: plan.bands.iter().map(BandRecord::from).collect(),
            scenario_digest: spectrum.provenance.clone(),
            sample_rate_hz,
            vacuum_reference_psd,
            dark_subtracted: dark_scenario_digest.is_some(),
            dark_scenario_digest,
            floored_bins_total: floored.iter().sum(),
            floored_bins_per_segment: floored,
        }
    }
}

pub const CSV_HEADER: &str =
    "frequency_hz,psd_rel_vacuum,db_rel_vacuum,segment_index,rbw_hz,n_averages";

/// CSV rendering of a stitched spectrum, dB against `reference`.
pub fn spectrum_csv(
    spectrum: &StitchedSpectrum<f64>,
    reference: VacuumReference<'_, f64>,
) -> Result<String> {
    let db = crate::spectral::to_db_rel_vacuum(spectrum, reference)?;
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (si, (seg, dbseg)) in spectrum.segments.iter().zip(&db.segments).enumerate() {
        for (b, (_, d)) in seg.bins.iter().zip(&dbseg.bins) {
            out.push_str(&format!(
                "{},{:e},{},{},{},{}\n",
                b.frequency, b.psd, d, si, seg.rbw_hz, seg.n_averages
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub frequency_hz: f64,
    pub psd_rel_vacuum: f64,
    pub db_rel_vacuum: f64,
    pub segment_index: usize,
    pub rbw_hz: f64,
    pub n_averages: usize,
}

/// Parses a spectrum CSV produced by [`spectrum_csv`].
pub fn parse_spectrum_csv(text: &str) -> Result<Vec<CsvRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: format!("spectrum csv line {line}"),
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(err(1, "unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(err(
                    i + 2,
                    format!("expected 6 columns, got {}", cols.len()),
                ));
            }
            let f = |j: usize| -> Result<f64> {
                cols[j]
                    .parse()
                    .map_err(|e| err(i + 2, format!("column {j}: {e}")))
            };
            let u = |j: usize| -> Result<usize> {
                cols[j]
                    .parse()
                    .map_err(|e| err(i + 2, format!("column {j}: {e}")))
            };
            Ok(CsvRow {
                frequency_hz: f(0)?,
                psd_rel_vacuum: f(1)?,
                db_rel_vacuum: f(2)?,
                segment_index: u(3)?,
                rbw_hz: f(4)?,
                n_averages: u(5)?,
            })
        })
        .collect()
}
