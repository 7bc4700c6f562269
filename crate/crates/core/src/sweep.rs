//! Parameter sweeps over sequences, written as CSV tables and SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::EncoderConfig;
use crate::pipeline::{encode_sequence, Dataset, Method, SequenceSummary};
use crate::plot::{line_chart_svg, Series};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Bins per volume.
    TBin,
    R4,
    RMax,
    /// Bin width in milliseconds; converted per sequence to bins per volume.
    BinMs,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::TBin => "tbin",
            SweepAxis::R4 => "r4",
            SweepAxis::RMax => "rmax",
            SweepAxis::BinMs => "bin-ms",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tbin" => Ok(SweepAxis::TBin),
            "r4" => Ok(SweepAxis::R4),
            "rmax" => Ok(SweepAxis::RMax),
            "bin-ms" => Ok(SweepAxis::BinMs),
            _ => Err(Error::invalid(format!("unknown sweep axis `{s}` (tbin, r4, rmax, bin-ms)"))),
        }
    }
}

/// One compared configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMethod {
    pub method: Method,
    /// Overrides the base radius for this method.
    pub r4: Option<f64>,
}

impl SweepMethod {
    pub fn label(&self) -> String {
        match (self.method, self.r4) {
            (Method::PdsLec, Some(r4)) => format!("pds-lec(r4={r4})"),
            (Method::Random { keep_fraction, .. }, _) => format!("random({:.0}%)", keep_fraction * 100.0),
            (m, _) => m.name().to_string(),
        }
    }
}

impl FromStr for SweepMethod {
    type Err = Error;

    /// `pds-lec`, `pds-lec:R4`, `temporal-only`, `random`, `random:FRACTION`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: &str| -> Result<f64> {
            a.parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{a}` in method `{s}`")))
        };
        match (name, arg) {
            ("pds-lec", a) => Ok(SweepMethod {
                method: Method::PdsLec,
                r4: a.map(num).transpose()?,
            }),
            ("temporal-only", None) => Ok(SweepMethod {
                method: Method::TemporalOnly,
                r4: None,
            }),
            ("random", a) => Ok(SweepMethod {
                method: Method::Random {
                    keep_fraction: a.map(num).transpose()?.unwrap_or(0.5),
                    seed: 0,
                },
                r4: None,
            }),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub base: EncoderConfig,
    pub methods: Vec<SweepMethod>,
    /// Seed of the random baseline.
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one axis value"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("sweep needs at least one method"));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("sweep values must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sequence: String,
    pub method: String,
    pub axis: String,
    pub value: f64,
    pub t_bin: u32,
    pub r4: f64,
    pub r_max: f64,
    /// `None` when the encode failed; `status` says why.
    pub summary: Option<SequenceSummary>,
    pub status: String,
}

/// Bins per volume for a bin width in milliseconds, from the mean frame gap.
pub fn bins_for_ms(ds: &Dataset, bin_ms: f64) -> u32 {
    let n = ds.frames.len();
    let span = ds.frames[n - 1].0 - ds.frames[0].0;
    let gap_ms = 1000.0 * span / (n - 1) as f64;
    ((gap_ms / bin_ms).round() as u32).max(1)
}

fn config_for(spec: &SweepSpec, m: &SweepMethod, value: f64, ds: &Dataset) -> EncoderConfig {
    let mut cfg = spec.base.clone();
    if let Some(r4) = m.r4 {
        cfg.r4 = r4;
    }
    match spec.axis {
        SweepAxis::TBin => cfg.t_bin = value.round().max(1.0) as u32,
        SweepAxis::R4 => cfg.r4 = value,
        SweepAxis::RMax => cfg.r_max = value,
        SweepAxis::BinMs => cfg.t_bin = bins_for_ms(ds, value),
    }
    cfg
}

/// Runs every (sequence, method, value) combination. Failed encodes become
/// rows with a status message; the sweep continues.
pub fn run_sweep(sequences: &[(String, Dataset)], spec: &SweepSpec, threads: Option<usize>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (name, ds) in sequences {
        for m in &spec.methods {
            for &value in &spec.values {
                let cfg = config_for(spec, m, value, ds);
                let method = match m.method {
                    Method::Random { keep_fraction, .. } => Method::Random {
                        keep_fraction,
                        seed: spec.seed,
                    },
                    other => other,
                };
                let result = encode_sequence(ds, method, &cfg, threads);
                let (summary, status) = match result {
                    Ok(r) => (Some(r.summary), "ok".to_string()),
                    Err(e) => (None, format!("error: {e}")),
                };
                rows.push(SweepRow {
                    sequence: name.clone(),
                    method: m.label(),
                    axis: spec.axis.name().to_string(),
                    value,
                    t_bin: cfg.t_bin,
                    r4: cfg.r4,
                    r_max: cfg.r_max,
                    summary,
                    status,
                });
            }
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str =
    "sequence,method,axis,value,t_bin,r4,r_max,psnr,ssim,t_error,cr,events_in,events_kept,gamma_bits,status";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Fixed six-decimal formatting so output is byte-stable.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        write!(
            s,
            "{},{},{},{:.6},{},{:.6},{:.6},",
            csv_field(&r.sequence),
            csv_field(&r.method),
            r.axis,
            r.value,
            r.t_bin,
            r.r4,
            r.r_max
        )
        .unwrap();
        match &r.summary {
            Some(m) => write!(
                s,
                "{:.6},{:.6},{:.6},{:.6},{},{},{},",
                m.psnr, m.ssim, m.t_error, m.cr, m.events_in, m.events_kept, m.gamma_bits
            )
            .unwrap(),
            None => s.push_str(",,,,,,,"),
        }
        s.push_str(&csv_field(&r.status));
        s.push('\n');
    }
    s
}

/// Writes `sweep.csv` plus per-sequence CR and PSNR charts into `dir`.
pub fn write_outputs(rows: &[SweepRow], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep.csv"), rows_to_csv(rows))?;
    let mut sequences: Vec<&str> = rows.iter().map(|r| r.sequence.as_str()).collect();
    sequences.dedup();
    for seq in sequences {
        let seq_rows: Vec<&SweepRow> = rows.iter().filter(|r| r.sequence == seq).collect();
        let axis = seq_rows.first().map(|r| r.axis.clone()).unwrap_or_default();
        let mut methods: Vec<&str> = seq_rows.iter().map(|r| r.method.as_str()).collect();
        methods.dedup();
        let series = |f: fn(&SequenceSummary) -> f64| -> Vec<Series> {
            methods
                .iter()
                .map(|m| Series {
                    label: m.to_string(),
                    points: seq_rows
                        .iter()
                        .filter(|r| r.method == *m)
                        .map(|r| (r.value, r.summary.as_ref().map(f).unwrap_or(f64::NAN)))
                        .collect(),
                })
                .collect()
        };
        let stem: String = seq.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        fs::write(
            dir.join(format!("{stem}_cr.svg")),
            line_chart_svg(&format!("{seq}: CR vs {axis}"), &axis, "CR", &series(|m| m.cr)),
        )?;
        fs::write(
            dir.join(format!("{stem}_psnr.svg")),
            line_chart_svg(&format!("{seq}: PSNR vs {axis}"), &axis, "PSNR (dB)", &series(|m| m.psnr)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn seqs() -> Vec<(String, Dataset)> {
        let d = generate(&SynthConfig {
            width: 32,
            height: 32,
            frames: 3,
            substeps: 8,
            ..Default::default()
        })
        .unwrap();
        vec![("tiny".to_string(), Dataset::from_synth(&d).unwrap())]
    }

    #[test]
    fn parses_methods_and_axes() {
        assert_eq!("r4".parse::<SweepAxis>().unwrap(), SweepAxis::R4);
        assert!("foo".parse::<SweepAxis>().is_err());
        let m: SweepMethod = "pds-lec:2".parse().unwrap();
        assert_eq!(m.r4, Some(2.0));
        assert_eq!(m.label(), "pds-lec(r4=2)");
        let r: SweepMethod = "random".parse().unwrap();
        assert_eq!(r.label(), "random(50%)");
        assert!("random:x".parse::<SweepMethod>().is_err());
    }

    #[test]
    fn failed_rows_do_not_abort() {
        let spec = SweepSpec {
            axis: SweepAxis::RMax,
            values: vec![1.0, 200.0],
            base: EncoderConfig {
                t_bin: 2,
                ..Default::default()
            },
            methods: vec!["pds-lec".parse().unwrap()],
            seed: 1,
        };
        let rows = run_sweep(&seqs(), &spec, Some(1)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].status.starts_with("error"));
        assert_eq!(rows[1].status, "ok");
        let csv = rows_to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        for l in &lines[1..] {
            assert!(l.starts_with("tiny,pds-lec,rmax,"));
        }
        assert!(lines[2].contains(",200.000000,"));
    }

    #[test]
    fn bin_ms_maps_to_bins() {
        let s = seqs();
        // 40 ms between frames
        assert_eq!(bins_for_ms(&s[0].1, 5.0), 8);
        assert_eq!(bins_for_ms(&s[0].1, 40.0), 1);
        assert_eq!(bins_for_ms(&s[0].1, 100.0), 1);
    }

    #[test]
    fn writes_csv_and_charts() {
        let dir = std::env::temp_dir().join(format!("evlec-sweep-{}", std::process::id()));
        let spec = SweepSpec {
            axis: SweepAxis::TBin,
            values: vec![2.0, 4.0],
            base: EncoderConfig::default(),
            methods: vec!["temporal-only".parse().unwrap(), "random".parse().unwrap()],
            seed: 3,
        };
        let rows = run_sweep(&seqs(), &spec, None).unwrap();
        write_outputs(&rows, &dir).unwrap();
        assert!(dir.join("sweep.csv").exists());
        assert!(dir.join("tiny_cr.svg").exists());
        assert!(dir.join("tiny_psnr.svg").exists());
        fs::remove_dir_all(&dir).unwrap();
    }
}
