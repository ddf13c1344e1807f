//! Passage batches on disk: one JSON metadata file plus one CSV waveform per
//! passage with columns `t_seconds,strain,accel`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::passage::{PassageSpec, WaysideRecording};
use crate::{Error, Result};

pub const BATCH_FILE: &str = "batch.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PassageMeta {
    pub id: usize,
    pub file: String,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    pub wheel_pass_times: Vec<f64>,
    pub spec: PassageSpec,
}

/// Three aligned columns read back from a waveform file.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub t_seconds: Vec<f64>,
    pub strain: Vec<f64>,
    pub accel: Vec<f64>,
}

impl Waveform {
    /// Sample rate implied by the time column.
    pub fn sample_rate_hz(&self) -> Result<f64> {
        if self.t_seconds.len() < 2 {
            return Err(Error::Format("waveform needs at least two samples".into()));
        }
        let span = self.t_seconds[self.t_seconds.len() - 1] - self.t_seconds[0];
        Ok((self.t_seconds.len() - 1) as f64 / span)
    }
}

pub fn write_waveform_csv(path: &Path, rec: &WaysideRecording) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_seconds", "strain", "accel"])?;
    for (i, (s, a)) in rec.strain.iter().zip(&rec.accel).enumerate() {
        let t = i as f64 / rec.sample_rate_hz;
        w.write_record([t.to_string(), s.to_string(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_waveform_csv(path: &Path) -> Result<Waveform> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_seconds", "strain", "accel"] {
        return Err(Error::Format(format!("unexpected waveform header {headers:?}")));
    }
    let mut wf = Waveform { t_seconds: Vec::new(), strain: Vec::new(), accel: Vec::new() };
    for row in r.records() {
        let row = row?;
        let parse = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| Error::Format(format!("bad number `{}`: {e}", &row[i])))
        };
        wf.t_seconds.push(parse(0)?);
        wf.strain.push(parse(1)?);
        wf.accel.push(parse(2)?);
    }
    Ok(wf)
}

/// Write a batch to `dir` and return the written file paths.
pub fn write_batch(dir: &Path, recordings: &[WaysideRecording]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut metas = Vec::with_capacity(recordings.len());
    let mut files = Vec::with_capacity(recordings.len() + 1);
    for (id, rec) in recordings.iter().enumerate() {
        let file = format!("passage_{id:04}.csv");
        let path = dir.join(&file);
        write_waveform_csv(&path, rec)?;
        files.push(path);
        metas.push(PassageMeta {
            id,
            file,
            sample_rate_hz: rec.sample_rate_hz,
            n_samples: rec.len(),
            wheel_pass_times: rec.wheel_pass_times.clone(),
            spec: rec.truth.clone(),
        });
    }
    let meta_path = dir.join(BATCH_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&metas)?)?;
    files.push(meta_path);
    Ok(files)
}

pub fn read_batch(dir: &Path) -> Result<Vec<WaysideRecording>> {
    let metas: Vec<PassageMeta> = serde_json::from_str(&fs::read_to_string(dir.join(BATCH_FILE))?)?;
    metas
        .into_iter()
        .map(|m| {
            let wf = read_waveform_csv(&dir.join(&m.file))?;
            if wf.strain.len() != m.n_samples {
                return Err(Error::Format(format!("{}: expected {} samples", m.file, m.n_samples)));
            }
            Ok(WaysideRecording {
                strain: wf.strain,
                accel: wf.accel,
                strain_secondary: None,
                sample_rate_hz: m.sample_rate_hz,
                truth: m.spec,
                wheel_pass_times: m.wheel_pass_times,
            })
        })
        .collect()
}

/// Parse a single-passage config (TOML) with keys `train_type`, `speed_kmh`,
/// `load_scheme`, `defects`, `seed`, `sample_rate_hz`, `snr_db`.
pub fn parse_passage_config(text: &str) -> Result<PassageSpec> {
    let spec: PassageSpec = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize_passage, LoadScheme, TrainKind};

    #[test]
    fn batch_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<_> = (0..2)
            .map(|i| synthesize_passage(&PassageSpec::new(TrainKind::Laagrss, 100.0, LoadScheme::Half, i)).unwrap())
            .collect();
        write_batch(dir.path(), &recs).unwrap();
        let back = read_batch(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.strain, b.strain);
            assert_eq!(a.accel, b.accel);
            assert_eq!(a.truth, b.truth);
        }
    }

    #[test]
    fn passage_config_parsing() {
        let text = r#"
train_type = "laagrss"
speed_kmh = 90.0
load_scheme = "unbalance2"
seed = 12
sample_rate_hz = 2000.0
snr_db = 25.0

[[defects]]
kind = "flat"
wagon_index = 2
wheel_position = { axle_in_wagon = 0, side = "left" }
flat_length_mm = 60.0
"#;
        let spec = parse_passage_config(text).unwrap();
        assert_eq!(spec.defects.len(), 1);
        assert_eq!(spec.snr_db, Some(25.0));
        assert!(parse_passage_config("train_type = \"alfa\"\nspeed_kmh = 90.0\nload_scheme = \"full\"\nseed = 1\nbogus = 3\n").is_err());
    }
}
