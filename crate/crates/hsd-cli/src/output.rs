//! Artifact writers: trajectory CSV, jump-log JSONL, and the run summary.
//! Numeric CSV fields use 17 significant digits so downstream comparisons
//! round-trip exactly; the summary isolates the timestamp in one field so
//! the rest is byte-comparable across reruns.

use anyhow::{Context, Result};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hsd_core::Trajectory;

/// Full-precision decimal form (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// `paths.csv` columns: `time,x_1..x_n,regime`.
pub fn write_paths_csv(dir: &Path, file_name: &str, traj: &Trajectory) -> Result<PathBuf> {
    let path = dir.join(file_name);
    let mut out = String::new();
    out.push_str("time");
    for k in 1..=traj.dim_n {
        out.push_str(&format!(",x_{k}"));
    }
    out.push_str(",regime\n");
    for (k, &t) in traj.times.iter().enumerate() {
        out.push_str(&fmt_f64(t));
        for v in traj.state_at(k) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push_str(&format!(",{}\n", traj.regimes[k].get()));
    }
    fs::write(&path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

/// `jumps.jsonl`: one `{"time": .., "from": .., "to": ..}` object per
/// realized jump.
pub fn write_jumps_jsonl(dir: &Path, file_name: &str, traj: &Trajectory) -> Result<PathBuf> {
    let path = dir.join(file_name);
    let mut f =
        fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    for ev in &traj.jumps {
        let line = serde_json::to_string(ev).expect("jump event serializes");
        writeln!(f, "{line}")?;
    }
    Ok(path)
}

/// Simple CSV table writer: header plus full-precision rows.
pub fn write_table_csv(
    dir: &Path,
    file_name: &str,
    header: &str,
    rows: &[Vec<f64>],
) -> Result<PathBuf> {
    let path = dir.join(file_name);
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(&path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedEstimate {
    pub name: String,
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub excluded: u64,
    pub seed: u64,
}

impl NamedEstimate {
    pub fn new(name: impl Into<String>, est: &hsd_core::McEstimate) -> Self {
        NamedEstimate {
            name: name.into(),
            mean: est.mean,
            se: est.se,
            n: est.n,
            excluded: est.excluded,
            seed: est.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedVerdict {
    pub name: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// The run summary. Every numeric result carries its seed, sample count,
/// and grid step; the timestamp is the last field and the only one that
/// differs between identically seeded reruns.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub model: String,
    pub engine_version: String,
    pub master_seed: u64,
    pub dt: f64,
    pub grid_dt: f64,
    pub horizon_t: f64,
    pub n: u64,
    pub workers: usize,
    pub estimates: Vec<NamedEstimate>,
    pub verdicts: Vec<NamedVerdict>,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<hsd_core::verify::VerificationReport>,
    pub timestamp_unix_s: u64,
}

impl Summary {
    pub fn new(command: &str, model: &str) -> Self {
        Summary {
            command: command.to_string(),
            model: model.to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: 0,
            dt: 0.0,
            grid_dt: 0.0,
            horizon_t: 0.0,
            n: 0,
            workers: rayon::current_num_threads(),
            estimates: Vec::new(),
            verdicts: Vec::new(),
            artifacts: Vec::new(),
            verification: None,
            timestamp_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
            && self.verification.as_ref().map(|r| r.all_passed).unwrap_or(true)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("summary.json");
        let json = serde_json::to_string_pretty(self).expect("summary serializes");
        fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
