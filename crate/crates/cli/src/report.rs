//! CSV and log writers.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use f3dgs::fed::RoundRecord;
use f3dgs::metrics::EvalReport;

pub const METRICS_HEADER: &str = "round,client,scope,psnr,ssim,n_images";
pub const ABLATION_HEADER: &str =
    "rounds,local_steps,local_psnr,local_ssim,global_psnr,global_ssim";

fn row(out: &mut String, round: u32, r: &EvalReport) {
    let client = r
        .client
        .map_or_else(|| "all".to_string(), |c| c.to_string());
    writeln!(
        out,
        "{round},{client},{},{:.6},{:.6},{}",
        r.scope, r.psnr, r.ssim, r.n_images
    )
    .unwrap();
}

/// Per-client local and global rows, then the sequence-level pair, per round.
pub fn metrics_csv(history: &[RoundRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for rec in history {
        for r in rec.local.iter().chain(&rec.global_per_client) {
            row(&mut out, rec.round, r);
        }
        row(&mut out, rec.round, &rec.local_mean);
        row(&mut out, rec.round, &rec.global);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub rounds: usize,
    pub local_steps: usize,
    pub local: EvalReport,
    pub global: EvalReport,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.rounds, r.local_steps, r.local.psnr, r.local.ssim, r.global.psnr, r.global.ssim
        )
        .unwrap();
    }
    out
}

/// Append-only run log; the only output that carries wall-clock time.
pub struct RunLog {
    path: PathBuf,
}

impl RunLog {
    pub fn create(dir: &Path) -> Result<Self> {
        let path = dir.join("log.txt");
        std::fs::write(&path, "").with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path })
    }

    pub fn line(&self, msg: impl AsRef<str>) -> Result<()> {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default();
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .with_context(|| format!("opening {}", self.path.display()))?;
        writeln!(
            f,
            "[{}.{:03}] {}",
            now.as_secs(),
            now.subsec_millis(),
            msg.as_ref()
        )
        .with_context(|| format!("writing {}", self.path.display()))
    }
}
