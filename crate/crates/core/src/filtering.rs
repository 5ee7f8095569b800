//! Reduction of a dense polar sweep to sparse detections.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::radar_io::{Detection, PolarScan};

/// Keep the `k` strongest returns above `z_min` in every azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KStrongestConfig {
    pub k: usize,
    pub z_min: f64,
}

impl KStrongestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k-strongest: k must be >= 1".into()));
        }
        if !(self.z_min >= 0.0) {
            return Err(Error::Config("k-strongest: z_min must be >= 0".into()));
        }
        Ok(())
    }
}

/// Cell-averaging CFAR along each azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaCfarConfig {
    /// Training cells per side.
    pub window: usize,
    /// Guard cells per side.
    pub guard: usize,
    pub false_alarm_rate: f64,
    /// Cells below this intensity are never detected.
    pub z_floor: f64,
}

impl CaCfarConfig {
    pub fn validate(&self, nr: usize) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("CA-CFAR: window must be >= 1".into()));
        }
        if !(self.false_alarm_rate > 0.0 && self.false_alarm_rate < 1.0) {
            return Err(Error::Config(format!(
                "CA-CFAR: false alarm rate {} outside (0, 1)",
                self.false_alarm_rate
            )));
        }
        let span = 2 * (self.window + self.guard) + 1;
        if span > nr {
            return Err(Error::Config(format!(
                "CA-CFAR: window span {span} exceeds {nr} range bins"
            )));
        }
        Ok(())
    }
}

/// Scale factor applied to the averaged noise of `n` training cells so that
/// exponentially distributed noise crosses the threshold with probability `pfa`.
pub fn cfar_threshold_factor(n: usize, pfa: f64) -> f64 {
    let n = n as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterConfig {
    KStrongest(KStrongestConfig),
    CaCfar(CaCfarConfig),
}

impl FilterConfig {
    pub fn apply(&self, scan: &PolarScan) -> Result<Vec<Detection>> {
        match self {
            FilterConfig::KStrongest(cfg) => {
                cfg.validate()?;
                Ok(k_strongest(scan, cfg))
            }
            FilterConfig::CaCfar(cfg) => ca_cfar(scan, cfg),
        }
    }

    /// Intensity offset used when weighting surface points.
    pub fn noise_level(&self) -> f64 {
        match self {
            FilterConfig::KStrongest(c) => c.z_min,
            FilterConfig::CaCfar(c) => c.z_floor,
        }
    }
}

/// Per azimuth, the `k` highest intensities strictly above `z_min`.
///
/// Output is ordered by azimuth, then by range bin. Among equal intensities
/// competing for the last slot the closer range bin wins.
pub fn k_strongest(scan: &PolarScan, cfg: &KStrongestConfig) -> Vec<Detection> {
    let rows: Vec<Vec<Detection>> = (0..scan.na)
        .into_par_iter()
        .map(|a| k_strongest_row(scan.row(a), cfg.k, cfg.z_min, a))
        .collect();
    rows.into_iter().flatten().collect()
}

fn k_strongest_row(row: &[u16], k: usize, z_min: f64, azimuth: usize) -> Vec<Detection> {
    // Kept sorted by descending intensity; equal intensities stay in scan order.
    let mut best: Vec<(u16, usize)> = Vec::with_capacity(k + 1);
    for (col, &z) in row.iter().enumerate() {
        if (z as f64) <= z_min {
            continue;
        }
        if best.len() == k && z <= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(v, _)| v >= z);
        best.insert(pos, (z, col));
        best.truncate(k);
    }
    best.sort_unstable_by_key(|&(_, col)| col);
    best.into_iter()
        .map(|(z, col)| Detection {
            azimuth,
            range_bin: col + 1,
            intensity: z as f64,
        })
        .collect()
}

/// Cell-averaging CFAR. The training window shrinks at the array ends.
pub fn ca_cfar(scan: &PolarScan, cfg: &CaCfarConfig) -> Result<Vec<Detection>> {
    cfg.validate(scan.nr)?;
    let rows: Vec<Vec<Detection>> = (0..scan.na)
        .into_par_iter()
        .map(|a| ca_cfar_row(scan.row(a), cfg, a))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn ca_cfar_row(row: &[u16], cfg: &CaCfarConfig, azimuth: usize) -> Vec<Detection> {
    let nr = row.len();
    let mut prefix = Vec::with_capacity(nr + 1);
    prefix.push(0.0f64);
    for &z in row {
        prefix.push(prefix.last().unwrap() + z as f64);
    }
    let sum = |lo: usize, hi: usize| prefix[hi] - prefix[lo];
    let reach = cfg.guard + cfg.window;

    let mut out = Vec::new();
    for (col, &z) in row.iter().enumerate() {
        let z = z as f64;
        if z < cfg.z_floor {
            continue;
        }
        let lead_lo = col.saturating_sub(reach);
        let lead_hi = col.saturating_sub(cfg.guard);
        let lag_lo = (col + cfg.guard + 1).min(nr);
        let lag_hi = (col + reach + 1).min(nr);
        let n = (lead_hi - lead_lo) + (lag_hi - lag_lo);
        if n == 0 {
            continue;
        }
        let mean = (sum(lead_lo, lead_hi) + sum(lag_lo, lag_hi)) / n as f64;
        if z > cfar_threshold_factor(n, cfg.false_alarm_rate) * mean {
            out.push(Detection {
                azimuth,
                range_bin: col + 1,
                intensity: z,
            });
        }
    }
    out
}
