//! Named parameter sets and the flat `key = value` configuration format.
//!
//! A config file may start from a preset (`preset = cfear-3`) and override
//! individual keys; `#` starts a comment. [`format_config`] writes every key,
//! so its output parses back to the identical configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::filtering::{CaCfarConfig, FilterConfig, KStrongestConfig};
use crate::odometry::OdometryConfig;
use crate::registration::{CostKind, LossKind, RegistrationConfig, WeightScheme};

pub const PRESET_NAMES: [&str; 5] = ["cfear-1", "cfear-2", "cfear-3", "cfear-3-s50", "baseline"];

fn cfear(k: usize, z_min: f64, r: f64, s: usize, cost: CostKind, loss: LossKind) -> OdometryConfig {
    OdometryConfig {
        filter: FilterConfig::KStrongest(KStrongestConfig { k, z_min }),
        feature: FeatureConfig {
            resolution_r: r,
            resample_f: 1.0,
            intensity_weighted: true,
            min_support: 6,
            max_condition: 1e5,
            min_sensor_dist: 2.5,
            z_min,
        },
        registration: RegistrationConfig {
            cost,
            loss,
            loss_delta: 0.1,
            assoc_radius: r,
            normal_tolerance: 30f64.to_radians(),
            weight_scheme: WeightScheme::Combined,
            ..RegistrationConfig::default()
        },
        keyframe_count_s: s,
        keyframe_min_dist: 1.5,
        keyframe_min_rot: 5f64.to_radians(),
        motion_compensation: true,
    }
}

pub fn preset(name: &str) -> Result<OdometryConfig> {
    use CostKind::{P2L, P2P};
    use LossKind::{Cauchy, Huber};
    Ok(match name {
        "cfear-1" => cfear(12, 70.0, 3.5, 1, P2L, Huber),
        "cfear-2" => cfear(12, 70.0, 3.5, 3, P2L, Huber),
        "cfear-3" => cfear(40, 60.0, 3.0, 4, P2P, Huber),
        "cfear-3-s50" => cfear(40, 60.0, 3.0, 50, P2P, Cauchy),
        "baseline" => cfear(40, 60.0, 3.0, 1, P2P, Huber),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

pub fn format_config(cfg: &OdometryConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    match &cfg.filter {
        FilterConfig::KStrongest(f) => {
            kv("filter", "k-strongest".into());
            kv("k", f.k.to_string());
            kv("z_min", f.z_min.to_string());
        }
        FilterConfig::CaCfar(f) => {
            kv("filter", "ca-cfar".into());
            kv("cfar_window", f.window.to_string());
            kv("cfar_guard", f.guard.to_string());
            kv("cfar_false_alarm_rate", f.false_alarm_rate.to_string());
            kv("cfar_z_floor", f.z_floor.to_string());
        }
    }
    let f = &cfg.feature;
    kv("resample_f", f.resample_f.to_string());
    kv("resolution_r", f.resolution_r.to_string());
    kv("intensity_weighted", f.intensity_weighted.to_string());
    kv("weight_z_min", f.z_min.to_string());
    kv("min_support", f.min_support.to_string());
    kv("max_condition", f.max_condition.to_string());
    kv("d_min", f.min_sensor_dist.to_string());
    let r = &cfg.registration;
    kv("cost", r.cost.to_string());
    kv("loss", r.loss.to_string());
    kv("loss_delta", r.loss_delta.to_string());
    kv("assoc_radius", r.assoc_radius.to_string());
    kv("theta_max_rad", r.normal_tolerance.to_string());
    kv("residual_weight", r.weight_scheme.to_string());
    kv("covariance_dampening", r.covariance_dampening.to_string());
    kv("max_iterations", r.max_iterations.to_string());
    kv("rel_decrease_eps", r.rel_decrease_eps.to_string());
    kv("max_inner_iterations", r.max_inner_iterations.to_string());
    kv("submap_keyframes_s", cfg.keyframe_count_s.to_string());
    kv("keyframe_dist", cfg.keyframe_min_dist.to_string());
    kv("keyframe_rot_rad", cfg.keyframe_min_rot.to_string());
    kv("motion_compensation", cfg.motion_compensation.to_string());
    out
}

/// Parses a config file; keys not given keep the value of `preset` (cfear-3 when absent).
pub fn parse_config(text: &str, origin: &str) -> Result<OdometryConfig> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.into(),
            line: i + 1,
            message: format!("expected 'key = value', found '{line}'"),
        })?;
        entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }

    let base = entries
        .iter()
        .find(|(_, k, _)| k == "preset")
        .map(|(_, _, v)| v.as_str())
        .unwrap_or("cfear-3");
    let mut cfg = preset(base)?;
    let mut kstrong = match cfg.filter {
        FilterConfig::KStrongest(k) => k,
        FilterConfig::CaCfar(_) => KStrongestConfig { k: 40, z_min: 60.0 },
    };
    let mut cfar = CaCfarConfig { window: 16, guard: 2, false_alarm_rate: 1e-3, z_floor: 60.0 };
    let mut use_cfar = matches!(cfg.filter, FilterConfig::CaCfar(_));

    for (line, key, value) in &entries {
        let err = |message: String| Error::Parse { path: origin.into(), line: *line, message };
        macro_rules! num {
            () => {
                value.parse().map_err(|e| err(format!("{key}: '{value}': {e}")))?
            };
        }
        let boolean = || match value.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(err(format!("{key}: expected true or false, found '{value}'"))),
        };
        match key.as_str() {
            "preset" => {}
            "filter" => {
                use_cfar = match value.as_str() {
                    "k-strongest" => false,
                    "ca-cfar" => true,
                    _ => return Err(err(format!("unknown filter '{value}'"))),
                }
            }
            "k" => kstrong.k = num!(),
            "z_min" => kstrong.z_min = num!(),
            "cfar_window" => cfar.window = num!(),
            "cfar_guard" => cfar.guard = num!(),
            "cfar_false_alarm_rate" => cfar.false_alarm_rate = num!(),
            "cfar_z_floor" => cfar.z_floor = num!(),
            "resample_f" => cfg.feature.resample_f = num!(),
            "resolution_r" => cfg.feature.resolution_r = num!(),
            "intensity_weighted" => cfg.feature.intensity_weighted = boolean()?,
            "weight_z_min" => cfg.feature.z_min = num!(),
            "min_support" => cfg.feature.min_support = num!(),
            "max_condition" => cfg.feature.max_condition = num!(),
            "d_min" => cfg.feature.min_sensor_dist = num!(),
            "cost" => cfg.registration.cost = value.parse().map_err(|e: Error| err(e.to_string()))?,
            "loss" => cfg.registration.loss = value.parse().map_err(|e: Error| err(e.to_string()))?,
            "loss_delta" => cfg.registration.loss_delta = num!(),
            "assoc_radius" => cfg.registration.assoc_radius = num!(),
            "theta_max_rad" => cfg.registration.normal_tolerance = num!(),
            "theta_max_deg" => cfg.registration.normal_tolerance = f64::to_radians(num!()),
            "residual_weight" => {
                cfg.registration.weight_scheme = value.parse().map_err(|e: Error| err(e.to_string()))?
            }
            "covariance_dampening" => cfg.registration.covariance_dampening = num!(),
            "max_iterations" => cfg.registration.max_iterations = num!(),
            "rel_decrease_eps" => cfg.registration.rel_decrease_eps = num!(),
            "max_inner_iterations" => cfg.registration.max_inner_iterations = num!(),
            "submap_keyframes_s" => cfg.keyframe_count_s = num!(),
            "keyframe_dist" => cfg.keyframe_min_dist = num!(),
            "keyframe_rot_rad" => cfg.keyframe_min_rot = num!(),
            "keyframe_rot_deg" => cfg.keyframe_min_rot = f64::to_radians(num!()),
            "motion_compensation" => cfg.motion_compensation = boolean()?,
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
    }
    cfg.filter = if use_cfar {
        FilterConfig::CaCfar(cfar)
    } else {
        FilterConfig::KStrongest(kstrong)
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<OdometryConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let c1 = preset("cfear-1").unwrap();
        assert_eq!(c1.filter, FilterConfig::KStrongest(KStrongestConfig { k: 12, z_min: 70.0 }));
        assert_eq!(c1.feature.resolution_r, 3.5);
        assert_eq!(c1.feature.resample_f, 1.0);
        assert_eq!(c1.feature.min_sensor_dist, 2.5);
        assert_eq!(c1.registration.cost, CostKind::P2L);
        assert_eq!(c1.registration.loss, LossKind::Huber);
        assert_eq!(c1.registration.loss_delta, 0.1);
        assert_eq!(c1.registration.weight_scheme, WeightScheme::Combined);
        assert!((c1.registration.normal_tolerance.to_degrees() - 30.0).abs() < 1e-12);
        assert_eq!(c1.keyframe_count_s, 1);
        assert_eq!(c1.keyframe_min_dist, 1.5);
        assert!((c1.keyframe_min_rot.to_degrees() - 5.0).abs() < 1e-12);

        assert_eq!(preset("cfear-2").unwrap(), OdometryConfig { keyframe_count_s: 3, ..c1 });

        let c3 = preset("cfear-3").unwrap();
        assert_eq!(c3.filter, FilterConfig::KStrongest(KStrongestConfig { k: 40, z_min: 60.0 }));
        assert_eq!(c3.feature.resolution_r, 3.0);
        assert_eq!(c3.registration.cost, CostKind::P2P);
        assert_eq!(c3.keyframe_count_s, 4);

        let s50 = preset("cfear-3-s50").unwrap();
        assert_eq!(s50.keyframe_count_s, 50);
        assert_eq!(s50.registration.loss, LossKind::Cauchy);
        assert_eq!(preset("baseline").unwrap(), OdometryConfig { keyframe_count_s: 1, ..c3 });
        assert!(preset("cfear-9").is_err());
    }

    #[test]
    fn presets_round_trip() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let text = format_config(&cfg);
            assert_eq!(parse_config(&text, "x").unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn cfar_round_trip_and_overrides() {
        let text = "preset = cfear-1\nfilter = ca-cfar\ncfar_window = 20\ncfar_false_alarm_rate = 0.01 # loose\n";
        let cfg = parse_config(text, "x").unwrap();
        assert!(matches!(cfg.filter, FilterConfig::CaCfar(CaCfarConfig { window: 20, .. })));
        assert_eq!(cfg.registration.cost, CostKind::P2L);
        assert_eq!(parse_config(&format_config(&cfg), "x").unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse_config("k = 3\nbogus = 1\n", "f"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("\nk = three\n", "f"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("no equals sign\n", "f"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("loss = l1\n", "f"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_config("submap_keyframes_s = 0\n", "f").is_err());
        assert!(parse_config("preset = nope\n", "f").is_err());
    }
}
