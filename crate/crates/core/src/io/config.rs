//! TOML run configuration with named presets.
//!
//! A file has an optional top-level `preset` key and the sections
//! `[ensemble]`, `[drive]` and `[sweep]`. Keys given in the file override
//! the preset; unknown keys are rejected. The resolved configuration is
//! written back with every field spelled out, and parsing that output
//! yields the same configuration.

use std::f64::consts::{FRAC_PI_4, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleParams, DEFAULT_N_DIS};
use crate::error::{Error, Result};
use crate::experiments::{SweepAxis, SweepSpec};
use crate::floquet::{AcQuadrature, DriveConfig, DEFAULT_SUBSTEPS};
use crate::hilbert::{Boundary, DEFAULT_MAX_SPINS};

pub const PRESETS: &[&str] = &[
    "dtc-fig2",
    "dtc-fig2-omega",
    "ergodic-fig3",
    "dtc-fig4",
    "ideal",
];

/// Sweep settings as written in the `[sweep]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub record_times: Vec<usize>,
}

/// A fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub ensemble: EnsembleParams,
    pub drive: DriveConfig,
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("configuration has no [sweep] section".into()))?;
        let spec = SweepSpec {
            axis: sweep.axis,
            values: sweep.values.clone(),
            params: self.ensemble.clone(),
            drive: self.drive.clone(),
            record_times: sweep.record_times.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        self.drive.validate()?;
        if self.sweep.is_some() {
            self.sweep_spec()?;
        }
        Ok(())
    }

    /// TOML text with every field present.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&RawConfig::from(self))
            .map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }
}

/// Seeds are 64-bit unsigned, which TOML integers cannot always hold; larger
/// values are written as strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SeedValue {
    Int(i64),
    Text(String),
}

impl SeedValue {
    fn from_u64(seed: u64) -> Self {
        i64::try_from(seed)
            .map(SeedValue::Int)
            .unwrap_or_else(|_| SeedValue::Text(seed.to_string()))
    }

    fn to_u64(&self) -> Result<u64> {
        match self {
            SeedValue::Int(v) => u64::try_from(*v)
                .map_err(|_| Error::Config(format!("ensemble.master_seed {v} is negative"))),
            SeedValue::Text(s) => {
                let parsed = match s.strip_prefix("0x") {
                    Some(hex) => u64::from_str_radix(hex, 16),
                    None => s.parse(),
                };
                parsed.map_err(|_| {
                    Error::Config(format!("ensemble.master_seed {s:?} is not a 64-bit unsigned integer"))
                })
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    n_spins: Option<usize>,
    n_dis: Option<usize>,
    j_amp: Option<f64>,
    w_z: Option<f64>,
    w_x: Option<f64>,
    master_seed: Option<SeedValue>,
    theta_max: Option<f64>,
    boundary: Option<Boundary>,
    max_spins: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrive {
    period: Option<f64>,
    phi_kick: Option<f64>,
    h_ac: Option<f64>,
    omega_ac: Option<f64>,
    theta_ac: Option<f64>,
    n_periods: Option<usize>,
    substeps: Option<usize>,
    quadrature: Option<AcQuadrature>,
    record_site_z: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: Option<SweepAxis>,
    values: Option<Vec<f64>>,
    record_times: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    #[serde(default)]
    ensemble: RawEnsemble,
    #[serde(default)]
    drive: RawDrive,
    sweep: Option<RawSweep>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),+) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )+
    };
}

impl RawConfig {
    fn overlay(&mut self, top: &RawConfig) {
        overlay!(self.ensemble, top.ensemble; n_spins, n_dis, j_amp, w_z, w_x, master_seed, theta_max, boundary, max_spins);
        overlay!(self.drive, top.drive; period, phi_kick, h_ac, omega_ac, theta_ac, n_periods, substeps, quadrature, record_site_z);
        match (&mut self.sweep, &top.sweep) {
            (Some(base), Some(s)) => {
                overlay!(base, s; axis, values, record_times);
            }
            (None, Some(s)) => self.sweep = Some(s.clone()),
            _ => {}
        }
        if top.preset.is_some() {
            self.preset = top.preset.clone();
        }
    }

    fn resolve(self) -> Result<RunConfig> {
        let mut missing = Vec::new();
        let e = &self.ensemble;
        let d = &self.drive;
        let mut need = |present: bool, name: &str| {
            if !present {
                missing.push(name.to_string());
            }
        };
        need(e.n_spins.is_some(), "ensemble.n_spins");
        need(e.n_dis.is_some(), "ensemble.n_dis");
        need(e.j_amp.is_some(), "ensemble.j_amp");
        need(e.w_z.is_some(), "ensemble.w_z");
        need(e.w_x.is_some(), "ensemble.w_x");
        need(e.master_seed.is_some(), "ensemble.master_seed");
        need(d.period.is_some(), "drive.period");
        need(d.phi_kick.is_some(), "drive.phi_kick");
        need(d.omega_ac.is_some(), "drive.omega_ac");
        need(d.n_periods.is_some(), "drive.n_periods");
        if let Some(s) = &self.sweep {
            need(s.axis.is_some(), "sweep.axis");
            need(s.values.is_some(), "sweep.values");
        }
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing required fields: {}",
                missing.join(", ")
            )));
        }

        let defaults = DriveConfig::default();
        let config = RunConfig {
            preset: self.preset,
            ensemble: EnsembleParams {
                n_spins: e.n_spins.unwrap(),
                n_dis: e.n_dis.unwrap(),
                j_amp: e.j_amp.unwrap(),
                w_z: e.w_z.unwrap(),
                w_x: e.w_x.unwrap(),
                master_seed: e.master_seed.as_ref().unwrap().to_u64()?,
                theta_max: e.theta_max.unwrap_or(FRAC_PI_4),
                boundary: e.boundary.unwrap_or_default(),
                max_spins: e.max_spins.unwrap_or(DEFAULT_MAX_SPINS),
            },
            drive: DriveConfig {
                period: d.period.unwrap(),
                phi_kick: d.phi_kick.unwrap(),
                h_ac: d.h_ac.unwrap_or(defaults.h_ac),
                omega_ac: d.omega_ac.unwrap(),
                theta_ac: d.theta_ac.unwrap_or(defaults.theta_ac),
                n_periods: d.n_periods.unwrap(),
                substeps: d.substeps.unwrap_or(DEFAULT_SUBSTEPS),
                quadrature: d.quadrature.unwrap_or_default(),
                record_site_z: d.record_site_z.unwrap_or(false),
            },
            sweep: self.sweep.map(|s| SweepSection {
                axis: s.axis.unwrap(),
                values: s.values.unwrap(),
                record_times: s.record_times.unwrap_or_default(),
            }),
        };
        config.validate()?;
        Ok(config)
    }
}

impl From<&RunConfig> for RawConfig {
    fn from(c: &RunConfig) -> Self {
        let e = &c.ensemble;
        let d = &c.drive;
        RawConfig {
            preset: c.preset.clone(),
            ensemble: RawEnsemble {
                n_spins: Some(e.n_spins),
                n_dis: Some(e.n_dis),
                j_amp: Some(e.j_amp),
                w_z: Some(e.w_z),
                w_x: Some(e.w_x),
                master_seed: Some(SeedValue::from_u64(e.master_seed)),
                theta_max: Some(e.theta_max),
                boundary: Some(e.boundary),
                max_spins: Some(e.max_spins),
            },
            drive: RawDrive {
                period: Some(d.period),
                phi_kick: Some(d.phi_kick),
                h_ac: Some(d.h_ac),
                omega_ac: Some(d.omega_ac),
                theta_ac: Some(d.theta_ac),
                n_periods: Some(d.n_periods),
                substeps: Some(d.substeps),
                quadrature: Some(d.quadrature),
                record_site_z: Some(d.record_site_z),
            },
            sweep: c.sweep.as_ref().map(|s| RawSweep {
                axis: Some(s.axis),
                values: Some(s.values.clone()),
                record_times: Some(s.record_times.clone()),
            }),
        }
    }
}

fn preset_raw(name: &str) -> Result<RawConfig> {
    let dtc = || RawConfig {
        preset: Some(name.to_string()),
        ensemble: RawEnsemble {
            n_spins: Some(4),
            n_dis: Some(DEFAULT_N_DIS),
            j_amp: Some(1.0),
            w_z: Some(1.0),
            w_x: Some(0.1),
            master_seed: Some(SeedValue::Int(0)),
            ..Default::default()
        },
        drive: RawDrive {
            period: Some(1.0),
            phi_kick: Some(3.08),
            h_ac: Some(0.0),
            omega_ac: Some(PI),
            theta_ac: Some(0.0),
            n_periods: Some(100),
            ..Default::default()
        },
        sweep: None,
    };
    let mut raw = dtc();
    match name {
        "dtc-fig2" => {}
        "dtc-fig2-omega" => {
            raw.drive.n_periods = Some(120);
            raw.sweep = Some(RawSweep {
                axis: Some(SweepAxis::OmegaAc),
                values: Some((-10..=10).map(|k| PI * (1.0 + 0.01 * k as f64)).collect()),
                record_times: Some(vec![20, 60, 120]),
            });
        }
        "ergodic-fig3" => raw.drive.phi_kick = Some(2.6),
        "dtc-fig4" => {
            raw.drive.h_ac = Some(0.1);
            raw.drive.n_periods = Some(1000);
        }
        "ideal" => {
            raw.ensemble.w_x = Some(0.0);
            raw.drive.phi_kick = Some(PI);
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(raw)
}

/// Fully resolved preset.
pub fn preset(name: &str) -> Result<RunConfig> {
    preset_raw(name)?.resolve()
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses configuration text. `preset_override` stands in for (and replaces)
/// a `preset` key in the file.
pub fn parse_config_str(
    text: &str,
    source_name: &str,
    preset_override: Option<&str>,
) -> Result<RunConfig> {
    let file: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        source_name: source_name.to_string(),
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let preset_name = preset_override.map(str::to_string).or(file.preset.clone());
    let mut raw = match &preset_name {
        Some(name) => preset_raw(name)?,
        None => RawConfig::default(),
    };
    raw.overlay(&file);
    raw.preset = preset_name;
    raw.resolve()
}

pub fn parse_config(path: &Path, preset_override: Option<&str>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, &path.display().to_string(), preset_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtc_preset_values() {
        let c = preset("dtc-fig2").unwrap();
        assert_eq!(c.ensemble.w_x, 0.1);
        assert_eq!(c.ensemble.w_z, 1.0);
        assert_eq!(c.ensemble.j_amp, 1.0);
        assert_eq!(c.drive.theta_ac, 0.0);
        assert_eq!(c.drive.phi_kick, 3.08);
        assert_eq!(c.drive.period, 1.0);
        assert_eq!(c.drive.omega_ac, PI);
        assert!(c.sweep.is_none());
    }

    #[test]
    fn ergodic_preset_differs_only_in_kick() {
        let mut e = preset("ergodic-fig3").unwrap();
        assert_eq!(e.drive.phi_kick, 2.6);
        let d = preset("dtc-fig2").unwrap();
        e.drive.phi_kick = d.drive.phi_kick;
        e.preset = d.preset.clone();
        assert_eq!(e, d);
    }

    #[test]
    fn every_preset_resolves_and_round_trips() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            let text = c.to_toml().unwrap();
            assert_eq!(parse_config_str(&text, "snapshot", None).unwrap(), c, "{name}");
        }
        let sweep = preset("dtc-fig2-omega").unwrap().sweep_spec().unwrap();
        assert_eq!(sweep.values.len(), 21);
        assert!(sweep.values.contains(&PI));
    }

    #[test]
    fn empty_file_lists_required_fields() {
        let err = parse_config_str("", "empty.toml", None).unwrap_err();
        let msg = err.to_string();
        for field in ["ensemble.n_spins", "ensemble.master_seed", "drive.phi_kick", "drive.n_periods"] {
            assert!(msg.contains(field), "{msg}");
        }
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn file_overrides_preset() {
        let text = "preset = \"dtc-fig2\"\n[ensemble]\nn_spins = 6\n[drive]\nh_ac = 0.05\n";
        let c = parse_config_str(text, "t", None).unwrap();
        assert_eq!(c.ensemble.n_spins, 6);
        assert_eq!(c.drive.h_ac, 0.05);
        assert_eq!(c.drive.phi_kick, 3.08);
        let c = parse_config_str(text, "t", Some("ergodic-fig3")).unwrap();
        assert_eq!(c.drive.phi_kick, 2.6);
        assert_eq!(c.preset.as_deref(), Some("ergodic-fig3"));
    }

    #[test]
    fn unknown_keys_and_bad_syntax_report_lines() {
        let text = "preset = \"dtc-fig2\"\n[drive]\nphi_kik = 3.0\n";
        match parse_config_str(text, "typo.toml", None).unwrap_err() {
            Error::Parse { line, message, source_name } => {
                assert_eq!(line, Some(3));
                assert!(message.contains("phi_kik"), "{message}");
                assert_eq!(source_name, "typo.toml");
            }
            other => panic!("{other}"),
        }
        assert!(matches!(
            parse_config_str("[drive\n", "bad", None),
            Err(Error::Parse { line: Some(1), .. })
        ));
        assert!(matches!(parse_config_str("preset = \"nope\"", "x", None), Err(Error::Config(_))));
    }

    #[test]
    fn validation_names_the_invariant() {
        let text = "preset = \"dtc-fig2\"\n[ensemble]\nn_dis = 0\n";
        let msg = parse_config_str(text, "t", None).unwrap_err().to_string();
        assert!(msg.contains("n_dis"), "{msg}");
        let text = "preset = \"dtc-fig2\"\n[sweep]\naxis = \"h_ac\"\nvalues = []\n";
        assert!(matches!(parse_config_str(text, "t", None), Err(Error::Config(_))));
        let text = "preset = \"dtc-fig2\"\n[ensemble]\nn_spins = 20\n";
        assert!(matches!(parse_config_str(text, "t", None), Err(Error::Capacity { .. })));
    }

    #[test]
    fn large_seeds_round_trip() {
        let mut c = preset("dtc-fig2").unwrap();
        c.ensemble.master_seed = u64::MAX;
        let text = c.to_toml().unwrap();
        assert_eq!(parse_config_str(&text, "s", None).unwrap(), c);
        let hex = "preset = \"dtc-fig2\"\n[ensemble]\nmaster_seed = \"0xff\"\n";
        assert_eq!(parse_config_str(hex, "s", None).unwrap().ensemble.master_seed, 255);
        let neg = "preset = \"dtc-fig2\"\n[ensemble]\nmaster_seed = -1\n";
        assert!(matches!(parse_config_str(neg, "s", None), Err(Error::Config(_))));
    }
}
