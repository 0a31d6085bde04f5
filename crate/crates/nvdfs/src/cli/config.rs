//! Flat `section.key = value` configuration.
//!
//! Built-in defaults cover every key. A file overrides whole sections: once
//! it sets one key of a section it must set all of them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;
use crate::noise_models::{RfNoiseSpec, StorageTiming};
use crate::nv_model::{FieldConfig, HyperfineParams, NvSystem};
use crate::readout_model::{InitPopulations, ScenarioFlag};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigMap(BTreeMap<String, String>);

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn scenario_label(s: ScenarioFlag) -> &'static str {
    match s {
        ScenarioFlag::NoMemory => "no-memory",
        ScenarioFlag::ChargePreserving => "charge-preserving",
    }
}

impl ConfigMap {
    pub fn defaults() -> Self {
        Self::from_experiment(&ExperimentConfig::default())
    }

    pub fn from_experiment(c: &ExperimentConfig) -> Self {
        let s = &c.system;
        let entries: Vec<(&str, String)> = vec![
            ("system.b_z", s.field.b_z.to_string()),
            ("system.gamma_c13", s.field.gamma_c13.to_string()),
            ("system.a_par_1", s.spins[0].a_par.to_string()),
            ("system.a_perp_1", s.spins[0].a_perp.to_string()),
            ("system.a_par_2", s.spins[1].a_par.to_string()),
            ("system.a_perp_2", s.spins[1].a_perp.to_string()),
            ("system.t1_ms", s.t1_electron.to_string()),
            ("noise.field_jitter", c.field_jitter.to_string()),
            ("noise.field_sigma_g", c.field_sigma_g.to_string()),
            ("noise.t1", c.t1.to_string()),
            ("noise.rf_correlation_rate", c.rf.correlation_rate.to_string()),
            ("noise.rf_bandwidth", c.rf.bandwidth.to_string()),
            ("noise.rf_delta_omega", c.rf.delta_omega.to_string()),
            ("noise.rf_amplitude_scale", c.rf.amplitude_scale.to_string()),
            ("init.enabled", c.init_error.to_string()),
            ("init.p1", c.init.p1.to_string()),
            ("init.p2", c.init.p2.to_string()),
            ("init.p3", c.init.p3.to_string()),
            ("init.p4", c.init.p4.to_string()),
            ("init.scenario", scenario_label(c.scenario).to_string()),
            ("run.seed", c.seed.to_string()),
            ("run.shots", c.shots.to_string()),
            ("run.trajectories", c.trajectories.to_string()),
            ("storage.times_ms", fmt_list(&c.times_ms)),
            ("storage.dt_us", c.timing.dt_us.to_string()),
            ("storage.rf_guard_us", c.timing.rf_guard_us.to_string()),
            ("storage.shots", c.storage_shots.to_string()),
            ("odmr.pulse_ms", c.odmr_pulse_ms.to_string()),
            ("odmr.step_khz", c.odmr_step_khz.to_string()),
            ("odmr.span_khz", c.odmr_span_khz.to_string()),
            ("gates.repetitions", c.repetitions.to_string()),
        ];
        Self(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    /// Parses `text` over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base = Self::defaults();
        let mut given = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !base.0.contains_key(k) {
                return Err(Error::Config(format!("line {}: unknown key {k}", n + 1)));
            }
            if given.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        let sections: Vec<&str> = given.keys().filter_map(|k| k.split('.').next()).collect();
        let missing: Vec<String> = base
            .0
            .keys()
            .filter(|k| sections.contains(&k.split('.').next().unwrap()) && !given.contains_key(*k))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingKeys(missing));
        }
        base.0.extend(given);
        base.to_experiment()?;
        Ok(base)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        match self.0.get_mut(key) {
            Some(v) => {
                *v = value.into();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key}"))),
        }
    }

    /// Sorted `key = value` lines.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.0
    }

    fn num(&self, key: &str) -> Result<f64> {
        let v = self.get(key).unwrap();
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::Config(format!("{key}: not a number: {v:?}")))
    }

    fn int(&self, key: &str) -> Result<u64> {
        let v = self.get(key).unwrap();
        v.parse::<u64>()
            .map_err(|_| Error::Config(format!("{key}: not a nonnegative integer: {v:?}")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key).unwrap() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("{key}: not a boolean: {v:?}"))),
        }
    }

    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        let field = FieldConfig::new(self.num("system.b_z")?, self.num("system.gamma_c13")?).map_err(cfg_err)?;
        let s1 = HyperfineParams::new(self.num("system.a_par_1")?, self.num("system.a_perp_1")?, "spin1")
            .map_err(cfg_err)?;
        let s2 = HyperfineParams::new(self.num("system.a_par_2")?, self.num("system.a_perp_2")?, "spin2")
            .map_err(cfg_err)?;
        let system = NvSystem::new(field, [s1, s2], self.num("system.t1_ms")?).map_err(cfg_err)?;
        let init = InitPopulations::new(
            self.num("init.p1")?,
            self.num("init.p2")?,
            self.num("init.p3")?,
            self.num("init.p4")?,
        )
        .map_err(cfg_err)?;
        let scenario = match self.get("init.scenario").unwrap() {
            "no-memory" => ScenarioFlag::NoMemory,
            "charge-preserving" => ScenarioFlag::ChargePreserving,
            v => return Err(Error::Config(format!("init.scenario: {v:?}"))),
        };
        let times_ms = self
            .get("storage.times_ms")
            .unwrap()
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("storage.times_ms: bad entry {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = ExperimentConfig {
            system,
            field_jitter: self.flag("noise.field_jitter")?,
            field_sigma_g: self.num("noise.field_sigma_g")?,
            rf: RfNoiseSpec {
                correlation_rate: self.num("noise.rf_correlation_rate")?,
                bandwidth: self.num("noise.rf_bandwidth")?,
                delta_omega: self.num("noise.rf_delta_omega")?,
                amplitude_scale: self.num("noise.rf_amplitude_scale")?,
            },
            t1: self.flag("noise.t1")?,
            init_error: self.flag("init.enabled")?,
            init,
            scenario,
            shots: self.int("run.shots")?,
            storage_shots: self.int("storage.shots")?,
            trajectories: self.int("run.trajectories")? as usize,
            seed: self.int("run.seed")?,
            times_ms,
            timing: StorageTiming {
                dt_us: self.num("storage.dt_us")?,
                rf_guard_us: self.num("storage.rf_guard_us")?,
            },
            odmr_pulse_ms: self.num("odmr.pulse_ms")?,
            odmr_step_khz: self.num("odmr.step_khz")?,
            odmr_span_khz: self.num("odmr.span_khz")?,
            repetitions: self.int("gates.repetitions")? as u32,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let d = ConfigMap::defaults();
        assert_eq!(d.to_experiment().unwrap(), ExperimentConfig::default());
        let again = ConfigMap::parse(&d.canonical_text()).unwrap();
        assert_eq!(again, d);
        assert_eq!(again.hash(), d.hash());
        assert_eq!(d.hash().len(), 64);
    }

    #[test]
    fn partial_section_lists_missing_keys() {
        match ConfigMap::parse("system.b_z = 500\n") {
            Err(Error::MissingKeys(k)) => {
                assert!(k.contains(&"system.a_par_1".to_string()));
                assert!(!k.iter().any(|x| x.starts_with("noise.")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn whole_section_override() {
        let text = "# seed only\nrun.seed = 7\nrun.shots = 100\nrun.trajectories = 10\n";
        let c = ConfigMap::parse(text).unwrap().to_experiment().unwrap();
        assert_eq!((c.seed, c.shots, c.trajectories), (7, 100, 10));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ConfigMap::parse("bogus.key = 1").is_err());
        assert!(ConfigMap::parse("run.seed = x\nrun.shots = 1\nrun.trajectories = 1").is_err());
        assert!(ConfigMap::parse("no equals sign").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let mut a = ConfigMap::defaults();
        let h = a.hash();
        a.set("run.seed", "2").unwrap();
        assert_ne!(a.hash(), h);
    }
}
