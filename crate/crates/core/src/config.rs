//! Run configuration: one TOML file holding every module's settings.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::demo::DemoKind;
use crate::descent::DescentConfig;
use crate::env::EnvConfig;
use crate::error::IoError;
use crate::eval::SweepLayout;
use crate::learn::SacConfig;
use crate::reward::{FrozenInputs, GridSpec};

/// Agent variants by the demonstration sets they draw on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AgentSpec {
    #[serde(rename = "sac")]
    Sac,
    #[default]
    #[serde(rename = "sacfd-a")]
    SacfdA,
    #[serde(rename = "sacfd-a-am")]
    SacfdAAm,
    #[serde(rename = "sacfd-a-am-f")]
    SacfdAAmF,
}

impl AgentSpec {
    pub const ALL: [AgentSpec; 4] = [AgentSpec::Sac, AgentSpec::SacfdA, AgentSpec::SacfdAAm, AgentSpec::SacfdAAmF];

    pub fn name(self) -> &'static str {
        match self {
            AgentSpec::Sac => "sac",
            AgentSpec::SacfdA => "sacfd-a",
            AgentSpec::SacfdAAm => "sacfd-a-am",
            AgentSpec::SacfdAAmF => "sacfd-a-am-f",
        }
    }

    pub fn demo_kinds(self) -> &'static [DemoKind] {
        match self {
            AgentSpec::Sac => &[],
            AgentSpec::SacfdA => &[DemoKind::A],
            AgentSpec::SacfdAAm => &[DemoKind::A, DemoKind::AMinus],
            AgentSpec::SacfdAAmF => &[DemoKind::A, DemoKind::AMinus, DemoKind::F],
        }
    }
}

impl AgentSpec {
    /// Checks that the loaded demonstration labels are exactly the sets
    /// this agent draws on.
    pub fn check_demos(self, labels: &[DemoKind]) -> Result<(), String> {
        let wanted = self.demo_kinds();
        if let Some(bad) = labels.iter().find(|l| !wanted.contains(l)) {
            return Err(format!("agent {self} does not use demonstration set {bad}"));
        }
        if let Some(missing) = wanted.iter().find(|k| !labels.contains(k)) {
            return Err(format!("agent {self} needs demonstration set {missing}"));
        }
        Ok(())
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown agent '{s}' (expected sac, sacfd-a, sacfd-a-am or sacfd-a-am-f)"))
    }
}

/// Demonstration counts per set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoCounts {
    pub a: usize,
    pub a_minus: usize,
    pub f: usize,
}

impl Default for DemoCounts {
    fn default() -> Self {
        Self { a: 2, a_minus: 3, f: 3 }
    }
}

impl DemoCounts {
    pub fn of(&self, kind: DemoKind) -> usize {
        match kind {
            DemoKind::A => self.a,
            DemoKind::AMinus => self.a_minus,
            DemoKind::F => self.f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub total_steps: usize,
    pub sac: SacConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { total_steps: 200_000, sac: SacConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajSection {
    /// Acceleration limit [m/s²].
    pub a_max: f64,
    /// Required speed [m/s]; derived from the tether length when absent.
    pub v_req: Option<f64>,
    pub speed_margin: f64,
    pub control_period: f64,
}

impl Default for TrajSection {
    fn default() -> Self {
        Self { a_max: 40.0, v_req: None, speed_margin: 1.1, control_period: crate::traj::CONTROL_PERIOD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub layout: SweepLayout,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { layout: SweepLayout::Axes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    pub grid: GridSpec,
    pub frozen: FrozenInputs,
}

/// Descent simulation length [s].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentSection {
    pub max_time: f64,
    pub controller: DescentConfig,
}

impl Default for DescentSection {
    fn default() -> Self {
        Self { max_time: 12.0, controller: DescentConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentSpec,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub demos: DemoCounts,
    pub train: TrainSection,
    pub trajectory: TrajSection,
    pub sweep: SweepSection,
    pub heatmap: HeatmapSection,
    pub descent: DescentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentSpec::default(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            env: EnvConfig::default(),
            demos: DemoCounts::default(),
            train: TrainSection::default(),
            trajectory: TrajSection::default(),
            sweep: SweepSection::default(),
            heatmap: HeatmapSection::default(),
            descent: DescentSection::default(),
        }
    }
}

/// Invalid field, named by its dotted path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_else(|| "config".into());
            bad(&field, e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(&path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.to_toml()).map_err(|e| IoError::fs(path, e))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        self.env.validate().map_err(|e| bad("env", e.to_string()))?;
        self.train.sac.validate().map_err(|e| bad("train.sac", e.to_string()))?;
        if self.train.total_steps == 0 {
            return Err(bad("train.total_steps", "must be > 0"));
        }
        let t = &self.trajectory;
        if !(t.a_max > 0.0 && t.a_max.is_finite()) {
            return Err(bad("trajectory.a_max", "must be a positive finite acceleration"));
        }
        if let Some(v) = t.v_req {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad("trajectory.v_req", "must be a positive finite speed"));
            }
        }
        if !(t.speed_margin > 0.0) {
            return Err(bad("trajectory.speed_margin", "must be > 0"));
        }
        if !(t.control_period > 0.0) {
            return Err(bad("trajectory.control_period", "must be > 0"));
        }
        self.heatmap.grid.validate().map_err(|m| bad("heatmap.grid", m))?;
        self.descent.controller.validate().map_err(|m| bad("descent.controller", m))?;
        if !(self.descent.max_time > 0.0) {
            return Err(bad("descent.max_time", "must be > 0"));
        }
        Ok(())
    }

    /// Required speed for the trajectory generator.
    pub fn v_req(&self) -> f64 {
        self.trajectory.v_req.unwrap_or_else(|| {
            crate::traj::required_speed(self.env.world.tether_length, crate::math::GRAVITY, self.trajectory.speed_margin)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("agent = \"sac\"\nseeds = [7]\n[train]\ntotal_steps = 10\n").unwrap();
        assert_eq!(c.agent, AgentSpec::Sac);
        assert_eq!(c.train.total_steps, 10);
        assert_eq!(c.train.sac, SacConfig::default());
    }

    #[test]
    fn named_field_errors() {
        let mut c = RunConfig::default();
        c.trajectory.a_max = -1.0;
        assert_eq!(c.validate().unwrap_err().field, "trajectory.a_max");
        let mut c = RunConfig::default();
        c.seeds.clear();
        assert_eq!(c.validate().unwrap_err().field, "seeds");
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn demo_label_check() {
        assert!(AgentSpec::SacfdA.check_demos(&[DemoKind::A]).is_ok());
        assert!(AgentSpec::SacfdA.check_demos(&[DemoKind::AMinus]).is_err());
        assert!(AgentSpec::SacfdAAm.check_demos(&[DemoKind::A]).is_err());
        assert!(AgentSpec::Sac.check_demos(&[]).is_ok());
    }

    #[test]
    fn agent_names() {
        for a in AgentSpec::ALL {
            assert_eq!(a.name().parse::<AgentSpec>().unwrap(), a);
        }
        assert!("sacfd".parse::<AgentSpec>().is_err());
    }
}
