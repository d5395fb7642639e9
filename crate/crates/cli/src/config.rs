//! Experiment configuration file (TOML) and its mapping onto simulator
//! parameters.

use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use vdsim::channel::ChannelConfig;
use vdsim::flood::ChaosConfig;
use vdsim::metrics::MetricsConfig;
use vdsim::schedule::{PhaseSchedule, Strategy};
use vdsim::sim::{Scenario, SimParams};
use vdsim::svm::SvmConfig;
use vdsim::traffic::TrafficConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub seeds: Vec<u64>,
    pub periods: u64,
    pub out: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "roadside".to_string(),
            seeds: vec![1],
            periods: 600,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// `single-mp`, `es1`, `es2` or `custom`.
    pub preset: String,
    pub mp_count: Option<usize>,
    pub fn_count: Option<usize>,
    /// Remaining fields apply to the `custom` preset.
    pub area_m: (f64, f64),
    pub inter_mp_distance_m: f64,
    pub roads: usize,
    pub mp_link_length_m: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            preset: "single-mp".to_string(),
            mp_count: None,
            fn_count: None,
            area_m: (200.0, 60.0),
            inter_mp_distance_m: 50.0,
            roads: 1,
            mp_link_length_m: 12.0,
        }
    }
}

impl ScenarioSection {
    pub fn build(&self) -> anyhow::Result<Scenario> {
        let mut scenario = match self.preset.as_str() {
            "single-mp" => Scenario::single_mp(),
            "es1" => Scenario::es1(),
            "es2" => Scenario::es2(),
            "custom" => Scenario {
                name: "custom".to_string(),
                area_m: self.area_m,
                inter_mp_distance_m: self.inter_mp_distance_m,
                mp_count: 1,
                fn_count: 0,
                roads: self.roads,
                mp_link_length_m: self.mp_link_length_m,
            },
            other => bail!("unknown scenario preset {other:?}"),
        };
        if let Some(n) = self.mp_count {
            scenario.mp_count = n;
        }
        if let Some(n) = self.fn_count {
            scenario.fn_count = n;
        }
        Ok(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: TrafficConfig,
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection {
            enabled: true,
            config: TrafficConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloodSection {
    pub sc_slot_us: u64,
    pub sc_ntx: u32,
    pub dc_slot_us: u64,
    pub dc_ntx_pg: u32,
}

impl Default for FloodSection {
    fn default() -> Self {
        FloodSection {
            sc_slot_us: 2_000,
            sc_ntx: 5,
            dc_slot_us: 1_000,
            dc_ntx_pg: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IphaseSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: ChaosConfig,
}

/// Sweep axes recognized by `vdsim sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Txp,
    Headway,
    Gp,
    Strategy,
    MpCount,
    FnCount,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepAxis::Txp => "txp",
            SweepAxis::Headway => "headway",
            SweepAxis::Gp => "gp",
            SweepAxis::Strategy => "strategy",
            SweepAxis::MpCount => "mp_count",
            SweepAxis::FnCount => "fn_count",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Axis points; integral axes round the values.
    pub values: Vec<f64>,
    /// Emit per-instance trace CSVs per point.
    pub emit_trace: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::Headway,
            values: vec![3.0],
            emit_trace: true,
        }
    }
}

/// One experiment file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub scenario: ScenarioSection,
    pub schedule: ScheduleSection,
    pub traffic: TrafficSection,
    pub channel: ChannelConfig,
    pub metrics: MetricsConfig,
    pub flood: FloodSection,
    pub classifier: SvmConfig,
    pub iphase: IphaseSection,
    pub sweep: SweepSection,
}

/// Schedule with a strategy default that matches the roadside setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScheduleSection(pub PhaseSchedule);

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection(PhaseSchedule::roadside_default(Strategy::Dmpg))
    }
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<FileConfig> {
        let cfg: FileConfig = toml::from_str(text)?;
        cfg.channel.validate()?;
        if cfg.experiment.seeds.is_empty() {
            bail!("experiment.seeds must not be empty");
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Simulator parameters for one seed, after applying CLI overrides.
    pub fn sim_params(&self, seed: u64) -> anyhow::Result<SimParams> {
        Ok(SimParams {
            scenario: self.scenario.build()?,
            schedule: self.schedule.0,
            traffic: self.traffic.enabled.then_some(self.traffic.config),
            channel: self.channel.clone(),
            metrics: self.metrics,
            sc_slot_us: self.flood.sc_slot_us,
            sc_ntx: self.flood.sc_ntx,
            dc_slot_us: self.flood.dc_slot_us,
            dc_ntx_pg: self.flood.dc_ntx_pg,
            iphase: self.iphase.enabled.then_some(self.iphase.config),
            periods: self.experiment.periods,
            perfect_range_m: None,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = FileConfig::default();
        let text = cfg.to_toml();
        let back = FileConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "[experiment]\nnam = \"typo\"\n";
        assert!(FileConfig::parse(text).is_err());
    }

    #[test]
    fn presets_build() {
        for preset in ["single-mp", "es1", "es2", "custom"] {
            let section = ScenarioSection {
                preset: preset.to_string(),
                ..Default::default()
            };
            section.build().unwrap();
        }
        let bad = ScenarioSection {
            preset: "nope".to_string(),
            ..Default::default()
        };
        assert!(bad.build().is_err());
    }
}
