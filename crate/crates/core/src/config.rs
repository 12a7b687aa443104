//! TOML configuration: the service config, the model-and-rules file and
//! scenario files.
//!
//! Service settings resolve in this order, first match wins:
//!
//! 1. command-line flags,
//! 2. `TWINWALL_<SECTION>_<KEY>` environment variables (for example
//!    `TWINWALL_HUB_LISTEN=0.0.0.0:9001`), whose values are read as TOML
//!    values when they parse and as plain strings otherwise,
//! 3. the config file,
//! 4. built-in defaults.
//!
//! Relative paths in a file are resolved against that file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::analysis::{Engine, Rule};
use crate::pointcloud::Intrinsics;
use crate::sim::{CameraPose, CapStageState, FailurePlan, SceneTemplate, Simulator, DEFAULT_CONVEYOR_SLOTS};
use crate::spatial::{Point3, ProducerId, SpatialModel};

pub const ENV_PREFIX: &str = "TWINWALL_";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.into(), source })
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, LoadError> {
    toml::from_str(text).map_err(|e| LoadError::Parse { path: path.into(), message: e.to_string() })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogSection {
    pub level: String,
}

impl Default for LogSection {
    fn default() -> Self {
        LogSection { level: "info".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HubSection {
    pub id: String,
    pub listen: String,
    /// Peer hubs to link to, as `host:port`.
    pub peers: Vec<String>,
}

impl Default for HubSection {
    fn default() -> Self {
        HubSection { id: "hub".into(), listen: "127.0.0.1:9001".into(), peers: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerSection {
    pub listen: String,
}

impl Default for BrokerSection {
    fn default() -> Self {
        BrokerSection { listen: "127.0.0.1:7001".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub model: Option<PathBuf>,
    /// Defaults to the model file.
    pub rules: Option<PathBuf>,
    pub broker: String,
    pub hub: Option<String>,
    pub topic: String,
    pub consumer: String,
    pub ack_deadline_ms: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            model: None,
            rules: None,
            broker: "127.0.0.1:7001".into(),
            hub: None,
            topic: "factory.*".into(),
            consumer: "analysis".into(),
            ack_deadline_ms: crate::ingestion::DEFAULT_ACK_DEADLINE_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub scenario: Option<PathBuf>,
    pub broker: Option<String>,
    pub hub: Option<String>,
    /// Pace cycles in real time instead of running flat out.
    pub realtime: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { scenario: None, broker: Some("127.0.0.1:7001".into()), hub: None, realtime: true }
    }
}

/// The service config.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub log: LogSection,
    pub hub: HubSection,
    pub broker: BrokerSection,
    pub analysis: AnalysisSection,
    pub sim: SimSection,
}

impl Config {
    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Config, LoadError> {
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::from_str_with_env(&text, path, base, std::env::vars())
    }

    pub fn from_str_with_env(
        text: &str,
        path: &Path,
        base: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Config, LoadError> {
        let mut table: toml::Table = parse(path, text)?;
        for (k, v) in env {
            let Some(rest) = k.strip_prefix(ENV_PREFIX) else { continue };
            let Some((section, key)) = rest.to_ascii_lowercase().split_once('_').map(|(s, k)| (s.to_owned(), k.to_owned()))
            else {
                continue;
            };
            let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or(toml::Value::String(v));
            let entry = table.entry(section.clone()).or_insert_with(|| toml::Value::Table(Default::default()));
            match entry {
                toml::Value::Table(t) => {
                    t.insert(key, value);
                }
                _ => return Err(LoadError::Invalid(format!("{section} is not a section"))),
            }
        }
        let mut cfg: Config = table.try_into().map_err(|e: toml::de::Error| LoadError::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        for p in [&mut cfg.analysis.model, &mut cfg.analysis.rules, &mut cfg.sim.scenario].into_iter().flatten() {
            *p = resolve(base, p);
        }
        Ok(cfg)
    }

    /// Checks that every referenced file exists.
    pub fn check_files(&self) -> Result<(), LoadError> {
        for p in [&self.analysis.model, &self.analysis.rules, &self.sim.scenario].into_iter().flatten() {
            if !p.is_file() {
                return Err(LoadError::Invalid(format!("{}: no such file", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    model: SpatialModel,
    #[serde(default)]
    rules: Vec<Rule>,
}

/// Reads a model file. Any `[[rules]]` in it come back too.
pub fn load_model(path: &Path) -> Result<(SpatialModel, Vec<Rule>), LoadError> {
    let f: ModelFile = parse(path, &read(path)?)?;
    let violations = f.model.validate();
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(LoadError::Invalid(format!("{}: {}", path.display(), msgs.join("; "))));
    }
    Ok((f.model, f.rules))
}

/// Builds an engine from a model file and a rules file, which may be the same.
pub fn load_engine(model: &Path, rules: Option<&Path>) -> Result<Engine, LoadError> {
    let (m, mut rs) = load_model(model)?;
    if let Some(r) = rules.filter(|r| *r != model) {
        #[derive(Deserialize)]
        struct RulesFile {
            #[serde(default)]
            rules: Vec<Rule>,
        }
        rs = parse::<RulesFile>(r, &read(r)?)?.rules;
    }
    Engine::new(m, rs).map_err(|errs| {
        LoadError::Invalid(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub eye: Point3,
    pub target: Point3,
    pub up: Point3,
}

impl Default for SensorSection {
    fn default() -> Self {
        SensorSection {
            width: 160,
            height: 120,
            intrinsics: Intrinsics { fx: 150.0, fy: 150.0, cx: 79.5, cy: 59.5 },
            eye: Point3::new(0.5, -0.9, 0.9),
            target: Point3::new(0.5, 0.05, 0.05),
            up: Point3::new(0.0, 0.0, 1.0),
        }
    }
}

/// One simulator run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub stack_capacity: u32,
    pub cycles: u64,
    pub cycle_ms: u64,
    pub start_ms: u64,
    pub conveyor_slots: usize,
    /// Render a frame every `frame_every` cycles; 0 disables frames.
    pub frame_every: u64,
    pub producer: String,
    pub topic: String,
    pub failures: FailurePlan,
    pub sensor: SensorSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            stack_capacity: 40,
            cycles: 50,
            cycle_ms: 1_000,
            start_ms: 0,
            conveyor_slots: DEFAULT_CONVEYOR_SLOTS,
            frame_every: 0,
            producer: "captransfer".into(),
            topic: "factory.captransfer".into(),
            failures: FailurePlan::None,
            sensor: SensorSection::default(),
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, LoadError> {
        let s: Scenario = parse(path, &read(path)?)?;
        s.validate().map_err(|e| LoadError::Invalid(format!("{}: {e}", path.display())))?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.failures.validate()?;
        if self.cycle_ms <= crate::sim::CLEAR_OFFSET_MS {
            return Err(format!("cycle_ms must exceed {}", crate::sim::CLEAR_OFFSET_MS));
        }
        if self.conveyor_slots == 0 {
            return Err("conveyor_slots must be positive".into());
        }
        ProducerId::new(self.producer.as_str()).map_err(|e| e.to_string())?;
        crate::ingestion::Topic::new(self.topic.as_str()).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn template(&self, model: &SpatialModel) -> Result<SceneTemplate, LoadError> {
        let s = &self.sensor;
        let cam = CameraPose { eye: s.eye, target: s.target, up: s.up };
        SceneTemplate::from_model(model, cam, s.width, s.height, s.intrinsics)
            .map_err(|e| LoadError::Invalid(e.to_string()))
    }

    /// A simulator at cycle 0. Frames need a model with the stage's zones.
    pub fn simulator(&self, model: Option<&SpatialModel>) -> Result<Simulator, LoadError> {
        let producer = ProducerId::new(self.producer.as_str()).map_err(|e| LoadError::Invalid(e.to_string()))?;
        let state = CapStageState::new(self.stack_capacity, self.conveyor_slots, self.seed, self.start_ms)
            .with_producer(producer);
        let sim = Simulator::new(state, self.failures.clone()).with_cycle_ms(self.cycle_ms);
        match model {
            Some(m) if self.frame_every > 0 => sim
                .with_frames(self.template(m)?, self.frame_every)
                .map_err(|e| LoadError::Invalid(e.to_string())),
            _ => Ok(sim),
        }
    }
}
