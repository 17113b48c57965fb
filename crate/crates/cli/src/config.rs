//! Run configuration file: versioned JSON, unknown keys rejected.

use std::path::{Path, PathBuf};

use mmwave::evaluation::{ExperimentConfig, SceneSource, SweepAxes, DEFAULT_D_CLOSE, DEFAULT_VOXEL};
use mmwave::pipeline::PipelineOptions;
use mmwave::radar::{AntennaLayout, ChirpConfig};
use mmwave::scene::SceneGenerator;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub radar: RadarSection,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub pipeline: PipelineOptions,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            radar: RadarSection::default(),
            scene: SceneSection::default(),
            noise: NoiseSection::default(),
            pipeline: PipelineOptions::default(),
            eval: EvalSection::default(),
            output: OutputSection::default(),
            seed: 0,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarSection {
    pub chirp: ChirpConfig,
    /// Preset name, or `a`..`g`.
    pub layout: String,
}

impl Default for RadarSection {
    fn default() -> Self {
        Self { chirp: ChirpConfig::baseline(), layout: "square4".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub source: SceneSource,
    /// Radial speed away from the radar (m/s); overrides the generator's own velocity.
    pub velocity: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { source: SceneSource::Generator(SceneGenerator::human_blob(0)), velocity: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// `null` simulates a noiseless frame.
    pub snr_db: Option<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { snr_db: Some(30.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub d_close: f64,
    pub voxel: f64,
    pub repeats: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { d_close: DEFAULT_D_CLOSE, voxel: DEFAULT_VOXEL, repeats: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    Ply,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<CloudFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![CloudFormat::Ply] }
    }
}

/// Sweep extension. Empty lists fall back to the single scene/pipeline of the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub pipelines: Vec<PipelineOptions>,
    pub scenes: Vec<SceneSource>,
    pub axes: SweepAxes,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    /// Parse and validate. Errors carry the origin, line and column, and the field path.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            let path = e.path().to_string();
            let msg = strip_position(&inner.to_string());
            if path == "." {
                ConfigError(format!("{origin}:{}:{}: {msg}", inner.line(), inner.column()))
            } else {
                ConfigError(format!("{origin}:{}:{}: `{path}`: {msg}", inner.line(), inner.column()))
            }
        })?;
        cfg.validate().map_err(|e| ConfigError(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn layout(&self) -> mmwave::Result<AntennaLayout> {
        AntennaLayout::preset(&self.radar.layout)
    }

    /// Semantic checks that the schema alone cannot express; messages name the field.
    pub fn validate(&self) -> Result<(), String> {
        if self.version != SCHEMA_VERSION {
            return Err(format!("`version`: unsupported schema version {} (expected {SCHEMA_VERSION})", self.version));
        }
        self.radar.chirp.validate().map_err(|e| format!("`radar.chirp`: {e}"))?;
        self.layout().map_err(|e| format!("`radar.layout`: {e}"))?;
        check_source(&self.scene.source, "scene.source")?;
        if !self.scene.velocity.is_finite() {
            return Err("`scene.velocity`: must be finite".into());
        }
        if let Some(s) = self.noise.snr_db {
            if !s.is_finite() {
                return Err("`noise.snr_db`: must be finite or null".into());
            }
        }
        self.pipeline.validate().map_err(|e| format!("`pipeline`: {e}"))?;
        if !(self.eval.d_close > 0.0) || !(self.eval.voxel > 0.0) {
            return Err("`eval`: d_close and voxel must be positive".into());
        }
        if self.eval.repeats == 0 {
            return Err("`eval.repeats`: must be at least 1".into());
        }
        if self.output.formats.is_empty() {
            return Err("`output.formats`: list at least one of \"ply\", \"csv\"".into());
        }
        if let Some(sw) = &self.sweep {
            for (i, p) in sw.pipelines.iter().enumerate() {
                p.validate().map_err(|e| format!("`sweep.pipelines[{i}]`: {e}"))?;
            }
            for (i, s) in sw.scenes.iter().enumerate() {
                check_source(s, &format!("sweep.scenes[{i}]"))?;
            }
            for (i, l) in sw.axes.layout.iter().enumerate() {
                AntennaLayout::preset(l).map_err(|e| format!("`sweep.axes.layout[{i}]`: {e}"))?;
            }
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let sweep = self.sweep.clone().unwrap_or_default();
        ExperimentConfig {
            scenes: if sweep.scenes.is_empty() { vec![self.scene.source.clone()] } else { sweep.scenes },
            radar: self.radar.chirp,
            layout: self.radar.layout.clone(),
            snr_db: self.noise.snr_db,
            velocity: self.scene.velocity,
            pipelines: if sweep.pipelines.is_empty() { vec![self.pipeline.clone()] } else { sweep.pipelines },
            sweep: sweep.axes,
            repeats: self.eval.repeats,
            seed: self.seed,
            d_close: self.eval.d_close,
            voxel: self.eval.voxel,
        }
    }
}

fn check_source(src: &SceneSource, field: &str) -> Result<(), String> {
    match src {
        SceneSource::Mesh(m) => {
            if m.path.as_os_str().is_empty() {
                return Err(format!("`{field}.mesh.path`: empty path"));
            }
            if !m.path.is_file() {
                return Err(format!("`{field}.mesh.path`: no such file: {}", m.path.display()));
            }
            if m.points == 0 || !(m.range > 0.0) {
                return Err(format!("`{field}.mesh`: points and range must be positive"));
            }
        }
        SceneSource::Generator(_) => {}
    }
    Ok(())
}

/// serde_json appends " at line X column Y"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
