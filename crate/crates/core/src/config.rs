//! Run configuration. Every tunable lives here; files are TOML with an
//! explicit `version` and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::LrSchedule;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("override {0:?} is not of the form key.path=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub grid: GridConfig,
    pub appearance: AppearanceConfig,
    pub simnet: SimNetConfig,
    pub pairs: PairConfig,
    pub assocnet: AssocNetConfig,
    pub tracker: TrackerConfig,
    pub noise: NoiseConfig,
    pub scenario: ScenarioConfig,
    pub baselines: BaselineConfig,
    pub eval: EvalConfig,
    pub kitti: KittiConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 7,
            grid: GridConfig::default(),
            appearance: AppearanceConfig::default(),
            simnet: SimNetConfig::default(),
            pairs: PairConfig::default(),
            assocnet: AssocNetConfig::default(),
            tracker: TrackerConfig::default(),
            noise: NoiseConfig::default(),
            scenario: ScenarioConfig::default(),
            baselines: BaselineConfig::default(),
            eval: EvalConfig::default(),
            kitti: KittiConfig::default(),
        }
    }
}

/// Birds-eye-view grid over the region of interest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
    /// Half-width of the local crop in cells; the crop is `2r+1` square.
    pub local_radius: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { x_min: -40.0, x_max: 40.0, y_min: 0.0, y_max: 80.0, resolution: 0.5, local_radius: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppearanceConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        Self { height: 7, width: 7, channels: 32 }
    }
}

impl AppearanceConfig {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimNetConfig {
    pub feature_dim: usize,
    pub bbox_filters: usize,
    pub appearance_filters: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub gamma: f64,
    pub cost_cutoff: f64,
    pub batch_pairs: usize,
    pub epochs: u32,
    pub patience: u32,
    pub schedule: LrSchedule,
    /// Pairs drawn from the training split per epoch.
    pub train_pairs: usize,
    pub validation_pairs: usize,
}

impl Default for SimNetConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            bbox_filters: 256,
            appearance_filters: 256,
            dropout: 0.5,
            leaky_slope: 0.1,
            gamma: 2.0,
            cost_cutoff: 1e-3,
            batch_pairs: 128,
            epochs: 6,
            patience: 3,
            schedule: LrSchedule { base: 1e-3, period_epochs: 2, decay: 0.95 },
            train_pairs: 12_800,
            validation_pairs: 2_000,
        }
    }
}

/// Training-pair proposal generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub positive_iou: f64,
    pub diversity_iou: f64,
    pub proposals_per_object: usize,
    pub max_attempts: usize,
    pub translation_sigma: f64,
    pub rotation_sigma: f64,
    pub scale_sigma: f64,
    /// Negatives drawn per accepted positive.
    pub negatives_per_positive: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            positive_iou: 0.8,
            diversity_iou: 0.95,
            proposals_per_object: 2,
            max_attempts: 12,
            translation_sigma: 0.15,
            rotation_sigma: 0.05,
            scale_sigma: 0.05,
            negatives_per_positive: 0.72,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssocNetConfig {
    pub n_max: usize,
    pub filters: [usize; 3],
    pub dilations: [usize; 3],
    pub spurious_hidden: usize,
    pub m_neg: f64,
    pub lambda: f64,
    pub margin: f64,
    pub leaky_slope: f64,
    pub batch_frames: usize,
    pub epochs: u32,
    pub patience: u32,
    pub schedule: LrSchedule,
    pub train_frames: usize,
    pub validation_frames: usize,
}

impl Default for AssocNetConfig {
    fn default() -> Self {
        Self {
            n_max: 32,
            filters: [32, 64, 64],
            dilations: [2, 4, 6],
            spurious_hidden: 256,
            m_neg: -1e6,
            lambda: 1e-4,
            margin: 0.01,
            leaky_slope: 0.1,
            batch_frames: 16,
            epochs: 4,
            patience: 3,
            schedule: LrSchedule { base: 1e-3, period_epochs: 2, decay: 0.95 },
            train_frames: 8_000,
            validation_frames: 600,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r: f64,
    pub init_vel_var: f64,
    pub p_survive: f64,
    pub p_detect: f64,
    pub p_false_alarm: f64,
    pub birth_existence: f64,
    pub prune_threshold: f64,
    pub report_threshold: f64,
    pub ema: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            q_pos: 0.01,
            q_vel: 0.25,
            r: 0.04,
            init_vel_var: 1.0,
            p_survive: 0.95,
            p_detect: 0.9,
            p_false_alarm: 0.1,
            birth_existence: 0.5,
            prune_threshold: 0.40,
            report_threshold: 0.5,
            ema: 0.5,
        }
    }
}

/// Detector simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub center_sigma: f64,
    /// Relative jitter of `l, w, h`.
    pub dim_sigma: f64,
    pub yaw_sigma: f64,
    pub fn_rate: f64,
    /// Expected clutter detections per frame.
    pub fp_rate: f64,
    /// Fraction of clutter spawned beside a real object rather than uniformly.
    pub clutter_near: f64,
    pub clutter_min_offset: f64,
    pub clutter_max_offset: f64,
    /// Fraction of detections with a gross localization error.
    pub outlier_rate: f64,
    pub outlier_sigma: f64,
    /// Appearance nuisance level (gain, offset and pixel noise).
    pub appearance: f64,
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            center_sigma: 0.0,
            dim_sigma: 0.0,
            yaw_sigma: 0.0,
            fn_rate: 0.0,
            fp_rate: 0.0,
            clutter_near: 0.0,
            clutter_min_offset: 1.0,
            clutter_max_offset: 3.0,
            outlier_rate: 0.0,
            outlier_sigma: 0.0,
            appearance: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            center_sigma: 0.2,
            dim_sigma: 0.05,
            yaw_sigma: 0.05,
            fn_rate: 0.05,
            fp_rate: 3.0,
            clutter_near: 0.7,
            clutter_min_offset: 0.8,
            clutter_max_offset: 3.0,
            outlier_rate: 0.05,
            outlier_sigma: 1.0,
            appearance: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Training sequences (split 80/20 into train and validation frames).
    pub sequences: usize,
    /// Held-out sequences used for tracking evaluation.
    pub test_sequences: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub lane_width: f64,
    pub lanes: usize,
    /// Probability that a spawned object drives across the lanes.
    pub crossing_fraction: f64,
    /// Largest curvature of object paths (1/m).
    pub max_curvature: f64,
    pub ego_speed_max: f64,
    pub ego_yaw_rate_max: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            sequences: 20,
            test_sequences: 6,
            frames: 100,
            frame_rate: 10.0,
            objects_min: 6,
            objects_max: 14,
            speed_min: 2.0,
            speed_max: 12.0,
            lane_width: 3.5,
            lanes: 6,
            crossing_fraction: 0.2,
            max_curvature: 0.01,
            ego_speed_max: 6.0,
            ego_yaw_rate_max: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub gate: f64,
    pub histogram_bins: usize,
    pub chi_square_eps: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { gate: 5.0, histogram_bins: 32, chi_square_eps: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 1.0, mostly_tracked: 0.8, mostly_lost: 0.2 }
    }
}

/// Label ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KittiConfig {
    /// Object types kept when reading labels.
    pub classes: Vec<String>,
    /// Type written into track files.
    pub output_class: String,
}

impl Default for KittiConfig {
    fn default() -> Self {
        Self { classes: vec!["Car".to_string()], output_class: "Car".to_string() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Loads `path` (or defaults), then applies `key.path=value` overrides.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
                text.parse::<toml::Table>()?
            }
            None => toml::Table::try_from(RunConfig::default()).expect("defaults serialize"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy of `self` with `key.path=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = toml::Table::try_from(self).expect("config serializes");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let g = &self.grid;
        if !(g.resolution > 0.0 && g.x_max > g.x_min && g.y_max > g.y_min) {
            return bad("grid extents must be positive");
        }
        if self.appearance.is_empty() {
            return bad("appearance shape must be non-empty");
        }
        let s = &self.simnet;
        if s.feature_dim == 0 || s.bbox_filters == 0 || s.appearance_filters == 0 {
            return bad("simnet widths must be positive");
        }
        if !(0.0..1.0).contains(&s.dropout) {
            return bad("simnet.dropout must lie in [0, 1)");
        }
        if s.gamma < 0.0 || s.cost_cutoff < 0.0 || s.batch_pairs == 0 {
            return bad("simnet.gamma, cost_cutoff must be >= 0 and batch_pairs > 0");
        }
        let p = &self.pairs;
        if !(0.0..=1.0).contains(&p.positive_iou) || !(0.0..=1.0).contains(&p.diversity_iou) {
            return bad("pair IoU thresholds must lie in [0, 1]");
        }
        let a = &self.assocnet;
        if a.n_max == 0 || a.batch_frames == 0 || a.filters.contains(&0) || a.dilations.contains(&0) {
            return bad("assocnet sizes must be positive");
        }
        if a.m_neg >= 0.0 || a.lambda < 0.0 || a.margin < 0.0 {
            return bad("assocnet.m_neg must be negative; lambda, margin >= 0");
        }
        let t = &self.tracker;
        for (name, v) in [
            ("p_survive", t.p_survive),
            ("p_detect", t.p_detect),
            ("p_false_alarm", t.p_false_alarm),
            ("birth_existence", t.birth_existence),
            ("prune_threshold", t.prune_threshold),
            ("report_threshold", t.report_threshold),
            ("ema", t.ema),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("tracker.{name} must lie in [0, 1]")));
            }
        }
        if t.q_pos < 0.0 || t.q_vel < 0.0 || t.r < 0.0 || t.init_vel_var < 0.0 {
            return bad("tracker noise variances must be >= 0");
        }
        let n = &self.noise;
        if !(0.0..1.0).contains(&n.fn_rate) && n.fn_rate != 1.0 {
            return bad("noise.fn_rate must lie in [0, 1]");
        }
        if n.center_sigma < 0.0 || n.dim_sigma < 0.0 || n.yaw_sigma < 0.0 || n.fp_rate < 0.0 || n.appearance < 0.0 {
            return bad("noise magnitudes must be >= 0");
        }
        let sc = &self.scenario;
        if sc.frame_rate <= 0.0 || sc.objects_min > sc.objects_max || sc.speed_min > sc.speed_max {
            return bad("scenario ranges are inconsistent");
        }
        if self.eval.threshold <= 0.0 || self.baselines.gate <= 0.0 || self.baselines.histogram_bins == 0 {
            return bad("eval.threshold, baselines.gate and histogram_bins must be positive");
        }
        Ok(())
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    // parse the value as a TOML expression; bare words fall back to strings
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut table = root;
    for part in &path[..path.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("version = 1\n[tracker]\nprune_treshold = 0.3\n").unwrap_err();
        assert!(err.to_string().contains("prune_treshold"), "{err}");
    }

    #[test]
    fn version_is_checked() {
        assert!(matches!(RunConfig::from_toml("version = 9"), Err(ConfigError::Version(9))));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = RunConfig::resolve(None, &["seed=11".into(), "tracker.prune_threshold=0.3".into()]).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.tracker.prune_threshold, 0.3);
        assert!(RunConfig::resolve(None, &["tracker.p_detect=1.5".into()]).is_err());
        assert!(RunConfig::resolve(None, &["tracker.nope=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["seed".into()]).is_err());
    }

    #[test]
    fn reference_constants() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.tracker.prune_threshold, 0.40);
        assert_eq!(cfg.simnet.batch_pairs, 128);
        assert_eq!(cfg.pairs.positive_iou, 0.8);
        assert_eq!(cfg.pairs.diversity_iou, 0.95);
        assert_eq!(cfg.assocnet.dilations, [2, 4, 6]);
        assert_eq!(cfg.assocnet.margin, 0.01);
    }
}
