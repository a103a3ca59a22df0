//! Pipeline configuration, read from TOML.
//!
//! Every key is optional; unknown keys are rejected. Example:
//!
//! ```toml
//! mode = "multimodal"        # none | vision | multimodal
//! dilation_radius = 3        # px, applied to the flattened dynamic mask
//! min_confidence = 0.5
//! dynamic_classes = ["person", "bicycle", "car", "cat", "dog"]
//! map_leaf = 0.05            # m, static map voxel size
//!
//! [fusion]
//! cluster_leaf = 0.15
//! tolerance = 0.3
//! min_size = 20
//! max_size = 50000
//! relabel_radius = 0.3
//! dyn_threshold = 0.9
//!
//! [odometry.features]
//! radius = 0.25
//! edge_threshold = 0.05
//! planar_threshold = 0.01
//!
//! [odometry.registration]
//! max_iterations = 20
//! outlier_gate = 1.0
//!
//! [odometry.keyframe]
//! translation = 0.3
//! rotation_deg = 10.0
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::mask::{ClassInfo, ClassRegistry, DynamicClassFilter};
use crate::odometry::OdometryConfig;

/// Which dynamic-point removal runs before odometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No labeling; every point is static.
    None,
    /// The dilated 2D mask decides alone.
    Vision,
    /// Mask labels refined by 3D clustering.
    #[default]
    Multimodal,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::None, Mode::Vision, Mode::Multimodal];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::None => "none",
            Mode::Vision => "vision",
            Mode::Multimodal => "multimodal",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Mode::None),
            "vision" | "vision-only" => Ok(Mode::Vision),
            "multimodal" => Ok(Mode::Multimodal),
            _ => Err(Error::Config(format!("unknown mode {s:?}, expected none, vision or multimodal"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub dilation_radius: usize,
    pub min_confidence: f64,
    /// Class names treated as dynamic; the class table's dynamic set when
    /// absent.
    pub dynamic_classes: Option<Vec<String>>,
    /// Replaces the built-in class table when non-empty.
    pub classes: Vec<ClassInfo>,
    pub map_leaf: f64,
    pub fusion: FusionParams,
    pub odometry: OdometryConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Multimodal,
            dilation_radius: 3,
            min_confidence: 0.5,
            dynamic_classes: None,
            classes: Vec::new(),
            map_leaf: 0.05,
            fusion: FusionParams::default(),
            odometry: OdometryConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn registry(&self) -> Result<ClassRegistry> {
        if self.classes.is_empty() {
            Ok(ClassRegistry::default())
        } else {
            ClassRegistry::new(self.classes.clone())
        }
    }

    pub fn class_filter(&self) -> Result<DynamicClassFilter> {
        let reg = self.registry()?;
        let classes: BTreeSet<u32> = match &self.dynamic_classes {
            None => reg.dynamic_ids(),
            Some(names) => names
                .iter()
                .map(|n| {
                    reg.by_name(n)
                        .map(|c| c.id)
                        .ok_or_else(|| Error::Config(format!("dynamic class {n:?} is not in the class table")))
                })
                .collect::<Result<_>>()?,
        };
        Ok(DynamicClassFilter::new(classes, self.min_confidence))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.map_leaf > 0.0) {
            return bad("map_leaf must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return bad("min_confidence must lie in [0, 1]");
        }
        let f = &self.fusion;
        if !(f.cluster_leaf > 0.0 && f.tolerance > 0.0 && f.relabel_radius >= 0.0) || f.min_size > f.max_size {
            return bad("fusion leaf, tolerance and size limits are inconsistent");
        }
        if !(0.0..=1.0).contains(&f.dyn_threshold) {
            return bad("fusion.dyn_threshold must lie in [0, 1]");
        }
        let o = &self.odometry;
        if !(o.features.radius > 0.0) || o.features.sectors == 0 {
            return bad("odometry.features needs radius > 0 and sectors > 0");
        }
        if !(o.local_map.leaf > 0.0 && o.local_map.window_radius > 0.0) {
            return bad("odometry.local_map leaf and window_radius must be positive");
        }
        if !(o.keyframe.translation > 0.0 && o.keyframe.rotation_deg > 0.0) {
            return bad("keyframe thresholds must be positive");
        }
        if o.registration.max_iterations == 0 {
            return bad("odometry.registration.max_iterations must be at least 1");
        }
        self.class_filter().map(|_| ())
    }
}
