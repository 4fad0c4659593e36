//! Run configuration, loadable from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pcat::ProtocolParams;
use crate::volume::Point3;

/// How the coronary mask is turned into RCA and LCA masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Use labels 1 (RCA) and 2 (LCA) when both are present, else split.
    #[default]
    Auto,
    /// Require labels 1 and 2.
    Labels,
    /// Treat every nonzero voxel as coronary and split by components.
    Split,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub image: Option<PathBuf>,
    pub coronary_mask: Option<PathBuf>,
    pub aorta_mask: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Also write region and centerline masks next to the report.
    pub emit_debug_masks: bool,
    pub mask_mode: MaskMode,
    /// Optional RCA seed point (world mm) for the artery split.
    pub rca_seed: Option<Point3>,
    /// Optional LCA seed point (world mm) for the artery split.
    pub lca_seed: Option<Point3>,
    /// Batch worker count; `None` uses all cores.
    pub workers: Option<usize>,
    pub protocol: ProtocolParams,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        if self.rca_seed.is_some() != self.lca_seed.is_some() {
            return Err(Error::InvalidConfig("rca_seed and lca_seed must be given together".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Option<(Point3, Point3)> {
        self.rca_seed.zip(self.lca_seed)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
