//! Run configuration: search parameters plus paths, seed and verbosity.
//!
//! Precedence is defaults, then the JSON config file, then command-line
//! flags. The effective configuration is echoed into every result.

use std::fs;
use std::path::{Path, PathBuf};

use bbs3d::bnb::{BranchMode, SearchConfig, Strategy, WorkerMode};
use bbs3d::voxelmap::MapParams;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub search: SearchConfig,
    pub map: Option<PathBuf>,
    pub scan: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Scan downsampling target in points; `None` searches the raw scan.
    pub downsample_target: Option<usize>,
    pub collision_target: f64,
    /// 0 warnings, 1 info, 2 debug, 3 and above trace.
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            map: None,
            scan: None,
            out: None,
            seed: 0,
            downsample_target: Some(1000),
            collision_target: MapParams::default().collision_target,
            verbosity: 0,
        }
    }
}

impl RunConfig {
    /// Parses a JSON config. Unknown keys are rejected; the flattened
    /// search fields cannot do that themselves.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let err = |e: serde_json::Error| CliError::Config(format!("config: {e}"));
        let value: serde_json::Value = serde_json::from_str(text).map_err(err)?;
        let known = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let (Some(obj), Some(known)) = (value.as_object(), known.as_object()) {
            if let Some(k) = obj.keys().find(|k| !known.contains_key(*k)) {
                return Err(CliError::Config(format!("config: unknown key '{k}'")));
            }
        }
        serde_json::from_value(value).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn map_params(&self) -> MapParams {
        MapParams {
            resolution: self.search.r,
            max_level: self.search.l_max,
            collision_target: self.collision_target,
            ..MapParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.search
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.collision_target >= 0.0 && self.collision_target < 1.0) {
            return Err(CliError::Config(format!(
                "collision_target {}",
                self.collision_target
            )));
        }
        if self.downsample_target == Some(0) {
            return Err(CliError::Config(
                "downsample_target must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Dfs,
    Bfs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Trans,
    Roto,
}

/// Flags shared by every command that runs a search.
#[derive(Clone, Debug, Default, Args)]
pub struct SearchArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Finest voxel size in meters.
    #[arg(long)]
    pub r: Option<f64>,
    /// Number of coarser voxel levels.
    #[arg(long)]
    pub lmax: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Score threshold as a fraction of the scan points.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    pub branch: Option<BranchArg>,
    /// Worker threads for batch scoring; 1 scores on the calling thread.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Downsample the scan to about this many points; 0 disables it.
    #[arg(long)]
    pub downsample_target: Option<usize>,
    /// Roll and pitch are searched in [-v, v] radians.
    #[arg(long)]
    pub roll_pitch_range: Option<f64>,
}

impl SearchArgs {
    /// Loads the config file if given and applies the flags on top.
    pub fn resolve(&self, verbosity: u8) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        if verbosity > 0 {
            cfg.verbosity = verbosity;
        }
        cfg.validate()?;
        log::debug!("effective config:\n{}", cfg.to_json());
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.search;
        if let Some(r) = self.r {
            s.r = r;
        }
        if let Some(l) = self.lmax {
            s.l_max = l;
        }
        if let Some(b) = self.batch_size {
            s.batch_size = b;
        }
        if let Some(t) = self.threshold {
            s.score_threshold_fraction = t;
        }
        if let Some(st) = self.strategy {
            s.strategy = match st {
                StrategyArg::Dfs => Strategy::Dfs,
                StrategyArg::Bfs => Strategy::Bfs,
            };
        }
        if let Some(b) = self.branch {
            s.branch_mode = match b {
                BranchArg::Trans => BranchMode::TransOnly,
                BranchArg::Roto => BranchMode::RotoTrans,
            };
        }
        if let Some(w) = self.workers {
            s.workers = WorkerMode::from(w);
        }
        if let Some(v) = self.roll_pitch_range {
            s.roll_range = (-v, v);
            s.pitch_range = (-v, v);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.downsample_target {
            cfg.downsample_target = (t > 0).then_some(t);
        }
    }
}
