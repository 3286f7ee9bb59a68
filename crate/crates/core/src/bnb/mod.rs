//! Branch-and-bound search over the discretized 6DoF pose space.
//!
//! Nodes live on a tree whose level `l` uses translation step `r_l = 2^l r`
//! and a per-level rotational grid. A node's score against the level-`l`
//! voxel map bounds the scores of its descendants (exactly for translation,
//! approximately for rotation). The search keeps the batched loop structure:
//! branched nodes accumulate in a pending buffer that is scored in one
//! synchronized call once it exceeds the batch size.

mod angular;
mod eval;
mod node;
mod search;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::Aabb;
use crate::geometry::Pose6;

pub use angular::{adjusted_step, angular_step, AngularGrid, AxisGrid, PITCH, ROLL, YAW};
pub use eval::{batch_evaluate, node_score, ScoreContext, WorkerPool};
pub use node::{branch, initial_nodes, node_pose, node_transform, Node, TransRange};
pub use search::{search, search_space, search_with_grids, Audit, PruneRecord};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("degenerate scan: {0}")]
    DegenerateScan(String),
    #[error("empty search space: {0}")]
    EmptySearchSpace(String),
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("node at level 0 cannot be branched")]
    LeafNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Depth-first: deepest level first, highest score first within a level.
    Dfs,
    /// Best-first: highest score first.
    Bfs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchMode {
    /// Only translation is branched; the initial set enumerates the leaf
    /// rotation grid.
    #[serde(rename = "trans")]
    TransOnly,
    #[serde(rename = "roto")]
    RotoTrans,
}

/// Number of workers used to score a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "usize", into = "usize")]
pub enum WorkerMode {
    Single,
    Multi(usize),
}

impl WorkerMode {
    pub fn threads(self) -> usize {
        match self {
            WorkerMode::Single => 1,
            WorkerMode::Multi(n) => n,
        }
    }
}

impl From<usize> for WorkerMode {
    fn from(n: usize) -> Self {
        if n <= 1 {
            WorkerMode::Single
        } else {
            WorkerMode::Multi(n)
        }
    }
}

impl From<WorkerMode> for usize {
    fn from(w: WorkerMode) -> usize {
        w.threads()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Finest voxel size in meters.
    pub r: f64,
    pub l_max: u32,
    /// Translational search range; the map bounding box when unset.
    pub trans_range: Option<Aabb>,
    pub roll_range: (f64, f64),
    pub pitch_range: (f64, f64),
    pub yaw_range: (f64, f64),
    pub score_threshold_fraction: f64,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub branch_mode: BranchMode,
    pub workers: WorkerMode,
    /// Overrides the scan's maximum range when computing angular steps.
    pub d_max: Option<f64>,
    /// Records the best-score history and every pruning decision.
    pub audit: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            l_max: 6,
            trans_range: None,
            roll_range: (-0.02, 0.02),
            pitch_range: (-0.02, 0.02),
            yaw_range: (0.0, TAU),
            score_threshold_fraction: 0.95,
            batch_size: 10_000,
            strategy: Strategy::Bfs,
            branch_mode: BranchMode::RotoTrans,
            workers: WorkerMode::Single,
            d_max: None,
            audit: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("r must be positive, got {}", self.r));
        }
        if self.l_max > 20 {
            return bad(format!("l_max {} is above 20", self.l_max));
        }
        if !(self.score_threshold_fraction > 0.0 && self.score_threshold_fraction <= 1.0) {
            return bad(format!(
                "score_threshold_fraction must be in (0, 1], got {}",
                self.score_threshold_fraction
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.workers.threads() == 0 {
            return bad("worker count must be at least 1".into());
        }
        if let Some(d) = self.d_max {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("d_max must be positive, got {d}"));
            }
        }
        if let Some(b) = &self.trans_range {
            if !b.is_valid() {
                return bad(format!("translation range {b:?} is not a valid box"));
            }
        }
        for (name, (lo, hi)) in [
            ("roll_range", self.roll_range),
            ("pitch_range", self.pitch_range),
            ("yaw_range", self.yaw_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!(
                    "{name} ({lo}, {hi}) is not an ordered finite interval"
                ));
            }
            if hi - lo > TAU + 1e-9 {
                return bad(format!("{name} spans more than a full turn"));
            }
        }
        Ok(())
    }

    /// `floor(fraction * K)` for a scan of `k` points.
    pub fn score_threshold(&self, k: usize) -> u32 {
        (self.score_threshold_fraction * k as f64).floor() as u32
    }
}

pub const PHASE_CREATE_VOXEL_MAPS: &str = "Create voxel maps";
pub const PHASE_SET_SOURCE: &str = "Set source point cloud";
pub const PHASE_INITIAL_NODES: &str = "Initial nodes calculation";
pub const PHASE_FIND_BEST_SCORE: &str = "Find best score";
pub const PHASE_POP_REMAINING_QUEUE: &str = "Pop remaining queue";

/// Counters and phase timings of one localization.
///
/// `create_voxel_maps_ms` is filled in by whoever built the map; the search
/// fills the rest. `set_source_ms` covers scan preparation and grid setup and
/// callers add their downsampling time to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub create_voxel_maps_ms: f64,
    pub set_source_ms: f64,
    pub initial_nodes_ms: f64,
    pub find_best_score_ms: f64,
    pub pop_remaining_queue_ms: f64,
    pub nodes_generated: u64,
    pub nodes_pruned: u64,
    pub batches_flushed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGroup {
    pub name: String,
    pub phases: Vec<(String, f64)>,
    pub total_ms: f64,
}

impl Stats {
    pub fn preprocessing_ms(&self) -> f64 {
        self.create_voxel_maps_ms + self.set_source_ms
    }

    pub fn localization_ms(&self) -> f64 {
        self.initial_nodes_ms + self.find_best_score_ms + self.pop_remaining_queue_ms
    }

    /// Phase timings split into the one-off preprocessing and the per-scan
    /// localization.
    pub fn breakdown(&self) -> Vec<PhaseGroup> {
        let group = |name: &str, phases: Vec<(&str, f64)>| PhaseGroup {
            name: name.to_string(),
            total_ms: phases.iter().map(|p| p.1).sum(),
            phases: phases
                .into_iter()
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
        };
        vec![
            group(
                "Preprocessing",
                vec![
                    (PHASE_CREATE_VOXEL_MAPS, self.create_voxel_maps_ms),
                    (PHASE_SET_SOURCE, self.set_source_ms),
                ],
            ),
            group(
                "Localization",
                vec![
                    (PHASE_INITIAL_NODES, self.initial_nodes_ms),
                    (PHASE_FIND_BEST_SCORE, self.find_best_score_ms),
                    (PHASE_POP_REMAINING_QUEUE, self.pop_remaining_queue_ms),
                ],
            ),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    /// Pose of the matched leaf; identity when nothing matched.
    pub best_pose: Pose6,
    /// Score of the matched leaf, or the threshold when nothing matched.
    pub best_score: u32,
    pub matched: bool,
    pub best_node: Option<Node>,
    pub score_threshold: u32,
    /// Scan size `K`.
    pub num_points: usize,
    /// Maximum range used for the angular steps.
    pub d_max: f64,
    pub stats: Stats,
    pub audit: Option<Audit>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_parameters() {
        let c = SearchConfig::default();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.l_max, 6);
        assert_eq!(c.batch_size, 10_000);
        assert_eq!(c.score_threshold_fraction, 0.95);
        assert_eq!(c.roll_range, (-0.02, 0.02));
        assert_eq!(c.pitch_range, (-0.02, 0.02));
        assert_eq!(c.yaw_range, (0.0, TAU));
        assert_eq!(c.strategy, Strategy::Bfs);
        assert_eq!(c.branch_mode, BranchMode::RotoTrans);
        c.validate().unwrap();
    }

    #[test]
    fn threshold_rounds_down() {
        let c = SearchConfig::default();
        assert_eq!(c.score_threshold(1000), 950);
        assert_eq!(c.score_threshold(999), 949);
        assert_eq!(c.score_threshold(1), 0);
        let full = SearchConfig {
            score_threshold_fraction: 1.0,
            ..c
        };
        assert_eq!(full.score_threshold(37), 37);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SearchConfig::default();
        for c in [
            SearchConfig {
                batch_size: 0,
                ..base.clone()
            },
            SearchConfig {
                score_threshold_fraction: 0.0,
                ..base.clone()
            },
            SearchConfig {
                score_threshold_fraction: 1.5,
                ..base.clone()
            },
            SearchConfig {
                r: -1.0,
                ..base.clone()
            },
            SearchConfig {
                roll_range: (0.1, -0.1),
                ..base.clone()
            },
            SearchConfig {
                yaw_range: (0.0, 7.0),
                ..base.clone()
            },
            SearchConfig {
                d_max: Some(0.0),
                ..base.clone()
            },
        ] {
            assert!(
                matches!(c.validate(), Err(SearchError::InvalidConfig(_))),
                "{c:?}"
            );
        }
    }

    #[test]
    fn config_json_round_trip() {
        let c = SearchConfig {
            strategy: Strategy::Dfs,
            branch_mode: BranchMode::TransOnly,
            workers: WorkerMode::Multi(4),
            d_max: Some(12.5),
            ..SearchConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"strategy\":\"dfs\""));
        assert!(text.contains("\"branch_mode\":\"trans\""));
        assert!(text.contains("\"workers\":4"));
        let back: SearchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: SearchConfig = serde_json::from_str("{\"l_max\": 3}").unwrap();
        assert_eq!(partial.l_max, 3);
        assert_eq!(partial.batch_size, 10_000);
        assert!(serde_json::from_str::<SearchConfig>("{\"lmax\": 3}").is_err());
    }

    #[test]
    fn breakdown_uses_the_phase_names() {
        let s = Stats {
            create_voxel_maps_ms: 10.0,
            set_source_ms: 1.0,
            initial_nodes_ms: 2.0,
            find_best_score_ms: 3.0,
            pop_remaining_queue_ms: 4.0,
            ..Stats::default()
        };
        let b = s.breakdown();
        assert_eq!(b[0].name, "Preprocessing");
        assert_eq!(b[0].total_ms, 11.0);
        assert_eq!(b[1].name, "Localization");
        assert_eq!(b[1].total_ms, 9.0);
        let names: Vec<&str> = b
            .iter()
            .flat_map(|g| g.phases.iter().map(|p| p.0.as_str()))
            .collect();
        assert_eq!(
            names,
            [
                "Create voxel maps",
                "Set source point cloud",
                "Initial nodes calculation",
                "Find best score",
                "Pop remaining queue"
            ]
        );
    }
}
