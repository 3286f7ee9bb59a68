//! Synthetic scenes, the exhaustive oracle, evaluation metrics and the
//! configuration benchmark.

mod bench;
mod bounds;
mod oracle;
mod scene;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bnb::{search, SearchConfig, SearchError, SearchResult, Stats};
use crate::cloud::{auto_leaf, voxel_grid_downsample, CloudError, PointCloud};
use crate::geometry::{rotation_error, translation_error, Pose6};
use crate::voxelmap::{MapError, MapParams, MultiResVoxelMap};

pub use bench::{
    median_iqr, run_benchmark, standard_configs, BenchConfig, BenchReport, BenchRow, ConfigSummary,
    Processing,
};
pub use bounds::{sample_bound_pairs, BoundSample, ParentSampling};
pub use oracle::{oracle_search, OracleResult, ARGMAX_STORED, DEFAULT_LEAF_LIMIT};
pub use scene::{fraction_within, gen_scene, Scene, SceneParams};

/// Success thresholds on the final pose error.
pub const MAX_TRANS_ERR: f64 = 2.0;
pub const MAX_ROT_ERR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("seed {seed}: no feasible sensor pose after {attempts} attempts")]
    InfeasiblePose { seed: u64, attempts: usize },
    #[error("leaf grid has {leaves} nodes, above the oracle limit of {limit}")]
    TooLarge { leaves: u64, limit: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub trans_err: f64,
    pub rot_err: f64,
    pub success: bool,
    pub runtime_ms: f64,
    pub stats: Stats,
}

impl EvalOutcome {
    pub fn new(estimate: &Pose6, gt: &Pose6, runtime_ms: f64, stats: Stats) -> Self {
        let trans_err = translation_error(estimate, gt);
        let rot_err = rotation_error(estimate, gt);
        Self {
            trans_err,
            rot_err,
            success: trans_err < MAX_TRANS_ERR && rot_err < MAX_ROT_ERR,
            runtime_ms,
            stats,
        }
    }
}

/// Voxel-grid downsampling to roughly `target` points, with its wall time.
/// Clouds already at or below the target are returned unchanged.
pub fn downsample_scan(scan: &PointCloud, target: usize) -> Result<(PointCloud, f64), CloudError> {
    let start = Instant::now();
    if scan.len() <= target {
        return Ok((scan.clone(), 0.0));
    }
    let leaf = auto_leaf(scan, target)?;
    let out = voxel_grid_downsample(scan, leaf.leaf)?;
    Ok((out, start.elapsed().as_secs_f64() * 1e3))
}

/// Downsamples a raw scan and searches it. Downsampling time is added to
/// `set_source_ms`.
pub fn localize(
    map: &MultiResVoxelMap,
    raw_scan: &PointCloud,
    cfg: &SearchConfig,
    downsample_target: Option<usize>,
) -> Result<(SearchResult, PointCloud), HarnessError> {
    let (scan, ds_ms) = match downsample_target {
        Some(t) => downsample_scan(raw_scan, t)?,
        None => (raw_scan.clone(), 0.0),
    };
    let mut result = search(map, &scan, cfg)?;
    result.stats.set_source_ms += ds_ms;
    Ok((result, scan))
}

/// Builds the voxel map for `cloud`, returning it with its build time.
pub fn build_map(
    cloud: &PointCloud,
    cfg: &SearchConfig,
) -> Result<(MultiResVoxelMap, f64), MapError> {
    let start = Instant::now();
    let params = MapParams {
        resolution: cfg.r,
        max_level: cfg.l_max,
        ..MapParams::default()
    };
    let map = MultiResVoxelMap::build(cloud, &params)?;
    Ok((map, start.elapsed().as_secs_f64() * 1e3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnb::{BranchMode, Strategy};

    #[test]
    fn success_needs_both_errors_below_threshold() {
        let gt = Pose6::new(10.0, 10.0, 1.0, 0.0, 0.0, 1.0);
        let ok = EvalOutcome::new(
            &Pose6::new(11.0, 10.5, 1.0, 0.0, 0.0, 1.03),
            &gt,
            1.0,
            Stats::default(),
        );
        assert!(ok.success);
        let far = EvalOutcome::new(
            &Pose6::new(12.0, 10.0, 1.0, 0.0, 0.0, 1.0),
            &gt,
            1.0,
            Stats::default(),
        );
        assert_eq!(far.trans_err, 2.0);
        assert!(!far.success);
        let turned = EvalOutcome::new(
            &Pose6::new(10.0, 10.0, 1.0, 0.0, 0.0, 1.05),
            &gt,
            1.0,
            Stats::default(),
        );
        assert!(!turned.success);
        // wrap-around: yaw 0.01 vs 2π - 0.01
        let a = Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.01);
        let b = Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, -0.01);
        assert!(EvalOutcome::new(&a, &b, 0.0, Stats::default()).success);
    }

    #[test]
    fn self_localization_on_a_scene() {
        let params = SceneParams {
            roll_pitch_noise: 0.0,
            scan_samples: 6000,
            ..SceneParams::default()
        };
        let scene = gen_scene(&params, 11).unwrap();
        let cfg = SearchConfig {
            l_max: 4,
            strategy: Strategy::Bfs,
            branch_mode: BranchMode::RotoTrans,
            ..SearchConfig::default()
        };
        let (map, build_ms) = build_map(&scene.map_cloud, &cfg).unwrap();
        assert!(build_ms >= 0.0);
        let (result, scan) = localize(&map, &scene.scan_cloud, &cfg, Some(1000)).unwrap();
        assert!(scan.len() >= 500 && scan.len() <= 2000, "{}", scan.len());
        assert!(result.matched);
        assert!(result.best_score >= result.score_threshold);
        let eval = EvalOutcome::new(&result.best_pose, &scene.gt_pose, 0.0, result.stats.clone());
        assert!(eval.success, "{eval:?} vs {:?}", scene.gt_pose);
    }
}
