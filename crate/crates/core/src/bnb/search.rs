use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::angular::AngularGrid;
use super::eval::{batch_evaluate_with_cutoff, ScoreContext, WorkerPool};
use super::node::{branch_into, initial_nodes, node_pose, Node, TransRange};
use super::{SearchConfig, SearchError, SearchResult, Stats, Strategy};
use crate::cloud::{max_range, PointCloud};
use crate::geometry::{Point3, Pose6};
use crate::voxelmap::MultiResVoxelMap;

/// A pruning decision: the node's (possibly truncated) score and the
/// incumbent it lost against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub score: u32,
    pub best: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    /// Incumbent after initialization and after every leaf match.
    pub best_history: Vec<u32>,
    pub pruned: Vec<PruneRecord>,
}

struct Entry {
    key: u128,
    node: Node,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

/// Node queue; the largest key pops first.
///
/// BFS: score descending, then level descending, then insertion order.
/// DFS: level ascending, then score descending, then most recent first.
struct Queue {
    strategy: Strategy,
    heap: BinaryHeap<Entry>,
    seq: u64,
}

impl Queue {
    fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    fn push(&mut self, node: Node) {
        let score = node.score.expect("queued nodes are scored") as u128;
        let level = node.level as u128;
        let key = match self.strategy {
            Strategy::Bfs => (score << 96) | (level << 64) | (u64::MAX - self.seq) as u128,
            Strategy::Dfs => ((u32::MAX as u128 - level) << 96) | (score << 64) | self.seq as u128,
        };
        self.seq += 1;
        self.heap.push(Entry { key, node });
    }

    fn pop(&mut self) -> Option<Node> {
        self.heap.pop().map(|e| e.node)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Angular grids and initial translation range for `scan` under `cfg`.
///
/// The maximum range is the scan's unless `cfg.d_max` overrides it; the
/// translation range is the map bounding box unless `cfg.trans_range` is set.
pub fn search_space(
    map: &MultiResVoxelMap,
    scan: &PointCloud,
    cfg: &SearchConfig,
) -> Result<(AngularGrid, TransRange), SearchError> {
    cfg.validate()?;
    if scan.is_empty() {
        return Err(SearchError::DegenerateScan("scan has no points".into()));
    }
    if scan
        .iter()
        .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
    {
        return Err(SearchError::DegenerateScan(
            "scan contains non-finite coordinates".into(),
        ));
    }
    let d_max = match cfg.d_max {
        Some(d) => d,
        None => max_range(scan).map_err(|e| SearchError::DegenerateScan(e.to_string()))?,
    };
    if d_max.is_nan() || d_max <= 0.0 {
        return Err(SearchError::DegenerateScan(
            "all scan points are at the sensor origin".into(),
        ));
    }
    let grids = AngularGrid::new(
        [cfg.roll_range, cfg.pitch_range, cfg.yaw_range],
        cfg.r,
        cfg.l_max,
        d_max,
        cfg.branch_mode,
    )?;
    let range = TransRange::from_box(
        &cfg.trans_range.unwrap_or_else(|| map.bbox()),
        cfg.r,
        cfg.l_max,
    )?;
    Ok((grids, range))
}

/// Runs the batched branch-and-bound search of `scan` against `map`.
///
/// Time spent in [`search_space`] is reported as `set_source_ms`.
pub fn search(
    map: &MultiResVoxelMap,
    scan: &PointCloud,
    cfg: &SearchConfig,
) -> Result<SearchResult, SearchError> {
    let start = Instant::now();
    let (grids, range) = search_space(map, scan, cfg)?;
    let set_source_ms = ms_since(start);
    let mut result = search_with_grids(map, &scan.points, cfg, &grids, &range)?;
    result.stats.set_source_ms = set_source_ms;
    Ok(result)
}

/// The search loop proper, on precomputed grids and translation range.
pub fn search_with_grids(
    map: &MultiResVoxelMap,
    scan: &[Point3],
    cfg: &SearchConfig,
    grids: &AngularGrid,
    range: &TransRange,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    if scan.is_empty() {
        return Err(SearchError::DegenerateScan("scan has no points".into()));
    }
    if map.resolution() != cfg.r || map.max_level() != cfg.l_max || grids.max_level() != cfg.l_max {
        return Err(SearchError::InvalidConfig(format!(
            "map has r = {}, l_max = {}; search expects r = {}, l_max = {}",
            map.resolution(),
            map.max_level(),
            cfg.r,
            cfg.l_max
        )));
    }
    let pool = WorkerPool::new(cfg.workers)?;
    let ctx = ScoreContext {
        map,
        scan,
        grids,
        r: cfg.r,
    };
    let b = cfg.batch_size;
    let threshold = cfg.score_threshold(scan.len());
    let mut best = threshold;
    let mut best_node: Option<Node> = None;
    let mut stats = Stats::default();
    let mut audit = cfg.audit.then(Audit::default);
    if let Some(a) = audit.as_mut() {
        a.best_history.push(best);
    }
    let mut queue = Queue::new(cfg.strategy);

    let t_init = Instant::now();
    let mut nodes = initial_nodes(range, grids)?;
    stats.nodes_generated = nodes.len() as u64;
    for chunk in nodes.chunks_mut(b) {
        batch_evaluate_with_cutoff(chunk, &ctx, &pool, threshold);
    }
    for n in nodes {
        let s = n.score.unwrap_or(0);
        if s < threshold {
            stats.nodes_pruned += 1;
            if let Some(a) = audit.as_mut() {
                a.pruned.push(PruneRecord {
                    score: s,
                    best: threshold,
                });
            }
        } else {
            queue.push(n);
        }
    }
    stats.initial_nodes_ms = ms_since(t_init);
    log::debug!(
        "initial nodes: {} queued, {} pruned",
        queue.heap.len(),
        stats.nodes_pruned
    );

    let t_loop = Instant::now();
    let mut last_match: Option<Instant> = None;
    let mut pending: Vec<Node> = Vec::new();
    let flush = |pending: &mut Vec<Node>,
                 queue: &mut Queue,
                 stats: &mut Stats,
                 audit: &mut Option<Audit>,
                 best: u32| {
        batch_evaluate_with_cutoff(pending, &ctx, &pool, best);
        stats.batches_flushed += 1;
        for n in pending.drain(..) {
            let s = n.score.unwrap_or(0);
            if s < best {
                stats.nodes_pruned += 1;
                if let Some(a) = audit.as_mut() {
                    a.pruned.push(PruneRecord { score: s, best });
                }
            } else {
                queue.push(n);
            }
        }
    };
    loop {
        let Some(c) = queue.pop() else {
            if pending.is_empty() {
                break;
            }
            flush(&mut pending, &mut queue, &mut stats, &mut audit, best);
            continue;
        };
        let s = c.score.unwrap_or(0);
        if s < best {
            stats.nodes_pruned += 1;
            if let Some(a) = audit.as_mut() {
                a.pruned.push(PruneRecord { score: s, best });
            }
            continue;
        }
        if c.is_leaf() {
            best = s;
            best_node = Some(c);
            last_match = Some(Instant::now());
            if let Some(a) = audit.as_mut() {
                a.best_history.push(best);
            }
        } else {
            stats.nodes_generated += branch_into(&c, grids, &mut pending)? as u64;
        }
        if pending.len() > b {
            flush(&mut pending, &mut queue, &mut stats, &mut audit, best);
        }
    }
    match last_match {
        Some(t) => {
            stats.find_best_score_ms = (t - t_loop).as_secs_f64() * 1e3;
            stats.pop_remaining_queue_ms = ms_since(t);
        }
        None => stats.find_best_score_ms = ms_since(t_loop),
    }
    log::debug!(
        "search done: best {best} (threshold {threshold}), {} generated, {} pruned, {} batches",
        stats.nodes_generated,
        stats.nodes_pruned,
        stats.batches_flushed
    );

    Ok(SearchResult {
        best_pose: best_node.map_or_else(Pose6::identity, |n| node_pose(&n, grids, cfg.r)),
        best_score: best,
        matched: best_node.is_some(),
        best_node,
        score_threshold: threshold,
        num_points: scan.len(),
        d_max: grids.d_max(),
        stats,
        audit,
    })
}
