use rayon::prelude::*;

use super::angular::AngularGrid;
use super::node::{node_transform, Node};
use super::{SearchError, WorkerMode};
use crate::geometry::Point3;
use crate::voxelmap::MultiResVoxelMap;

/// Nodes per rayon task; keeps scheduling overhead small next to the
/// per-node cost of scoring a full scan.
const MIN_CHUNK: usize = 16;

/// Read-only inputs shared by every score evaluation.
#[derive(Clone, Copy)]
pub struct ScoreContext<'a> {
    pub map: &'a MultiResVoxelMap,
    pub scan: &'a [Point3],
    pub grids: &'a AngularGrid,
    pub r: f64,
}

/// Exact score of `node` against the voxel map of its level.
pub fn node_score(node: &Node, ctx: &ScoreContext) -> u32 {
    let t = node_transform(node, ctx.grids, ctx.r);
    ctx.map.level(node.level).score(&t, ctx.scan)
}

fn node_score_with_cutoff(node: &Node, ctx: &ScoreContext, cutoff: u32) -> u32 {
    let t = node_transform(node, ctx.grids, ctx.r);
    ctx.map
        .level(node.level)
        .score_with_cutoff(&t, ctx.scan, cutoff)
}

/// Executes batch scoring on one thread or on a dedicated rayon pool.
pub enum WorkerPool {
    Single,
    Pool(rayon::ThreadPool),
}

impl WorkerPool {
    pub fn new(mode: WorkerMode) -> Result<Self, SearchError> {
        match mode {
            WorkerMode::Single => Ok(WorkerPool::Single),
            WorkerMode::Multi(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(WorkerPool::Pool)
                .map_err(|e| SearchError::InvalidConfig(format!("cannot start {n} workers: {e}"))),
        }
    }

    fn for_each(&self, nodes: &mut [Node], f: impl Fn(&mut Node) + Sync + Send) {
        match self {
            WorkerPool::Single => nodes.iter_mut().for_each(f),
            WorkerPool::Pool(pool) => {
                pool.install(|| nodes.par_iter_mut().with_min_len(MIN_CHUNK).for_each(f))
            }
        }
    }
}

/// Scores every node in place. Order is preserved and the result does not
/// depend on the worker count.
pub fn batch_evaluate(nodes: &mut [Node], ctx: &ScoreContext, pool: &WorkerPool) {
    pool.for_each(nodes, |n| n.score = Some(node_score(n, ctx)));
}

/// As [`batch_evaluate`], but scores below `cutoff` may be replaced by any
/// smaller value. Nodes that survive a `score >= cutoff` filter carry their
/// exact score.
pub(crate) fn batch_evaluate_with_cutoff(
    nodes: &mut [Node],
    ctx: &ScoreContext,
    pool: &WorkerPool,
    cutoff: u32,
) {
    pool.for_each(nodes, |n| {
        n.score = Some(node_score_with_cutoff(n, ctx, cutoff))
    });
}
