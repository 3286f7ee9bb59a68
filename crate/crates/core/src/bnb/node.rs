use serde::{Deserialize, Serialize};

use super::angular::AngularGrid;
use super::SearchError;
use crate::cloud::Aabb;
use crate::geometry::{pose_to_transform, Pose6, Transform};
use crate::voxelmap::level_resolution;

/// Initial sets larger than this are refused.
const MAX_INITIAL_NODES: u64 = 200_000_000;

/// A cell of the discretized pose space.
///
/// Translation is `r_l * trans`; rotation index `i` on each axis maps to
/// `W_min + δ'(r_l) * i` of that level's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub trans: [i32; 3],
    /// Roll, pitch, yaw indices.
    pub rot: [i32; 3],
    pub level: u32,
    pub score: Option<u32>,
}

impl Node {
    pub fn new(trans: [i32; 3], rot: [i32; 3], level: u32) -> Self {
        Self {
            trans,
            rot,
            level,
            score: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.level == 0
    }
}

/// Inclusive translational index bounds of the initial set at `l_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransRange {
    pub min: [i32; 3],
    pub max: [i32; 3],
}

impl TransRange {
    /// `[floor(W_min / r_lmax), ceil(W_max / r_lmax)]` per axis.
    pub fn from_box(b: &Aabb, r: f64, l_max: u32) -> Result<Self, SearchError> {
        if !b.is_valid() {
            return Err(SearchError::EmptySearchSpace(format!(
                "translation range {b:?} is empty"
            )));
        }
        let step = level_resolution(r, l_max);
        let mut min = [0; 3];
        let mut max = [0; 3];
        for axis in 0..3 {
            let lo = (b.min[axis] / step).floor();
            let hi = (b.max[axis] / step).ceil();
            let lim = (i32::MAX >> (l_max + 1)) as f64;
            if !(lo.abs() < lim && hi.abs() < lim) {
                return Err(SearchError::InvalidConfig(format!(
                    "translation range {b:?} is too large for r = {r}, l_max = {l_max}"
                )));
            }
            min[axis] = lo as i32;
            max[axis] = hi as i32;
        }
        Ok(Self { min, max })
    }

    pub fn counts(&self) -> [u64; 3] {
        std::array::from_fn(|a| (self.max[a] - self.min[a] + 1) as u64)
    }

    /// Inclusive leaf-level index bounds covered by the descendants of the
    /// initial set.
    pub fn leaf_bounds(&self, l_max: u32) -> ([i64; 3], [i64; 3]) {
        let s = 1i64 << l_max;
        (
            self.min.map(|v| v as i64 * s),
            self.max.map(|v| (v as i64 + 1) * s - 1),
        )
    }
}

pub fn node_pose(node: &Node, grids: &AngularGrid, r: f64) -> Pose6 {
    let rl = level_resolution(r, node.level);
    let g = grids.level(node.level);
    Pose6 {
        x: rl * node.trans[0] as f64,
        y: rl * node.trans[1] as f64,
        z: rl * node.trans[2] as f64,
        roll: g[0].angle(node.rot[0]),
        pitch: g[1].angle(node.rot[1]),
        yaw: g[2].angle(node.rot[2]),
    }
}

pub fn node_transform(node: &Node, grids: &AngularGrid, r: f64) -> Transform {
    pose_to_transform(&node_pose(node, grids, r))
}

/// Direct product of the translational range and every rotation index of
/// the top level, all at level `l_max`.
pub fn initial_nodes(range: &TransRange, grids: &AngularGrid) -> Result<Vec<Node>, SearchError> {
    let level = grids.max_level();
    let g = grids.level(level);
    let total = range.counts().iter().product::<u64>() * grids.rotation_count(level);
    if total == 0 {
        return Err(SearchError::EmptySearchSpace("no initial nodes".into()));
    }
    if total > MAX_INITIAL_NODES {
        return Err(SearchError::InvalidConfig(format!(
            "{total} initial nodes exceed the limit of {MAX_INITIAL_NODES}"
        )));
    }
    let mut nodes = Vec::with_capacity(total as usize);
    for x in range.min[0]..=range.max[0] {
        for y in range.min[1]..=range.max[1] {
            for z in range.min[2]..=range.max[2] {
                for a in 0..g[0].index_count as i32 {
                    for b in 0..g[1].index_count as i32 {
                        for c in 0..g[2].index_count as i32 {
                            nodes.push(Node::new([x, y, z], [a, b, c], level));
                        }
                    }
                }
            }
        }
    }
    Ok(nodes)
}

/// Children of `node` one level down: translation `2c + j` for `j ∈ {0,1}³`
/// times rotation `a c + j` for `j < a` on each axis. Rotation indices that
/// fall outside the child grid are dropped.
pub fn branch(node: &Node, grids: &AngularGrid) -> Result<Vec<Node>, SearchError> {
    let mut out = Vec::new();
    branch_into(node, grids, &mut out)?;
    Ok(out)
}

pub(crate) fn branch_into(
    node: &Node,
    grids: &AngularGrid,
    out: &mut Vec<Node>,
) -> Result<usize, SearchError> {
    if node.level == 0 {
        return Err(SearchError::LeafNode);
    }
    let child_level = node.level - 1;
    let child = grids.level(child_level);
    let mut rot_sets: [(i32, i32); 3] = [(0, 0); 3];
    for axis in 0..3 {
        let a = grids.branch_factor(node.level, axis) as i32;
        let lo = a * node.rot[axis];
        let hi = (lo + a).min(child[axis].index_count as i32);
        rot_sets[axis] = (lo, hi);
    }
    let before = out.len();
    for j in 0..8 {
        let trans = [
            2 * node.trans[0] + (j & 1),
            2 * node.trans[1] + ((j >> 1) & 1),
            2 * node.trans[2] + ((j >> 2) & 1),
        ];
        for a in rot_sets[0].0..rot_sets[0].1 {
            for b in rot_sets[1].0..rot_sets[1].1 {
                for c in rot_sets[2].0..rot_sets[2].1 {
                    out.push(Node::new(trans, [a, b, c], child_level));
                }
            }
        }
    }
    Ok(out.len() - before)
}
