//! Exhaustive evaluation of every leaf node.
//!
//! Level-0 occupancy is copied into a dense bitmap, so the oracle shares no
//! lookup code with the hash map. For each rotation of the leaf grid the
//! rotated scan is computed once; a point whose rotated coordinates are not
//! within 1e-7 of a voxel boundary lands in voxel `floor(R s / r) + c` for
//! leaf translation index `c`, and every other point goes through the same
//! floating-point transform the search uses.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bnb::{node_pose, AngularGrid, Node, TransRange};
use crate::geometry::{pose_to_transform, rotate, transform_point, Point3, Pose6, Transform};
use crate::voxelmap::{level_resolution, MultiResVoxelMap, VoxelCoord};

/// Default cap on the number of leaves evaluated.
pub const DEFAULT_LEAF_LIMIT: u64 = 100_000_000;

/// At most this many maximizers are stored; `argmax_count` has the total.
pub const ARGMAX_STORED: usize = 4096;

const BOUNDARY_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_score: u32,
    /// Maximizing leaves in enumeration order (rotation-major), truncated to
    /// [`ARGMAX_STORED`].
    pub argmax: Vec<Node>,
    pub argmax_count: u64,
    pub leaves: u64,
}

impl OracleResult {
    pub fn best_pose(&self, grids: &AngularGrid, r: f64) -> Option<Pose6> {
        self.argmax.first().map(|n| node_pose(n, grids, r))
    }
}

struct Bitmap {
    origin: [i64; 3],
    dims: [i64; 3],
    bits: Vec<u64>,
}

impl Bitmap {
    fn new(voxels: &[VoxelCoord]) -> Self {
        if voxels.is_empty() {
            return Self {
                origin: [0; 3],
                dims: [0; 3],
                bits: Vec::new(),
            };
        }
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for v in voxels {
            for (a, c) in [v.x, v.y, v.z].into_iter().enumerate() {
                lo[a] = lo[a].min(c as i64);
                hi[a] = hi[a].max(c as i64);
            }
        }
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        let mut map = Self {
            origin: lo,
            dims,
            bits: vec![0; ((dims[0] * dims[1] * dims[2]) as usize).div_ceil(64)],
        };
        for v in voxels {
            let i = map
                .index([v.x as i64, v.y as i64, v.z as i64])
                .expect("voxel inside its own bounds");
            map.bits[i / 64] |= 1 << (i % 64);
        }
        map
    }

    #[inline]
    fn index(&self, v: [i64; 3]) -> Option<usize> {
        let x = v[0] - self.origin[0];
        let y = v[1] - self.origin[1];
        let z = v[2] - self.origin[2];
        if (x as u64) < self.dims[0] as u64
            && (y as u64) < self.dims[1] as u64
            && (z as u64) < self.dims[2] as u64
        {
            Some(((z * self.dims[1] + y) * self.dims[0] + x) as usize)
        } else {
            None
        }
    }

    #[inline]
    fn get(&self, v: [i64; 3]) -> bool {
        self.index(v)
            .is_some_and(|i| self.bits[i / 64] >> (i % 64) & 1 == 1)
    }
}

/// Evaluates every leaf of the search space and returns the maximum score
/// with its maximizers.
///
/// `limit` caps the number of leaves; larger spaces fail with `TooLarge`.
pub fn oracle_search(
    map: &MultiResVoxelMap,
    scan: &[Point3],
    grids: &AngularGrid,
    range: &TransRange,
    score_threshold: u32,
    limit: u64,
) -> Result<OracleResult, HarnessError> {
    let l_max = grids.max_level();
    let (lo, hi) = range.leaf_bounds(l_max);
    let trans_count: u64 = (0..3).map(|a| (hi[a] - lo[a] + 1) as u64).product();
    let leaves = trans_count * grids.rotation_count(0);
    if leaves > limit {
        return Err(HarnessError::TooLarge { leaves, limit });
    }
    if scan.is_empty() {
        return Err(HarnessError::InvalidParams("empty scan".into()));
    }
    let r = map.resolution();
    let r0 = level_resolution(r, 0);
    let bitmap = Bitmap::new(&map.level(0).voxels());

    // Rotations are enumerated in the same nested order as the initial set.
    let g = grids.level(0);
    let mut rotations = Vec::with_capacity(grids.rotation_count(0) as usize);
    for a in 0..g[0].index_count as i32 {
        for b in 0..g[1].index_count as i32 {
            for c in 0..g[2].index_count as i32 {
                rotations.push([a, b, c]);
            }
        }
    }

    // A first pass prunes leaves that cannot reach max(best, threshold); if
    // nothing reaches the threshold a second, unpruned pass finds the exact
    // maximum.
    let mut state = Pass::new();
    for rot in &rotations {
        state.rotation(&bitmap, scan, grids, r0, *rot, lo, hi, score_threshold);
    }
    if state.best < score_threshold {
        state = Pass::new();
        for rot in &rotations {
            state.rotation(&bitmap, scan, grids, r0, *rot, lo, hi, 0);
        }
    }
    Ok(OracleResult {
        best_score: state.best,
        argmax: state.argmax,
        argmax_count: state.argmax_count,
        leaves,
    })
}

struct Pass {
    best: u32,
    argmax: Vec<Node>,
    argmax_count: u64,
    /// Scratch buffers reused across rotations.
    fast: Vec<[i64; 3]>,
    slow: Vec<Point3>,
}

impl Pass {
    fn new() -> Self {
        Self {
            best: 0,
            argmax: Vec::new(),
            argmax_count: 0,
            fast: Vec::new(),
            slow: Vec::new(),
        }
    }

    fn record(&mut self, score: u32, node: Node) {
        if score > self.best || self.argmax_count == 0 {
            self.best = score;
            self.argmax.clear();
            self.argmax_count = 0;
        }
        if score == self.best {
            self.argmax_count += 1;
            if self.argmax.len() < ARGMAX_STORED {
                self.argmax.push(Node {
                    score: Some(score),
                    ..node
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rotation(
        &mut self,
        bitmap: &Bitmap,
        scan: &[Point3],
        grids: &AngularGrid,
        r0: f64,
        rot: [i32; 3],
        lo: [i64; 3],
        hi: [i64; 3],
        floor: u32,
    ) {
        let zero = Node::new([0; 3], rot, 0);
        let rotation = pose_to_transform(&node_pose(&zero, grids, r0)).rotation;
        self.fast.clear();
        self.slow.clear();
        for s in scan {
            let rs = rotate(&rotation, s);
            let scaled = [rs[0] / r0, rs[1] / r0, rs[2] / r0];
            let base = scaled.map(f64::floor);
            let near = (0..3).any(|a| {
                let f = scaled[a] - base[a];
                !(f > BOUNDARY_EPS && f < 1.0 - BOUNDARY_EPS)
            });
            if near || base.iter().any(|b| b.abs() > 1e9) {
                self.slow.push(*s);
            } else {
                self.fast.push(base.map(|b| b as i64));
            }
        }
        let k = scan.len() as u32;
        for cx in lo[0]..=hi[0] {
            for cy in lo[1]..=hi[1] {
                for cz in lo[2]..=hi[2] {
                    let cutoff = if self.argmax_count == 0 {
                        floor
                    } else {
                        self.best.max(floor)
                    };
                    let allowed = k.saturating_sub(cutoff);
                    let mut misses = 0u32;
                    let node = Node::new([cx as i32, cy as i32, cz as i32], rot, 0);
                    if !self.slow.is_empty() {
                        let p = node_pose(&node, grids, r0);
                        let t = Transform {
                            rotation,
                            translation: Vector3::new(p.x, p.y, p.z),
                        };
                        for s in &self.slow {
                            let q = transform_point(&t, s);
                            let hit = VoxelCoord::of_point(&q, r0)
                                .is_some_and(|v| bitmap.get([v.x as i64, v.y as i64, v.z as i64]));
                            if !hit {
                                misses += 1;
                            }
                        }
                    }
                    if misses > allowed {
                        continue;
                    }
                    for b in &self.fast {
                        if !bitmap.get([b[0] + cx, b[1] + cy, b[2] + cz]) {
                            misses += 1;
                            if misses > allowed {
                                break;
                            }
                        }
                    }
                    if misses > allowed {
                        continue;
                    }
                    self.record(k - misses, node);
                }
            }
        }
    }
}
