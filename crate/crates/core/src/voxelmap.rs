//! Multi-resolution sparse voxel maps.
//!
//! Each level stores the occupied voxels of the map at resolution
//! `r_l = 2^l * r` in an open-addressing hash table (linear probing, step 1,
//! wraparound). Every source voxel `v` also marks `v - j` for `j ∈ {0,1}^3`,
//! so that a lookup at level `l` bounds the lookups of all translational
//! children at level `l - 1`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cloud::{bounding_box, Aabb, CloudError, PointCloud};
use crate::geometry::{transform_point, Point3, Transform};

pub const HASH_P1: u64 = 73_856_093;
pub const HASH_P2: u64 = 19_349_663;
pub const HASH_P3: u64 = 83_492_791;

/// Probe distance beyond which an insert counts as a collision when sizing
/// the table.
pub const PROBE_LIMIT: usize = 10;

pub const MAP_MAGIC: &[u8; 6] = b"3DBBS\x01";
pub const MAP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("level {level}: hash table would need {buckets} buckets, above the cap of {cap}")]
    CapacityExceeded {
        level: u32,
        buckets: usize,
        cap: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad map file: {0}")]
    Format(String),
    #[error("invalid map parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Integer voxel index `floor(p / r_l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

/// Reserved as the empty-slot marker; never produced by [`VoxelCoord::of_point`].
const EMPTY: VoxelCoord = VoxelCoord {
    x: i32::MIN,
    y: i32::MIN,
    z: i32::MIN,
};

impl VoxelCoord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    /// Voxel containing `p` at the given resolution, or `None` when the index
    /// does not fit the representable range.
    #[inline]
    pub fn of_point(p: &Point3, resolution: f64) -> Option<Self> {
        Self::of_coords(p.x, p.y, p.z, resolution)
    }

    #[inline]
    pub fn of_coords(x: f64, y: f64, z: f64, resolution: f64) -> Option<Self> {
        const LIM: f64 = (1u64 << 30) as f64;
        let fx = (x / resolution).floor();
        let fy = (y / resolution).floor();
        let fz = (z / resolution).floor();
        // also rejects NaN
        if fx.abs() < LIM && fy.abs() < LIM && fz.abs() < LIM {
            Some(Self::new(fx as i32, fy as i32, fz as i32))
        } else {
            None
        }
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    /// Center of this voxel in world coordinates.
    pub fn center(self, resolution: f64) -> Point3 {
        Point3::new(
            (self.x as f64 + 0.5) * resolution,
            (self.y as f64 + 0.5) * resolution,
            (self.z as f64 + 0.5) * resolution,
        )
    }
}

#[inline]
fn xor_hash(v: VoxelCoord) -> u64 {
    (v.x as i64 as u64).wrapping_mul(HASH_P1)
        ^ (v.y as i64 as u64).wrapping_mul(HASH_P2)
        ^ (v.z as i64 as u64).wrapping_mul(HASH_P3)
}

/// Home bucket of `v` in a table of `buckets` slots: the three-prime XOR hash
/// over wrapping 64-bit arithmetic, modulo the table size.
#[inline]
pub fn spatial_hash(v: VoxelCoord, buckets: usize) -> usize {
    assert!(buckets >= 1, "bucket count must be positive");
    (xor_hash(v) % buckets as u64) as usize
}

/// Parameters for building a [`MultiResVoxelMap`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapParams {
    /// Finest voxel size `r` in meters.
    pub resolution: f64,
    pub max_level: u32,
    /// Largest acceptable probe-overflow rate, see [`LevelMap::collision_rate`].
    pub collision_target: f64,
    /// Upper bound on the bucket count of any level.
    pub max_buckets: usize,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            max_level: 6,
            collision_target: 0.001,
            max_buckets: 1 << 26,
        }
    }
}

impl MapParams {
    fn validate(&self) -> Result<(), MapError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(MapError::InvalidParam(format!(
                "resolution {}",
                self.resolution
            )));
        }
        if !(self.collision_target >= 0.0 && self.collision_target < 1.0) {
            return Err(MapError::InvalidParam(format!(
                "collision_target {}",
                self.collision_target
            )));
        }
        if self.max_level > 20 {
            return Err(MapError::InvalidParam(format!(
                "max_level {}",
                self.max_level
            )));
        }
        if self.max_buckets == 0 {
            return Err(MapError::InvalidParam(
                "max_buckets must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One resolution level: an open-addressing set of occupied voxels.
#[derive(Clone, Debug)]
pub struct LevelMap {
    level: u32,
    resolution: f64,
    slots: Vec<VoxelCoord>,
    mask: usize,
    occupied: usize,
    collision_rate: f64,
    primary_collision_rate: f64,
    max_displacement: usize,
}

impl LevelMap {
    /// Voxelizes `points` at `r_l = 2^level * r`, inflates every voxel by its
    /// seven lower neighbours and inserts the result.
    pub fn build(
        points: &PointCloud,
        level: u32,
        r: f64,
        collision_target: f64,
        max_buckets: usize,
    ) -> Result<Self, MapError> {
        if points.is_empty() {
            return Err(CloudError::EmptyCloud.into());
        }
        let resolution = level_resolution(r, level);
        let mut inflated = BTreeSet::new();
        for p in points.iter() {
            let v = VoxelCoord::of_point(p, resolution).ok_or_else(|| {
                MapError::InvalidParam(format!("point {p:?} outside voxel index range"))
            })?;
            for j in 0..8 {
                inflated.insert(v.offset(-(j & 1), -((j >> 1) & 1), -((j >> 2) & 1)));
            }
        }
        let voxels: Vec<VoxelCoord> = inflated.into_iter().collect();
        Self::from_voxels(level, resolution, &voxels, collision_target, max_buckets)
    }

    /// Builds the table from an inflated voxel list.
    ///
    /// The bucket count starts at `next_power_of_two(4 n)` and doubles until
    /// the probe-overflow rate (see [`LevelMap::collision_rate`]) is at most
    /// `collision_target`.
    pub fn from_voxels(
        level: u32,
        resolution: f64,
        voxels: &[VoxelCoord],
        collision_target: f64,
        max_buckets: usize,
    ) -> Result<Self, MapError> {
        if voxels.contains(&EMPTY) {
            return Err(MapError::InvalidParam(
                "voxel coordinate collides with the empty marker".into(),
            ));
        }
        let mut buckets = (4 * voxels.len().max(1)).next_power_of_two();
        loop {
            if buckets > max_buckets {
                return Err(MapError::CapacityExceeded {
                    level,
                    buckets,
                    cap: max_buckets,
                });
            }
            let mut map = Self {
                level,
                resolution,
                slots: vec![EMPTY; buckets],
                mask: buckets - 1,
                occupied: 0,
                collision_rate: 0.0,
                primary_collision_rate: 0.0,
                max_displacement: 0,
            };
            let mut primary = 0usize;
            let mut overflow = 0usize;
            let mut inserted = 0usize;
            for &v in voxels {
                if let Some(displacement) = map.insert(v) {
                    inserted += 1;
                    if displacement > 0 {
                        primary += 1;
                    }
                    if displacement > PROBE_LIMIT {
                        overflow += 1;
                    }
                    map.max_displacement = map.max_displacement.max(displacement);
                }
            }
            if inserted > 0 {
                map.collision_rate = overflow as f64 / inserted as f64;
                map.primary_collision_rate = primary as f64 / inserted as f64;
            }
            if map.collision_rate <= collision_target {
                return Ok(map);
            }
            buckets *= 2;
        }
    }

    /// Inserts `v`, returning its distance from the home bucket, or `None`
    /// if it was already present.
    fn insert(&mut self, v: VoxelCoord) -> Option<usize> {
        let mut i = (xor_hash(v) as usize) & self.mask;
        let mut displacement = 0;
        loop {
            let slot = self.slots[i];
            if slot == EMPTY {
                self.slots[i] = v;
                self.occupied += 1;
                return Some(displacement);
            }
            if slot == v {
                return None;
            }
            displacement += 1;
            i = (i + 1) & self.mask;
        }
    }

    /// Whether voxel `v` is stored; probes from its home bucket until the key
    /// or an empty slot.
    #[inline]
    pub fn contains(&self, v: VoxelCoord) -> bool {
        let mut i = (xor_hash(v) as usize) & self.mask;
        loop {
            let slot = self.slots[i];
            if slot == v {
                return true;
            }
            if slot == EMPTY {
                return false;
            }
            i = (i + 1) & self.mask;
        }
    }

    /// Binary occupancy of the voxel containing `p`.
    #[inline]
    pub fn lookup(&self, p: &Point3) -> bool {
        match VoxelCoord::of_point(p, self.resolution) {
            Some(v) => self.contains(v),
            None => false,
        }
    }

    /// Number of scan points that land in occupied voxels after `t`.
    pub fn score(&self, t: &Transform, scan: &[Point3]) -> u32 {
        scan.iter()
            .filter(|s| self.lookup(&transform_point(t, s)))
            .count() as u32
    }

    /// Like [`LevelMap::score`], but stops once the score can no longer reach
    /// `cutoff`. The result is exact when it is `>= cutoff`; otherwise it is
    /// some value below `cutoff`.
    pub fn score_with_cutoff(&self, t: &Transform, scan: &[Point3], cutoff: u32) -> u32 {
        let k = scan.len() as u32;
        if cutoff == 0 {
            return self.score(t, scan);
        }
        if cutoff > k {
            return self.score(t, scan);
        }
        let allowed_misses = k - cutoff;
        let mut misses = 0u32;
        for s in scan {
            if !self.lookup(&transform_point(t, s)) {
                misses += 1;
                if misses > allowed_misses {
                    // an upper bound on the true score, still below cutoff
                    return k - misses;
                }
            }
        }
        k - misses
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn bucket_count(&self) -> usize {
        self.slots.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied
    }

    /// Fraction of stored voxels that sit more than [`PROBE_LIMIT`] buckets
    /// past their home bucket. This is the quantity bounded by the
    /// construction `collision_target`.
    pub fn collision_rate(&self) -> f64 {
        self.collision_rate
    }

    /// Fraction of inserts whose home bucket already held another voxel.
    pub fn primary_collision_rate(&self) -> f64 {
        self.primary_collision_rate
    }

    /// Longest probe distance of any stored voxel.
    pub fn max_displacement(&self) -> usize {
        self.max_displacement
    }

    pub fn load_factor(&self) -> f64 {
        self.occupied as f64 / self.slots.len() as f64
    }

    /// Stored voxels in ascending coordinate order.
    pub fn voxels(&self) -> Vec<VoxelCoord> {
        let mut v: Vec<VoxelCoord> = self.slots.iter().copied().filter(|s| *s != EMPTY).collect();
        v.sort_unstable();
        v
    }
}

#[inline]
pub fn level_resolution(r: f64, level: u32) -> f64 {
    r * (1u64 << level) as f64
}

/// Occupancy maps for levels `0..=max_level`.
#[derive(Clone, Debug)]
pub struct MultiResVoxelMap {
    resolution: f64,
    max_level: u32,
    levels: Vec<LevelMap>,
    bbox: Aabb,
}

impl MultiResVoxelMap {
    pub fn build(map_points: &PointCloud, params: &MapParams) -> Result<Self, MapError> {
        params.validate()?;
        let bbox = bounding_box(map_points)?;
        let levels = (0..=params.max_level)
            .map(|l| {
                LevelMap::build(
                    map_points,
                    l,
                    params.resolution,
                    params.collision_target,
                    params.max_buckets,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            resolution: params.resolution,
            max_level: params.max_level,
            levels,
            bbox,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn levels(&self) -> &[LevelMap] {
        &self.levels
    }

    pub fn level(&self, l: u32) -> &LevelMap {
        &self.levels[l as usize]
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    /// Writes the little-endian map file. Voxels are written in ascending
    /// order so identical maps produce identical files.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MapError> {
        let path = path.as_ref();
        let io_err = |source| MapError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
        w.write_all(&self.to_bytes()).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAP_MAGIC);
        buf.extend_from_slice(&MAP_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.resolution.to_le_bytes());
        buf.extend_from_slice(&self.max_level.to_le_bytes());
        for v in self.bbox.min.iter().chain(self.bbox.max.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for level in &self.levels {
            let voxels = level.voxels();
            buf.extend_from_slice(&level.level.to_le_bytes());
            buf.extend_from_slice(&(voxels.len() as u64).to_le_bytes());
            for v in voxels {
                buf.extend_from_slice(&v.x.to_le_bytes());
                buf.extend_from_slice(&v.y.to_le_bytes());
                buf.extend_from_slice(&v.z.to_le_bytes());
            }
        }
        buf
    }

    /// Reads a map file and rebuilds the hash tables.
    pub fn load(
        path: impl AsRef<Path>,
        collision_target: f64,
        max_buckets: usize,
    ) -> Result<Self, MapError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| MapError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&bytes, collision_target, max_buckets)
    }

    pub fn from_bytes(
        bytes: &[u8],
        collision_target: f64,
        max_buckets: usize,
    ) -> Result<Self, MapError> {
        let mut rd = ByteReader { bytes, pos: 0 };
        if rd.take(6)? != MAP_MAGIC {
            return Err(MapError::Format("bad magic".into()));
        }
        let version = rd.u32()?;
        if version != MAP_VERSION {
            return Err(MapError::Format(format!(
                "unsupported version {version}, expected {MAP_VERSION}"
            )));
        }
        let resolution = rd.f64()?;
        let max_level = rd.u32()?;
        let params = MapParams {
            resolution,
            max_level,
            collision_target,
            max_buckets,
        };
        params
            .validate()
            .map_err(|e| MapError::Format(e.to_string()))?;
        let mut b = [0.0; 6];
        for x in &mut b {
            *x = rd.f64()?;
        }
        let bbox = Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]);
        let mut levels = Vec::with_capacity(max_level as usize + 1);
        for expected in 0..=max_level {
            let l = rd.u32()?;
            if l != expected {
                return Err(MapError::Format(format!(
                    "expected level {expected}, found {l}"
                )));
            }
            let count = rd.u64()? as usize;
            if count > rd.remaining() / 12 {
                return Err(MapError::Format(format!("level {l}: truncated voxel list")));
            }
            let mut voxels = Vec::with_capacity(count);
            for _ in 0..count {
                let v = VoxelCoord::new(rd.i32()?, rd.i32()?, rd.i32()?);
                if v == EMPTY {
                    return Err(MapError::Format("reserved voxel coordinate".into()));
                }
                voxels.push(v);
            }
            voxels.sort_unstable();
            voxels.dedup();
            levels.push(LevelMap::from_voxels(
                l,
                level_resolution(resolution, l),
                &voxels,
                collision_target,
                max_buckets,
            )?);
        }
        if rd.remaining() != 0 {
            return Err(MapError::Format("trailing bytes".into()));
        }
        Ok(Self {
            resolution,
            max_level,
            levels,
            bbox,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MapError> {
        if self.pos + n > self.bytes.len() {
            return Err(MapError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
    fn u32(&mut self) -> Result<u32, MapError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32, MapError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, MapError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, MapError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
