//! Point-cloud filtering: plane removal, workspace crop, voxel budget,
//! and optional clustering with bounding boxes.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::Isometry3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{FrameId, Vec3};

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";
/// Bytes per point in the binary cloud layout: 3 x f32 + 3 x u8.
pub const PCB_POINT_BYTES: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("points and colors differ in length ({points} vs {colors})")]
    LengthMismatch { points: usize, colors: usize },
    #[error("bad point cloud file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[u8; 3]>,
    pub frame: FrameId,
}

impl PointCloud {
    pub fn new(frame: FrameId) -> Self {
        PointCloud {
            points: Vec::new(),
            colors: Vec::new(),
            frame,
        }
    }

    pub fn from_parts(points: Vec<Vec3>, colors: Vec<[u8; 3]>, frame: FrameId) -> Result<Self, PerceptionError> {
        if points.len() != colors.len() {
            return Err(PerceptionError::LengthMismatch {
                points: points.len(),
                colors: colors.len(),
            });
        }
        Ok(PointCloud { points, colors, frame })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vec3, c: [u8; 3]) {
        self.points.push(p);
        self.colors.push(c);
    }

    /// Subset in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            frame: self.frame,
        }
    }

    /// Keeps points whose mask entry is false, preserving order.
    fn without(&self, drop: &[bool]) -> PointCloud {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !drop[i]).collect();
        self.select(&keep)
    }

    /// Re-expresses the cloud in `frame`, given the pose of the current frame in it.
    pub fn transformed(&self, iso: &Isometry3<f64>, frame: FrameId) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| iso.transform_point(&(*p).into()).coords).collect(),
            colors: self.colors.clone(),
            frame,
        }
    }

    pub fn encoded_len(&self) -> usize {
        4 + 4 + PCB_POINT_BYTES * self.len()
    }

    /// PCB1 layout: magic, u32 count, then per point xyz as f32 LE and rgb.
    pub fn write_pcb<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_pcb_bytes())
    }

    pub fn to_pcb_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(PCB_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (p, c) in self.points.iter().zip(&self.colors) {
            for v in p.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.extend_from_slice(c);
        }
        out
    }

    pub fn read_pcb<R: Read>(mut r: R, frame: FrameId) -> Result<PointCloud, PerceptionError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| PerceptionError::Format(e.to_string()))?;
        Self::from_pcb_bytes(&bytes, frame)
    }

    pub fn from_pcb_bytes(bytes: &[u8], frame: FrameId) -> Result<PointCloud, PerceptionError> {
        if bytes.len() < 8 || &bytes[..4] != PCB_MAGIC {
            return Err(PerceptionError::Format("missing PCB1 header".into()));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != count * PCB_POINT_BYTES {
            return Err(PerceptionError::Format(format!(
                "header says {count} points but body holds {} bytes",
                body.len()
            )));
        }
        let mut cloud = PointCloud::new(frame);
        for rec in body.chunks_exact(PCB_POINT_BYTES) {
            let f = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().unwrap()) as f64;
            let p = Vec3::new(f(0), f(4), f(8));
            if !p.iter().all(|v| v.is_finite()) {
                return Err(PerceptionError::Format("non-finite coordinate".into()));
            }
            cloud.push(p, [rec[12], rec[13], rec[14]]);
        }
        Ok(cloud)
    }
}

/// Plane n.p + d = 0 with unit normal and n.z >= 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub d: f64,
}

impl Plane {
    pub fn new(normal: Vec3, d: f64) -> Option<Plane> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let (mut normal, mut d) = (normal / n, d / n);
        if normal.z < 0.0 {
            normal = -normal;
            d = -d;
        }
        Some(Plane { normal, d })
    }

    /// None when the points are (nearly) collinear.
    pub fn through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Plane> {
        let u = b - a;
        let v = c - a;
        let n = u.cross(&v);
        if n.norm() <= 1e-12 * (u.norm() * v.norm()).max(f64::MIN_POSITIVE) {
            return None;
        }
        Plane::new(n, -n.dot(a))
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Aabb {
        Aabb { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }
}

fn inliers_of(cloud: &PointCloud, plane: &Plane, threshold: f64) -> Vec<usize> {
    (0..cloud.len())
        .filter(|&i| plane.distance(&cloud.points[i]).abs() <= threshold)
        .collect()
}

/// Best-consensus plane from random 3-point samples. The first candidate
/// with the highest inlier count wins.
pub fn segment_plane_ransac(
    cloud: &PointCloud,
    dist_threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<PlaneFit, PerceptionError> {
    let n = cloud.len();
    if n < 3 {
        return Err(PerceptionError::DegenerateInput("fewer than 3 points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..iterations {
        let s = rand::seq::index::sample(&mut rng, n, 3);
        let [a, b, c] = [s.index(0), s.index(1), s.index(2)].map(|i| cloud.points[i]);
        let Some(plane) = Plane::through(&a, &b, &c) else {
            continue;
        };
        let count = cloud
            .points
            .iter()
            .filter(|p| plane.distance(p).abs() <= dist_threshold)
            .count();
        if best.map_or(true, |(_, c)| count > c) {
            best = Some((plane, count));
        }
    }
    match best {
        Some((plane, _)) => Ok(PlaneFit {
            plane,
            inliers: inliers_of(cloud, &plane, dist_threshold),
        }),
        None => Err(PerceptionError::DegenerateInput("every sampled triple was collinear")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRemoval {
    pub min_inlier_fraction: f64,
    pub max_planes: usize,
    pub dist_threshold: f64,
    pub iterations: usize,
}

/// Repeatedly strips the dominant plane while it holds at least
/// `min_inlier_fraction` of what is left. Returns the planes removed.
pub fn remove_large_planes_with(cloud: &PointCloud, opts: &PlaneRemoval, seed: u64) -> (PointCloud, Vec<Plane>) {
    let mut rest = cloud.clone();
    let mut planes = Vec::new();
    for k in 0..opts.max_planes {
        let Ok(fit) = segment_plane_ransac(&rest, opts.dist_threshold, opts.iterations, seed.wrapping_add(k as u64)) else {
            break;
        };
        if (fit.inliers.len() as f64) < opts.min_inlier_fraction * rest.len() as f64 {
            break;
        }
        let mut drop = vec![false; rest.len()];
        for &i in &fit.inliers {
            drop[i] = true;
        }
        rest = rest.without(&drop);
        planes.push(fit.plane);
    }
    (rest, planes)
}

pub fn remove_large_planes(
    cloud: &PointCloud,
    min_inlier_fraction: f64,
    max_planes: usize,
    dist_threshold: f64,
    iterations: usize,
    seed: u64,
) -> PointCloud {
    let opts = PlaneRemoval {
        min_inlier_fraction,
        max_planes,
        dist_threshold,
        iterations,
    };
    remove_large_planes_with(cloud, &opts, seed).0
}

/// Drops points within `threshold` of any of `planes`.
pub fn remove_planes(cloud: &PointCloud, planes: &[Plane], threshold: f64) -> PointCloud {
    let drop: Vec<bool> = cloud
        .points
        .iter()
        .map(|p| planes.iter().any(|pl| pl.distance(p).abs() <= threshold))
        .collect();
    cloud.without(&drop)
}

pub fn crop_workspace(cloud: &PointCloud, region: &Aabb) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| region.contains(&cloud.points[i])).collect();
    cloud.select(&keep)
}

pub const VOXEL_START: f64 = 0.005;

fn voxel_key(p: &Vec3, edge: f64) -> (i64, i64, i64) {
    (
        (p.x / edge).floor() as i64,
        (p.y / edge).floor() as i64,
        (p.z / edge).floor() as i64,
    )
}

/// Smallest edge of the doubling sequence whose occupied-voxel count fits.
pub fn voxel_edge_for_budget(cloud: &PointCloud, budget: usize) -> f64 {
    let mut edge = VOXEL_START;
    loop {
        let mut seen = std::collections::HashSet::with_capacity(cloud.len().min(budget + 1));
        let fits = cloud.points.iter().all(|p| {
            seen.insert(voxel_key(p, edge));
            seen.len() <= budget
        });
        if fits {
            return edge;
        }
        edge *= 2.0;
    }
}

/// Voxel grid at a fixed edge: centroid position and mean color per voxel,
/// in order of first occupancy.
pub fn voxel_grid(cloud: &PointCloud, edge: f64) -> PointCloud {
    let mut slot: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut acc: Vec<(Vec3, [u32; 3], u32)> = Vec::new();
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        let i = *slot.entry(voxel_key(p, edge)).or_insert_with(|| {
            acc.push((Vec3::zeros(), [0; 3], 0));
            acc.len() - 1
        });
        let a = &mut acc[i];
        a.0 += p;
        for k in 0..3 {
            a.1[k] += c[k] as u32;
        }
        a.2 += 1;
    }
    let mut out = PointCloud::new(cloud.frame);
    for (sum, col, n) in acc {
        let avg = col.map(|v| ((v + n / 2) / n) as u8);
        out.push(sum / n as f64, avg);
    }
    out
}

pub fn voxel_downsample(cloud: &PointCloud, budget: usize) -> PointCloud {
    if budget == 0 {
        return PointCloud::new(cloud.frame);
    }
    voxel_grid(cloud, voxel_edge_for_budget(cloud, budget))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups indices by component root, keeps those with at least
/// `min_points` members, largest first (ties by smallest index).
fn collect_clusters(uf: &mut UnionFind, n: usize, min_points: usize) -> Vec<Cluster> {
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_values()
        .filter(|g| g.len() >= min_points.max(1))
        .map(|indices| Cluster { indices })
        .collect();
    clusters.sort_by(|a, b| b.indices.len().cmp(&a.indices.len()).then(a.indices[0].cmp(&b.indices[0])));
    clusters
}

/// Connected components of the graph linking points no farther apart than `radius`.
pub fn euclidean_clusters(cloud: &PointCloud, radius: f64, min_points: usize) -> Vec<Cluster> {
    let n = cloud.len();
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        grid.entry(voxel_key(p, radius)).or_default().push(i);
    }
    let r2 = radius * radius;
    let mut uf = UnionFind((0..n).collect());
    for (i, p) in cloud.points.iter().enumerate() {
        let (kx, ky, kz) = voxel_key(p, radius);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = grid.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in cell {
                        if j > i && (cloud.points[j] - p).norm_squared() <= r2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }
    collect_clusters(&mut uf, n, min_points)
}

pub fn cluster_aabbs(cloud: &PointCloud, clusters: &[Cluster]) -> Vec<Aabb> {
    clusters
        .iter()
        .filter(|c| !c.indices.is_empty())
        .map(|c| {
            let first = cloud.points[c.indices[0]];
            c.indices.iter().fold(Aabb::new(first, first), |b, &i| {
                let p = cloud.points[i];
                Aabb::new(b.min.inf(&p), b.max.sup(&p))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub dist_threshold: f64,
    pub ransac_iterations: usize,
    pub min_inlier_fraction: f64,
    pub max_planes: usize,
    pub cluster_radius: f64,
    pub min_cluster_points: usize,
    pub point_budget: usize,
    pub enable_bounding_boxes: bool,
    pub plane_cache_frames: u32,
    pub workspace: Aabb,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            dist_threshold: 0.01,
            ransac_iterations: 200,
            min_inlier_fraction: 0.2,
            max_planes: 3,
            cluster_radius: 0.03,
            min_cluster_points: 15,
            point_budget: 10_000,
            enable_bounding_boxes: false,
            plane_cache_frames: 1,
            workspace: Aabb::new(Vec3::new(0.3, -0.7, 0.0), Vec3::new(1.3, 0.7, 1.2)),
        }
    }
}

impl PerceptionConfig {
    pub fn plane_removal(&self) -> PlaneRemoval {
        PlaneRemoval {
            min_inlier_fraction: self.min_inlier_fraction,
            max_planes: self.max_planes,
            dist_threshold: self.dist_threshold,
            iterations: self.ransac_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub cloud: PointCloud,
    pub boxes: Vec<Aabb>,
}

/// Per-frame processing: transform to base, crop, remove planes,
/// downsample, then optionally cluster. Planes found on one frame are
/// reused for the next `plane_cache_frames - 1` frames.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PerceptionConfig,
    cached: Vec<Plane>,
    cache_age: u32,
}

impl Pipeline {
    pub fn new(config: PerceptionConfig) -> Self {
        Pipeline {
            config,
            cached: Vec::new(),
            cache_age: 0,
        }
    }

    pub fn process(&mut self, camera_cloud: &PointCloud, camera_in_base: &Isometry3<f64>, seed: u64) -> PipelineOutput {
        let cfg = &self.config;
        let base = camera_cloud.transformed(camera_in_base, FrameId::Base);
        let cropped = crop_workspace(&base, &cfg.workspace);
        let filtered = if self.cache_age > 0 {
            self.cache_age -= 1;
            remove_planes(&cropped, &self.cached, cfg.dist_threshold)
        } else {
            let (rest, planes) = remove_large_planes_with(&cropped, &cfg.plane_removal(), seed);
            self.cached = planes;
            self.cache_age = cfg.plane_cache_frames.saturating_sub(1);
            rest
        };
        let cloud = voxel_downsample(&filtered, cfg.point_budget);
        let boxes = if cfg.enable_bounding_boxes {
            let clusters = euclidean_clusters(&cloud, cfg.cluster_radius, cfg.min_cluster_points);
            cluster_aabbs(&cloud, &clusters)
        } else {
            Vec::new()
        };
        PipelineOutput { cloud, boxes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        let mut c = PointCloud::new(FrameId::Base);
        for p in points {
            c.push(Vec3::from(*p), [10, 20, 30]);
        }
        c
    }

    #[test]
    fn two_points_are_degenerate() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            segment_plane_ransac(&c, 0.01, 10, 0),
            Err(PerceptionError::DegenerateInput(_))
        ));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!(segment_plane_ransac(&c, 0.01, 50, 0).is_err());
    }

    #[test]
    fn plane_normal_points_up() {
        let p = Plane::through(&Vec3::zeros(), &Vec3::y(), &Vec3::x()).unwrap();
        assert_eq!(p.normal, Vec3::z());
        let p = Plane::new(Vec3::new(0.0, 0.0, -2.0), 1.0).unwrap();
        assert_eq!((p.normal, p.d), (Vec3::z(), -0.5));
    }

    #[test]
    fn crop_keeps_the_boundary() {
        let region = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let c = cloud(&[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0 + 1e-12, 0.5, 0.5]]);
        assert_eq!(crop_workspace(&c, &region).points, vec![Vec3::new(1.0, 1.0, 1.0), Vec3::zeros()]);
    }

    #[test]
    fn tiny_cube_collapses_to_centroid() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push([
                0.001 + 0.001 * (i & 1) as f64,
                0.001 + 0.001 * ((i >> 1) & 1) as f64,
                0.001 + 0.001 * ((i >> 2) & 1) as f64,
            ]);
        }
        let mut c = cloud(&pts);
        c.colors = (0..8).map(|i| [i * 10, 0, 255]).collect();
        let out = voxel_downsample(&c, 100);
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Vec3::new(0.0015, 0.0015, 0.0015)).norm() < 1e-15);
        assert_eq!(out.colors[0], [35, 0, 255]);
    }

    #[test]
    fn sparse_cloud_within_budget_is_kept() {
        // One point per 5 mm voxel on a 1 cm lattice.
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|i| [0.0025 + 0.01 * (i % 10) as f64, 0.0025 + 0.01 * (i / 10) as f64, 0.0025])
            .collect();
        let c = cloud(&pts);
        let out = voxel_downsample(&c, 50);
        assert_eq!(out.len(), 50);
        assert_eq!(voxel_downsample(&c, 10).len() <= 10, true);
    }

    #[test]
    fn blobs_and_chains() {
        let mut pts = Vec::new();
        for i in 0..100 {
            let t = i as f64 * 0.0003;
            pts.push([t, 0.0, 0.0]);
            pts.push([1.0 + t, 0.0, 0.0]);
        }
        let c = cloud(&pts);
        let clusters = euclidean_clusters(&c, 0.05, 10);
        assert_eq!(clusters.len(), 2);
        assert!(clusters.iter().all(|k| k.indices.len() == 100));

        let chain: Vec<[f64; 3]> = (0..40).map(|i| [0.9 * 0.05 * i as f64, 0.0, 0.0]).collect();
        assert_eq!(euclidean_clusters(&cloud(&chain), 0.05, 1).len(), 1);
    }

    #[test]
    fn small_clusters_are_dropped() {
        let c = cloud(&[[0.0; 3], [0.01, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let clusters = euclidean_clusters(&c, 0.05, 2);
        assert_eq!(clusters, vec![Cluster { indices: vec![0, 1] }]);
    }

    #[test]
    fn aabbs() {
        let single = cloud(&[[0.2, 0.3, 0.4]]);
        let b = cluster_aabbs(&single, &[Cluster { indices: vec![0] }]);
        assert_eq!(b[0].min, b[0].max);
        let corners: Vec<[f64; 3]> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let b = cluster_aabbs(&cloud(&corners), &[Cluster { indices: (0..8).collect() }]);
        assert_eq!(b[0], Aabb::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)));
    }

    #[test]
    fn no_dominant_plane_leaves_cloud_unchanged() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.1], [0.0, 1.0, 0.3], [1.0, 1.0, 0.9], [0.5, 0.2, 2.0]]);
        assert_eq!(remove_large_planes(&c, 0.7, 3, 0.01, 50, 1), c);
    }

    #[test]
    fn pcb_layout_is_bit_exact() {
        let mut c = PointCloud::new(FrameId::Camera);
        c.push(Vec3::new(1.0, -2.0, 0.5), [1, 2, 3]);
        let bytes = c.to_pcb_bytes();
        let mut want = b"PCB1".to_vec();
        want.extend_from_slice(&[1, 0, 0, 0]);
        want.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        want.extend_from_slice(&[0x00, 0x00, 0x00, 0xC0]);
        want.extend_from_slice(&[0x00, 0x00, 0x00, 0x3F]);
        want.extend_from_slice(&[1, 2, 3]);
        assert_eq!(bytes, want);
        assert_eq!(PointCloud::from_pcb_bytes(&bytes, FrameId::Camera).unwrap(), c);
        assert!(PointCloud::from_pcb_bytes(&bytes[..bytes.len() - 1], FrameId::Camera).is_err());
        assert!(PointCloud::from_pcb_bytes(b"PCB2\0\0\0\0", FrameId::Camera).is_err());
    }

    #[test]
    fn pipeline_caches_planes() {
        let mut c = PointCloud::new(FrameId::Camera);
        for i in 0..400 {
            c.push(Vec3::new(0.5 + (i % 20) as f64 * 0.02, -0.2 + (i / 20) as f64 * 0.02, 0.55), [200; 3]);
        }
        let cfg = PerceptionConfig {
            plane_cache_frames: 3,
            ..PerceptionConfig::default()
        };
        let mut p = Pipeline::new(cfg);
        let id = Isometry3::identity();
        assert!(p.process(&c, &id, 0).cloud.is_empty());
        assert_eq!(p.cached.len(), 1);
        assert_eq!(p.cache_age, 2);
        assert!(p.process(&c, &id, 1).cloud.is_empty());
        assert_eq!(p.cache_age, 1);
    }
}
