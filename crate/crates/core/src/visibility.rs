//! Per-voxel soft visibility from a single camera.
//!
//! Voxel indices are mapped to camera space by `x = s * (R c) + t` (scale
//! applied componentwise after the rotation), projected with
//! `u = cx - fx x / z`, `v = cy - fy y / z` and rounded to the nearest pixel.
//! Note the minus signs: this is a mirrored image convention compared to the
//! common pinhole model, kept as is so that poses expressed in it work
//! unchanged. A z-buffer of per-pixel minimum depths is densified by
//! min-pooling, and each voxel's margin behind that depth is turned into a
//! weight in `(0, 1]` by a Gaussian falloff.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};

const ORTHO_TOLERANCE: f64 = 1e-9;

/// Pose and pinhole intrinsics of the observing camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraDocument", into = "CameraDocument")]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Matrix3<f64>,
    scale: Vector3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraDocument {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 3x3.
    rotation: [[f64; 3]; 3],
    scale: [f64; 3],
    translation: [f64; 3],
    width: usize,
    height: usize,
}

impl TryFrom<CameraDocument> for Camera {
    type Error = Error;

    fn try_from(d: CameraDocument) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| d.rotation[i][j]);
        Camera::new(
            [d.fx, d.fy, d.cx, d.cy],
            r,
            Vector3::from(d.scale),
            Vector3::from(d.translation),
            (d.width, d.height),
        )
    }
}

impl From<Camera> for CameraDocument {
    fn from(c: Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| c.rotation[(i, j)])),
            scale: c.scale.into(),
            translation: c.translation.into(),
            width: c.width,
            height: c.height,
        }
    }
}

impl Camera {
    /// `intrinsics` is `[fx, fy, cx, cy]`, `resolution` is `(width, height)`.
    pub fn new(
        intrinsics: [f64; 4],
        rotation: Matrix3<f64>,
        scale: Vector3<f64>,
        translation: Vector3<f64>,
        resolution: (usize, usize),
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        if intrinsics.iter().any(|v| !v.is_finite()) || fx <= 0.0 || fy <= 0.0 {
            return Err(invalid("intrinsics", "focal lengths must be positive and all entries finite"));
        }
        if rotation.iter().any(|v| !v.is_finite()) {
            return Err(invalid("rotation", "entries must be finite"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_err > ORTHO_TOLERANCE {
            return Err(invalid("rotation", format!("not orthonormal (|R^T R - I| = {gram_err:e})")));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHO_TOLERANCE {
            return Err(invalid("rotation", "determinant must be +1"));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("scale", "components must be positive"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(invalid("translation", "entries must be finite"));
        }
        if translation.z <= 0.0 {
            return Err(invalid("translation", "t_z must be positive (object in front of the camera)"));
        }
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(invalid("resolution", "width and height must be positive"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            scale,
            translation,
            width: resolution.0,
            height: resolution.1,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn scale(&self) -> &Vector3<f64> {
        &self.scale
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn f_avg(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Object depth `t_z`.
    pub fn z_obj(&self) -> f64 {
        self.translation.z
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Occupied voxel indices of an `res^3` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    resolution: usize,
    occupied: Vec<[usize; 3]>,
}

pub const DEFAULT_RESOLUTION: usize = 64;

impl VoxelGrid {
    pub fn new(resolution: usize, occupied: Vec<[usize; 3]>) -> Result<Self> {
        if resolution == 0 {
            return Err(invalid("resolution", "must be positive"));
        }
        if let Some(bad) = occupied.iter().find(|c| c.iter().any(|&i| i >= resolution)) {
            return Err(invalid("occupied", format!("index {bad:?} outside 0..{resolution}")));
        }
        Ok(Self { resolution, occupied })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn occupied(&self) -> &[[usize; 3]] {
        &self.occupied
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    /// Object-space voxel size `max(s) / res`.
    pub fn voxel_size(&self, camera: &Camera) -> f64 {
        camera.scale.max() / self.resolution as f64
    }
}

/// Indices with strictly positive value in a `res^3` volume laid out
/// row-major as `[x][y][z]`. Order follows the layout.
pub fn extract_occupancy(volume: &[f64], resolution: usize) -> Result<Vec<[usize; 3]>> {
    if volume.len() != resolution.pow(3) {
        return Err(invalid(
            "volume",
            format!("expected {} values for resolution {resolution}, got {}", resolution.pow(3), volume.len()),
        ));
    }
    let r = resolution;
    Ok(volume
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(i, _)| [i / (r * r), (i / r) % r, i % r])
        .collect())
}

/// Camera-space position of voxel `index`.
pub fn voxel_to_camera(index: [usize; 3], resolution: usize, camera: &Camera) -> Result<Vector3<f64>> {
    if index.iter().any(|&i| i >= resolution) {
        return Err(invalid("index", format!("{index:?} outside 0..{resolution}")));
    }
    let c = Vector3::new(index[0] as f64, index[1] as f64, index[2] as f64);
    Ok(object_to_camera(&c, &camera.rotation, &camera.scale, &camera.translation))
}

/// `s * (R c) + t` without any pose validation.
pub fn object_to_camera(c: &Vector3<f64>, r: &Matrix3<f64>, s: &Vector3<f64>, t: &Vector3<f64>) -> Vector3<f64> {
    s.component_mul(&(r * c)) + t
}

/// Pixel coordinates `(u, v)` of a camera-space point with `z > 0`.
pub fn project(x: &Vector3<f64>, camera: &Camera) -> Result<(f64, f64)> {
    if !(x.z > 0.0) {
        return Err(invalid("z", format!("point must be in front of the camera, got z = {}", x.z)));
    }
    Ok((camera.cx - camera.fx * x.x / x.z, camera.cy - camera.fy * x.y / x.z))
}

/// Nearest pixel `(column, row)` if it lies inside the image.
fn pixel_of(uv: (f64, f64), camera: &Camera) -> Option<(usize, usize)> {
    let (u, v) = (uv.0.round(), uv.1.round());
    if u >= 0.0 && v >= 0.0 && u < camera.width as f64 && v < camera.height as f64 {
        Some((u as usize, v as usize))
    } else {
        None
    }
}

/// Per-pixel depths, `None` where nothing projects. Row `v`, column `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![None; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.depth[v * self.width + u]
    }

    /// Lowers the depth at `(u, v)` to `z` if `z` is nearer. `z` must be positive.
    pub fn splat(&mut self, u: usize, v: usize, z: f64) {
        let cell = &mut self.depth[v * self.width + u];
        *cell = Some(cell.map_or(z, |d| d.min(z)));
    }

    pub fn filled(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }

    /// Plain PGM (`P2`) rendering: nearer is brighter, empty pixels are 0.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (lo, hi) = self
            .depth
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &z| (a.min(z), b.max(z)));
        writeln!(w, "P2\n{} {}\n255", self.width, self.height)?;
        for row in self.depth.chunks(self.width) {
            let line: Vec<String> = row
                .iter()
                .map(|d| match d {
                    None => "0".to_string(),
                    Some(z) if hi > lo => (255.0 - 254.0 * (z - lo) / (hi - lo)).round().to_string(),
                    Some(_) => "255".to_string(),
                })
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        self.write_pgm(std::io::BufWriter::new(f)).map_err(io_err(path))
    }
}

/// Z-buffer of minimum voxel depths. Voxels behind the camera or outside the
/// frame are skipped.
pub fn build_depth_map(grid: &VoxelGrid, camera: &Camera) -> Result<DepthMap> {
    if grid.is_empty() {
        return Err(invalid("grid", "no occupied voxels"));
    }
    let mut map = DepthMap::empty(camera.width, camera.height);
    let mut in_front = 0;
    for &c in grid.occupied() {
        let x = voxel_to_camera(c, grid.resolution(), camera)?;
        if !(x.z > 0.0) {
            continue;
        }
        in_front += 1;
        if let Some((u, v)) = pixel_of(project(&x, camera)?, camera) {
            map.splat(u, v, x.z);
        }
    }
    if in_front == 0 {
        return Err(Error::AllBehindCamera);
    }
    Ok(map)
}

/// Min-pooling over a `k x k` window (truncated at the image edge).
pub fn dilate_min(map: &DepthMap, k: usize) -> Result<DepthMap> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(invalid("k", format!("kernel size must be a positive odd integer, got {k}")));
    }
    if k == 1 {
        return Ok(map.clone());
    }
    let r = k / 2;
    let (w, h) = (map.width, map.height);
    let pool = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    };
    // separable: rows then columns, min is associative
    let mut rows = vec![None; w * h];
    for v in 0..h {
        for u in 0..w {
            let lo = u.saturating_sub(r);
            let hi = (u + r).min(w - 1);
            rows[v * w + u] = (lo..=hi).map(|uu| map.depth[v * w + uu]).fold(None, pool);
        }
    }
    let mut out = DepthMap::empty(w, h);
    for v in 0..h {
        let lo = v.saturating_sub(r);
        let hi = (v + r).min(h - 1);
        for u in 0..w {
            out.depth[v * w + u] = (lo..=hi).map(|vv| rows[vv * w + u]).fold(None, pool);
        }
    }
    Ok(out)
}

/// Dilation kernel size: the nearest odd integer to `round(value)`, ties
/// going to the larger odd integer, clamped to at least 1.
pub fn kernel_size(s_vox: f64, f_avg: f64, z_obj: f64, gamma: f64) -> Result<usize> {
    for (name, v) in [("s_vox", s_vox), ("f_avg", f_avg), ("z_obj", z_obj), ("gamma", gamma)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(name, format!("must be positive, got {v}")));
        }
    }
    let r = (gamma * s_vox * f_avg / z_obj).round() as usize;
    let k = if r % 2 == 1 { r } else { r + 1 };
    Ok(k.max(1))
}

/// `exp(-lambda (max(delta, 0) / sigma_d)^2)`, floored at the smallest
/// positive normal so the weight never reaches 0.
pub fn soft_visibility(delta: f64, sigma_d: f64, lambda: f64) -> Result<f64> {
    if !(sigma_d.is_finite() && sigma_d > 0.0) {
        return Err(invalid("sigma_d", "must be positive"));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", "must be positive"));
    }
    if delta.is_nan() {
        return Err(invalid("delta", "is NaN"));
    }
    let d = delta.max(0.0) / sigma_d;
    Ok((-lambda * d * d).exp().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityParams {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Overrides the computed dilation kernel size when set.
    #[serde(default)]
    pub kernel: Option<usize>,
}

impl Default for VisibilityParams {
    fn default() -> Self {
        Self {
            beta: 1.5,
            gamma: 1.5,
            lambda: 3.0,
            kernel: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelVisibility {
    pub index: [usize; 3],
    pub weight: f64,
    /// `z - D'(u, v)`; `None` when the voxel is out of frame, behind the
    /// camera, or its dilated pixel is empty.
    pub margin: Option<f64>,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityWeights {
    pub voxels: Vec<VoxelVisibility>,
    pub kernel: usize,
    pub sigma_d: f64,
}

impl VisibilityWeights {
    pub fn weights(&self) -> Vec<f64> {
        self.voxels.iter().map(|v| v.weight).collect()
    }
}

/// Full pipeline: depth map, dilation, per-voxel margins and weights, in
/// the order of `grid.occupied()`.
pub fn compute_visibility(grid: &VoxelGrid, camera: &Camera, params: &VisibilityParams) -> Result<VisibilityWeights> {
    let s_vox = grid.voxel_size(camera);
    let sigma_d = params.beta * s_vox;
    let kernel = match params.kernel {
        Some(k) => k,
        None => kernel_size(s_vox, camera.f_avg(), camera.z_obj(), params.gamma)?,
    };
    let dilated = dilate_min(&build_depth_map(grid, camera)?, kernel)?;
    let mut voxels = Vec::with_capacity(grid.len());
    for &index in grid.occupied() {
        let x = voxel_to_camera(index, grid.resolution(), camera)?;
        let mut out = VoxelVisibility {
            index,
            weight: 1.0,
            margin: None,
            u: f64::NAN,
            v: f64::NAN,
        };
        if x.z > 0.0 {
            let uv = project(&x, camera)?;
            (out.u, out.v) = uv;
            if let Some(d) = pixel_of(uv, camera).and_then(|(u, v)| dilated.get(u, v)) {
                let delta = x.z - d;
                out.margin = Some(delta);
                out.weight = soft_visibility(delta, sigma_d, params.lambda)?;
            }
        }
        voxels.push(out);
    }
    Ok(VisibilityWeights {
        voxels,
        kernel,
        sigma_d,
    })
}

/// JSON scene: a camera plus either an explicit `occupied` index list or a
/// dense `volume` (row-major `[x][y][z]`, occupied where positive).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub camera: Camera,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupied: Option<Vec<[usize; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<Vec<f64>>,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl Scene {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn grid(&self) -> Result<VoxelGrid> {
        let occupied = match (&self.occupied, &self.volume) {
            (Some(o), None) => o.clone(),
            (None, Some(v)) => extract_occupancy(v, self.resolution)?,
            _ => return Err(invalid("scene", "give exactly one of `occupied` or `volume`")),
        };
        VoxelGrid::new(self.resolution, occupied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(scale: f64, t: [f64; 3]) -> Camera {
        Camera::new(
            [100.0, 100.0, 32.0, 32.0],
            Matrix3::identity(),
            Vector3::repeat(scale),
            Vector3::from(t),
            (64, 64),
        )
        .unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        Rotation3::from_axis_angle(&axis, rng.random_range(0.0..6.0)).into_inner()
    }

    #[test]
    fn camera_validation() {
        let ok = cam(1.0, [0.0, 0.0, 1.0]);
        let doc = serde_json::to_string(&ok).unwrap();
        assert_eq!(Camera::from_json_str(&doc).unwrap(), ok);
        let mut bad = Matrix3::identity();
        bad[(0, 0)] = -1.0;
        let mk = |r: Matrix3<f64>, t: f64| {
            Camera::new([1.0, 1.0, 0.0, 0.0], r, Vector3::repeat(1.0), Vector3::new(0.0, 0.0, t), (4, 4))
        };
        assert!(mk(bad, 1.0).is_err(), "reflection");
        assert!(mk(Matrix3::identity() * 1.01, 1.0).is_err());
        assert!(mk(Matrix3::identity(), 0.0).is_err());
        assert!(mk(Matrix3::identity(), 1.0).is_ok());
    }

    #[test]
    fn voxel_transform_examples() {
        let id = object_to_camera(
            &Vector3::new(3.0, 4.0, 5.0),
            &Matrix3::identity(),
            &Vector3::repeat(1.0),
            &Vector3::zeros(),
        );
        assert_eq!(id, Vector3::new(3.0, 4.0, 5.0));
        let c2 = cam(2.0, [0.0, 0.0, 10.0]);
        assert_eq!(voxel_to_camera([1, 0, 0], 64, &c2).unwrap(), Vector3::new(2.0, 0.0, 10.0));
        assert!(voxel_to_camera([64, 0, 0], 64, &c2).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let s = Vector3::new(1.3, 0.7, 2.1);
            let t = Vector3::new(0.5, -1.0, 30.0);
            let c = Camera::new([50.0, 60.0, 32.0, 32.0], r, s, t, (64, 64)).unwrap();
            let idx = [rng.random_range(0..64), rng.random_range(0..64), rng.random_range(0..64)];
            let x = voxel_to_camera(idx, 64, &c).unwrap();
            let ci = Vector3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64);
            assert!(((x - t).norm() - s.component_mul(&(r * ci)).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_examples() {
        let c = cam(1.0, [0.0, 0.0, 1.0]);
        assert_eq!(project(&Vector3::new(0.0, 0.0, 5.0), &c).unwrap(), (32.0, 32.0));
        assert_eq!(project(&Vector3::new(1.0, 0.0, 10.0), &c).unwrap().0, 22.0);
        let p = Vector3::new(0.7, -0.4, 3.0);
        let (u1, v1) = project(&p, &c).unwrap();
        let (u2, v2) = project(&Vector3::new(p.x, p.y, 2.0 * p.z), &c).unwrap();
        assert!(((u2 - 32.0) - 0.5 * (u1 - 32.0)).abs() < 1e-12);
        assert!(((v2 - 32.0) - 0.5 * (v1 - 32.0)).abs() < 1e-12);
        assert!(project(&Vector3::new(0.0, 0.0, 0.0), &c).is_err());
        assert!(project(&Vector3::new(0.0, 0.0, -1.0), &c).is_err());
    }

    #[test]
    fn depth_map_takes_minimum() {
        // both voxels lie on the optical axis
        let c = cam(1.0, [0.0, 0.0, 2.0]);
        let g = VoxelGrid::new(4, vec![[0, 0, 1], [0, 0, 0]]).unwrap();
        let d = build_depth_map(&g, &c).unwrap();
        assert_eq!(d.get(32, 32), Some(2.0));
        assert_eq!(d.filled(), 1);
        let single = VoxelGrid::new(4, vec![[1, 1, 3]]).unwrap();
        assert_eq!(build_depth_map(&single, &c).unwrap().filled(), 1);
    }

    #[test]
    fn all_behind_camera_is_an_error() {
        let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let c = Camera::new(
            [10.0, 10.0, 4.0, 4.0],
            flip,
            Vector3::repeat(1.0),
            Vector3::new(0.0, 0.0, 0.5),
            (8, 8),
        )
        .unwrap();
        let g = VoxelGrid::new(8, vec![[0, 0, 3], [1, 1, 5]]).unwrap();
        assert!(matches!(build_depth_map(&g, &c), Err(Error::AllBehindCamera)));
        assert!(build_depth_map(&VoxelGrid::new(8, vec![]).unwrap(), &c).is_err());
    }

    fn brute_force_depth(g: &VoxelGrid, c: &Camera) -> DepthMap {
        let mut d = DepthMap::empty(c.width(), c.height());
        for v in 0..c.height() {
            for u in 0..c.width() {
                let mut best: Option<f64> = None;
                for &i in g.occupied() {
                    let x = voxel_to_camera(i, g.resolution(), c).unwrap();
                    if x.z <= 0.0 {
                        continue;
                    }
                    let (pu, pv) = project(&x, c).unwrap();
                    if pu.round() == u as f64 && pv.round() == v as f64 {
                        best = Some(best.map_or(x.z, |b: f64| b.min(x.z)));
                    }
                }
                d.depth[v * c.width() + u] = best;
            }
        }
        d
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, res: usize) -> (VoxelGrid, Camera) {
        let occupied = (0..n)
            .map(|_| [rng.random_range(0..res), rng.random_range(0..res), rng.random_range(0..res)])
            .collect();
        let half = res as f64 / 2.0;
        let r = random_rotation(rng);
        let centre = r * Vector3::repeat(half);
        let t = Vector3::new(-centre.x, -centre.y, 3.0 * res as f64);
        let c = Camera::new([60.0, 60.0, 16.0, 16.0], r, Vector3::repeat(1.0), t, (32, 32)).unwrap();
        (VoxelGrid::new(res, occupied).unwrap(), c)
    }

    #[test]
    fn depth_map_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let (g, c) = random_scene(&mut rng, 200, 16);
            assert_eq!(build_depth_map(&g, &c).unwrap(), brute_force_depth(&g, &c));
        }
    }

    fn brute_force_dilate(d: &DepthMap, k: usize) -> DepthMap {
        let r = (k / 2) as isize;
        let mut out = DepthMap::empty(d.width, d.height);
        for v in 0..d.height as isize {
            for u in 0..d.width as isize {
                let mut best: Option<f64> = None;
                for dv in -r..=r {
                    for du in -r..=r {
                        let (uu, vv) = (u + du, v + dv);
                        if uu >= 0 && vv >= 0 && (uu as usize) < d.width && (vv as usize) < d.height {
                            if let Some(z) = d.get(uu as usize, vv as usize) {
                                best = Some(best.map_or(z, |b: f64| b.min(z)));
                            }
                        }
                    }
                }
                out.depth[v as usize * d.width + u as usize] = best;
            }
        }
        out
    }

    #[test]
    fn dilation_examples() {
        let mut d = DepthMap::empty(7, 6);
        d.splat(3, 2, 4.5);
        assert_eq!(dilate_min(&d, 1).unwrap(), d);
        let e = dilate_min(&d, 3).unwrap();
        assert_eq!(e.filled(), 9);
        for v in 1..=3 {
            for u in 2..=4 {
                assert_eq!(e.get(u, v), Some(4.5));
            }
        }
        assert!(dilate_min(&d, 4).is_err());
        assert!(dilate_min(&d, 0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = DepthMap::empty(19, 13);
        for v in 0..13 {
            for u in 0..19 {
                if rng.random_bool(0.2) {
                    r.splat(u, v, rng.random_range(0.5..9.0));
                }
            }
        }
        assert_eq!(dilate_min(&r, 5).unwrap(), brute_force_dilate(&r, 5));
    }

    #[test]
    fn kernel_size_rounding() {
        // value = gamma * s_vox * f_avg / z_obj with gamma = s_vox = 1
        assert_eq!(kernel_size(1.0, 3.0, 1.0, 1.0).unwrap(), 3);
        assert_eq!(kernel_size(1.0, 0.2, 1.0, 1.0).unwrap(), 1);
        assert_eq!(kernel_size(1.0, 4.0, 1.0, 1.0).unwrap(), 5);
        assert_eq!(kernel_size(1.0, 5.6, 1.0, 1.0).unwrap(), 7);
        assert!(kernel_size(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(kernel_size(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn soft_visibility_values() {
        assert_eq!(soft_visibility(-0.3, 0.1, 3.0).unwrap(), 1.0);
        assert_eq!(soft_visibility(0.0, 0.1, 3.0).unwrap(), 1.0);
        assert!((soft_visibility(0.1, 0.1, 3.0).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        assert!((soft_visibility(0.2, 0.1, 3.0).unwrap() - (-12.0f64).exp()).abs() < 1e-18);
        assert!(soft_visibility(1e6, 0.1, 3.0).unwrap() > 0.0);
        assert!(soft_visibility(0.1, 0.0, 3.0).is_err());
    }

    #[test]
    fn occupancy_extraction() {
        assert!(extract_occupancy(&[0.0; 27], 3).unwrap().is_empty());
        assert_eq!(extract_occupancy(&[1e-300; 8], 2).unwrap().len(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vol: Vec<f64> = (0..64).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let got = extract_occupancy(&vol, 4).unwrap();
        let mut want = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    if vol[(x * 4 + y) * 4 + z] > 0.0 {
                        want.push([x, y, z]);
                    }
                }
            }
        }
        assert_eq!(got, want);
        assert!(extract_occupancy(&vol, 3).is_err());
    }

    #[test]
    fn out_of_frame_voxels_are_visible() {
        let c = cam(1.0, [100.0, 0.0, 2.0]);
        let g = VoxelGrid::new(4, vec![[0, 0, 0], [0, 0, 1]]).unwrap();
        let w = compute_visibility(&g, &c, &VisibilityParams::default()).unwrap();
        assert!(w.voxels.iter().all(|v| v.weight == 1.0 && v.margin.is_none()));
    }

    #[test]
    fn pgm_export() {
        let mut d = DepthMap::empty(3, 2);
        d.splat(0, 0, 1.0);
        d.splat(2, 1, 3.0);
        let mut buf = Vec::new();
        d.write_pgm(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "P2\n3 2\n255\n255 0 0\n0 0 1\n");
    }

    #[test]
    fn scene_json() {
        let text = r#"{
            "camera": {"fx": 50, "fy": 50, "cx": 8, "cy": 8,
                       "rotation": [[1,0,0],[0,1,0],[0,0,1]],
                       "scale": [1,1,1], "translation": [0,0,20],
                       "width": 16, "height": 16},
            "resolution": 2,
            "volume": [1, 0, 0, 0, 0, 0, 0, 2]
        }"#;
        let s = Scene::from_json_str(text).unwrap();
        assert_eq!(s.grid().unwrap().occupied(), &[[0, 0, 0], [1, 1, 1]]);
    }
}
