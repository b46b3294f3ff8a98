//! Soft-assignment VLAD aggregation, region cropping of spatial descriptor
//! maps and PCA whitening.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bundle::io::{read_json, write_json};
use crate::bundle::{DescriptorMatrix, RegionBox};
use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{self, Mat};

/// Eigenvalues below this are treated as zero variance.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// K cluster centers of dimension D with the softmax sharpness used for
/// soft assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCenters {
    centers: Mat,
    sharpness: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CentersSidecar {
    k: usize,
    d: usize,
    softassign_sharpness: f64,
}

impl ClusterCenters {
    pub fn new(centers: Mat, sharpness: f64) -> Result<Self> {
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(dim_err!("need at least one center of positive dimension"));
        }
        if centers.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cluster centers".into()));
        }
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(invalid!("softassign sharpness must be positive, got {sharpness}"));
        }
        Ok(ClusterCenters { centers, sharpness })
    }

    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    pub fn center(&self, k: usize) -> &[f64] {
        self.centers.row(k)
    }

    /// Writes the centers as an `MQBL` matrix and a JSON sidecar next to it.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rows: Vec<Vec<f64>> = (0..self.k()).map(|k| self.center(k).to_vec()).collect();
        DescriptorMatrix::from_rows_f64(&rows)?.write(path)?;
        write_json(
            &sidecar_path(path),
            &CentersSidecar {
                k: self.k(),
                d: self.dim(),
                softassign_sharpness: self.sharpness,
            },
        )
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = DescriptorMatrix::read(path)?;
        let side_path = sidecar_path(path);
        let side: CentersSidecar = read_json(&side_path)?;
        if side.k != m.rows() || side.d != m.cols() {
            return Err(Error::format(
                &side_path,
                format!(
                    "sidecar says {}x{}, matrix is {}x{}",
                    side.k,
                    side.d,
                    m.rows(),
                    m.cols()
                ),
            ));
        }
        ClusterCenters::new(m.to_mat(), side.softassign_sharpness)
    }
}

pub fn sidecar_path(matrix_path: &Path) -> PathBuf {
    let mut name = matrix_path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    matrix_path.with_file_name(name)
}

/// Softmax over negative scaled squared distances to each center.
pub fn soft_assign(x: &[f64], centers: &ClusterCenters) -> Result<Vec<f64>> {
    if x.len() != centers.dim() {
        return Err(dim_err!(
            "descriptor has dimension {}, centers have {}",
            x.len(),
            centers.dim()
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("descriptor passed to soft_assign".into()));
    }
    let logits: Vec<f64> = (0..centers.k())
        .map(|k| -centers.sharpness * linalg::sq_dist(x, centers.center(k)))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Residual sums per cluster, flattened cluster-major into a K*D vector.
///
/// With `normalize`, each cluster block is L2-normalized and then the whole
/// vector; zero blocks stay zero.
pub fn vlad_aggregate<V: AsRef<[f64]>>(
    descs: &[V],
    centers: &ClusterCenters,
    normalize: bool,
) -> Result<Vec<f64>> {
    if descs.is_empty() {
        return Err(Error::Empty("vlad_aggregate needs at least one descriptor".into()));
    }
    let (k_count, d) = (centers.k(), centers.dim());
    let mut v = vec![0.0; k_count * d];
    for x in descs {
        let x = x.as_ref();
        let a = soft_assign(x, centers)?;
        for (k, &ak) in a.iter().enumerate() {
            let c = centers.center(k);
            let block = &mut v[k * d..(k + 1) * d];
            for ((out, &xi), &ci) in block.iter_mut().zip(x).zip(c) {
                *out += ak * (xi - ci);
            }
        }
    }
    if normalize {
        for block in v.chunks_mut(d) {
            linalg::normalize(block);
        }
        linalg::normalize(&mut v);
    }
    Ok(v)
}

/// An H x W grid of D-dimensional local descriptors taken from an image of
/// `image_w x image_h` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDescriptorMap {
    h: usize,
    w: usize,
    d: usize,
    values: Vec<f64>,
    image_w: u32,
    image_h: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapSidecar {
    h: usize,
    w: usize,
    image_w: u32,
    image_h: u32,
}

impl SpatialDescriptorMap {
    /// `values` is laid out `[y][x][channel]`.
    pub fn new(
        h: usize,
        w: usize,
        d: usize,
        values: Vec<f64>,
        image_w: u32,
        image_h: u32,
    ) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(invalid!("degenerate descriptor map {h}x{w}x{d}"));
        }
        if image_w == 0 || image_h == 0 {
            return Err(invalid!("degenerate source image {image_w}x{image_h}"));
        }
        if values.len() != h * w * d {
            return Err(dim_err!("map {h}x{w}x{d} needs {} values, got {}", h * w * d, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor map".into()));
        }
        Ok(SpatialDescriptorMap {
            h,
            w,
            d,
            values,
            image_w,
            image_h,
        })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn image_w(&self) -> u32 {
        self.image_w
    }

    pub fn image_h(&self) -> u32 {
        self.image_h
    }

    pub fn cell(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.w + x) * self.d;
        &self.values[start..start + self.d]
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> Vec<&[f64]> {
        self.values.chunks(self.d).collect()
    }

    /// Cell window `[y0, y1) x [x0, x1)` covering `b`: proportional scaling
    /// rounded outward, an empty window widened to the cell under the box
    /// center.
    pub fn cell_window(&self, b: &RegionBox) -> Result<(usize, usize, usize, usize)> {
        let (iw, ih) = (f64::from(self.image_w), f64::from(self.image_h));
        let tol = 1e-9 * iw.max(ih);
        if !b.is_finite()
            || b.w < 0.0
            || b.h < 0.0
            || b.x < -tol
            || b.y < -tol
            || b.right() > iw + tol
            || b.bottom() > ih + tol
        {
            return Err(invalid!("box {b:?} outside the {iw}x{ih} source image"));
        }
        let span = |start: f64, len: f64, img: f64, cells: usize| {
            let scale = cells as f64 / img;
            let lo = ((start * scale).floor().max(0.0) as usize).min(cells);
            let hi = (((start + len) * scale).ceil().max(0.0) as usize).min(cells);
            if hi > lo {
                (lo, hi)
            } else {
                let center = ((start + len / 2.0) * scale).floor().max(0.0) as usize;
                let c = center.min(cells - 1);
                (c, c + 1)
            }
        };
        let (x0, x1) = span(b.x, b.w, iw, self.w);
        let (y0, y1) = span(b.y, b.h, ih, self.h);
        Ok((y0, y1, x0, x1))
    }

    /// Reads an `MQBL` matrix of `H*W` rows plus its JSON sidecar.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = DescriptorMatrix::read(path)?;
        let side_path = sidecar_path(path);
        let side: MapSidecar = read_json(&side_path)?;
        if side.h * side.w != m.rows() {
            return Err(Error::format(
                &side_path,
                format!("{}x{} grid but matrix has {} rows", side.h, side.w, m.rows()),
            ));
        }
        SpatialDescriptorMap::new(
            side.h,
            side.w,
            m.cols(),
            linalg::to_f64(m.values()),
            side.image_w,
            side.image_h,
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rows: Vec<Vec<f64>> = self.cells().into_iter().map(<[f64]>::to_vec).collect();
        DescriptorMatrix::from_rows_f64(&rows)?.write(path)?;
        write_json(
            &sidecar_path(path),
            &MapSidecar {
                h: self.h,
                w: self.w,
                image_w: self.image_w,
                image_h: self.image_h,
            },
        )
    }
}

/// Normalized VLAD of the map cells under `b`.
pub fn region_encode(
    map: &SpatialDescriptorMap,
    b: &RegionBox,
    centers: &ClusterCenters,
) -> Result<Vec<f64>> {
    let (y0, y1, x0, x1) = map.cell_window(b)?;
    let mut descs = Vec::with_capacity((y1 - y0) * (x1 - x0));
    for y in y0..y1 {
        for x in x0..x1 {
            descs.push(map.cell(y, x));
        }
    }
    vlad_aggregate(&descs, centers, true)
}

/// Mean-centering followed by projection onto whitened principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Vec<f64>,
    projection: Mat,
}

#[derive(Debug, Serialize, Deserialize)]
struct WhiteningSidecar {
    d: usize,
    out_dim: usize,
}

impl WhiteningTransform {
    pub fn new(mean: Vec<f64>, projection: Mat) -> Result<Self> {
        if projection.cols() != mean.len() {
            return Err(dim_err!(
                "projection has {} columns, mean has {} entries",
                projection.cols(),
                mean.len()
            ));
        }
        if projection.rows() == 0 || projection.rows() > mean.len() {
            return Err(dim_err!(
                "out_dim {} must be in 1..={}",
                projection.rows(),
                mean.len()
            ));
        }
        Ok(WhiteningTransform { mean, projection })
    }

    pub fn identity(dim: usize) -> Self {
        WhiteningTransform {
            mean: vec![0.0; dim],
            projection: Mat::from_fn(dim, dim, |r, c| if r == c { 1.0 } else { 0.0 }),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &Mat {
        &self.projection
    }

    /// Stored as an `MQBL` matrix whose row 0 is the mean and rows
    /// `1..=out_dim` the projection, plus a JSON sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut rows = vec![self.mean.clone()];
        rows.extend((0..self.out_dim()).map(|r| self.projection.row(r).to_vec()));
        DescriptorMatrix::from_rows_f64(&rows)?.write(path)?;
        write_json(
            &sidecar_path(path),
            &WhiteningSidecar {
                d: self.input_dim(),
                out_dim: self.out_dim(),
            },
        )
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = DescriptorMatrix::read(path)?;
        let side_path = sidecar_path(path);
        let side: WhiteningSidecar = read_json(&side_path)?;
        if side.d != m.cols() || side.out_dim + 1 != m.rows() {
            return Err(Error::format(&side_path, "sidecar disagrees with matrix shape"));
        }
        let mean = m.row_f64(0);
        let proj: Vec<Vec<f64>> = (1..m.rows()).map(|r| m.row_f64(r)).collect();
        WhiteningTransform::new(mean, Mat::from_rows(&proj))
    }
}

/// Fits a PCA whitening transform keeping `out_dim` leading axes.
///
/// Each axis is scaled by `1/sqrt(eigenvalue)` and oriented so that its
/// largest-magnitude coefficient is positive. Fails if fewer than `out_dim`
/// eigenvalues exceed [`EIGEN_FLOOR`].
pub fn pca_fit(data: &DescriptorMatrix, out_dim: usize) -> Result<WhiteningTransform> {
    let (n, d) = (data.rows(), data.cols());
    if out_dim == 0 || out_dim > d || out_dim > n {
        return Err(invalid!(
            "out_dim {out_dim} must be in 1..=min(rows {n}, cols {d})"
        ));
    }
    let x = data.to_mat();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in 0..n {
        let centered: Vec<f64> = x.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] >= EIGEN_FLOOR)
        .count();
    if out_dim > rank {
        return Err(invalid!(
            "out_dim {out_dim} exceeds data rank {rank} after clamping eigenvalues below {EIGEN_FLOOR}"
        ));
    }

    let mut proj = Mat::zeros(out_dim, d);
    for (r, &idx) in order.iter().take(out_dim).enumerate() {
        let axis = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for i in 1..d {
            if axis[i].abs() > axis[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if axis[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / eig.eigenvalues[idx].sqrt();
        for c in 0..d {
            proj.set(r, c, axis[c] * scale);
        }
    }

    for a in 0..out_dim {
        for b in (a + 1)..out_dim {
            let (ra, rb) = (proj.row(a), proj.row(b));
            let cos = linalg::dot(ra, rb) / (linalg::norm(ra) * linalg::norm(rb));
            if cos.abs() > 1e-6 {
                return Err(invalid!("whitening axes {a} and {b} not orthogonal (cos = {cos:e})"));
            }
        }
    }
    WhiteningTransform::new(mean, proj)
}

/// `projection * (v - mean)`, optionally L2-normalized.
pub fn pca_apply(t: &WhiteningTransform, v: &[f64], renormalize: bool) -> Result<Vec<f64>> {
    if v.len() != t.input_dim() {
        return Err(dim_err!(
            "vector has dimension {}, transform expects {}",
            v.len(),
            t.input_dim()
        ));
    }
    let centered: Vec<f64> = v.iter().zip(&t.mean).map(|(a, m)| a - m).collect();
    let mut y: Vec<f64> = (0..t.out_dim())
        .map(|r| linalg::dot(t.projection.row(r), &centered))
        .collect();
    if renormalize {
        linalg::normalize(&mut y);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn centers(rows: &[Vec<f64>], sharpness: f64) -> ClusterCenters {
        ClusterCenters::new(Mat::from_rows(rows), sharpness).unwrap()
    }

    #[test]
    fn equidistant_is_half() {
        let c = centers(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 3.0);
        let w = soft_assign(&[0.0, 5.0], &c).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sharp_limit_is_one_hot() {
        let c = centers(&[vec![0.0], vec![1.0]], 1e6);
        let w = soft_assign(&[0.4], &c).unwrap();
        assert!(w[0] >= 1.0 - 1e-9);
    }

    #[test]
    fn three_center_hand_case() {
        let c = centers(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]], 1.0);
        let w = soft_assign(&[0.0, 0.0], &c).unwrap();
        let raw = [1.0, (-1.0f64).exp(), (-4.0f64).exp()];
        let total: f64 = raw.iter().sum();
        for (a, b) in w.iter().zip(raw) {
            assert!((a - b / total).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_assign_errors() {
        let c = centers(&[vec![0.0, 0.0]], 1.0);
        assert!(soft_assign(&[0.0], &c).is_err());
        assert!(soft_assign(&[f64::NAN, 0.0], &c).is_err());
        assert!(ClusterCenters::new(Mat::from_rows(&[vec![0.0]]), 0.0).is_err());
    }

    #[test]
    fn residuals_at_centers_are_zero() {
        let c = centers(&[vec![0.0, 0.0], vec![1.0, 1.0]], 1e6);
        let v = vlad_aggregate(&[vec![0.0, 0.0], vec![1.0, 1.0]], &c, true).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-12), "{v:?}");
    }

    #[test]
    fn single_cluster_sums_residuals() {
        let c = centers(&[vec![1.0, -1.0]], 0.7);
        let descs = vec![vec![2.0, 0.0], vec![0.5, 3.0], vec![-1.0, -1.0]];
        let v = vlad_aggregate(&descs, &c, false).unwrap();
        assert_eq!(v, vec![(1.0 - 0.5 - 2.0), (1.0 + 4.0 + 0.0)]);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let descs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let cs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let c = centers(&cs, 10.0);
        // oracle: plain loops, exp without max-subtraction
        let mut expect = vec![0.0; 6];
        for x in &descs {
            let e: Vec<f64> = cs
                .iter()
                .map(|ck| {
                    let d2: f64 = x.iter().zip(ck).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-10.0 * d2).exp()
                })
                .collect();
            let z: f64 = e.iter().sum();
            for k in 0..2 {
                for j in 0..3 {
                    expect[k * 3 + j] += e[k] / z * (x[j] - cs[k][j]);
                }
            }
        }
        let got = vlad_aggregate(&descs, &c, false).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_descriptor_list() {
        let c = centers(&[vec![0.0]], 1.0);
        assert!(vlad_aggregate::<Vec<f64>>(&[], &c, true).is_err());
    }

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> SpatialDescriptorMap {
        let values = (0..h * w * d).map(|_| rng.sample(StandardNormal)).collect();
        SpatialDescriptorMap::new(h, w, d, values, 64, 48).unwrap()
    }

    #[test]
    fn full_box_equals_all_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let map = random_map(&mut rng, 3, 5, 4);
        let c = centers(
            &(0..3)
                .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
                .collect::<Vec<_>>(),
            2.0,
        );
        let full = RegionBox::full_image(64, 48);
        let a = region_encode(&map, &full, &c).unwrap();
        let b = vlad_aggregate(&map.cells(), &c, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_cell_map_ignores_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 1, 1, 2);
        let c = centers(&[vec![0.0, 0.0], vec![1.0, 0.0]], 1.0);
        let a = region_encode(&map, &RegionBox::new(3.0, 4.0, 1.0, 1.0, 0.0), &c).unwrap();
        let b = region_encode(&map, &RegionBox::new(40.0, 0.0, 0.0, 0.0, 0.0), &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn left_half_enumerates_two_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values = (0..4 * 4 * 3).map(|_| rng.sample(StandardNormal)).collect();
        let map = SpatialDescriptorMap::new(4, 4, 3, values, 40, 40).unwrap();
        let c = centers(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]], 1.5);
        let got = region_encode(&map, &RegionBox::new(0.0, 0.0, 20.0, 40.0, 0.0), &c).unwrap();
        let mut cells = Vec::new();
        for y in 0..4 {
            for x in 0..2 {
                cells.push(map.cell(y, x).to_vec());
            }
        }
        assert_eq!(got, vlad_aggregate(&cells, &c, true).unwrap());
    }

    #[test]
    fn outward_rounding_and_empty_fallback() {
        let map = SpatialDescriptorMap::new(4, 4, 1, vec![0.0; 16], 40, 40).unwrap();
        // 5..15 px covers cells 0 and 1 partially
        assert_eq!(
            map.cell_window(&RegionBox::new(5.0, 5.0, 10.0, 10.0, 0.0)).unwrap(),
            (0, 2, 0, 2)
        );
        // zero-size box on a cell boundary falls back to one cell
        assert_eq!(
            map.cell_window(&RegionBox::new(20.0, 10.0, 0.0, 0.0, 0.0)).unwrap(),
            (1, 2, 2, 3)
        );
        assert!(map.cell_window(&RegionBox::new(30.0, 0.0, 20.0, 5.0, 0.0)).is_err());
    }

    #[test]
    fn pca_whitens_white_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..4000)
            .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let data = DescriptorMatrix::from_rows_f64(&rows).unwrap();
        let t = pca_fit(&data, 3).unwrap();
        let ys: Vec<Vec<f64>> = rows.iter().map(|r| pca_apply(&t, r, false).unwrap()).collect();
        for a in 0..3 {
            for b in 0..3 {
                let cov: f64 = ys.iter().map(|y| y[a] * y[b]).sum::<f64>() / (ys.len() - 1) as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((cov - target).abs() < 0.1, "cov[{a}][{b}] = {cov}");
            }
        }
    }

    #[test]
    fn pca_finds_dominant_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let angle = 0.6f64;
        let (c, s) = (angle.cos(), angle.sin());
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let a: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
                let b: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
                vec![a * c - b * s, a * s + b * c]
            })
            .collect();
        let t = pca_fit(&DescriptorMatrix::from_rows_f64(&rows).unwrap(), 1).unwrap();
        let axis = t.projection().row(0);
        let cos = (axis[0] * c + axis[1] * s).abs() / linalg::norm(axis);
        assert!(cos.acos().to_degrees() < 5.0);
        assert!(axis[0].abs() >= axis[1].abs() || axis[1] > 0.0);
    }

    #[test]
    fn pca_constant_data_errors() {
        let rows = vec![vec![1.0, 2.0]; 10];
        assert!(pca_fit(&DescriptorMatrix::from_rows_f64(&rows).unwrap(), 1).is_err());
    }

    #[test]
    fn pca_apply_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let proj = Mat::from_fn(2, 4, |_, _| rng.sample(StandardNormal));
        let t = WhiteningTransform::new(mean.clone(), proj.clone()).unwrap();
        assert!(pca_apply(&t, &mean, true).unwrap().iter().all(|&v| v == 0.0));

        let v: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let got = pca_apply(&t, &v, false).unwrap();
        for r in 0..2 {
            let mut acc = 0.0;
            for c in 0..4 {
                acc += proj.get(r, c) * (v[c] - mean[c]);
            }
            assert!((got[r] - acc).abs() < 1e-9);
        }

        let id = WhiteningTransform::identity(4);
        assert_eq!(pca_apply(&id, &v, false).unwrap(), v);
        assert!(pca_apply(&id, &v[..3], false).is_err());
    }

    #[test]
    fn sidecar_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = centers(&[vec![0.25, 1.0], vec![-3.0, 2.0]], 7.5);
        let p = dir.path().join("centers.mqbl");
        c.write(&p).unwrap();
        assert_eq!(ClusterCenters::read(&p).unwrap(), c);

        let t = WhiteningTransform::new(vec![0.5, 0.0], Mat::from_rows(&[vec![1.0, 2.0]])).unwrap();
        let p = dir.path().join("pca.mqbl");
        t.write(&p).unwrap();
        assert_eq!(WhiteningTransform::read(&p).unwrap(), t);
    }
}
