//! Objectness scoring of candidate boxes from precomputed edge groups.
//!
//! A group that is wholly inside a box contributes its magnitude, weighted
//! by how weakly it connects (through chains of well-aligned groups) to any
//! group straddling the box border. Proposals are found by a sliding-window
//! search followed by greedy non-maximum suppression.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::io::read_json;
use crate::bundle::{RegionBox, RegionSet};
use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_KAPPA: f64 = 1.5;
pub const DEFAULT_AFFINITY_THRESHOLD: f64 = 0.05;
pub const DEFAULT_INNER_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePixel {
    pub x: f64,
    pub y: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGroup {
    pub x: f64,
    pub y: f64,
    /// Mean orientation in `[-pi, pi)`.
    pub theta: f64,
    pub magnitude: f64,
    pub pixels: Vec<EdgePixel>,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        -PI
    } else {
        t
    }
}

impl EdgeGroup {
    /// Magnitude is the sum of the pixel magnitudes.
    pub fn new(x: f64, y: f64, theta: f64, pixels: Vec<EdgePixel>) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(Error::NonFinite("edge group centroid/orientation".into()));
        }
        if pixels
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.m.is_finite()) || p.m < 0.0)
        {
            return Err(invalid!("edge pixels must be finite with non-negative magnitude"));
        }
        let magnitude = pixels.iter().map(|p| p.m).sum();
        Ok(EdgeGroup {
            x,
            y,
            theta: wrap_angle(theta),
            magnitude,
            pixels,
        })
    }

    /// Centroid is the magnitude-weighted mean of the pixels (plain mean if
    /// all magnitudes are zero).
    pub fn from_pixels(theta: f64, pixels: Vec<EdgePixel>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(invalid!("edge group without pixels needs an explicit centroid"));
        }
        let total: f64 = pixels.iter().map(|p| p.m).sum();
        let (x, y) = if total > 0.0 {
            (
                pixels.iter().map(|p| p.x * p.m).sum::<f64>() / total,
                pixels.iter().map(|p| p.y * p.m).sum::<f64>() / total,
            )
        } else {
            let n = pixels.len() as f64;
            (
                pixels.iter().map(|p| p.x).sum::<f64>() / n,
                pixels.iter().map(|p| p.y).sum::<f64>() / n,
            )
        };
        Self::new(x, y, theta, pixels)
    }

    fn relation(&self, b: &RegionBox) -> Membership {
        if self.pixels.is_empty() {
            return if b.contains_point(self.x, self.y) {
                Membership::Inside
            } else {
                Membership::Outside
            };
        }
        let inside = self
            .pixels
            .iter()
            .filter(|p| b.contains_point(p.x, p.y))
            .count();
        match inside {
            0 => Membership::Outside,
            n if n == self.pixels.len() => Membership::Inside,
            _ => Membership::Straddling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Membership {
    Inside,
    Straddling,
    Outside,
}

/// `|cos(theta_i - theta_ij) * cos(theta_j - theta_ij)|^gamma`, where
/// `theta_ij` is the direction of the line joining the two centroids.
/// Coincident centroids give 1.
pub fn group_affinity(gi: &EdgeGroup, gj: &EdgeGroup, gamma: f64) -> f64 {
    // fixed direction for the joining line keeps the result bit-symmetric
    let (gi, gj) = if (gi.x, gi.y) <= (gj.x, gj.y) { (gi, gj) } else { (gj, gi) };
    let (dx, dy) = (gj.x - gi.x, gj.y - gi.y);
    if dx == 0.0 && dy == 0.0 {
        return 1.0;
    }
    let theta_ij = dy.atan2(dx);
    // snap float noise such as cos(pi/2) = 6e-17 to zero
    let snap = |c: f64| if c.abs() < f64::EPSILON { 0.0 } else { c };
    let a = snap((gi.theta - theta_ij).cos()) * snap((gj.theta - theta_ij).cos());
    a.abs().powf(gamma).min(1.0)
}

/// Edge groups with their thresholded pairwise affinities.
#[derive(Debug, Clone)]
pub struct EdgeGroupGraph {
    groups: Vec<EdgeGroup>,
    affinity: Mat,
    threshold: f64,
    gamma: f64,
}

impl EdgeGroupGraph {
    pub fn new(groups: Vec<EdgeGroup>, gamma: f64, threshold: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid!("gamma must be positive, got {gamma}"));
        }
        let n = groups.len();
        let mut affinity = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let a = group_affinity(&groups[i], &groups[j], gamma);
                let a = if a < threshold { 0.0 } else { a };
                affinity.set(i, j, a);
                affinity.set(j, i, a);
            }
        }
        Ok(EdgeGroupGraph {
            groups,
            affinity,
            threshold,
            gamma,
        })
    }

    /// Uses the given affinities instead of computing them from orientation.
    /// Entries below `threshold` are zeroed; the matrix must be symmetric
    /// with values in `[0, 1]`.
    pub fn with_affinities(groups: Vec<EdgeGroup>, affinity: Mat, threshold: f64) -> Result<Self> {
        let n = groups.len();
        if affinity.shape() != (n, n) {
            return Err(invalid!("affinity matrix must be {n}x{n}"));
        }
        for i in 0..n {
            for j in 0..n {
                let a = affinity.get(i, j);
                if !(0.0..=1.0).contains(&a) || a != affinity.get(j, i) {
                    return Err(invalid!("affinities must be symmetric and within [0, 1]"));
                }
            }
        }
        let affinity = affinity.map(|a| if a < threshold { 0.0 } else { a });
        Ok(EdgeGroupGraph {
            groups,
            affinity,
            threshold,
            gamma: DEFAULT_GAMMA,
        })
    }

    pub fn groups(&self) -> &[EdgeGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn affinity(&self, i: usize, j: usize) -> f64 {
        self.affinity.get(i, j)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Sets one (symmetric) affinity, subject to the threshold.
    pub fn set_affinity(&mut self, i: usize, j: usize, a: f64) {
        let a = if a < self.threshold { 0.0 } else { a.clamp(0.0, 1.0) };
        self.affinity.set(i, j, a);
        self.affinity.set(j, i, a);
    }

    /// `w_b` for every group: 0 for straddling and outside groups, otherwise
    /// one minus the best affinity-product path from a straddling group.
    pub fn group_weights(&self, b: &RegionBox) -> Vec<f64> {
        let rel: Vec<Membership> = self.groups.iter().map(|g| g.relation(b)).collect();
        let best = self.best_paths(&rel);
        rel.iter()
            .zip(best)
            .map(|(r, p)| match r {
                Membership::Inside => 1.0 - p,
                _ => 0.0,
            })
            .collect()
    }

    /// Max-product reachability from all straddling groups through groups
    /// that overlap the box (Dijkstra on -log affinity).
    fn best_paths(&self, rel: &[Membership]) -> Vec<f64> {
        let n = self.groups.len();
        let mut best = vec![0.0f64; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        for (i, r) in rel.iter().enumerate() {
            if *r == Membership::Straddling {
                best[i] = 1.0;
                heap.push(PathEntry { value: 1.0, node: i });
            }
        }
        while let Some(PathEntry { value, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            for next in 0..n {
                if done[next] || rel[next] == Membership::Outside {
                    continue;
                }
                let a = self.affinity.get(node, next);
                if a <= 0.0 {
                    continue;
                }
                let v = value * a;
                if v > best[next] {
                    best[next] = v;
                    heap.push(PathEntry { value: v, node: next });
                }
            }
        }
        best
    }
}

#[derive(Debug, PartialEq)]
struct PathEntry {
    value: f64,
    node: usize,
}

impl Eq for PathEntry {}

impl Ord for PathEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for PathEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Contour weight `w_b` of one group with respect to `b`.
pub fn group_weight(graph: &EdgeGroupGraph, index: usize, b: &RegionBox) -> Result<f64> {
    if index >= graph.len() {
        return Err(invalid!("group index {index} out of range ({} groups)", graph.len()));
    }
    Ok(graph.group_weights(b)[index])
}

/// Returns `(h_b, h_b_in)`: the weighted magnitude of enclosed groups over
/// `2 (b_w + b_h)^kappa`, and the same minus the pixel magnitude inside the
/// centered inner box whose sides are `inner_fraction` of the box's.
pub fn box_score(
    graph: &EdgeGroupGraph,
    b: &RegionBox,
    kappa: f64,
    inner_fraction: f64,
) -> Result<(f64, f64)> {
    let perimeter = b.w + b.h;
    if !(perimeter > 0.0) {
        return Err(invalid!("box has zero perimeter"));
    }
    let denom = 2.0 * perimeter.powf(kappa);
    let weights = graph.group_weights(b);
    let enclosed: f64 = graph
        .groups
        .iter()
        .zip(&weights)
        .map(|(g, w)| w * g.magnitude)
        .sum();
    let h_b = enclosed / denom;

    let (iw, ih) = (b.w * inner_fraction, b.h * inner_fraction);
    let inner = RegionBox::new(b.x + (b.w - iw) / 2.0, b.y + (b.h - ih) / 2.0, iw, ih, 0.0);
    let inner_mass: f64 = graph
        .groups
        .iter()
        .flat_map(|g| g.pixels.iter())
        .filter(|p| inner.contains_point(p.x, p.y))
        .map(|p| p.m)
        .sum();
    Ok((h_b, h_b - inner_mass / denom))
}

/// Greedy non-maximum suppression on `objectness`. Returns kept indices in
/// selection order (descending score, lower index first on ties).
pub fn nms(boxes: &[RegionBox], iou_threshold: f64) -> Result<Vec<usize>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(invalid!("IoU threshold must be in (0, 1], got {iou_threshold}"));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .objectness
            .total_cmp(&boxes[a].objectness)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| boxes[k].iou(&boxes[i]) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Sliding-window search parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    pub image_w: u32,
    pub image_h: u32,
    /// Window stride in pixels.
    pub step: f64,
    /// Window widths in pixels.
    pub scales: Vec<f64>,
    /// Height / width ratios.
    pub aspects: Vec<f64>,
    pub kappa: f64,
    pub inner_fraction: f64,
    pub iou_threshold: f64,
    pub top_n: usize,
}

impl ProposalParams {
    pub fn new(image_w: u32, image_h: u32) -> Self {
        let side = f64::from(image_w.min(image_h));
        ProposalParams {
            image_w,
            image_h,
            step: (side / 20.0).max(1.0),
            scales: [0.1, 0.2, 0.3, 0.45, 0.6, 0.8].iter().map(|f| f * side).collect(),
            aspects: vec![0.5, 1.0, 2.0],
            kappa: DEFAULT_KAPPA,
            inner_fraction: DEFAULT_INNER_FRACTION,
            iou_threshold: 0.65,
            top_n: crate::bundle::DEFAULT_REGIONS,
        }
    }

    fn windows(&self) -> Vec<RegionBox> {
        let (iw, ih) = (f64::from(self.image_w), f64::from(self.image_h));
        let mut out = Vec::new();
        for &w in &self.scales {
            for &aspect in &self.aspects {
                let h = w * aspect;
                if w <= 0.0 || h <= 0.0 || w > iw || h > ih {
                    continue;
                }
                let mut y = 0.0;
                while y + h <= ih {
                    let mut x = 0.0;
                    while x + w <= iw {
                        out.push(RegionBox::new(x, y, w, h, 0.0));
                        x += self.step;
                    }
                    y += self.step;
                }
            }
        }
        out
    }
}

/// Scores every window by `h_b_in`, drops non-positive scores, applies NMS
/// and keeps the best `top_n`, best first.
pub fn propose(graph: &EdgeGroupGraph, params: &ProposalParams) -> Result<RegionSet> {
    if params.scales.is_empty() || params.aspects.is_empty() || !(params.step > 0.0) {
        return Err(invalid!("proposal grid needs a positive step and non-empty scales/aspects"));
    }
    if params.image_w == 0 || params.image_h == 0 {
        return Err(invalid!("degenerate image size"));
    }
    if graph.is_empty() || params.top_n == 0 {
        return RegionSet::new(params.image_w, params.image_h, Vec::new());
    }
    let windows = params.windows();
    if windows.is_empty() {
        return Err(invalid!("no window of the grid fits inside the image"));
    }
    let scored: Vec<RegionBox> = windows
        .par_iter()
        .map(|b| {
            box_score(graph, b, params.kappa, params.inner_fraction)
                .map(|(_, h_in)| RegionBox { objectness: h_in, ..*b })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|b| b.objectness > 0.0)
        .collect();
    let kept = nms(&scored, params.iou_threshold)?;
    let boxes = kept
        .into_iter()
        .take(params.top_n)
        .map(|i| scored[i])
        .collect();
    RegionSet::new(params.image_w, params.image_h, boxes)
}

// ---- ingest ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct EdgeGroupsDoc {
    pub image_w: u32,
    pub image_h: u32,
    pub groups: Vec<EdgeGroupDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EdgeGroupDoc {
    pub centroid: [f64; 2],
    pub theta: f64,
    /// `[x, y, magnitude]` triples.
    pub pixels: Vec<[f64; 3]>,
}

impl EdgeGroupsDoc {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn to_groups(&self) -> Result<Vec<EdgeGroup>> {
        self.groups
            .iter()
            .map(|g| {
                let pixels = g
                    .pixels
                    .iter()
                    .map(|&[x, y, m]| EdgePixel { x, y, m })
                    .collect();
                EdgeGroup::new(g.centroid[0], g.centroid[1], g.theta, pixels)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn group_at(x: f64, y: f64, theta: f64, m: f64) -> EdgeGroup {
        EdgeGroup::new(x, y, theta, vec![EdgePixel { x, y, m }]).unwrap()
    }

    #[test]
    fn affinity_cases() {
        let a = group_at(0.0, 0.0, 0.0, 1.0);
        let b = group_at(5.0, 0.0, 0.0, 1.0);
        assert_eq!(group_affinity(&a, &b, 2.0), 1.0);

        let c = group_at(0.0, 0.0, FRAC_PI_2, 1.0);
        assert_eq!(group_affinity(&c, &b, 2.0), 0.0);

        let d = group_at(0.0, 0.0, FRAC_PI_4, 1.0);
        assert!((group_affinity(&d, &b, 2.0) - 0.5).abs() < 1e-15);
        assert_eq!(group_affinity(&d, &b, 2.0), group_affinity(&b, &d, 2.0));

        assert_eq!(group_affinity(&a, &group_at(0.0, 0.0, 1.0, 1.0), 2.0), 1.0);
    }

    #[test]
    fn theta_wraps() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        let g = group_at(0.0, 0.0, 7.0, 1.0);
        assert!(g.theta >= -PI && g.theta < PI);
    }

    #[test]
    fn magnitude_sums_pixels() {
        let g = EdgeGroup::from_pixels(
            0.0,
            vec![
                EdgePixel { x: 0.0, y: 0.0, m: 1.5 },
                EdgePixel { x: 2.0, y: 0.0, m: 0.5 },
            ],
        )
        .unwrap();
        assert!((g.magnitude - 2.0).abs() < 1e-12);
        assert!((g.x - 0.5).abs() < 1e-12);
    }

    fn chain_graph() -> EdgeGroupGraph {
        // group 0 straddles the box (0,0)-(10,10); 1..3 are inside
        let groups = vec![
            EdgeGroup::new(
                0.0,
                5.0,
                0.0,
                vec![
                    EdgePixel { x: -1.0, y: 5.0, m: 1.0 },
                    EdgePixel { x: 1.0, y: 5.0, m: 1.0 },
                ],
            )
            .unwrap(),
            group_at(3.0, 5.0, 0.0, 1.0),
            group_at(6.0, 5.0, 0.0, 1.0),
            group_at(8.0, 8.0, 0.0, 1.0),
        ];
        let mut aff = Mat::zeros(4, 4);
        for (i, j, a) in [(0, 1, 0.9), (1, 2, 0.8), (2, 3, 0.5)] {
            aff.set(i, j, a);
            aff.set(j, i, a);
        }
        EdgeGroupGraph::with_affinities(groups, aff, DEFAULT_AFFINITY_THRESHOLD).unwrap()
    }

    #[test]
    fn chain_weights() {
        let g = chain_graph();
        let b = RegionBox::new(0.0, 0.0, 10.0, 10.0, 0.0);
        assert_eq!(group_weight(&g, 0, &b).unwrap(), 0.0);
        assert!((group_weight(&g, 1, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!((group_weight(&g, 2, &b).unwrap() - 0.28).abs() < 1e-12);
        assert!((group_weight(&g, 3, &b).unwrap() - (1.0 - 0.36)).abs() < 1e-12);
        assert!(group_weight(&g, 4, &b).is_err());
    }

    #[test]
    fn no_straddlers_full_weight() {
        let g = chain_graph();
        let b = RegionBox::new(2.0, 0.0, 8.0, 10.0, 0.0);
        // group 0 is now outside; nothing straddles
        assert_eq!(group_weight(&g, 1, &b).unwrap(), 1.0);
        assert_eq!(group_weight(&g, 0, &b).unwrap(), 0.0);
    }

    #[test]
    fn adjacent_full_affinity_zero_weight() {
        let mut g = chain_graph();
        g.set_affinity(0, 1, 1.0);
        let b = RegionBox::new(0.0, 0.0, 10.0, 10.0, 0.0);
        assert_eq!(group_weight(&g, 1, &b).unwrap(), 0.0);
    }

    #[test]
    fn threshold_zeroes_weak_links() {
        let mut g = chain_graph();
        g.set_affinity(0, 1, 0.04);
        assert_eq!(g.affinity(0, 1), 0.0);
    }

    #[test]
    fn one_group_hand_score() {
        let grp = EdgeGroup::new(
            1.0,
            1.0,
            0.0,
            vec![
                EdgePixel { x: 0.5, y: 0.5, m: 3.0 },
                EdgePixel { x: 1.5, y: 1.5, m: 3.0 },
            ],
        )
        .unwrap();
        let g = EdgeGroupGraph::new(vec![grp], DEFAULT_GAMMA, DEFAULT_AFFINITY_THRESHOLD).unwrap();
        let (h, h_in) = box_score(&g, &RegionBox::new(0.0, 0.0, 2.0, 2.0, 0.0), 1.0, 0.5).unwrap();
        assert_eq!(h, 0.75);
        assert_eq!(h_in, 0.0);
    }

    #[test]
    fn empty_box_scores_zero() {
        let g = EdgeGroupGraph::new(vec![group_at(50.0, 50.0, 0.0, 2.0)], 2.0, 0.05).unwrap();
        let (h, h_in) = box_score(&g, &RegionBox::new(0.0, 0.0, 4.0, 4.0, 0.0), 1.5, 0.5).unwrap();
        assert_eq!((h, h_in), (0.0, 0.0));
        assert!(box_score(&g, &RegionBox::new(0.0, 0.0, 0.0, 0.0, 0.0), 1.5, 0.5).is_err());
    }

    #[test]
    fn nms_basic() {
        let a = RegionBox::new(0.0, 0.0, 2.0, 2.0, 0.9);
        let b = RegionBox::new(0.0, 0.0, 2.0, 2.0, 0.5);
        assert_eq!(nms(&[b, a], 0.5).unwrap(), vec![1]);
        let c = RegionBox::new(10.0, 10.0, 1.0, 1.0, 0.1);
        assert_eq!(nms(&[c, a], 0.5).unwrap(), vec![1, 0]);
        assert!(nms(&[], 0.5).unwrap().is_empty());
        assert!(nms(&[a], 0.0).is_err());
    }

    #[test]
    fn propose_empty_graph() {
        let g = EdgeGroupGraph::new(vec![], 2.0, 0.05).unwrap();
        let set = propose(&g, &ProposalParams::new(100, 100)).unwrap();
        assert!(set.is_empty());
    }
}
