//! Seeded synthetic bundles with planted positives and hard distractors.
//!
//! Every query gets one positive and `distractors` hard negatives in the
//! database. The positive's global descriptor is a noisy copy of the
//! query's and its region descriptors are noisy copies of the query's
//! region descriptors. Each distractor's global descriptor sits slightly
//! closer to the query than the positive's (2-10% closer) while its regions
//! come from unrelated content, so the global ordering is wrong but the
//! region evidence is not. Remaining database rows are unrelated fillers.
//!
//! All descriptors are unit vectors; image content is a random direction,
//! and region descriptors of an image are `normalize(g + spread * z)` with
//! `z ~ N(0, I/d)`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{DescriptorMatrix, GroundTruth, ImageRecord, RegionBox, RegionSet, RetrievalBundle};
use crate::error::{invalid, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub seed: u64,
    pub queries: usize,
    pub db: usize,
    pub dim: usize,
    pub regions: usize,
    /// Scale of the perturbation turning a query global into its positive.
    pub noise: f64,
    pub distractors: usize,
    /// Spread of an image's region descriptors around its content vector.
    pub region_spread: f64,
    /// Perturbation between matching query and positive regions.
    pub landmark_noise: f64,
    pub image_w: u32,
    pub image_h: u32,
    /// Smallest region box side in pixels.
    pub min_box: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            seed: 7,
            queries: 200,
            db: 2000,
            dim: 64,
            regions: 8,
            noise: 1.4,
            distractors: 1,
            region_spread: 1.0,
            landmark_noise: 0.5,
            image_w: 640,
            image_h: 480,
            min_box: 32.0,
        }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.db == 0 || self.dim == 0 || self.regions == 0 {
            return Err(invalid!("query, database, dimension and region counts must be >= 1"));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("region_spread", self.region_spread),
            ("landmark_noise", self.landmark_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("{name} must be finite and >= 0"));
            }
        }
        let planted = self.queries * (1 + self.distractors);
        if planted > self.db {
            return Err(invalid!(
                "database of {} cannot hold {planted} planted images",
                self.db
            ));
        }
        let (w, h) = (f64::from(self.image_w), f64::from(self.image_h));
        if !(self.min_box >= 1.0) || self.min_box > w / 2.0 || self.min_box > h / 2.0 {
            return Err(invalid!(
                "impossible geometry: min box {} in a {}x{} image",
                self.min_box,
                self.image_w,
                self.image_h
            ));
        }
        let capacity = ((w / self.min_box).floor() * (h / self.min_box).floor()) as usize;
        if self.regions > capacity {
            return Err(invalid!(
                "impossible geometry: {} regions of side >= {} do not fit a {}x{} image",
                self.regions,
                self.min_box,
                self.image_w,
                self.image_h
            ));
        }
        Ok(())
    }
}

struct Gen {
    rng: ChaCha8Rng,
    p: SynthesisParams,
}

impl Gen {
    fn gaussian(&mut self) -> Vec<f64> {
        let scale = 1.0 / (self.p.dim as f64).sqrt();
        (0..self.p.dim)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    }

    fn unit(&mut self) -> Vec<f64> {
        loop {
            let mut v = self.gaussian();
            if linalg::norm(&v) > 1e-6 {
                linalg::normalize(&mut v);
                return v;
            }
        }
    }

    fn perturb(&mut self, base: &[f64], scale: f64) -> Vec<f64> {
        let z = self.gaussian();
        let mut v: Vec<f64> = base.iter().zip(&z).map(|(b, n)| b + scale * n).collect();
        if linalg::norm(&v) == 0.0 {
            v = base.to_vec();
        }
        linalg::normalize(&mut v);
        v
    }

    /// Unit vector at Euclidean distance `t` (0 <= t <= 2) from unit `q`.
    fn at_distance(&mut self, q: &[f64], t: f64) -> Vec<f64> {
        let u = loop {
            let z = self.gaussian();
            let proj = linalg::dot(&z, q);
            let mut u: Vec<f64> = z.iter().zip(q).map(|(a, b)| a - proj * b).collect();
            if linalg::norm(&u) > 1e-6 {
                linalg::normalize(&mut u);
                break u;
            }
        };
        let cos = (1.0 - t * t / 2.0).clamp(-1.0, 1.0);
        let sin = (1.0 - cos * cos).sqrt();
        q.iter().zip(&u).map(|(a, b)| a * cos + b * sin).collect()
    }

    fn boxes(&mut self) -> Result<RegionSet> {
        let (w, h) = (f64::from(self.p.image_w), f64::from(self.p.image_h));
        let min = self.p.min_box;
        let boxes = (0..self.p.regions)
            .map(|_| {
                let bw = self.rng.random_range(min..=w / 2.0);
                let bh = self.rng.random_range(min..=h / 2.0);
                let x = self.rng.random_range(0.0..=(w - bw));
                let y = self.rng.random_range(0.0..=(h - bh));
                let score = self.rng.random_range(0.0..1.0);
                RegionBox::new(x.floor(), y.floor(), bw.floor(), bh.floor(), score)
            })
            .collect();
        RegionSet::from_unsorted(self.p.image_w, self.p.image_h, boxes)
    }

    /// Same landmarks seen from a slightly different viewpoint.
    fn jitter_boxes(&mut self, set: &RegionSet) -> Result<RegionSet> {
        let boxes = set
            .boxes()
            .iter()
            .map(|b| {
                let dx = self.rng.random_range(-0.05..=0.05) * b.w;
                let dy = self.rng.random_range(-0.05..=0.05) * b.h;
                RegionBox::new((b.x + dx).round(), (b.y + dy).round(), b.w, b.h, b.objectness)
            })
            .collect();
        RegionSet::new(set.image_w(), set.image_h(), boxes)
    }

    fn record(&self, id: String, global: &[f64], regions: RegionSet, rows: &[Vec<f64>]) -> Result<ImageRecord> {
        let mut all = Vec::with_capacity(rows.len() + 1);
        all.push(global.to_vec());
        all.extend_from_slice(rows);
        let region_descriptors = DescriptorMatrix::from_rows_f64(&all)?;
        Ok(ImageRecord {
            id,
            global: region_descriptors.row(0).to_vec(),
            regions,
            region_descriptors,
        })
    }

    /// An unrelated image: random content with regions spread around it.
    fn filler(&mut self, id: String) -> Result<ImageRecord> {
        let g = self.unit();
        let regions = self.boxes()?;
        let rows: Vec<Vec<f64>> = (0..self.p.regions)
            .map(|_| self.perturb(&g, self.p.region_spread))
            .collect();
        self.record(id, &g, regions, &rows)
    }
}

pub fn db_id(i: usize) -> String {
    format!("db{i:05}")
}

pub fn query_id(i: usize) -> String {
    format!("q{i:05}")
}

/// Deterministic in `params`; candidates are left empty.
pub fn synth_generate(params: &SynthesisParams) -> Result<RetrievalBundle> {
    params.validate()?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        p: params.clone(),
    };
    let mut slots: Vec<usize> = (0..params.db).collect();
    slots.shuffle(&mut g.rng);
    let mut slots = slots.into_iter();

    let mut database: Vec<Option<ImageRecord>> = vec![None; params.db];
    let mut queries = Vec::with_capacity(params.queries);
    let mut positives = BTreeMap::new();

    for qi in 0..params.queries {
        let qid = query_id(qi);
        let q = g.unit();
        let q_regions = g.boxes()?;
        let q_rows: Vec<Vec<f64>> = (0..params.regions)
            .map(|_| g.perturb(&q, params.region_spread))
            .collect();

        let p_global = g.perturb(&q, params.noise);
        let p_dist = linalg::dist(&p_global, &q);
        let p_regions = g.jitter_boxes(&q_regions)?;
        let p_rows: Vec<Vec<f64>> = q_rows
            .iter()
            .map(|r| g.perturb(r, params.landmark_noise))
            .collect();
        let p_slot = slots.next().expect("validated capacity");
        database[p_slot] = Some(g.record(db_id(p_slot), &p_global, p_regions, &p_rows)?);
        positives.insert(qid.clone(), BTreeSet::from([db_id(p_slot)]));

        for _ in 0..params.distractors {
            let closer = g.rng.random_range(0.02..0.10);
            let d_global = g.at_distance(&q, p_dist * (1.0 - closer));
            let content = g.unit();
            let d_regions = g.boxes()?;
            let d_rows: Vec<Vec<f64>> = (0..params.regions)
                .map(|_| g.perturb(&content, params.region_spread))
                .collect();
            let slot = slots.next().expect("validated capacity");
            database[slot] = Some(g.record(db_id(slot), &d_global, d_regions, &d_rows)?);
        }

        queries.push(g.record(qid, &q, q_regions, &q_rows)?);
    }
    let database = database
        .into_iter()
        .enumerate()
        .map(|(i, rec)| match rec {
            Some(r) => Ok(r),
            None => g.filler(db_id(i)),
        })
        .collect::<Result<Vec<_>>>()?;

    RetrievalBundle::new(
        queries,
        database,
        BTreeMap::new(),
        Some(GroundTruth::new(positives)),
    )
}
