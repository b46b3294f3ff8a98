//! The `bundle.json` manifest and the in-memory [`RetrievalBundle`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};

use super::io::{read_json, write_json};
use super::{Candidate, CandidateList, DescriptorMatrix, RegionBox, RegionSet};

pub const MANIFEST_NAME: &str = "bundle.json";
const MANIFEST_FORMAT: &str = "placerank-bundle";
const MANIFEST_VERSION: u32 = 1;

/// Per-query positive database ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    positives: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn new(positives: BTreeMap<String, BTreeSet<String>>) -> Self {
        GroundTruth { positives }
    }

    pub fn positives(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.positives.get(query_id)
    }

    pub fn is_positive(&self, query_id: &str, db_id: &str) -> bool {
        self.positives
            .get(query_id)
            .is_some_and(|set| set.contains(db_id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.positives.iter()
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Reads a standalone `{ "query_id": ["db_id", ...] }` document.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let doc: BTreeMap<String, BTreeSet<String>> = read_json(path.as_ref())?;
        Ok(GroundTruth::new(doc))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &self.positives)
    }
}

/// One query or database image with all of its descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub global: Vec<f32>,
    pub regions: RegionSet,
    /// Row 0 is the whole-image descriptor, rows `1..=n` follow the
    /// region boxes in objectness order.
    pub region_descriptors: DescriptorMatrix,
}

impl ImageRecord {
    pub fn region_count(&self) -> usize {
        self.regions.len()
    }
}

/// Queries, database and optional candidates / ground truth, validated for
/// consistent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalBundle {
    pub queries: Vec<ImageRecord>,
    pub database: Vec<ImageRecord>,
    pub candidates: BTreeMap<String, CandidateList>,
    pub ground_truth: Option<GroundTruth>,
}

impl RetrievalBundle {
    pub fn new(
        queries: Vec<ImageRecord>,
        database: Vec<ImageRecord>,
        candidates: BTreeMap<String, CandidateList>,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self> {
        let b = RetrievalBundle {
            queries,
            database,
            candidates,
            ground_truth,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn descriptor_dim(&self) -> usize {
        self.database
            .first()
            .or(self.queries.first())
            .map_or(0, |r| r.global.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.database.is_empty() {
            return Err(Error::Empty("bundle database".into()));
        }
        let d = self.descriptor_dim();
        let mut seen = BTreeSet::new();
        for (kind, list) in [("query", &self.queries), ("database", &self.database)] {
            seen.clear();
            for rec in list {
                if !seen.insert(rec.id.as_str()) {
                    return Err(invalid!("duplicate {kind} id {}", rec.id));
                }
                if rec.global.len() != d {
                    return Err(dim_err!(
                        "{kind} {}: global descriptor has dimension {}, expected {d}",
                        rec.id,
                        rec.global.len()
                    ));
                }
                if rec.global.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("{kind} {} global descriptor", rec.id)));
                }
                if rec.region_descriptors.cols() != d {
                    return Err(dim_err!(
                        "{kind} {}: region descriptors have dimension {}, expected {d}",
                        rec.id,
                        rec.region_descriptors.cols()
                    ));
                }
                if rec.region_descriptors.rows() != rec.regions.len() + 1 {
                    return Err(dim_err!(
                        "{kind} {}: {} descriptor rows for {} regions (expected regions + 1)",
                        rec.id,
                        rec.region_descriptors.rows(),
                        rec.regions.len()
                    ));
                }
            }
        }
        let query_ids: BTreeSet<&str> = self.queries.iter().map(|q| q.id.as_str()).collect();
        for (qid, list) in &self.candidates {
            if !query_ids.contains(qid.as_str()) || list.query_id() != qid {
                return Err(invalid!("candidate list for unknown query {qid}"));
            }
            if let Some(c) = list.candidates().iter().find(|c| c.db >= self.database.len()) {
                return Err(invalid!("query {qid}: candidate index {} out of range", c.db));
            }
        }
        if let Some(gt) = &self.ground_truth {
            let db_ids: BTreeSet<&str> = self.database.iter().map(|r| r.id.as_str()).collect();
            for (qid, set) in gt.iter() {
                if !query_ids.contains(qid.as_str()) {
                    return Err(invalid!("ground truth for unknown query {qid}"));
                }
                if let Some(missing) = set.iter().find(|id| !db_ids.contains(id.as_str())) {
                    return Err(invalid!("ground truth of {qid} references unknown db id {missing}"));
                }
            }
        }
        Ok(())
    }

    pub fn query_index(&self, query_id: &str) -> Option<usize> {
        self.queries.iter().position(|q| q.id == query_id)
    }

    pub fn db_index_map(&self) -> HashMap<&str, usize> {
        self.database
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    /// Database global descriptors stacked row by row.
    pub fn db_globals(&self) -> DescriptorMatrix {
        let d = self.descriptor_dim();
        let mut values = Vec::with_capacity(self.database.len() * d);
        for r in &self.database {
            values.extend_from_slice(&r.global);
        }
        DescriptorMatrix::new(self.database.len(), d, values)
            .expect("validated bundle has a consistent database")
    }

    /// Candidate lists expressed with database ids, keyed by query id.
    pub fn candidates_doc(&self) -> CandidatesDoc {
        to_candidates_doc(&self.candidates, &self.database)
    }

    /// Resolves a standalone candidate document against this bundle.
    pub fn resolve_candidates(&self, doc: &CandidatesDoc) -> Result<BTreeMap<String, CandidateList>> {
        let index = self.db_index_map();
        let mut out = BTreeMap::new();
        for (qid, entries) in doc {
            let cands = entries
                .iter()
                .map(|e| {
                    index
                        .get(e.db_id.as_str())
                        .map(|&db| Candidate {
                            db,
                            distance: e.distance,
                        })
                        .ok_or_else(|| invalid!("query {qid}: unknown candidate db id {}", e.db_id))
                })
                .collect::<Result<Vec<_>>>()?;
            out.insert(qid.clone(), CandidateList::new(qid.clone(), cands)?);
        }
        Ok(out)
    }

    /// Replaces the candidate lists, validating them against this bundle.
    pub fn with_candidates(mut self, candidates: BTreeMap<String, CandidateList>) -> Result<Self> {
        self.candidates = candidates;
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub db_id: String,
    pub distance: f64,
}

/// Standalone candidate document: query id -> ranked candidates.
pub type CandidatesDoc = BTreeMap<String, Vec<CandidateEntry>>;

fn to_candidates_doc(
    candidates: &BTreeMap<String, CandidateList>,
    database: &[ImageRecord],
) -> CandidatesDoc {
    candidates
        .iter()
        .map(|(qid, list)| {
            let entries = list
                .candidates()
                .iter()
                .map(|c| CandidateEntry {
                    db_id: database[c.db].id.clone(),
                    distance: c.distance,
                })
                .collect();
            (qid.clone(), entries)
        })
        .collect()
}

pub fn read_candidates_doc(path: impl AsRef<Path>) -> Result<CandidatesDoc> {
    read_json(path.as_ref())
}

pub fn write_candidates_doc(path: impl AsRef<Path>, doc: &CandidatesDoc) -> Result<()> {
    write_json(path.as_ref(), doc)
}

// ---- manifest document ----------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    format: String,
    version: u32,
    descriptor_dim: usize,
    queries: Vec<ImageDoc>,
    database: Vec<ImageDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<CandidatesDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<BTreeMap<String, BTreeSet<String>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageDoc {
    id: String,
    image_w: u32,
    image_h: u32,
    global: MatrixRowRef,
    region_descriptors: String,
    boxes: Vec<RegionBox>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixRowRef {
    path: String,
    row: usize,
}

/// Accepts either the manifest file or the directory that contains it.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<RetrievalBundle> {
    let manifest = manifest_path(path.as_ref());
    let doc: ManifestDoc = read_json(&manifest)?;
    if doc.format != MANIFEST_FORMAT {
        return Err(Error::format(&manifest, format!("unknown manifest format {:?}", doc.format)));
    }
    if doc.version != MANIFEST_VERSION {
        return Err(Error::format(&manifest, format!("unsupported manifest version {}", doc.version)));
    }
    let root = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut cache: HashMap<String, DescriptorMatrix> = HashMap::new();
    let mut load_images = |docs: Vec<ImageDoc>| -> Result<Vec<ImageRecord>> {
        docs.into_iter()
            .map(|img| load_image(&root, img, doc.descriptor_dim, &mut cache))
            .collect()
    };
    let queries = load_images(doc.queries)?;
    let database = load_images(doc.database)?;

    let ground_truth = doc.ground_truth.map(GroundTruth::new);
    let mut bundle = RetrievalBundle {
        queries,
        database,
        candidates: BTreeMap::new(),
        ground_truth,
    };
    if let Some(cands) = &doc.candidates {
        bundle.candidates = bundle
            .resolve_candidates(cands)
            .map_err(|e| Error::format(&manifest, e.to_string()))?;
    }
    bundle
        .validate()
        .map_err(|e| Error::format(&manifest, e.to_string()))?;
    if bundle.descriptor_dim() != doc.descriptor_dim {
        return Err(Error::format(
            &manifest,
            format!(
                "descriptor_dim {} disagrees with stored descriptors ({})",
                doc.descriptor_dim,
                bundle.descriptor_dim()
            ),
        ));
    }
    Ok(bundle)
}

fn load_image(
    root: &Path,
    img: ImageDoc,
    dim: usize,
    cache: &mut HashMap<String, DescriptorMatrix>,
) -> Result<ImageRecord> {
    let global_path = root.join(&img.global.path);
    if !cache.contains_key(&img.global.path) {
        let m = DescriptorMatrix::read(&global_path)?;
        cache.insert(img.global.path.clone(), m);
    }
    let globals = &cache[&img.global.path];
    if globals.cols() != dim {
        return Err(Error::format(
            &global_path,
            format!("dimension inconsistency: {} columns, bundle uses {dim}", globals.cols()),
        ));
    }
    if img.global.row >= globals.rows() {
        return Err(Error::format(
            &global_path,
            format!("image {}: row {} out of range", img.id, img.global.row),
        ));
    }
    let global = globals.row(img.global.row).to_vec();

    let region_path = root.join(&img.region_descriptors);
    let region_descriptors = DescriptorMatrix::read(&region_path)?;
    if region_descriptors.cols() != dim {
        return Err(Error::format(
            &region_path,
            format!(
                "dimension inconsistency: {} columns, bundle uses {dim}",
                region_descriptors.cols()
            ),
        ));
    }
    if region_descriptors.rows() != img.boxes.len() + 1 {
        return Err(Error::format(
            &region_path,
            format!(
                "dimension inconsistency: {} rows for {} boxes (expected boxes + 1)",
                region_descriptors.rows(),
                img.boxes.len()
            ),
        ));
    }
    let regions = RegionSet::new(img.image_w, img.image_h, img.boxes)
        .map_err(|e| Error::format(root.join(MANIFEST_NAME), format!("image {}: {e}", img.id)))?;
    Ok(ImageRecord {
        id: img.id,
        global,
        regions,
        region_descriptors,
    })
}

/// Writes the bundle under `dir` and returns the manifest path.
///
/// Global descriptors go to one matrix per split, region descriptors to one
/// matrix per image (named by position, so ids need not be path-safe).
pub fn save_bundle(bundle: &RetrievalBundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    bundle.validate()?;
    let dir = dir.as_ref();
    let d = bundle.descriptor_dim();
    let write_split = |kind: &str, records: &[ImageRecord]| -> Result<Vec<ImageDoc>> {
        let global_rel = format!("{kind}_globals.mqbl");
        if !records.is_empty() {
            let mut values = Vec::with_capacity(records.len() * d);
            for r in records {
                values.extend_from_slice(&r.global);
            }
            DescriptorMatrix::new(records.len(), d, values)?.write(dir.join(&global_rel))?;
        }
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let rel = format!("regions/{kind}_{i:06}.mqbl");
                r.region_descriptors.write(dir.join(&rel))?;
                Ok(ImageDoc {
                    id: r.id.clone(),
                    image_w: r.regions.image_w(),
                    image_h: r.regions.image_h(),
                    global: MatrixRowRef {
                        path: global_rel.clone(),
                        row: i,
                    },
                    region_descriptors: rel,
                    boxes: r.regions.boxes().to_vec(),
                })
            })
            .collect()
    };
    let queries = write_split("query", &bundle.queries)?;
    let database = write_split("database", &bundle.database)?;
    let doc = ManifestDoc {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        descriptor_dim: d,
        queries,
        database,
        candidates: (!bundle.candidates.is_empty()).then(|| bundle.candidates_doc()),
        ground_truth: bundle
            .ground_truth
            .as_ref()
            .map(|gt| gt.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
    };
    let manifest = dir.join(MANIFEST_NAME);
    write_json(&manifest, &doc)?;
    Ok(manifest)
}
