use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use placerank::bundle::io::write_json;
use placerank::bundle::{
    load_bundle, read_candidates_doc, retrieve_topk, save_bundle, write_candidates_doc,
    CandidateList, DescriptorMatrix, GroundTruth, ImageRecord, RegionBox, RegionSet,
    RetrievalBundle,
};
use placerank::edgebox::{propose, EdgeGroupGraph, EdgeGroupsDoc, ProposalParams};
use placerank::eval::{
    compare, delta_csv, plot_csv, recall_csv, synth_generate, write_text, Rankings,
    SynthesisParams,
};
use placerank::pdl::{build_training_set, train_bagged, train_gaussian, PdlModel};
use placerank::rerank::{rerank_all, RerankParams, DEFAULT_TOP_REGIONS};
use placerank::vlad::{
    pca_apply, pca_fit, region_encode, vlad_aggregate, ClusterCenters, SpatialDescriptorMap,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::*;
use crate::{CliError, CliResult};

/// Resolved configuration echoed next to every output.
#[derive(Debug, Default, Serialize)]
struct RunConfig {
    tool_version: &'static str,
    subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_sha256: Option<String>,
    output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalize_rows: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    queries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verbosity: Option<u8>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    extra: BTreeMap<&'static str, Value>,
}

impl RunConfig {
    fn new(cli: &Cli, subcommand: &'static str, output: &Path) -> Self {
        RunConfig {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand,
            output: output.to_path_buf(),
            verbosity: Some(cli.verbose),
            ..RunConfig::default()
        }
    }

    fn with_params(mut self, p: &RerankParams) -> Self {
        self.beta = Some(p.beta);
        self.mode = Some(p.correlation_mode.as_str());
        self.normalize_rows = Some(p.normalize_rows);
        self.m = Some(p.top_regions_m);
        self
    }
}

fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    output.with_file_name(name)
}

fn write_meta(path: &Path, meta: &RunConfig) -> CliResult<()> {
    Ok(write_json(path, meta)?)
}

fn log(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose > 0 {
        eprintln!("{}", msg.as_ref());
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(cli, a),
        Command::Encode(a) => encode(cli, a),
        Command::ScoreBoxes(a) => score_boxes(cli, a),
        Command::Retrieve(a) => retrieve(cli, a),
        Command::TrainPdl(a) => train_pdl(cli, a),
        Command::Rerank(a) => rerank(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
    }
}

// ---- gen-synthetic ---------------------------------------------------------

fn gen_synthetic(cli: &Cli, a: &GenSyntheticArgs) -> CliResult<()> {
    let params = SynthesisParams {
        seed: a.seed,
        queries: a.queries,
        db: a.db,
        dim: a.dim,
        regions: a.regions,
        noise: a.noise,
        distractors: a.distractors,
        ..SynthesisParams::default()
    };
    let bundle = synth_generate(&params)?;
    let manifest = save_bundle(&bundle, &a.out)?;
    let mut meta = RunConfig::new(cli, "gen-synthetic", &a.out);
    meta.seed = Some(a.seed);
    meta.queries = Some(a.queries);
    meta.n = Some(a.regions);
    meta.extra.insert("synthesis", serde_json::to_value(&params).expect("plain struct"));
    write_meta(&a.out.join("run.meta.json"), &meta)?;
    log(cli, format!("wrote {}", manifest.display()));
    Ok(())
}

// ---- encode ----------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ImageList {
    queries: Vec<ImageEntry>,
    database: Vec<ImageEntry>,
    #[serde(default)]
    ground_truth: Option<BTreeMap<String, BTreeSet<String>>>,
}

#[derive(Debug, Deserialize)]
struct ImageEntry {
    id: String,
    /// Region document produced by `score-boxes`, relative to the list.
    #[serde(default)]
    regions: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionsDoc {
    image_w: u32,
    image_h: u32,
    boxes: Vec<RegionBox>,
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn encode_image(
    entry: &ImageEntry,
    list_dir: &Path,
    maps: &Path,
    centers: &ClusterCenters,
) -> CliResult<(String, RegionSet, Vec<Vec<f64>>)> {
    let map = SpatialDescriptorMap::read(maps.join(format!("{}.mqbl", entry.id)))?;
    let regions = match &entry.regions {
        Some(rel) => {
            let doc: RegionsDoc = read_json_file(&list_dir.join(rel))?;
            RegionSet::new(doc.image_w, doc.image_h, doc.boxes)?
        }
        None => RegionSet::new(map.image_w(), map.image_h(), Vec::new())?,
    };
    let mut rows = vec![vlad_aggregate(&map.cells(), centers, true)?];
    for b in regions.boxes() {
        rows.push(region_encode(&map, b, centers)?);
    }
    Ok((entry.id.clone(), regions, rows))
}

fn encode(cli: &Cli, a: &EncodeArgs) -> CliResult<()> {
    let list: ImageList = read_json_file(&a.images)?;
    let list_dir = a.images.parent().unwrap_or(Path::new(".")).to_path_buf();
    let centers = ClusterCenters::read(&a.centers)?;
    let encode_all = |entries: &[ImageEntry]| -> CliResult<Vec<_>> {
        entries
            .par_iter()
            .map(|e| encode_image(e, &list_dir, &a.maps, &centers))
            .collect()
    };
    let mut queries = encode_all(&list.queries)?;
    let mut database = encode_all(&list.database)?;

    let mut meta = RunConfig::new(cli, "encode", &a.out);
    if let Some(out_dim) = a.pca_dim {
        let globals: Vec<Vec<f64>> = database.iter().map(|(_, _, rows)| rows[0].clone()).collect();
        let transform = pca_fit(&DescriptorMatrix::from_rows_f64(&globals)?, out_dim)?;
        for (_, _, rows) in queries.iter_mut().chain(database.iter_mut()) {
            for row in rows.iter_mut() {
                *row = pca_apply(&transform, row, true)?;
            }
        }
        transform.write(a.out.join("pca.mqbl"))?;
        meta.extra.insert("pca_dim", out_dim.into());
    }

    let to_records = |encoded: Vec<(String, RegionSet, Vec<Vec<f64>>)>| -> CliResult<Vec<ImageRecord>> {
        encoded
            .into_iter()
            .map(|(id, regions, rows)| {
                let region_descriptors = DescriptorMatrix::from_rows_f64(&rows)?;
                let global = region_descriptors.row(0).to_vec();
                Ok(ImageRecord {
                    id,
                    global,
                    regions,
                    region_descriptors,
                })
            })
            .collect()
    };
    let bundle = RetrievalBundle::new(
        to_records(queries)?,
        to_records(database)?,
        BTreeMap::new(),
        list.ground_truth.map(GroundTruth::new),
    )?;
    save_bundle(&bundle, &a.out)?;
    meta.extra.insert("softassign_sharpness", centers.sharpness().into());
    meta.extra.insert("clusters", centers.k().into());
    write_meta(&a.out.join("run.meta.json"), &meta)?;
    log(cli, format!("encoded {} queries, {} database images", bundle.queries.len(), bundle.database.len()));
    Ok(())
}

// ---- score-boxes -----------------------------------------------------------

fn score_boxes(cli: &Cli, a: &ScoreBoxesArgs) -> CliResult<()> {
    let doc = EdgeGroupsDoc::read(&a.groups)?;
    let graph = EdgeGroupGraph::new(doc.to_groups()?, a.gamma, a.affinity_threshold)?;
    let mut params = ProposalParams::new(doc.image_w, doc.image_h);
    params.kappa = a.kappa;
    params.inner_fraction = a.inner_fraction;
    params.iou_threshold = a.iou;
    params.top_n = a.top_n;
    if let Some(step) = a.step {
        params.step = step;
    }
    if let Some(scales) = &a.scales {
        params.scales = scales.clone();
    }
    if let Some(aspects) = &a.aspects {
        params.aspects = aspects.clone();
    }
    let regions = propose(&graph, &params)?;
    let out = RegionsDoc {
        image_w: regions.image_w(),
        image_h: regions.image_h(),
        boxes: regions.boxes().to_vec(),
    };
    write_json(&a.out, &out)?;
    let mut meta = RunConfig::new(cli, "score-boxes", &a.out);
    meta.n = Some(a.top_n);
    meta.extra.insert("gamma", a.gamma.into());
    meta.extra.insert("affinity_threshold", a.affinity_threshold.into());
    meta.extra.insert("proposal", serde_json::to_value(&params).expect("plain struct"));
    write_meta(&meta_path(&a.out), &meta)?;
    log(cli, format!("kept {} boxes", regions.len()));
    Ok(())
}

// ---- retrieve --------------------------------------------------------------

fn retrieve(cli: &Cli, a: &RetrieveArgs) -> CliResult<()> {
    let bundle = load_bundle(&a.bundle)?;
    let db = bundle.db_globals();
    let lists: BTreeMap<String, CandidateList> = bundle
        .queries
        .par_iter()
        .map(|q| Ok((q.id.clone(), retrieve_topk(&q.id, &q.global, &db, a.k)?)))
        .collect::<placerank::Result<_>>()?;
    let bundle = bundle.with_candidates(lists)?;
    write_candidates_doc(&a.out, &bundle.candidates_doc())?;
    let mut meta = RunConfig::new(cli, "retrieve", &a.out);
    meta.bundle = Some(a.bundle.clone());
    meta.k = Some(a.k);
    meta.queries = Some(bundle.queries.len());
    write_meta(&meta_path(&a.out), &meta)?;
    log(cli, format!("retrieved top-{} for {} queries", a.k, bundle.queries.len()));
    Ok(())
}

// ---- shared candidate / feature setup --------------------------------------

/// Parses `start:end` (either side optional) into a half-open range.
fn parse_range(spec: &str, len: usize) -> CliResult<std::ops::Range<usize>> {
    let bad = || CliError::Usage(format!("--queries expects start:end, got {spec:?}"));
    let (s, e) = spec.split_once(':').ok_or_else(bad)?;
    let start = if s.is_empty() { 0 } else { s.trim().parse().map_err(|_| bad())? };
    let end = if e.is_empty() { len } else { e.trim().parse().map_err(|_| bad())? };
    if start > end || end > len {
        return Err(CliError::Usage(format!(
            "--queries {spec} is outside the {len} bundle queries"
        )));
    }
    Ok(start..end)
}

/// Bundle with the requested candidate lists attached, plus the selected
/// query ids in bundle order.
fn prepare(bundle_dir: &Path, f: &FeatureArgs) -> CliResult<(RetrievalBundle, Vec<String>)> {
    let mut bundle = load_bundle(bundle_dir)?;
    if let Some(path) = &f.candidates {
        let doc = read_candidates_doc(path)?;
        bundle.candidates = bundle.resolve_candidates(&doc)?;
    }
    if bundle.candidates.is_empty() {
        return Err(CliError::Usage(
            "no candidates: run `retrieve` and pass --candidates".into(),
        ));
    }
    if let Some(k) = f.k {
        if k == 0 {
            return Err(CliError::Usage("--k must be at least 1".into()));
        }
        for list in bundle.candidates.values_mut() {
            if list.len() > k {
                *list = CandidateList::new(list.query_id(), list.candidates()[..k].to_vec())?;
            }
        }
    }
    let range = match &f.queries {
        Some(spec) => parse_range(spec, bundle.queries.len())?,
        None => 0..bundle.queries.len(),
    };
    let ids: Vec<String> = bundle.queries[range]
        .iter()
        .map(|q| q.id.clone())
        .filter(|id| bundle.candidates.contains_key(id))
        .collect();
    if ids.is_empty() {
        return Err(CliError::Usage("no selected query has candidates".into()));
    }
    Ok((bundle, ids))
}

fn min_region_count(bundle: &RetrievalBundle) -> usize {
    bundle
        .queries
        .iter()
        .chain(&bundle.database)
        .map(ImageRecord::region_count)
        .min()
        .unwrap_or(0)
}

fn rerank_params(f: &FeatureArgs, m: usize, alpha: f64, bundle: &RetrievalBundle) -> CliResult<RerankParams> {
    let candidates_k = bundle.candidates.values().map(CandidateList::len).max().unwrap_or(1);
    let params = RerankParams {
        beta: f.beta,
        alpha,
        top_regions_m: m,
        candidates_k,
        correlation_mode: f.mode.into(),
        normalize_rows: !f.raw_rows,
    };
    params.validate()?;
    Ok(params)
}

// ---- train-pdl -------------------------------------------------------------

fn train_pdl(cli: &Cli, a: &TrainPdlArgs) -> CliResult<()> {
    let (bundle, ids) = prepare(&a.bundle, &a.features)?;
    let m = a
        .features
        .m
        .unwrap_or_else(|| DEFAULT_TOP_REGIONS.min(min_region_count(&bundle)));
    let params = rerank_params(&a.features, m, 0.0, &bundle)?;
    let data = build_training_set(&bundle, &ids, &params)?;
    let (negatives, positives) = data.label_counts();
    log(cli, format!("training on {} pairs ({positives} positive, {negatives} negative)", data.rows()));
    let model = match a.kind {
        ModelKind::Bagged => train_bagged(&data, a.trees, a.seed, a.min_leaf)?,
        ModelKind::Gaussian => train_gaussian(&data)?,
    };
    model.save(&a.out)?;

    let mut meta = RunConfig::new(cli, "train-pdl", &a.out).with_params(&params);
    meta.bundle = Some(a.bundle.clone());
    meta.k = a.features.k;
    meta.trees = (a.kind == ModelKind::Bagged).then_some(a.trees);
    meta.seed = Some(a.seed);
    meta.queries = Some(ids.len());
    meta.extra.insert("kind", model.kind().into());
    meta.extra.insert("min_leaf", a.min_leaf.into());
    meta.extra.insert("training_pairs", data.rows().into());
    if let Some(c) = &a.features.candidates {
        meta.extra.insert("candidates", c.display().to_string().into());
    }
    write_meta(&meta_path(&a.out), &meta)?;
    Ok(())
}

// ---- rerank ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RerankRow {
    db_id: String,
    d_c: f64,
    p_m: f64,
    d_new: f64,
}

#[derive(Debug, Serialize)]
struct RerankDoc<'a> {
    meta: &'a RunConfig,
    results: BTreeMap<String, Vec<RerankRow>>,
}

fn rerank(cli: &Cli, a: &RerankArgs) -> CliResult<()> {
    let model_bytes = read_bytes(&a.model)?;
    let model = PdlModel::load(&a.model)?;
    let model_m = model.top_regions_m().ok_or_else(|| {
        CliError::Usage(format!("{}: unrecognized feature order tag", a.model.display()))
    })?;
    if let Some(m) = a.features.m {
        if m != model_m {
            return Err(CliError::Usage(format!(
                "--m {m} does not match the model, which was trained with m = {model_m}"
            )));
        }
    }
    let (bundle, ids) = prepare(&a.bundle, &a.features)?;
    let params = rerank_params(&a.features, model_m, a.alpha, &bundle)?;
    let lists: Vec<&CandidateList> = ids.iter().map(|id| &bundle.candidates[id]).collect();
    let reranked = rerank_all(&bundle, &lists, &model, &params)?;

    let results = reranked
        .iter()
        .map(|l| {
            let rows = l
                .entries
                .iter()
                .map(|e| RerankRow {
                    db_id: bundle.database[e.db].id.clone(),
                    d_c: e.d_c,
                    p_m: e.p_m,
                    d_new: e.d_new,
                })
                .collect();
            (l.query_id.clone(), rows)
        })
        .collect();

    let mut meta = RunConfig::new(cli, "rerank", &a.out).with_params(&params);
    meta.bundle = Some(a.bundle.clone());
    meta.model = Some(a.model.clone());
    meta.model_sha256 = Some(hex::encode(Sha256::digest(&model_bytes).as_slice()));
    meta.alpha = Some(a.alpha);
    meta.k = a.features.k;
    meta.seed = Some(model.seed());
    meta.trees = Some(model.tree_count());
    meta.queries = Some(ids.len());
    if let Some(c) = &a.features.candidates {
        meta.extra.insert("candidates", c.display().to_string().into());
    }
    write_json(&a.out, &RerankDoc { meta: &meta, results })?;
    log(cli, format!("re-ranked {} queries", ids.len()));
    Ok(())
}

// ---- evaluate --------------------------------------------------------------

/// Ranked db ids per query from a candidate document or a re-rank output.
fn read_rankings(path: &Path) -> CliResult<Rankings> {
    let value: Value = read_json_file(path)?;
    let bad = |msg: &str| CliError::Usage(format!("{}: {msg}", path.display()));
    let lists = match (&value.get("meta"), value.get("results")) {
        (Some(_), Some(results)) => results,
        _ => &value,
    };
    let lists = lists
        .as_object()
        .ok_or_else(|| bad("expected an object of query id -> ranked list"))?;
    lists
        .iter()
        .map(|(qid, entries)| {
            let entries = entries
                .as_array()
                .ok_or_else(|| bad(&format!("query {qid}: expected a list")))?;
            let ids = entries
                .iter()
                .map(|e| {
                    e.get("db_id")
                        .and_then(Value::as_str)
                        .map(str::to_string)
                        .ok_or_else(|| bad(&format!("query {qid}: entry without db_id")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok((qid.clone(), ids))
        })
        .collect()
}

fn restrict(r: &Rankings, keep: &BTreeSet<String>) -> Rankings {
    r.iter()
        .filter(|(q, _)| keep.contains(*q))
        .map(|(q, l)| (q.clone(), l.clone()))
        .collect()
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> CliResult<()> {
    let gt = match (&a.gt, &a.bundle) {
        (Some(path), _) => GroundTruth::read(path)?,
        (None, Some(dir)) => load_bundle(dir)?
            .ground_truth
            .ok_or_else(|| CliError::Usage(format!("{}: bundle has no ground truth", dir.display())))?,
        (None, None) => return Err(CliError::Usage("evaluate needs --gt or --bundle".into())),
    };
    let baseline = read_rankings(&a.baseline)?;
    let reranked = read_rankings(&a.reranked)?;
    let keep: BTreeSet<String> = match &a.queries {
        Some(ids) => ids.iter().cloned().collect(),
        None => baseline
            .keys()
            .filter(|q| reranked.contains_key(*q))
            .cloned()
            .collect(),
    };
    for q in &keep {
        if !baseline.contains_key(q) || !reranked.contains_key(q) {
            return Err(CliError::Usage(format!("query {q} is missing from an input ranking")));
        }
    }
    if keep.is_empty() {
        return Err(CliError::Usage("the two rankings share no query".into()));
    }
    let cmp = compare(&restrict(&baseline, &keep), &restrict(&reranked, &keep), &gt, &a.ns)?;

    write_text(&a.out, &recall_csv(&[&cmp.baseline, &cmp.reranked]))?;
    if let Some(plot) = &a.plot {
        write_text(plot, &plot_csv(&[&cmp.baseline, &cmp.reranked])?)?;
    }
    let deltas = delta_csv(&cmp);
    if let Some(path) = &a.deltas {
        write_text(path, &deltas)?;
    }
    print!("{deltas}");

    let mut meta = RunConfig::new(cli, "evaluate", &a.out);
    meta.bundle = a.bundle.clone();
    meta.queries = Some(cmp.baseline.query_count);
    meta.extra.insert("baseline", a.baseline.display().to_string().into());
    meta.extra.insert("reranked", a.reranked.display().to_string().into());
    meta.extra.insert("ns", serde_json::to_value(&a.ns).expect("plain list"));
    meta.extra.insert("excluded_queries", serde_json::to_value(&cmp.baseline.excluded).expect("plain list"));
    write_meta(&meta_path(&a.out), &meta)?;
    Ok(())
}
