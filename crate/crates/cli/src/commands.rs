use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use fiqa_core::data_io::{
    retrieval_benchmark, toy_samples, write_toy_dataset, DatasetManifest, Gender, LoadedDataset, ManifestRecord,
    SkinTone, Split, ToyOptions, MANIFEST_FILE, MIN_TOY_IMAGES,
};
use fiqa_core::degradations::Family;
use fiqa_core::dsl::{self, Regime, TrainedEncoder};
use fiqa_core::gfiqa::{evaluate_gfiqa, export_confidence_map, score_image, train_gfiqa, GfiqaSample, TrainedGfiqa};
use fiqa_core::image::ImageBuffer;
use fiqa_core::landmarks::{read_landmarks_jsonl, LandmarkSet, DEFAULT_VOCAB};
use fiqa_core::metrics::{retrieval_experiment, EvalReport};
use serde_json::{json, Value};

use crate::config::{Overrides, RunConfig};
use crate::{CliError, ConfigArgs};

const STAMP_FILE: &str = "run_config.json";

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

/// File, then `--set`, then the named flags in `named`, then `--seed`.
fn resolve(cfg: &ConfigArgs, named: Overrides) -> Result<RunConfig, CliError> {
    let mut o = match &cfg.config {
        Some(p) => {
            require_file(p, "config file")?;
            Overrides::from_file(p)?
        }
        None => Overrides::default(),
    };
    for s in &cfg.set {
        o.push_assignment(s)?;
    }
    o.extend(named);
    if let Some(seed) = cfg.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Usage("seed must fit in 63 bits".into()))?;
        for section in ["data", "encoder", "model"] {
            o.set(section, "seed", seed);
        }
    }
    o.resolve()
}

fn stamp(dir: &Path, command: &str, config: Option<&RunConfig>, args: Value) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "args": args,
    });
    fs::write(dir.join(STAMP_FILE), serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    require_file(path, "manifest")?;
    Ok(DatasetManifest::load(path)?)
}

fn load_encoder(path: &Path) -> Result<TrainedEncoder, CliError> {
    require_file(path, "encoder checkpoint")?;
    Ok(TrainedEncoder::load(path)?)
}

fn load_model(path: &Path) -> Result<TrainedGfiqa, CliError> {
    require_file(path, "model checkpoint")?;
    Ok(TrainedGfiqa::load(path)?)
}

/// Landmarks by image id; an absent default file means "no landmarks".
fn load_landmarks(manifest: Option<&Path>, explicit: Option<&Path>) -> Result<HashMap<String, LandmarkSet>, CliError> {
    let path = match (explicit, manifest) {
        (Some(p), _) => {
            require_file(p, "landmark file")?;
            p.to_path_buf()
        }
        (None, Some(m)) => {
            let p = m.with_file_name(fiqa_core::data_io::LANDMARK_FILE);
            if !p.is_file() {
                return Ok(HashMap::new());
            }
            p
        }
        (None, None) => return Ok(HashMap::new()),
    };
    let records = read_landmarks_jsonl(BufReader::new(fs::File::open(&path)?))?;
    records
        .into_iter()
        .map(|r| Ok((r.image_id, LandmarkSet::new(DEFAULT_VOCAB, r.landmarks)?)))
        .collect()
}

fn landmarks_for(map: &HashMap<String, LandmarkSet>, id: &str) -> LandmarkSet {
    map.get(id).cloned().unwrap_or_else(|| LandmarkSet::empty(DEFAULT_VOCAB))
}

fn load_image(path: &Path) -> Result<ImageBuffer, CliError> {
    ImageBuffer::load(path).map_err(|e| CliError::BadData(format!("cannot read image {}: {e}", path.display())))
}

fn gfiqa_samples(data: &LoadedDataset, landmarks: &HashMap<String, LandmarkSet>) -> Result<Vec<GfiqaSample>, CliError> {
    data.records()
        .iter()
        .zip(&data.images)
        .map(|(r, img)| {
            let mos = r
                .mos
                .ok_or_else(|| CliError::BadData(format!("{} has no mos", r.image_path)))?;
            Ok(GfiqaSample {
                image: img.clone(),
                landmarks: landmarks_for(landmarks, &r.image_path),
                mos,
            })
        })
        .collect()
}

fn write_query_manifest(queries: &[(ImageBuffer, Family)], dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::with_capacity(queries.len());
    for (i, (img, family)) in queries.iter().enumerate() {
        let rel = format!("images/query_{i:05}.png");
        img.save_png(dir.join(&rel))?;
        records.push(ManifestRecord {
            image_path: rel,
            mos: None,
            split: Split::Test,
            skin_tone: SkinTone::Unknown,
            gender: Gender::Unknown,
            occluded: false,
            degradation: Some(*family),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    DatasetManifest::new(dir, records)?.save(&path)?;
    Ok(path)
}

pub fn gen_data(
    n: Option<usize>,
    size: Option<usize>,
    queries: Option<usize>,
    out: &Path,
    cfg: &ConfigArgs,
) -> Result<(), CliError> {
    let mut named = Overrides::default();
    if let Some(n) = n {
        named.set("data", "n", n as i64);
    }
    if let Some(s) = size {
        named.set("data", "size", s as i64);
    }
    if let Some(q) = queries {
        named.set("data", "queries", q as i64);
    }
    let rc = resolve(cfg, named)?;
    let d = &rc.data;
    if d.n < MIN_TOY_IMAGES {
        return Err(CliError::Usage(format!("--n must be at least {MIN_TOY_IMAGES}, got {}", d.n)));
    }
    let opts = ToyOptions {
        size: d.size,
        clean_fraction: d.clean_fraction,
        mos_noise: d.mos_noise,
        families: d.families.clone(),
        real_style: d.real_style,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    if d.queries > 0 {
        let bench = retrieval_benchmark(d.n + d.queries, d.queries, &opts, d.seed)?;
        write_toy_dataset(&bench.samples, out)?;
        let q = write_query_manifest(&bench.queries, &out.join("queries"))?;
        eprintln!("queries: {}", q.display());
    } else {
        write_toy_dataset(&toy_samples(d.n, d.seed, &opts)?, out)?;
    }
    stamp(out, "gen-data", Some(&rc), json!({ "out": path_str(out) }))?;
    println!("{}", manifest_path.display());
    Ok(())
}

pub fn train_encoder(
    regime: Regime,
    manifest: &Path,
    clean_pool: Option<&Path>,
    iterations: Option<usize>,
    learning_rate: Option<f64>,
    out: &Path,
    cfg: &ConfigArgs,
) -> Result<(), CliError> {
    let m = load_manifest(manifest)?;
    if let Some(p) = clean_pool {
        require_file(p, "clean pool manifest")?;
    }
    let mut named = Overrides::default();
    if let Some(it) = iterations {
        named.set("encoder", "iterations", it as i64);
    }
    if let Some(lr) = learning_rate {
        named.set("encoder", "learning_rate", lr);
    }
    let rc = resolve(cfg, named)?;
    let data = LoadedDataset::load(m.split(Split::Train))?;
    let pool: Vec<ImageBuffer> = match clean_pool {
        Some(p) => LoadedDataset::load(DatasetManifest::load(p)?)?.images,
        None => data.subset(|r| r.mos.is_some_and(|m| m > 0.9)).images,
    };
    let trained = dsl::train_encoder(regime, &pool, &data, rc.encoder.clone())?;
    fs::create_dir_all(out)?;
    let ckpt = out.join("encoder.ckpt");
    let hash = trained.save(&ckpt)?;
    fs::write(out.join("loss.csv"), trained.loss_csv())?;
    stamp(
        out,
        "train-encoder",
        Some(&rc),
        json!({
            "regime": regime.name(),
            "manifest": path_str(manifest),
            "clean_pool": clean_pool.map(path_str),
            "checkpoint_hash": hash,
        }),
    )?;
    println!("{}", ckpt.display());
    Ok(())
}

pub fn train_iqa(
    manifest: &Path,
    encoder_ckpt: &Path,
    landmarks: Option<&Path>,
    iterations: Option<usize>,
    learning_rate: Option<f64>,
    out: &Path,
    cfg: &ConfigArgs,
) -> Result<(), CliError> {
    let m = load_manifest(manifest)?;
    let encoder = load_encoder(encoder_ckpt)?;
    let lms = load_landmarks(Some(manifest), landmarks)?;
    let mut named = Overrides::default();
    if let Some(it) = iterations {
        named.set("model", "iterations", it as i64);
    }
    if let Some(lr) = learning_rate {
        named.set("model", "learning_rate", lr);
    }
    let rc = resolve(cfg, named)?;
    let data = LoadedDataset::load(m.split(Split::Train))?;
    let samples = gfiqa_samples(&data, &lms)?;
    let trained = train_gfiqa(&samples, &encoder.encoder, rc.model.clone())?;
    fs::create_dir_all(out)?;
    let ckpt = out.join("model.ckpt");
    let hash = trained.save(&ckpt)?;
    fs::write(out.join("loss.csv"), trained.loss_csv())?;
    stamp(
        out,
        "train-iqa",
        Some(&rc),
        json!({
            "manifest": path_str(manifest),
            "encoder_ckpt": path_str(encoder_ckpt),
            "encoder_hash": trained.encoder_hash,
            "checkpoint_hash": hash,
        }),
    )?;
    println!("{}", ckpt.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ScoreFormat {
    Json,
    Csv,
}

pub struct ScoreArgs {
    pub model_ckpt: PathBuf,
    pub encoder_ckpt: PathBuf,
    pub images: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub split: Option<Split>,
    pub landmarks: Option<PathBuf>,
    pub confidence_dir: Option<PathBuf>,
    pub format: ScoreFormat,
}

/// `(reported id, file on disk)` for every image to score.
fn score_items(a: &ScoreArgs) -> Result<Vec<(String, PathBuf)>, CliError> {
    match &a.manifest {
        Some(mp) => {
            let mut m = load_manifest(mp)?;
            if let Some(s) = a.split {
                m = m.split(s);
            }
            Ok(m.records.iter().map(|r| (r.image_path.clone(), m.resolve(r))).collect())
        }
        None => Ok(a.images.iter().map(|p| (path_str(p), p.clone())).collect()),
    }
}

fn map_stem(id: &str) -> String {
    let stem = Path::new(id).with_extension("");
    stem.to_string_lossy()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn score(a: ScoreArgs) -> Result<(), CliError> {
    let model = load_model(&a.model_ckpt)?;
    let encoder = load_encoder(&a.encoder_ckpt)?;
    let lms = load_landmarks(a.manifest.as_deref(), a.landmarks.as_deref())?;
    let items = score_items(&a)?;
    if let Some(dir) = &a.confidence_dir {
        fs::create_dir_all(dir)?;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if a.format == ScoreFormat::Csv {
        writeln!(out, "path,mos")?;
    }
    for (id, path) in &items {
        let img = load_image(path)?;
        let pred = score_image(&model.model, &encoder.encoder, &img, &landmarks_for(&lms, id))?;
        match a.format {
            ScoreFormat::Json => {
                let patches: Vec<Value> = pred
                    .per_patch
                    .iter()
                    .map(|p| json!({ "rect": [p.rect.0, p.rect.1, p.rect.2, p.rect.3], "mos": p.mos }))
                    .collect();
                writeln!(out, "{}", json!({ "path": id, "mos": pred.mos, "per_patch": patches }))?;
            }
            ScoreFormat::Csv => writeln!(out, "{},{:?}", id, pred.mos)?,
        }
        if let Some(dir) = &a.confidence_dir {
            export_confidence_map(&pred).write(dir.join(map_stem(id)))?;
        }
    }
    if let Some(dir) = &a.confidence_dir {
        stamp(
            dir,
            "score",
            None,
            json!({
                "model_ckpt": path_str(&a.model_ckpt),
                "encoder_ckpt": path_str(&a.encoder_ckpt),
                "images": items.len(),
            }),
        )?;
    }
    Ok(())
}

pub struct EvalArgs {
    pub manifest: PathBuf,
    pub split: Split,
    pub model_ckpt: Option<PathBuf>,
    pub encoder_ckpt: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn read_predictions(path: &Path) -> Result<HashMap<String, f64>, CliError> {
    require_file(path, "predictions file")?;
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("path,")) {
            continue;
        }
        let (p, v) = line
            .rsplit_once(',')
            .ok_or_else(|| CliError::BadData(format!("{}:{}: expected `path,mos`", path.display(), i + 1)))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::BadData(format!("{}:{}: bad mos `{v}`", path.display(), i + 1)))?;
        out.insert(p.to_string(), v);
    }
    Ok(out)
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let m = load_manifest(&a.manifest)?.split(a.split);
    let actual: Vec<f64> = m
        .records
        .iter()
        .map(|r| r.mos.ok_or_else(|| CliError::BadData(format!("{} has no mos", r.image_path))))
        .collect::<Result<_, _>>()?;
    let predicted: Vec<f64> = match (&a.predictions, &a.model_ckpt, &a.encoder_ckpt) {
        (Some(p), _, _) => {
            let preds = read_predictions(p)?;
            m.records
                .iter()
                .map(|r| {
                    preds
                        .get(&r.image_path)
                        .copied()
                        .ok_or_else(|| CliError::BadData(format!("no prediction for {}", r.image_path)))
                })
                .collect::<Result<_, _>>()?
        }
        (None, Some(mc), Some(ec)) => {
            let model = load_model(mc)?;
            let encoder = load_encoder(ec)?;
            let lms = load_landmarks(Some(&a.manifest), a.landmarks.as_deref())?;
            let data = LoadedDataset::load(m.clone())?;
            let samples = gfiqa_samples(&data, &lms)?;
            evaluate_gfiqa(&model.model, &encoder.encoder, &samples, &a.split.to_string())?.0
        }
        _ => return Err(CliError::Usage("need --predictions or both --model-ckpt and --encoder-ckpt".into())),
    };
    let report = EvalReport::compute(&actual, &predicted, a.split.to_string())?;
    let text = serde_json::to_string(&report).expect("json");
    println!("{text}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("eval_report.json"), text + "\n")?;
        let mut csv = String::from("path,gt_mos,pred_mos\n");
        for ((r, gt), p) in m.records.iter().zip(&actual).zip(&predicted) {
            csv.push_str(&format!("{},{gt:?},{p:?}\n", r.image_path));
        }
        fs::write(dir.join("predictions.csv"), csv)?;
        stamp(
            dir,
            "eval",
            None,
            json!({
                "manifest": path_str(&a.manifest),
                "split": a.split.to_string(),
                "model_ckpt": a.model_ckpt.as_deref().map(path_str),
                "encoder_ckpt": a.encoder_ckpt.as_deref().map(path_str),
                "predictions": a.predictions.as_deref().map(path_str),
            }),
        )?;
    }
    Ok(())
}

/// Degraded images with their family label; clean images are skipped.
fn labelled(path: &Path) -> Result<(Vec<String>, Vec<(ImageBuffer, Family)>), CliError> {
    let m = load_manifest(path)?;
    let mut ids = Vec::new();
    let mut out = Vec::new();
    for r in &m.records {
        let family = r
            .degradation
            .ok_or_else(|| CliError::BadData(format!("{} has no degradation label", r.image_path)))?;
        if family == Family::Clean {
            continue;
        }
        ids.push(r.image_path.clone());
        out.push((load_image(&m.resolve(r))?, family));
    }
    Ok((ids, out))
}

pub fn retrieve(
    encoder_ckpt: &Path,
    queries: &Path,
    gallery: &Path,
    k: Option<usize>,
    out: Option<&Path>,
    cfg: &ConfigArgs,
) -> Result<(), CliError> {
    let encoder = load_encoder(encoder_ckpt)?;
    let mut named = Overrides::default();
    if let Some(k) = k {
        named.set("retrieval", "k", k as i64);
    }
    let rc = resolve(cfg, named)?;
    let (qids, q) = labelled(queries)?;
    let (gids, g) = labelled(gallery)?;
    let res = retrieval_experiment(&encoder.encoder, &q, &g, rc.retrieval.k)?;
    let per_query: Vec<Value> = res
        .per_query
        .iter()
        .zip(&qids)
        .map(|(r, id)| {
            json!({
                "query": id,
                "label": r.query_label,
                "retrieved": r.retrieved.iter().map(|&i| &gids[i]).collect::<Vec<_>>(),
                "retrieved_labels": r.retrieved_labels,
                "ap": r.ap,
            })
        })
        .collect();
    let report = json!({ "k": res.k, "map": res.map, "per_query": per_query });
    let text = serde_json::to_string(&report).expect("json");
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("retrieval_report.json"), text + "\n")?;
        stamp(
            dir,
            "retrieve",
            Some(&rc),
            json!({
                "encoder_ckpt": path_str(encoder_ckpt),
                "queries": path_str(queries),
                "gallery": path_str(gallery),
            }),
        )?;
    }
    Ok(())
}

pub fn export_embeddings(encoder_ckpt: &Path, manifest: &Path, out: &Path) -> Result<(), CliError> {
    let encoder = load_encoder(encoder_ckpt)?;
    let m = load_manifest(manifest)?;
    let images = m
        .records
        .iter()
        .map(|r| {
            let label = r.degradation.map_or_else(|| "unknown".to_string(), |f| f.to_string());
            Ok((load_image(&m.resolve(r))?, label))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    fs::create_dir_all(out)?;
    let path = out.join("embeddings.tsv");
    fiqa_core::data_io::export_embeddings(&encoder.encoder, &images, &path)?;
    stamp(
        out,
        "export-embeddings",
        None,
        json!({ "encoder_ckpt": path_str(encoder_ckpt), "manifest": path_str(manifest) }),
    )?;
    println!("{}", path.display());
    Ok(())
}
