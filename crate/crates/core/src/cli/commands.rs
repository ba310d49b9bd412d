use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{flatten, resolve, Settings};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalReport, TieMode};
use crate::kgdata::{read_cache, write_cache, Dataset, KgData, CACHE_FILE, STATS_FILE, VOCAB_FILE};
use crate::losses::LossKind;
use crate::scoring::ActivationKind;
use crate::trainer::{
    load_checkpoint, save_checkpoint, train_with, Checkpoint, TrainConfig, TrainOutcome,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FINAL_EVAL_FILE: &str = "final_eval.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

const RAW_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

/// SHA-256 of every input file of a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub dir: PathBuf,
    pub files: BTreeMap<String, String>,
}

/// Everything needed to rerun a training or benchmark command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub command: String,
    pub started_at: String,
    pub seed: u64,
    /// Every config key with defaults filled in, as accepted by `--config`.
    pub config: BTreeMap<String, String>,
    pub resolved: TrainConfig,
    pub dataset: DatasetFingerprint,
    pub threads: usize,
    pub notes: Vec<String>,
}

/// Test-split metrics of the best checkpoint plus run totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    pub split: String,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
    pub eval_seconds: f64,
    pub best_validation_mrr: Option<f64>,
    pub best_epoch: usize,
    pub steps: u64,
    pub epochs: usize,
    pub train_seconds: f64,
    /// Time spent in validation snapshots, not counted against the budget.
    pub snapshot_seconds: f64,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads a prepared cache directory, or raw TSV splits if no cache is
/// present.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetFingerprint)> {
    let (data, names): (Dataset, &[&str]) = if dir.join(CACHE_FILE).exists() {
        (read_cache(dir)?, &[CACHE_FILE, VOCAB_FILE])
    } else {
        (Dataset::load_dir(dir)?, &RAW_FILES)
    };
    let mut files = BTreeMap::new();
    for name in names {
        files.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    Ok((
        data,
        DatasetFingerprint {
            dir: dir.to_path_buf(),
            files,
        },
    ))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// `prepare`: parses TSV splits and writes the binary cache, vocabulary and
/// stats. Returns the stats as pretty JSON.
pub fn prepare(data_dir: &Path, out_dir: &Path) -> Result<String> {
    let data = Dataset::load_dir(data_dir)?;
    create_dir(out_dir)?;
    write_cache(out_dir, &data)?;
    let stats = fs::read_to_string(out_dir.join(STATS_FILE))
        .map_err(|e| Error::io(out_dir.join(STATS_FILE), e))?;
    Ok(stats)
}

fn manifest(command: &str, config: &TrainConfig, dataset: DatasetFingerprint) -> RunManifest {
    RunManifest {
        software: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        started_at: chrono::Utc::now().to_rfc3339(),
        seed: config.seed,
        config: flatten(config)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        resolved: config.clone(),
        dataset,
        threads: rayon::current_num_threads(),
        notes: vec![
            "validation snapshots are timed separately and excluded from the training budget"
                .into(),
        ],
    }
}

fn final_eval(
    config: &TrainConfig,
    data: &KgData,
    out: &TrainOutcome,
) -> Result<(FinalEval, EvalReport)> {
    let report = evaluate_split(
        &config.scorer(),
        &out.best.parameters,
        &data.test,
        &data.filter,
        config.tie_mode,
    )?;
    let fe = FinalEval {
        split: "test".into(),
        mrr: report.mrr,
        hits1: report.hits(1),
        hits3: report.hits(3),
        hits10: report.hits(10),
        n_queries: report.n_queries,
        eval_seconds: report.elapsed_seconds,
        best_validation_mrr: out.best.best_validation_mrr,
        best_epoch: out.best.epoch,
        steps: out.steps,
        epochs: out.epochs,
        train_seconds: out.train_seconds,
        snapshot_seconds: out.eval_seconds,
    };
    Ok((fe, report))
}

/// `train`: one run into `out_dir`.
pub fn train(data_dir: &Path, settings: &Settings, out_dir: &Path) -> Result<FinalEval> {
    let config = resolve(settings)?;
    let (dataset, fingerprint) = load_dataset(data_dir)?;
    let data = dataset.prepare()?;
    create_dir(out_dir)?;
    write_json(
        &out_dir.join(MANIFEST_FILE),
        &manifest("train", &config, fingerprint),
    )?;
    let vocab_src = data_dir.join(VOCAB_FILE);
    if vocab_src.exists() {
        fs::copy(&vocab_src, out_dir.join(VOCAB_FILE)).map_err(|e| Error::io(&vocab_src, e))?;
    } else {
        write_vocab(&out_dir.join(VOCAB_FILE), &data)?;
    }

    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut write_err = None;
    let outcome = train_with(&config, &data, &mut |rec| {
        let line = serde_json::to_string(rec).expect("snapshot serializes");
        if let Err(e) = write_line(&mut metrics, &metrics_path, &line) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let timing_path = out_dir.join(TIMING_FILE);
    let mut timing = create(&timing_path)?;
    for t in &outcome.timings {
        write_line(&mut timing, &timing_path, &serde_json::to_string(t)?)?;
    }
    save_checkpoint(&out_dir.join(CHECKPOINT_FILE), &outcome.best)?;
    let (fe, _) = final_eval(&config, &data, &outcome)?;
    write_json(&out_dir.join(FINAL_EVAL_FILE), &fe)?;
    Ok(fe)
}

fn write_vocab(path: &Path, data: &KgData) -> Result<()> {
    let v = serde_json::json!({
        "entities": data.vocab.entities(),
        "relations": data.vocab.relations(),
    });
    write_json(path, &v)
}

/// Metrics of a checkpoint on one split, without per-query ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: String,
    pub tie_mode: TieMode,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
    pub elapsed_seconds: f64,
}

/// `eval`: filtered metrics of a checkpoint on `split`.
pub fn eval(
    data_dir: &Path,
    checkpoint: &Path,
    split: &str,
    tie: Option<TieMode>,
) -> Result<EvalSummary> {
    let ck = load_checkpoint(checkpoint)?;
    let (dataset, _) = load_dataset(data_dir)?;
    let data = dataset.prepare()?;
    ck.check_compatible(data.n_entities(), data.n_relations())?;
    let set = match split {
        "test" => &data.test,
        "valid" => &data.valid,
        "train" => &data.train,
        other => {
            return Err(Error::Usage(format!(
                "unknown split {other:?}, expected test, valid or train"
            )))
        }
    };
    let tie = tie.unwrap_or(ck.config.tie_mode);
    let r = evaluate_split(&ck.config.scorer(), &ck.parameters, set, &data.filter, tie)?;
    Ok(EvalSummary {
        split: split.to_string(),
        tie_mode: tie,
        mrr: r.mrr,
        hits1: r.hits(1),
        hits3: r.hits(3),
        hits10: r.hits(10),
        n_queries: r.n_queries,
        elapsed_seconds: r.elapsed_seconds,
    })
}

/// Entity names for a checkpoint: from `data_dir` if given, else the
/// vocabulary saved next to the checkpoint, else numeric ids.
fn entity_names(
    ck: &Checkpoint,
    checkpoint: &Path,
    data_dir: Option<&Path>,
) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    struct Sidecar {
        entities: Vec<String>,
    }
    let sidecar = match data_dir {
        Some(d) if d.join(VOCAB_FILE).exists() => Some(d.join(VOCAB_FILE)),
        Some(d) => {
            let (data, _) = load_dataset(d)?;
            return Ok(data.vocab.entities().to_vec());
        }
        None => checkpoint
            .parent()
            .map(|p| p.join(VOCAB_FILE))
            .filter(|p| p.exists()),
    };
    let names = match sidecar {
        Some(p) => {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            serde_json::from_slice::<Sidecar>(&bytes)?.entities
        }
        None => (0..ck.parameters.n_entities())
            .map(|i| i.to_string())
            .collect(),
    };
    if names.len() != ck.parameters.n_entities() {
        return Err(Error::ShapeMismatch(format!(
            "vocabulary has {} entities, checkpoint has {}",
            names.len(),
            ck.parameters.n_entities()
        )));
    }
    Ok(names)
}

/// `export`: entity embeddings as TSV. The first line holds the entity
/// count and the dimension; each following line an entity name and its
/// vector. Values are printed in shortest round-trip form.
pub fn export(checkpoint: &Path, out: &Path, data_dir: Option<&Path>) -> Result<usize> {
    let ck = load_checkpoint(checkpoint)?;
    let names = entity_names(&ck, checkpoint, data_dir)?;
    let p = &ck.parameters;
    let mut w = create(out)?;
    let io = |e| Error::io(out, e);
    writeln!(w, "{}\t{}", p.n_entities(), p.dim()).map_err(io)?;
    for (i, name) in names.iter().enumerate() {
        write!(w, "{name}").map_err(io)?;
        for v in p.entity.row(i) {
            write!(w, "\t{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(names.len())
}

/// Reads an exported embedding TSV back into names and vectors.
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty embedding file".into()))?;
    let dims: Vec<usize> = header
        .split('\t')
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Format(format!("bad header {header:?}")))
        })
        .collect::<Result<_>>()?;
    let [n, d] = dims[..] else {
        return Err(Error::Format(format!("bad header {header:?}")));
    };
    let mut names = Vec::with_capacity(n);
    let mut vecs = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let mut fields = line.split('\t');
        names.push(fields.next().unwrap_or_default().to_string());
        let v: Vec<f64> = fields
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Format(format!("line {}: bad value {s:?}", i + 2)))
            })
            .collect::<Result<_>>()?;
        if v.len() != d {
            return Err(Error::Format(format!(
                "line {}: {} values, expected {d}",
                i + 2,
                v.len()
            )));
        }
        vecs.push(v);
    }
    if names.len() != n {
        return Err(Error::Format(format!(
            "{} rows, header says {n}",
            names.len()
        )));
    }
    Ok((names, vecs))
}

/// One line of the benchmark summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub status: String,
    pub best_validation_mrr: Option<f64>,
    pub best_validation_hits10: Option<f64>,
    pub test_mrr: Option<f64>,
    pub test_hits10: Option<f64>,
    pub steps: Option<u64>,
    pub train_seconds: Option<f64>,
    pub error: Option<String>,
}

/// One point of a convergence curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub variant: String,
    pub elapsed_s: f64,
    pub hits10: f64,
    pub mrr: f64,
}

/// Settings of one benchmark variant: a loss name switches the strategy
/// (with that loss's defaults), an activation name switches the activation.
pub fn variant_settings(base: &Settings, variant: &str) -> Result<Settings> {
    let mut s = base.clone();
    if variant.parse::<LossKind>().is_ok() {
        s.set("loss", variant)?;
    } else if variant.parse::<ActivationKind>().is_ok() {
        s.set("activation", variant)?;
    } else {
        return Err(Error::Usage(format!(
            "unknown variant {variant:?}, expected a loss or activation name"
        )));
    }
    Ok(s)
}

struct VariantResult {
    summary: VariantSummary,
    curve: Vec<CurvePoint>,
}

fn run_variant(name: &str, settings: &Settings, data: &KgData) -> VariantResult {
    let attempt = || -> Result<VariantResult> {
        let config = resolve(settings)?;
        let outcome = train_with(&config, data, &mut |_| {})?;
        let (fe, _) = final_eval(&config, data, &outcome)?;
        let curve = outcome
            .log
            .iter()
            .zip(&outcome.timings)
            .map(|(rec, t)| CurvePoint {
                variant: name.to_string(),
                elapsed_s: t.train_seconds,
                hits10: rec.hits10,
                mrr: rec.mrr,
            })
            .collect();
        let best_hits10 = outcome
            .log
            .iter()
            .filter(|r| Some(r.mrr) == outcome.best.best_validation_mrr)
            .map(|r| r.hits10)
            .next();
        Ok(VariantResult {
            summary: VariantSummary {
                variant: name.to_string(),
                status: "ok".into(),
                best_validation_mrr: outcome.best.best_validation_mrr,
                best_validation_hits10: best_hits10,
                test_mrr: Some(fe.mrr),
                test_hits10: Some(fe.hits10),
                steps: Some(outcome.steps),
                train_seconds: Some(outcome.train_seconds),
                error: None,
            },
            curve,
        })
    };
    attempt().unwrap_or_else(|e| VariantResult {
        summary: VariantSummary {
            variant: name.to_string(),
            status: "failed".into(),
            best_validation_mrr: None,
            best_validation_hits10: None,
            test_mrr: None,
            test_hits10: None,
            steps: None,
            train_seconds: None,
            error: Some(e.to_string()),
        },
        curve: Vec::new(),
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// `benchmark`: trains every variant under the shared settings and writes
/// convergence curves and a summary. Failed variants become failed rows.
pub fn benchmark(
    data_dir: &Path,
    base: &Settings,
    variants: &[String],
    out_dir: &Path,
    parallel: bool,
) -> Result<Vec<VariantSummary>> {
    if variants.len() < 2 {
        return Err(Error::Usage("benchmark needs at least two variants".into()));
    }
    let per_variant: Vec<Settings> = variants
        .iter()
        .map(|v| variant_settings(base, v))
        .collect::<Result<_>>()?;
    let base_config = resolve(base)?;
    let (dataset, fingerprint) = load_dataset(data_dir)?;
    let data = dataset.prepare()?;
    create_dir(out_dir)?;
    let mut m = manifest("benchmark", &base_config, fingerprint);
    m.notes.push(format!("variants: {}", variants.join(",")));
    if parallel {
        m.notes
            .push("variants ran concurrently; their timings are not comparable".into());
    }
    write_json(&out_dir.join(MANIFEST_FILE), &m)?;

    let results: Vec<VariantResult> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = variants
                .iter()
                .zip(&per_variant)
                .map(|(v, s)| {
                    let data = &data;
                    scope.spawn(move || run_variant(v, s, data))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("variant thread"))
                .collect()
        })
    } else {
        variants
            .iter()
            .zip(&per_variant)
            .map(|(v, s)| run_variant(v, s, &data))
            .collect()
    };

    let curves_path = out_dir.join(CURVES_FILE);
    let mut curves = csv::Writer::from_path(&curves_path).map_err(|e| csv_err(&curves_path, e))?;
    for p in results.iter().flat_map(|r| &r.curve) {
        curves.serialize(p).map_err(|e| csv_err(&curves_path, e))?;
    }
    curves.flush().map_err(|e| Error::io(&curves_path, e))?;

    let summary_path = out_dir.join(SUMMARY_FILE);
    let mut summary =
        csv::Writer::from_path(&summary_path).map_err(|e| csv_err(&summary_path, e))?;
    for r in &results {
        summary
            .serialize(&r.summary)
            .map_err(|e| csv_err(&summary_path, e))?;
    }
    summary.flush().map_err(|e| Error::io(&summary_path, e))?;
    Ok(results.into_iter().map(|r| r.summary).collect())
}
