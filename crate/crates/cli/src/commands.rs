use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use glyphemb::analysis::{
    accuracy, cumulative_rarity_curve, curve_to_tsv, k_rarest_accuracy, knn_chars, make_records,
    occlusion_heatmap, records_to_jsonl, EvalRecord,
};
use glyphemb::classifier::EpochReport;
use glyphemb::corpus::{
    build_corpus, default_categories, load_categories, load_corpus_tsv, parse_memberships_in,
    CategoryGraph, FrequencyTable, Instance,
};
use glyphemb::fusion::{late_fuse_predict, FallbackPolicy, Route};
use glyphemb::glyph::{pgm_file_name, GlyphConfig, GlyphProvider};
use glyphemb::prob::ProbDist;
use glyphemb::{Error, Model32, Result};

use crate::config::{FusionKind, RunConfig};
use crate::{AnalyzeArgs, AnalyzeMode, DatasetArgs, EvalArgs, RenderArgs, TrainArgs};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::data(e.to_string()))
}

// ------------------------------------------------------------------ dataset

pub fn dataset(a: &DatasetArgs) -> Result<()> {
    let roots = match &a.roots {
        Some(p) => load_categories(p)?,
        None => default_categories(),
    };
    let graph =
        CategoryGraph::parse_edges(&read(&a.graph)?, roots).map_err(|e| with_file(e, &a.graph))?;
    let members = parse_memberships_in(&read(&a.memberships)?, &graph)
        .map_err(|e| with_file(e, &a.memberships))?;
    let built = build_corpus(&graph, &members, a.seed)?;
    built.write_dir(&a.out)?;
    let s = &built.summary;
    println!(
        "{} titles: {} train / {} valid / {} test; {} distinct training characters",
        s.instances, s.train, s.valid, s.test, s.distinct_train_chars
    );
    println!(
        "title length {:.2}±{:.2}",
        s.title_length_mean, s.title_length_sd
    );
    for (cat, n) in &s.per_category {
        println!("  {cat}\t{n}");
    }
    Ok(())
}

fn with_file(e: Error, path: &Path) -> Error {
    match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    }
}

// -------------------------------------------------------------------- train

#[derive(Serialize)]
struct TrainSummary {
    model: String,
    epochs: usize,
    best_epoch: Option<usize>,
    final_train_acc: f64,
    valid_acc: Option<f64>,
    checkpoint: String,
}

fn load_split(
    dir: &Path,
    name: &str,
    categories: &[String],
    required: bool,
) -> Result<Vec<Instance>> {
    let path = dir.join(name);
    if !required && !path.exists() {
        return Ok(Vec::new());
    }
    load_corpus_tsv(&path, categories)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(m) = a.model {
        cfg.train.model = m;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;

    let categories = if cfg.categories.is_empty() {
        load_categories(&cfg.corpus.join("categories.txt"))?
    } else {
        cfg.categories.clone()
    };
    let train = load_split(&cfg.corpus, "train.tsv", &categories, true)?;
    let valid = load_split(&cfg.corpus, "valid.tsv", &categories, false)?;
    if train.is_empty() {
        return Err(Error::config(format!(
            "{}: empty training split",
            cfg.corpus.display()
        )));
    }
    let glyphs = if cfg.train.model.uses_glyphs() {
        Some(Arc::new(GlyphProvider::new(&cfg.glyphs)?))
    } else {
        None
    };
    let warm: Vec<Model32> = cfg
        .warm_start
        .iter()
        .map(|p| Model32::load(p))
        .collect::<Result<_>>()?;

    let mut model = Model32::for_corpus(cfg.train.clone(), categories, &train, glyphs)?;
    for w in &warm {
        let n = model.warm_start_from(w)?;
        println!("warm start: {n} tensors copied");
    }
    create_dir(&cfg.out)?;
    let mut log = String::new();
    let report = model.fit(&train, &valid, |r: &EpochReport| {
        match r.valid_acc {
            Some(v) => println!(
                "epoch {:>3}  loss {:.4}  train {:.3}  valid {:.3}",
                r.epoch, r.mean_loss, r.train_acc, v
            ),
            None => println!(
                "epoch {:>3}  loss {:.4}  train {:.3}",
                r.epoch, r.mean_loss, r.train_acc
            ),
        }
        log.push_str(&serde_json::to_string(r).expect("epoch report serializes"));
        log.push('\n');
    })?;
    let ckpt = cfg.out.join("model.ckpt");
    model.save(&ckpt)?;
    write(&cfg.out.join("epochs.jsonl"), log)?;
    let summary = TrainSummary {
        model: cfg.train.model.name().to_string(),
        epochs: cfg.train.epochs,
        best_epoch: report.best_epoch,
        final_train_acc: model.accuracy(&train)?,
        valid_acc: if valid.is_empty() {
            None
        } else {
            Some(model.accuracy(&valid)?)
        },
        checkpoint: ckpt.display().to_string(),
    };
    write(&cfg.out.join("train_summary.json"), to_json(&summary)?)?;
    println!(
        "saved {} (train acc {:.3}{})",
        ckpt.display(),
        summary.final_train_acc,
        summary
            .valid_acc
            .map_or(String::new(), |v| format!(", valid acc {v:.3}"))
    );
    Ok(())
}

// --------------------------------------------------------------------- eval

#[derive(Serialize)]
struct ModelRow {
    name: String,
    accuracy: f64,
    k_rarest: BTreeMap<usize, f64>,
}

#[derive(Serialize)]
struct EvalReport {
    instances: usize,
    rows: Vec<ModelRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    routing: Option<BTreeMap<String, usize>>,
}

fn row(name: &str, records: &[EvalRecord], out: &Path) -> Result<ModelRow> {
    let mut k_rarest = BTreeMap::new();
    for k in [100, 1000, 10000] {
        if k <= records.len() {
            k_rarest.insert(k, k_rarest_accuracy(records, k)?);
        }
    }
    write(
        &out.join(format!("records_{name}.jsonl")),
        records_to_jsonl(records)?,
    )?;
    write(
        &out.join(format!("curve_{name}.tsv")),
        curve_to_tsv(&cumulative_rarity_curve(records)?),
    )?;
    Ok(ModelRow {
        name: name.to_string(),
        accuracy: accuracy(records)?,
        k_rarest,
    })
}

fn training_table(m: &Model32) -> Result<&FrequencyTable> {
    m.frequencies()
        .ok_or_else(|| Error::config("checkpoint carries no training frequency table"))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let fusion = a.fusion.unwrap_or(base.fusion);
    let threshold = a.threshold.unwrap_or(base.threshold);
    let models: Vec<Model32> = a
        .checkpoints
        .iter()
        .map(|p| Model32::load(p))
        .collect::<Result<_>>()?;
    match (fusion, models.len()) {
        (FusionKind::None, 1) | (FusionKind::Late | FusionKind::Fallback, 2) => {}
        (f, n) => {
            return Err(Error::config(format!(
                "fusion {f:?} takes {} checkpoint(s), got {n}",
                if f == FusionKind::None { 1 } else { 2 }
            )))
        }
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::config(format!(
            "threshold must be >= 0, got {}",
            threshold
        )));
    }
    if models.len() == 2 && models[0].categories() != models[1].categories() {
        return Err(Error::config(
            "checkpoints were trained on different category lists",
        ));
    }
    let categories = models[0].categories().to_vec();
    let data = load_corpus_tsv(&a.data, &categories)?;
    if data.is_empty() {
        return Err(Error::data(format!("{}: no instances", a.data.display())));
    }
    create_dir(&a.out)?;
    let titles: Vec<&[char]> = data.iter().map(|i| i.title.as_slice()).collect();
    let preds: Vec<Vec<ProbDist>> = models
        .iter()
        .map(|m| m.predict_batch(&titles))
        .collect::<Result<_>>()?;

    // rarity is measured against the lookup side's training set when fusing
    let lookup_idx = match fusion {
        FusionKind::None => 0,
        _ => {
            let lookups: Vec<usize> = (0..2)
                .filter(|&i| !models[i].kind().uses_glyphs())
                .collect();
            let visuals: Vec<usize> = (0..2).filter(|&i| models[i].kind().uses_glyphs()).collect();
            if lookups.len() != 1 || visuals.len() != 1 {
                return Err(Error::config(
                    "fusion needs one lookup and one glyph-based checkpoint",
                ));
            }
            lookups[0]
        }
    };
    let table = training_table(&models[lookup_idx])?.clone();

    let mut rows = Vec::new();
    for (m, p) in models.iter().zip(&preds) {
        let records = make_records(&data, p.clone(), &table, None)?;
        rows.push(row(m.kind().name(), &records, &a.out)?);
    }
    let mut routing = None;
    match fusion {
        FusionKind::None => {}
        FusionKind::Late => {
            let (pl, pv) = (&preds[lookup_idx], &preds[1 - lookup_idx]);
            let fused = pl
                .iter()
                .zip(pv)
                .map(|(l, v)| late_fuse_predict(l, v))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row(
                "late",
                &make_records(&data, fused, &table, None)?,
                &a.out,
            )?);
        }
        FusionKind::Fallback => {
            let policy = FallbackPolicy::new(threshold, table.clone())?;
            let (pl, pv) = (&preds[lookup_idx], &preds[1 - lookup_idx]);
            let mut fused = Vec::with_capacity(data.len());
            let mut routes = Vec::with_capacity(data.len());
            for ((inst, l), v) in data.iter().zip(pl).zip(pv) {
                let (p, r) = policy.choose(&inst.title, l, v)?;
                fused.push(p);
                routes.push(r);
            }
            let counts = BTreeMap::from([
                (
                    "lookup".to_string(),
                    routes.iter().filter(|&&r| r == Route::Lookup).count(),
                ),
                (
                    "visual".to_string(),
                    routes.iter().filter(|&&r| r == Route::Visual).count(),
                ),
            ]);
            rows.push(row(
                "fallback",
                &make_records(&data, fused, &table, Some(routes))?,
                &a.out,
            )?);
            routing = Some(counts);
        }
    }
    for r in &rows {
        let ks: Vec<String> = r
            .k_rarest
            .iter()
            .map(|(k, v)| format!("k={k}: {v:.4}"))
            .collect();
        println!(
            "{:<9} accuracy {:.4}  {}",
            r.name,
            r.accuracy,
            ks.join("  ")
        );
    }
    if let Some(c) = &routing {
        println!("routed: {} lookup, {} visual", c["lookup"], c["visual"]);
    }
    let report = EvalReport {
        instances: data.len(),
        rows,
        routing,
    };
    write(&a.out.join("report.json"), to_json(&report)?)
}

// ------------------------------------------------------------------ analyze

fn query_chars(a: &AnalyzeArgs) -> Result<Vec<char>> {
    let text = match (&a.chars, &a.chars_file) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => read(p)?,
        (None, None) => return Err(Error::config("give --chars or --chars-file")),
    };
    let mut out: Vec<char> = Vec::new();
    for c in text
        .chars()
        .filter(|c| (*c == ' ' && a.chars.is_some()) || !c.is_whitespace())
    {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(Error::config("no query characters"));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Neighbor {
    char: char,
    distance: f64,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let model = Model32::load(&a.checkpoint)?;
    let queries = query_chars(a)?;
    create_dir(&a.out)?;
    match a.mode {
        AnalyzeMode::Occlusion => {
            let glyphs = match (model.kind().uses_glyphs(), model.glyphs()) {
                (true, Some(g)) => g.clone(),
                _ => {
                    return Err(Error::config(format!(
                        "occlusion needs a glyph-based checkpoint, got a {} model",
                        model.kind().name()
                    )))
                }
            };
            for &c in &queries {
                let img = glyphs.render_glyph(c);
                let h = occlusion_heatmap(&model, &img)?;
                let stem = pgm_file_name(c).trim_end_matches(".pgm").to_string();
                h.overlay_image()
                    .write_pgm(&a.out.join(format!("{stem}.heatmap.pgm")))?;
                h.modulate(&img)
                    .write_pgm(&a.out.join(format!("{stem}.overlay.pgm")))?;
                write(&a.out.join(format!("{stem}.json")), to_json(&h)?)?;
                let [up, low, left, right] = h.distances;
                println!(
                    "{c} {stem}: upper {up:.4} lower {low:.4} left {left:.4} right {right:.4}; top corner {:?}",
                    h.top_corner()
                );
            }
        }
        AnalyzeMode::Knn => {
            let mut candidates: Vec<char> = model.vocab().chars().to_vec();
            if model.kind().uses_glyphs() {
                for &q in &queries {
                    if !candidates.contains(&q) {
                        candidates.push(q);
                    }
                }
            }
            let mut tsv = String::from("query\trank\tneighbor\tdistance\n");
            let mut all = BTreeMap::new();
            for &q in &queries {
                let nn = knn_chars(&model, &candidates, q, a.k)?;
                let line: Vec<String> = nn.iter().map(|(c, _)| c.to_string()).collect();
                println!("{q}: {}", line.join(" "));
                for (rank, (c, d)) in nn.iter().enumerate() {
                    tsv.push_str(&format!("{q}\t{}\t{c}\t{d}\n", rank + 1));
                }
                all.insert(
                    q.to_string(),
                    nn.into_iter()
                        .map(|(char, distance)| Neighbor { char, distance })
                        .collect::<Vec<_>>(),
                );
            }
            write(&a.out.join("knn.tsv"), tsv)?;
            write(&a.out.join("knn.json"), to_json(&all)?)?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------------- render

pub fn render(a: &RenderArgs) -> Result<()> {
    let cfg = match &a.font {
        Some(path) => GlyphConfig::Font {
            path: path.clone(),
            pixel_size: a.pixel_size,
        },
        None => GlyphConfig::Procedural {
            fixture: a.fixture.clone(),
        },
    };
    let provider = GlyphProvider::new(&cfg)?;
    create_dir(&a.out)?;
    for c in a.chars.chars() {
        let img = provider.render_glyph(c);
        let name = pgm_file_name(c);
        img.write_pgm(&a.out.join(&name))?;
        println!("{c}\t{name}\tink {:.4}", img.ink_fraction());
    }
    Ok(())
}
