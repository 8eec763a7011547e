use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glyphemb::corpus::BuiltCorpus;
use glyphemb::glyph::composite_char;
use glyphemb::Model32;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glyphemb"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Corpus directory holding the overfit fixture as its training split.
fn overfit_corpus(dir: &Path) -> PathBuf {
    let c = dir.join("corpus");
    std::fs::create_dir_all(&c).unwrap();
    std::fs::copy(fixtures().join("overfit64.tsv"), c.join("train.tsv")).unwrap();
    std::fs::copy(
        fixtures().join("overfit64.categories"),
        c.join("categories.txt"),
    )
    .unwrap();
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn train(dir: &Path, model: &str, epochs: usize) -> PathBuf {
    overfit_corpus(dir);
    let cfg = write_config(
        dir,
        &format!("{model}.toml"),
        &format!("corpus = \"corpus\"\nout = \"runs/{model}\"\n\n[train]\nmodel = \"{model}\"\nbatch_size = 16\nepochs = {epochs}\n"),
    );
    ok(&["train", "--config", s(&cfg)]);
    dir.join("runs").join(model)
}

#[test]
fn dataset_from_toy_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let graph = fixtures().join("toy_graph.tsv");
    let members = fixtures().join("toy_memberships.tsv");
    for out in [&a, &b] {
        let stdout = ok(&[
            "dataset",
            "--graph",
            s(&graph),
            "--memberships",
            s(&members),
            "--out",
            s(out),
            "--seed",
            "7",
        ]);
        assert!(stdout.contains("28 titles"), "{stdout}");
    }
    for f in BuiltCorpus::FILES {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let lines = |f: &str| std::fs::read_to_string(a.join(f)).unwrap().lines().count();
    // 28 titles split 6:2:2 with the remainder in train
    assert_eq!(
        (lines("train.tsv"), lines("valid.tsv"), lines("test.tsv")),
        (18, 5, 5)
    );
    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["instances"], 28);
}

#[test]
fn dataset_unknown_category_names_line() {
    let tmp = tempfile::tempdir().unwrap();
    let members = tmp.path().join("m.tsv");
    std::fs::write(&members, "长江\tRivers\n火星\tPlanets\n").unwrap();
    let out = run(&[
        "dataset",
        "--graph",
        s(&fixtures().join("toy_graph.tsv")),
        "--memberships",
        s(&members),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("Planets"), "{err}");
}

#[test]
fn train_overfits_fixture_with_both_models() {
    let tmp = tempfile::tempdir().unwrap();
    for model in ["lookup", "visual"] {
        let run_dir = train(tmp.path(), model, 40);
        let summary = json(&run_dir.join("train_summary.json"));
        assert!(
            summary["final_train_acc"].as_f64().unwrap() >= 0.95,
            "{model}: {summary}"
        );
        let m = Model32::load(&run_dir.join("model.ckpt")).unwrap();
        assert_eq!(m.kind().name(), model);
        assert_eq!(
            std::fs::read_to_string(run_dir.join("epochs.jsonl"))
                .unwrap()
                .lines()
                .count(),
            40
        );
    }
}

#[test]
fn zero_epochs_saves_initial_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = train(tmp.path(), "visual", 0);
    let saved = Model32::load(&run_dir.join("model.ckpt")).unwrap();
    let fresh = Model32::new(
        saved.config().clone(),
        saved.categories().to_vec(),
        saved.vocab().clone(),
        saved.glyphs().cloned(),
    )
    .unwrap();
    for id in fresh.params().ids() {
        assert_eq!(
            fresh.params().value(id),
            saved.params().value(id),
            "{}",
            fresh.params().name(id)
        );
    }
}

#[test]
fn config_errors_exit_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    overfit_corpus(tmp.path());
    let bad = write_config(
        tmp.path(),
        "bad.toml",
        "corpus = \"corpus\"\nout = \"runs/x\"\n[train]\nlearning_rat = 0.1\n",
    );
    let out = run(&["train", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
    assert!(!tmp.path().join("runs").exists());

    let zero = write_config(
        tmp.path(),
        "zero.toml",
        "corpus = \"corpus\"\nout = \"runs/y\"\n[train]\nbatch_size = 0\n",
    );
    assert_eq!(run(&["train", "--config", s(&zero)]).status.code(), Some(2));
    let out = run(&["train", "--config", s(&zero), "--model", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Test file mixing training titles with titles made only of characters the
/// training split never saw.
fn mixed_test_file(dir: &Path) -> (PathBuf, usize) {
    let train = std::fs::read_to_string(fixtures().join("overfit64.tsv")).unwrap();
    let mut text: String = train.lines().take(20).map(|l| format!("{l}\n")).collect();
    let cats = ["alpha", "beta", "gamma", "delta"];
    let unseen = 8;
    for i in 0..unseen {
        let l = i % 4;
        // variant 0 never occurs in the fixture
        let title: String = [composite_char(3 * l, 0), composite_char(3 * l + 1, 0)]
            .iter()
            .collect();
        text.push_str(&format!("{title}\t{}\n", cats[l]));
    }
    let p = dir.join("test.tsv");
    std::fs::write(&p, text).unwrap();
    (p, unseen)
}

#[test]
fn eval_single_late_and_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let lookup = train(tmp.path(), "lookup", 10).join("model.ckpt");
    let visual = train(tmp.path(), "visual", 10).join("model.ckpt");
    let (data, unseen) = mixed_test_file(tmp.path());

    let single = tmp.path().join("e1");
    ok(&[
        "eval",
        "--checkpoint",
        s(&lookup),
        "--data",
        s(&data),
        "--out",
        s(&single),
    ]);
    let r = json(&single.join("report.json"));
    assert_eq!(r["rows"].as_array().unwrap().len(), 1);
    assert!(r.get("routing").is_none());

    let late = tmp.path().join("e2");
    ok(&[
        "eval",
        "--checkpoint",
        s(&lookup),
        "--checkpoint",
        s(&visual),
        "--data",
        s(&data),
        "--fusion",
        "late",
        "--out",
        s(&late),
    ]);
    let r = json(&late.join("report.json"));
    let names: Vec<&str> = r["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["lookup", "visual", "late"]);
    let probs = |name: &str| -> Vec<Vec<f64>> {
        std::fs::read_to_string(late.join(format!("records_{name}.jsonl")))
            .unwrap()
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["probs"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_f64().unwrap())
                    .collect()
            })
            .collect()
    };
    let (pl, pv, pf) = (probs("lookup"), probs("visual"), probs("late"));
    for ((l, v), f) in pl.iter().zip(&pv).zip(&pf) {
        for ((a, b), c) in l.iter().zip(v).zip(f) {
            assert!((c - (a + b) / 2.0).abs() < 1e-12);
        }
    }

    let fb = tmp.path().join("e3");
    let stdout = ok(&[
        "eval",
        "--checkpoint",
        s(&visual),
        "--checkpoint",
        s(&lookup),
        "--data",
        s(&data),
        "--fusion",
        "fallback",
        "--threshold",
        "0.0",
        "--out",
        s(&fb),
    ]);
    let r = json(&fb.join("report.json"));
    assert_eq!(r["routing"]["visual"], unseen);
    let cfg = write_config(
        tmp.path(),
        "fb.toml",
        "fusion = \"fallback\"\nthreshold = 0.0\n",
    );
    let fb2 = tmp.path().join("e4");
    ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&visual),
        "--checkpoint",
        s(&lookup),
        "--data",
        s(&data),
        "--out",
        s(&fb2),
    ]);
    assert_eq!(
        std::fs::read(fb.join("report.json")).unwrap(),
        std::fs::read(fb2.join("report.json")).unwrap()
    );
    assert_eq!(r["routing"]["lookup"], 20);
    assert!(stdout.contains(&format!("{unseen} visual")), "{stdout}");
}

#[test]
fn eval_rejects_mismatched_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let lookup = train(tmp.path(), "lookup", 0).join("model.ckpt");
    let (data, _) = mixed_test_file(tmp.path());
    let out = run(&[
        "eval",
        "--checkpoint",
        s(&lookup),
        "--checkpoint",
        s(&lookup),
        "--data",
        s(&data),
        "--fusion",
        "late",
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "eval",
        "--checkpoint",
        s(&lookup),
        "--data",
        s(&data),
        "--fusion",
        "late",
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // same kinds of model but a different category list
    let other = tmp.path().join("other");
    std::fs::create_dir_all(other.join("corpus")).unwrap();
    std::fs::write(
        other.join("corpus/categories.txt"),
        "alpha\nbeta\ngamma\ndelta\nepsilon\n",
    )
    .unwrap();
    std::fs::copy(
        fixtures().join("overfit64.tsv"),
        other.join("corpus/train.tsv"),
    )
    .unwrap();
    let cfg = write_config(
        &other,
        "v.toml",
        "corpus = \"corpus\"\nout = \"run\"\n[train]\nmodel = \"visual\"\nepochs = 0\n",
    );
    ok(&["train", "--config", s(&cfg)]);
    let out = run(&[
        "eval",
        "--checkpoint",
        s(&lookup),
        "--checkpoint",
        s(&other.join("run/model.ckpt")),
        "--data",
        s(&data),
        "--fusion",
        "late",
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("category"));
}

#[test]
fn analyze_knn_and_occlusion() {
    let tmp = tempfile::tempdir().unwrap();
    let lookup = train(tmp.path(), "lookup", 1).join("model.ckpt");
    let visual = train(tmp.path(), "visual", 1).join("model.ckpt");
    let m = Model32::load(&lookup).unwrap();
    let queries: String = m.vocab().chars()[..3].iter().collect();

    let knn = tmp.path().join("knn");
    ok(&[
        "analyze",
        "--checkpoint",
        s(&lookup),
        "--mode",
        "knn",
        "--chars",
        &queries,
        "--out",
        s(&knn),
    ]);
    let tsv = std::fs::read_to_string(knn.join("knn.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 3 * 6);

    let occ = tmp.path().join("occ");
    let blank = ok(&[
        "analyze",
        "--checkpoint",
        s(&visual),
        "--mode",
        "occlusion",
        "--chars",
        " ",
        "--out",
        s(&occ),
    ]);
    assert!(blank.contains("upper 0.0000"), "{blank}");
    let h = json(&occ.join("U+0020.json"));
    assert!(h["distances"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d.as_f64() == Some(0.0)));
    let heat = glyphemb::glyph::GlyphImage::read_pgm(&occ.join("U+0020.heatmap.pgm")).unwrap();
    assert!(heat.is_blank());

    let out = run(&[
        "analyze",
        "--checkpoint",
        s(&lookup),
        "--mode",
        "occlusion",
        "--chars",
        &queries,
        "--out",
        s(&occ),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn knn_k_must_be_below_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tmp.path().join("corpus");
    std::fs::create_dir_all(&c).unwrap();
    std::fs::write(c.join("categories.txt"), "a\nb\n").unwrap();
    std::fs::write(c.join("train.tsv"), "xy\ta\nz\tb\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        "t.toml",
        "corpus = \"corpus\"\nout = \"run\"\n[train]\nepochs = 0\n",
    );
    ok(&["train", "--config", s(&cfg)]);
    let out = run(&[
        "analyze",
        "--checkpoint",
        s(&tmp.path().join("run/model.ckpt")),
        "--mode",
        "knn",
        "--chars",
        "x",
        "--out",
        s(&tmp.path().join("k")),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn render_dumps_pgm_files() {
    let tmp = tempfile::tempdir().unwrap();
    let c = composite_char(2, 5);
    let stdout = ok(&[
        "render",
        "--chars",
        &format!("{c} "),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(stdout.lines().count(), 2);
    let img =
        glyphemb::glyph::GlyphImage::read_pgm(&tmp.path().join(glyphemb::glyph::pgm_file_name(c)))
            .unwrap();
    assert!(!img.is_blank());
    let out = run(&[
        "render",
        "--chars",
        "a",
        "--fixture",
        "nope",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
