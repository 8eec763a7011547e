use std::path::Path;
use std::sync::Arc;

use glyphemb::classifier::{Model, ModelKind, TrainConfig};
use glyphemb::corpus::{load_categories, load_corpus_tsv};
use glyphemb::glyph::GlyphProvider;

/// Epoch-mean training losses on the 64-instance overfit fixture.
fn overfit_losses(kind: ModelKind, epochs: usize) -> Vec<f64> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let cats = load_categories(&dir.join("overfit64.categories")).unwrap();
    let data = load_corpus_tsv(&dir.join("overfit64.tsv"), &cats).unwrap();
    let glyphs = Arc::new(GlyphProvider::procedural("radicals").unwrap());
    let cfg = TrainConfig {
        model: kind,
        batch_size: 16,
        epochs,
        ..TrainConfig::default()
    };
    let mut m = Model::<f64>::for_corpus(cfg, cats, &data, Some(glyphs)).unwrap();
    let report = m.fit(&data, &[], |_| {}).unwrap();
    report.epochs.iter().map(|e| e.mean_loss).collect()
}

fn assert_no_rise_after_epoch_five(kind: ModelKind) {
    let losses = overfit_losses(kind, 30);
    for i in 5..losses.len() {
        assert!(
            losses[i] <= losses[i - 1],
            "{kind:?}: epoch {} loss {} > {}: {losses:?}",
            i + 1,
            losses[i],
            losses[i - 1]
        );
    }
}

#[test]
fn lookup_overfit_losses_do_not_rise_after_epoch_five() {
    assert_no_rise_after_epoch_five(ModelKind::Lookup);
}

#[test]
#[ignore = "fails: with Adam at 1e-3 and B=16 the visual model's epoch loss rises at epochs 8 and 9 (seed 0)"]
fn visual_overfit_losses_do_not_rise_after_epoch_five() {
    assert_no_rise_after_epoch_five(ModelKind::Visual);
}
