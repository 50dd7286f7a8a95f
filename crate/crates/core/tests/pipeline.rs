mod common;

use cemkit::cem::{
    build_examples, evaluate, rescore_corpus, train, CemModel, RescoreScore, Scorer, TrainConfig,
    Variant,
};
use cemkit::corpus::{load_dataset, save_dataset};
use cemkit::datagen::{gen_corpus, ChannelConfig, Split};
use common::{small_model, SMALL_D_ACOUSTIC};

fn data(n: usize) -> Vec<cemkit::Utterance> {
    let cfg = ChannelConfig {
        d_acoustic: SMALL_D_ACOUSTIC,
        p_sub: 0.2,
        p_del: 0.1,
        ..ChannelConfig::default()
    };
    gen_corpus(&cfg, Split::Train, n).unwrap()
}

#[test]
fn recipe_and_inline_datasets_load_identically() {
    let utts = data(10);
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("recipe.jsonl");
    let inline = dir.path().join("inline.jsonl");
    save_dataset(&recipe, &utts, false).unwrap();
    save_dataset(&inline, &utts, true).unwrap();
    let a = load_dataset(&recipe).unwrap();
    let b = load_dataset(&inline).unwrap();
    assert_eq!(a.len(), 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.acoustic, y.acoustic);
        assert_eq!(x.hypotheses, y.hypotheses);
    }
    assert_eq!(a[3].acoustic, utts[3].acoustic);
}

#[test]
fn trained_checkpoint_evaluates_after_reload() {
    let utts = data(24);
    let examples = build_examples(&utts, true).unwrap();
    let out = train(
        &small_model(Variant::WUD),
        &TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        &examples,
        &[],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.model.save(&path).unwrap();
    let back = CemModel::load(&path).unwrap();
    let a = evaluate(Scorer::Model(&out.model), &utts).unwrap();
    let b = evaluate(Scorer::Model(&back), &utts).unwrap();
    assert_eq!(a, b);
    assert!(a.word.is_some());
    for score in [RescoreScore::Wcr, RescoreScore::Utt, RescoreScore::Wer] {
        let r = rescore_corpus(Scorer::Model(&back), &utts, score).unwrap();
        assert!(r.oracle_wer <= r.rescored_wer && r.oracle_wer <= r.baseline_wer);
    }
}

#[test]
fn utterance_only_report_has_no_word_section() {
    let utts = data(30);
    let model = CemModel::new(small_model(Variant::U), 1).unwrap();
    let report = evaluate(Scorer::Model(&model), &utts).unwrap();
    assert!(report.word.is_none());
    assert!(report.utterance.rmse_vs_one_minus_wer.is_none());
    let json = serde_json::to_value(&report).unwrap();
    assert!(json.get("word").is_none());
}
