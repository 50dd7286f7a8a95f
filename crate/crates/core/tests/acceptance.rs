//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cemkit::alignment::{align_words, align_wp, AlignOptions, Tag};
use cemkit::cem::loss::{
    deletion_loss_graph, total_loss_graph, utterance_loss_graph, word_loss_graph,
};
use cemkit::cem::model::{forward_graph, param_specs};
use cemkit::cem::rescore::{rescore_with, RescoreReport};
use cemkit::cem::{
    build_examples, estimate_summary, evaluate, rescore_corpus, train, CemModel, CemOutput,
    ModelConfig, RescoreScore, Scorer, TrainConfig, Variant,
};
use cemkit::datagen::{gen_corpus, tokenize, ChannelConfig, Split};
use cemkit::error::{CemError, TensorError};
use cemkit::gradcheck::{check_gradient, check_param_gradient};
use cemkit::metrics::{auc_pr, auc_roc, nce, MetricsReport, ScoredSample, TargetClass};
use cemkit::{Graph, Parameters, Tensor, Utterance, Var};
use common::{levenshtein, random_words, small_instances, small_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn s(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

// ---------------------------------------------------------------- 1

fn alignment_fidelity() -> Check {
    let lab = align_words(
        &s(&["go", "morning"]),
        &s(&["good", "morning"]),
        AlignOptions::default(),
    );
    ensure(
        lab.word_tags == [Tag::Sub, Tag::Cor],
        format!("go/good tags {:?}", lab.word_tags),
    )?;
    let wp = align_wp(
        &s(&["▁go", "▁morn", "ing"]),
        &s(&["▁go", "od", "▁morn", "ing"]),
    );
    ensure(
        wp == [Tag::Cor, Tag::Cor, Tag::Cor],
        format!("WP tags {wp:?}"),
    )?;
    ensure(
        tokenize("morning", 4, "▁").map_err(|e| e.to_string())? == ["▁morn", "ing"],
        "morning segmentation",
    )?;

    let tts = align_words(
        &s(&["absolut", "green", "philadelphia", "pa"]),
        &s(&["upsal", "at", "greene", "philadelphia", "pa"]),
        AlignOptions::default(),
    );
    ensure(
        tts.word_tags == [Tag::Sub, Tag::Sub, Tag::Cor, Tag::Cor],
        format!("TTS tags {:?}", tts.word_tags),
    )?;
    ensure(
        tts.deletion_gaps == [1, 0, 0, 0, 0],
        format!("TTS gaps {:?}", tts.deletion_gaps),
    )?;
    ensure(
        (tts.wer - 0.6).abs() < 1e-15,
        format!("TTS wer {}", tts.wer),
    )?;
    Ok("go/good [sub,cor], WP [cor,cor,cor], TTS [sub,sub,cor,cor] with gap 1 deletion".into())
}

// ---------------------------------------------------------------- 2

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..1000 {
        let hyp = random_words(&mut rng, 12);
        let reference = random_words(&mut rng, 12);
        let lab = align_words(&hyp, &reference, AlignOptions::default());
        let c = lab.counts;
        let dist = levenshtein(&hyp, &reference);
        ensure(
            c.errors() == dist,
            format!("pair {k}: S+I+D={} oracle={dist}", c.errors()),
        )?;
        ensure(
            c.correct + c.substitutions + c.insertions == hyp.len(),
            format!("pair {k}: C+S+I != L"),
        )?;
        ensure(
            c.correct + c.substitutions + c.deletions == reference.len(),
            format!("pair {k}: C+S+D != ref_len"),
        )?;
        ensure(
            lab.deletion_gaps.iter().sum::<usize>() == c.deletions,
            format!("pair {k}: gap sum != D"),
        )?;
        ensure(
            lab.deletion_gaps.len() == hyp.len() + 1,
            format!("pair {k}: gap count"),
        )?;
        ensure(
            lab.word_tags.len() == hyp.len(),
            format!("pair {k}: tag count"),
        )?;
    }
    Ok("1000 pairs match the DP oracle; all count identities hold".into())
}

// ---------------------------------------------------------------- 3

fn wer_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let hyp = random_words(&mut rng, 10);
        let reference = random_words(&mut rng, 10);
        if hyp.is_empty() || reference.is_empty() {
            continue;
        }
        let lab = align_words(&hyp, &reference, AlignOptions::default());
        let summary = estimate_summary(&CemOutput::oracle(&lab)).map_err(|e| e.to_string())?;
        let est = summary.mu_wer.ok_or("no WER estimate")?;
        worst = worst.max((est - lab.wer).abs());
        ensure(!summary.denominator_clamped, "denominator clamped")?;
        n += 1;
    }
    ensure(worst <= 1e-12, format!("max |mu_wer - wer| = {worst:e}"))?;
    Ok(format!("1000 utterances, max |mu_wer - wer| = {worst:e}"))
}

// ---------------------------------------------------------------- 4

const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

fn as_tensor(e: CemError) -> TensorError {
    match e {
        CemError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

/// A sample of coordinates spread over every parameter tensor.
fn coords(params: &Parameters, per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        for _ in 0..per_tensor.min(t.len()) {
            out.push((name.clone(), rng.random_range(0..t.len())));
        }
    }
    out
}

fn model_grad_check(
    variant: Variant,
    seed: u64,
    loss: fn(
        &mut Graph,
        &ModelConfig,
        &cemkit::cem::model::CemVars,
        &cemkit::AlignmentLabels,
    ) -> Result<Var, CemError>,
) -> Result<f64, String> {
    let cfg = small_model(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (k, (input, labels)) in small_instances(INSTANCES, seed).into_iter().enumerate() {
        let params = Parameters::initialize(seed * 1000 + k as u64, &param_specs(&cfg));
        let picks = coords(&params, 3, &mut rng);
        let err = check_param_gradient(&params, &picks, |g, p| {
            let vars = forward_graph(g, &cfg, p, &input).map_err(as_tensor)?;
            loss(g, &cfg, &vars, &labels).map_err(as_tensor)
        })
        .map_err(|e| e.to_string())?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn word_through_model(
    g: &mut Graph,
    _: &ModelConfig,
    v: &cemkit::cem::model::CemVars,
    l: &cemkit::AlignmentLabels,
) -> Result<Var, CemError> {
    word_loss_graph(g, v.word_probs.expect("word head"), l)
}

fn deletion_through_model(
    g: &mut Graph,
    _: &ModelConfig,
    v: &cemkit::cem::model::CemVars,
    l: &cemkit::AlignmentLabels,
) -> Result<Var, CemError> {
    deletion_loss_graph(g, v.deletion_log_rates.expect("deletion head"), l)
}

fn utterance_through_model(
    g: &mut Graph,
    _: &ModelConfig,
    v: &cemkit::cem::model::CemVars,
    l: &cemkit::AlignmentLabels,
) -> Result<Var, CemError> {
    utterance_loss_graph(g, v.utt_score.expect("utterance head"), l)
}

fn combined_through_model(
    g: &mut Graph,
    c: &ModelConfig,
    v: &cemkit::cem::model::CemVars,
    l: &cemkit::AlignmentLabels,
) -> Result<Var, CemError> {
    Ok(total_loss_graph(g, c, v, l)?.total)
}

fn gradient_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut report = Vec::new();

    // Losses directly on their inputs.
    let (mut w_direct, mut d_direct, mut u_direct): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (_, labels) in small_instances(INSTANCES, 40) {
        let l = labels.num_words();
        let logits = Tensor::matrix(
            l,
            3,
            (0..3 * l).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        w_direct = w_direct.max(
            check_gradient(&logits, |g, x| {
                let p = g.softmax_rows(x)?;
                word_loss_graph(g, p, &labels).map_err(as_tensor)
            })
            .map_err(|e| e.to_string())?,
        );
        let r = Tensor::matrix(
            l + 1,
            1,
            (0..=l).map(|_| rng.random_range(-2.0..1.5)).collect(),
        )
        .unwrap();
        d_direct = d_direct.max(
            check_gradient(&r, |g, x| {
                deletion_loss_graph(g, x, &labels).map_err(as_tensor)
            })
            .map_err(|e| e.to_string())?,
        );
        let z = Tensor::matrix(1, 1, vec![rng.random_range(-3.0..3.0)]).unwrap();
        u_direct = u_direct.max(
            check_gradient(&z, |g, x| {
                let p = g.sigmoid(x)?;
                utterance_loss_graph(g, p, &labels).map_err(as_tensor)
            })
            .map_err(|e| e.to_string())?,
        );
    }

    let w_model = model_grad_check(Variant::W, 41, word_through_model)?;
    let d_model = model_grad_check(Variant::WD, 42, deletion_through_model)?;
    let u_model = model_grad_check(Variant::U, 43, utterance_through_model)?;
    let mut combined: f64 = 0.0;
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        combined = combined.max(model_grad_check(v, 50 + i as u64, combined_through_model)?);
    }

    for (name, err) in [
        ("word", w_direct.max(w_model)),
        ("deletion", d_direct.max(d_model)),
        ("utterance", u_direct.max(u_model)),
        ("combined", combined),
    ] {
        ensure(
            err < GRAD_TOL,
            format!("{name} loss max relative error {err:e}"),
        )?;
        report.push(format!("{name} {err:.1e}"));
    }
    Ok(format!(
        "{INSTANCES} instances per loss; max relative error: {}",
        report.join(", ")
    ))
}

// ---------------------------------------------------------------- 5

fn pair_count_auc(samples: &[ScoredSample]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for p in samples.iter().filter(|s| s.label) {
        for n in samples.iter().filter(|s| !s.label) {
            pairs += 1.0;
            if p.score > n.score {
                num += 1.0;
            } else if p.score == n.score {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Sweep every distinct threshold: predict the target class when its
/// (possibly flipped) score is at least the threshold, and sum precision
/// times recall gained.
fn threshold_sweep_auc_pr(samples: &[ScoredSample], target: TargetClass) -> f64 {
    let flip = target == TargetClass::Negative;
    let scored: Vec<(f64, bool)> = samples
        .iter()
        .map(|s| {
            if flip {
                (1.0 - s.score, !s.label)
            } else {
                (s.score, s.label)
            }
        })
        .collect();
    let total = scored.iter().filter(|(_, l)| *l).count() as f64;
    let mut thresholds: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = scored.iter().filter(|(s, l)| *s >= t && *l).count() as f64;
        let predicted = scored.iter().filter(|(s, _)| *s >= t).count() as f64;
        let recall = tp / total;
        area += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    area
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut roc_err, mut pr_err): (f64, f64) = (0.0, 0.0);
    for set in 0..100 {
        let base = rng.random_range(0.2..0.8);
        let samples: Vec<ScoredSample> = (0..500)
            .map(|_| {
                let label = rng.random_bool(base);
                let raw: f64 = rng.random_range(0.0..1.0) * 0.7 + if label { 0.3 } else { 0.0 };
                // Coarse scores on half the sets exercise ties.
                let score = if set % 2 == 0 {
                    (raw * 20.0).round() / 20.0
                } else {
                    raw
                };
                ScoredSample::new(score.min(1.0), label)
            })
            .collect();
        roc_err = roc_err
            .max((auc_roc(&samples).map_err(|e| e.to_string())? - pair_count_auc(&samples)).abs());
        for target in [TargetClass::Negative, TargetClass::Positive] {
            let got = auc_pr(&samples, target).map_err(|e| e.to_string())?;
            pr_err = pr_err.max((got - threshold_sweep_auc_pr(&samples, target)).abs());
        }
    }
    ensure(roc_err <= 1e-9, format!("AUC-ROC deviates by {roc_err:e}"))?;
    ensure(pr_err <= 1e-9, format!("AUC-PR deviates by {pr_err:e}"))?;

    let labels: Vec<bool> = (0..500).map(|_| rng.random_bool(0.3)).collect();
    let p_bar = labels.iter().filter(|l| **l).count() as f64 / labels.len() as f64;
    let base_rate: Vec<ScoredSample> = labels
        .iter()
        .map(|&l| ScoredSample::new(p_bar, l))
        .collect();
    let nce_base = nce(&base_rate).map_err(|e| e.to_string())?;
    ensure(
        nce_base.abs() <= 1e-12,
        format!("base-rate NCE {nce_base:e}"),
    )?;
    let oracle: Vec<ScoredSample> = labels
        .iter()
        .map(|&l| ScoredSample::new(if l { 1.0 } else { 0.0 }, l))
        .collect();
    let nce_oracle = nce(&oracle).map_err(|e| e.to_string())?;
    ensure(nce_oracle >= 0.999, format!("oracle NCE {nce_oracle}"))?;
    Ok(format!(
        "100 sets x 500: AUC-ROC dev {roc_err:.1e}, AUC-PR dev {pr_err:.1e}; NCE base {nce_base:.1e}, oracle {nce_oracle:.6}"
    ))
}

// ---------------------------------------------------------------- 6

fn poisson_minimizer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for case in 0..10 {
        let mean = rng.random_range(1.0..6.0);
        let dist = Poisson::new(mean).unwrap();
        let gaps: Vec<usize> = loop {
            let g: Vec<usize> = (0..rng.random_range(5..40))
                .map(|_| dist.sample(&mut rng) as usize)
                .collect();
            if g.iter().sum::<usize>() >= g.len() {
                break g;
            }
        };
        let e_bar = gaps.iter().sum::<usize>() as f64 / gaps.len() as f64;
        let labels = cemkit::AlignmentLabels {
            word_tags: vec![Tag::Cor; gaps.len() - 1],
            deletion_gaps: gaps.clone(),
            e_utt: 0,
            counts: Default::default(),
            wer: 0.0,
            empty_reference: false,
        };
        // Every gap shares the one frozen feature, so every gap gets the same r.
        let ones = Tensor::matrix(gaps.len(), 1, vec![1.0; gaps.len()]).unwrap();
        let mut r = 0.0;
        for _ in 0..2000 {
            let mut g = Graph::new();
            let rv = g
                .variable(&Tensor::matrix(1, 1, vec![r]).unwrap())
                .map_err(|e| e.to_string())?;
            let col = g.constant(&ones).map_err(|e| e.to_string())?;
            let rates = g.matmul(col, rv).map_err(|e| e.to_string())?;
            let loss = deletion_loss_graph(&mut g, rates, &labels).map_err(|e| e.to_string())?;
            g.backward(loss).map_err(|e| e.to_string())?;
            let grad = g.grad(rv).ok_or("no gradient")?[0] / gaps.len() as f64;
            r -= 0.1 * grad;
        }
        let err = (r - e_bar.ln()).abs();
        ensure(
            err < 1e-3,
            format!("case {case}: r={r}, ln(e_bar)={}", e_bar.ln()),
        )?;
        worst = worst.max(err);
    }
    Ok(format!("10 gap sets, max |r - ln(e_bar)| = {worst:.1e}"))
}

// ---------------------------------------------------------------- 7-9

const SEEDS: [u64; 3] = [0, 1, 2];
const N_TRAIN: usize = 2000;
const N_VAL: usize = 200;
const N_TEST: usize = 500;

fn desk_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        ..ModelConfig::default()
    }
}

fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 8,
        seed,
        ..TrainConfig::default()
    }
}

struct Corpus {
    train: Vec<Utterance>,
    val: Vec<Utterance>,
    test: Vec<Utterance>,
}

fn corpus(seed: u64) -> Corpus {
    let cfg = ChannelConfig {
        seed,
        ..ChannelConfig::default()
    };
    assert_eq!(
        (cfg.n_best, cfg.p_sub, cfg.p_ins, cfg.p_del),
        (4, 0.08, 0.02, 0.05)
    );
    Corpus {
        train: gen_corpus(&cfg, Split::Train, N_TRAIN).unwrap(),
        val: gen_corpus(&cfg, Split::Validation, N_VAL).unwrap(),
        test: gen_corpus(&cfg, Split::Test, N_TEST).unwrap(),
    }
}

struct Run {
    model: CemModel,
    report: MetricsReport,
}

fn run(variant: Variant, seed: u64, data: &Corpus) -> Result<Run, String> {
    let tc = desk_train(seed);
    let tr = build_examples(&data.train, tc.all_hypotheses).map_err(|e| e.to_string())?;
    let va = build_examples(&data.val, tc.all_hypotheses).map_err(|e| e.to_string())?;
    let out = train(&desk_model(variant), &tc, &tr, &va).map_err(|e| e.to_string())?;
    let report = evaluate(Scorer::Model(&out.model), &data.test).map_err(|e| e.to_string())?;
    Ok(Run {
        model: out.model,
        report,
    })
}

#[derive(Default)]
struct DeskState {
    corpora: Vec<Corpus>,
    w: Option<Run>,
    wu: Vec<Run>,
}

fn desk_learning(state: &mut DeskState) -> Check {
    state.corpora = SEEDS.iter().map(|&s| corpus(s)).collect();
    let w = run(Variant::W, SEEDS[0], &state.corpora[0])?;
    let w_auc = w.report.word.as_ref().ok_or("no word metrics")?.auc_roc;
    state.w = Some(w);

    let mut lines = vec![format!("W word AUC {w_auc:.4}")];
    let mut ok = w_auc >= 0.75;
    for (i, &seed) in SEEDS.iter().enumerate() {
        let u = run(Variant::U, seed, &state.corpora[i])?;
        let wu = run(Variant::WU, seed, &state.corpora[i])?;
        let (ua, wua) = (u.report.utterance.auc_roc, wu.report.utterance.auc_roc);
        ok &= wua >= ua - 0.02;
        lines.push(format!("seed {seed}: U {ua:.4} WU {wua:.4}"));
        state.wu.push(wu);
    }
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rescoring_sanity(state: &DeskState) -> Check {
    ensure(state.wu.len() == SEEDS.len(), "criterion 7 models missing")?;
    let mut lines = Vec::new();
    let mut improved = 0;
    for (i, seed) in SEEDS.iter().enumerate() {
        let test = &state.corpora[i].test;
        let oracle: RescoreReport =
            rescore_corpus(Scorer::Oracle(Variant::WD), test, RescoreScore::Wer)
                .map_err(|e| e.to_string())?;
        ensure(
            oracle.rescored_wer == oracle.oracle_wer,
            format!(
                "seed {seed}: oracle rescoring {} vs best-in-beam {}",
                oracle.rescored_wer, oracle.oracle_wer
            ),
        )?;
        let constant = rescore_with(test, "constant", |_, _| Ok(0.5)).map_err(|e| e.to_string())?;
        ensure(
            constant.rescored_wer == constant.baseline_wer,
            format!("seed {seed}: constant rescoring changed WER"),
        )?;
        let trained = rescore_corpus(Scorer::Model(&state.wu[i].model), test, RescoreScore::Utt)
            .map_err(|e| e.to_string())?;
        improved += usize::from(trained.rescored_wer <= trained.baseline_wer);
        lines.push(format!(
            "seed {seed}: baseline {:.4} WU {:.4} best-in-beam {:.4}",
            trained.baseline_wer, trained.rescored_wer, trained.oracle_wer
        ));
    }
    let detail = format!("{}; WU <= baseline in {improved}/3", lines.join("; "));
    if improved >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism(state: &DeskState) -> Check {
    let first = state.w.as_ref().ok_or("criterion 7 W run missing")?;
    let again = run(Variant::W, SEEDS[0], &corpus(SEEDS[0]))?;
    let a = first.model.to_bytes().map_err(|e| e.to_string())?;
    let b = again.model.to_bytes().map_err(|e| e.to_string())?;
    ensure(a == b, "checkpoints differ")?;
    let ra = serde_json::to_vec(&first.report).map_err(|e| e.to_string())?;
    let rb = serde_json::to_vec(&again.report).map_err(|e| e.to_string())?;
    ensure(ra == rb, "reports differ")?;
    Ok(format!(
        "checkpoint ({} bytes) and report ({} bytes) bit-identical",
        a.len(),
        ra.len()
    ))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut state = DeskState::default();
    let mut failures = 0;
    let mut record = |id: usize, name: &str, limit: Duration, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let mut result = guarded(f);
        let took = start.elapsed();
        if result.is_ok() && took > limit {
            result = Err(format!(
                "took {:.1}s, limit {}s",
                took.as_secs_f64(),
                limit.as_secs()
            ));
        }
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        failures += usize::from(result.is_err());
        println!("[{tag}] {id} {name}: {detail} ({:.1}s)", took.as_secs_f64());
    };
    let secs = Duration::from_secs;
    record(1, "alignment fidelity", secs(1), &mut alignment_fidelity);
    record(2, "oracle equivalence", secs(5), &mut oracle_equivalence);
    record(3, "WER identity", secs(5), &mut wer_identity);
    record(4, "gradient suite", secs(60), &mut gradient_suite);
    record(5, "metric oracles", secs(30), &mut metric_oracles);
    record(6, "Poisson minimizer", secs(10), &mut poisson_minimizer);
    record(7, "desk-scale learning", secs(600), &mut || {
        desk_learning(&mut state)
    });
    record(8, "rescoring sanity", secs(600), &mut || {
        rescoring_sanity(&state)
    });
    record(9, "determinism", secs(600), &mut || determinism(&state));
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
