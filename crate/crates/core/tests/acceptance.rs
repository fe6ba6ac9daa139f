//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if any fails.

#[path = "support/mock_server.rs"]
mod mock_server;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pro_uq::estimators::{nll_score, pro_adaptive, pro_score, select_top_k};
use pro_uq::eval::{auroc, default_alpha_grid, evaluate, grid_search_alpha, sweep};
use pro_uq::fetch::{FetchConfig, Question};
use pro_uq::records::{read_dataset, SortedProbView};
use pro_uq::rouge::{label_sample, rouge_l_f1, tokenize};
use pro_uq::synth::{bound_check, gen_dataset, Family, SynthConfig};
use pro_uq::{Error, Estimator, ProbView};

use mock_server::{chat_response, MockServer};

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn close(got: f64, want: f64, tol: f64, what: &str) {
    assert!(
        (got - want).abs() <= tol,
        "{what}: got {got:.5}, want {want} +/- {tol}"
    );
}

// 1. Worked examples: three NQ questions with ten sampled answers each.
fn nq_examples_golden() {
    let samples = read_dataset(data_path("nq_examples.jsonl"), None).unwrap();
    assert_eq!(samples.len(), 3);
    let adaptive = [0.404, 2.142, 2.087];
    let fixed = [[0.788, 0.788, 0.788], [1.935, 1.935, 2.081], [1.921, 1.987, 1.987]];
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.generations.len(), 10);
        let view: ProbView = SortedProbView::from_sample(s);
        let a = pro_adaptive(&view, 0.1).unwrap().value;
        close(a, adaptive[i], 0.003, &format!("example {} PRO(alpha=0.1)", i + 1));
        for (k, &want) in fixed[i].iter().enumerate() {
            let got = pro_score(&view, k + 1).unwrap().value;
            close(got, want, 0.005, &format!("example {} K={}", i + 1, k + 1));
        }
    }
    // top-1 labels: correct, wrong, wrong
    let labels: Vec<bool> = samples
        .iter()
        .map(|s| label_sample(s, 0.3, &SortedProbView::<f64>::from_sample(s)).unwrap().correct)
        .collect();
    assert_eq!(labels, [true, false, false]);
}

// 2. Lower bound on >= 1000 exact distributions, equality at full support.
fn entropy_lower_bound() {
    let start = Instant::now();
    let r = bound_check(1000, 7).unwrap();
    assert!(r.n_dists >= 1000);
    assert!(r.max_violation <= 1e-9, "max violation {}", r.max_violation);
    assert!(r.max_equality_error <= 1e-9, "full-support error {}", r.max_equality_error);
    assert!(start.elapsed() < Duration::from_secs(10));
}

fn random_view(rng: &mut ChaCha8Rng) -> ProbView {
    let n = rng.random_range(1..=12);
    let probs = (0..n)
        .map(|_| {
            // mix of repeated values and a wide dynamic range
            if rng.random_bool(0.2) {
                0.25
            } else {
                10f64.powf(rng.random_range(-9.0..0.0))
            }
        })
        .collect();
    SortedProbView::from_probs(probs).unwrap()
}

// 3. K=1 identity, alpha=0 keeps all, K non-increasing in alpha.
fn identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    for _ in 0..1000 {
        let view = random_view(&mut rng);
        assert_eq!(
            pro_score(&view, 1).unwrap().value.to_bits(),
            nll_score(&view).value.to_bits()
        );
        assert_eq!(select_top_k(&view, 0.0).unwrap(), view.len());
        let ks: Vec<usize> = grid.iter().map(|&a| select_top_k(&view, a).unwrap()).collect();
        assert!(ks.windows(2).all(|w| w[1] <= w[0]), "{ks:?}");
    }
}

fn brute_auroc(scores: &[f64], incorrect: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if incorrect[i] && !incorrect[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

// 4. AUROC against pair enumeration, with ties.
fn auroc_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut done = 0;
    while done < 500 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(1..=10);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.37).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&b| b) || labels.iter().all(|&b| !b) {
            assert!(matches!(auroc(&scores, &labels), Err(Error::UndefinedAuroc(_))));
            continue;
        }
        let got = auroc(&scores, &labels).unwrap();
        assert!((got - brute_auroc(&scores, &labels)).abs() <= 1e-12);
        done += 1;
    }
    assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(auroc(&[1.0; 8], &[true, false, true, false, true, true, false, false]).unwrap(), 0.5);
}

/// Longest common subsequence by enumerating subsets of the shorter side.
fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let picked: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        let mut it = long.iter();
        if picked.iter().all(|p| it.any(|x| x == *p)) {
            best = best.max(picked.len());
        }
    }
    best
}

// 5. ROUGE-L against brute-force LCS.
fn rouge_matches_oracle() {
    const VOCAB: [&str; 5] = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let words = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let n = rng.random_range(0..=8);
            (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect()
        };
        let cand = words(&mut rng);
        let refr = words(&mut rng);
        let lcs = brute_lcs(&cand, &refr) as f64;
        let want = if lcs == 0.0 {
            0.0
        } else {
            let p = lcs / cand.len() as f64;
            let r = lcs / refr.len() as f64;
            2.0 * p * r / (p + r)
        };
        let got: f64 = rouge_l_f1(&cand.join(" "), &refr.join(" "));
        assert!((got - want).abs() <= 1e-12, "{cand:?} vs {refr:?}: {got} != {want}");
        assert_eq!(tokenize(&cand.join(" ")), cand);
    }
    assert_eq!(rouge_l_f1::<f64>("John Quincy Adams", "John Quincy Adams"), 1.0);
    assert_eq!(rouge_l_f1::<f64>("Sienna Miller", "actress Dakota Johnson"), 0.0);
    close(rouge_l_f1("john adams", "john quincy adams"), 0.8, 1e-12, "john adams");
}

// 6. Discrimination on planted synthetic data.
fn synthetic_discrimination() {
    let start = Instant::now();
    let validation = gen_dataset(&SynthConfig::new(500, Family::Spiked, 0.95, 601)).unwrap();
    let test = gen_dataset(&SynthConfig::new(2000, Family::Spiked, 0.95, 602)).unwrap();
    let search = grid_search_alpha(&validation, &default_alpha_grid(), 0.3).unwrap();
    let report = evaluate(&test, &[Estimator::ProAdaptive(search.chosen), Estimator::Nll], 0.3).unwrap();
    let pro = report.rows[0].auroc.unwrap();
    let nll = report.rows[1].auroc.unwrap();
    println!("      alpha={} pro-adaptive AUROC={pro:.4} nll AUROC={nll:.4}", search.chosen);
    assert!(pro >= 0.9, "pro-adaptive AUROC {pro}");
    assert!(pro >= nll, "pro {pro} < nll {nll}");
    assert!(start.elapsed() < Duration::from_secs(30));
}

// 7. Threshold sweep: deterministic, labels monotone in the threshold.
fn threshold_sweep() {
    let mut data = gen_dataset(&SynthConfig::new(600, Family::Spiked, 0.95, 7)).unwrap();
    // pad some references so ROUGE-L F1 spreads over (0, 1)
    for (i, s) in data.iter_mut().enumerate() {
        let pad = i % 6;
        if pad > 0 {
            let filler: Vec<String> = (0..pad).map(|j| format!("w{j}")).collect();
            s.references[0] = format!("{} {}", s.references[0], filler.join(" "));
        }
    }
    let thresholds = [0.1, 0.2, 0.3, 0.4, 0.5];
    let ests = [Estimator::ProAdaptive(0.4), Estimator::Nll, Estimator::PePlugin];
    let a = sweep(&data, &ests, &thresholds).unwrap();
    let b = sweep(&data, &ests, &thresholds).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 15);
    for s in &data {
        let view = SortedProbView::<f64>::from_sample(s);
        let labels: Vec<bool> = thresholds
            .iter()
            .map(|&t| label_sample(s, t, &view).unwrap().correct)
            .collect();
        assert!(labels.windows(2).all(|w| w[0] || !w[1]), "{}: {labels:?}", s.id);
    }
    for est in ests {
        let correct: Vec<usize> = thresholds.iter().map(|&t| a.row(est, t).unwrap().n_correct).collect();
        assert!(correct.windows(2).all(|w| w[1] <= w[0]), "{correct:?}");
    }
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_pro-uq")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

// 8. synth -> score -> evaluate twice with the same seed.
fn end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let p = |name: &str| dir.path().join(format!("{run}-{name}")).to_string_lossy().into_owned();
        let (data, scores, report) = (p("data.jsonl"), p("scores.jsonl"), p("report.jsonl"));
        run_cli(&["synth", "--n", "300", "--seed", "42", "--output", &data]);
        run_cli(&["score", &data, "--estimators", "pro-a0.4,nll,pe,ne", "--output", &scores]);
        run_cli(&[
            "evaluate", &data, "--estimators", "pro-a0.4,nll,pe,ne", "--format", "jsonl", "--output", &report,
        ]);
        outputs.push([
            std::fs::read(&data).unwrap(),
            std::fs::read(&scores).unwrap(),
            std::fs::read(&report).unwrap(),
        ]);
    }
    assert!(!outputs[0][2].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}

// 9. Fetch client against a loopback mock.
fn fetch_against_mock() {
    let q = Question {
        id: "q".into(),
        question: "Capital of France?".into(),
        references: vec!["Paris".into()],
    };
    let cfg = |url: &str| {
        let mut c = FetchConfig::new(url, "mock");
        c.n = 2;
        c.retry.backoff = Duration::from_millis(1);
        c.timeout = Duration::from_secs(5);
        c
    };

    let ok = MockServer::start(vec![(200, chat_response(&[("Paris", &[-0.1]), ("Lyon", &[-2.3])]))]);
    let s = pro_uq::fetch::fetch_sample(&q, &cfg(&ok.base_url)).unwrap();
    let view: ProbView = SortedProbView::from_sample(&s);
    assert_eq!(view.probs(), &[(-0.1f64).exp(), (-2.3f64).exp()]);

    let bare = MockServer::start(vec![(200, r#"{"choices":[{"message":{"content":"Paris"}}]}"#.into())]);
    let err = pro_uq::fetch::fetch_sample(&q, &cfg(&bare.base_url)).unwrap_err();
    assert!(matches!(err, Error::MissingLogprobs(_)));

    let failing = MockServer::start(vec![(500, "{}".into())]);
    assert!(pro_uq::fetch::fetch_sample(&q, &cfg(&failing.base_url)).is_err());
    assert_eq!(failing.requests().len(), 3);

    // the CLI writes the fetched samples as a dataset the other commands read
    let dir = tempfile::tempdir().unwrap();
    let questions = dir.path().join("questions.jsonl");
    let out = dir.path().join("fetched.jsonl");
    std::fs::write(&questions, serde_json::to_string(&q).unwrap() + "\n").unwrap();
    run_cli(&[
        "fetch",
        questions.to_str().unwrap(),
        "--base-url",
        &ok.base_url,
        "--model",
        "mock",
        "--n",
        "2",
        "--api-key-env",
        "PRO_UQ_ACCEPTANCE_UNSET_KEY",
        "--output",
        out.to_str().unwrap(),
    ]);
    let fetched = read_dataset(&out, None).unwrap();
    assert_eq!(fetched.len(), 1);
    assert_eq!(fetched[0].generations[0].text, "Paris");
    assert_eq!(fetched[0].generations[0].token_logprobs, vec![-0.1]);
}

fn main() {
    let criteria: [(&str, fn()); 9] = [
        ("AC1 worked-example golden values", nq_examples_golden),
        ("AC2 entropy lower bound suite", entropy_lower_bound),
        ("AC3 K=1 / alpha=0 / monotone K identities", identities),
        ("AC4 AUROC vs pair-enumeration oracle", auroc_matches_oracle),
        ("AC5 ROUGE-L vs brute-force LCS oracle", rouge_matches_oracle),
        ("AC6 desk-scale synthetic discrimination", synthetic_discrimination),
        ("AC7 correctness-threshold sweep", threshold_sweep),
        ("AC8 end-to-end determinism", end_to_end_determinism),
        ("AC9 fetch client against mock endpoint", fetch_against_mock),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(check)).is_ok();
        let secs = start.elapsed().as_secs_f64();
        println!("[{}] {name} ({secs:.2}s)", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
