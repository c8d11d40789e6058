//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use exlab::complexity::{self, Phase, Stage};
use exlab::corpus::{self, Corpus, Windows};
use exlab::nn::{self, Dropout};
use exlab::training::{self, median, TrainConfig, Trainer};
use exlab::{finite_diff_report, Mode, Model, ModelConfig, ParamSet, PrngState, Stream, SublayerKind, Vocab};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

fn fixture() -> (Corpus, Vocab, Vec<usize>) {
    let corpus = Corpus::load_dir(&fixture_dir()).expect("fixture corpus");
    let vocab = Vocab::train(&corpus.documents, 512).expect("fixture vocabulary");
    let (stream, _) = corpus::encode_corpus(&corpus, &vocab);
    (corpus, vocab, stream)
}

fn small(kind: SublayerKind, u: usize, l: usize, d: usize, c: usize, m: usize) -> ModelConfig {
    ModelConfig {
        sublayer: kind,
        vocab_size: u,
        context_len: l,
        model_dim: d,
        ffn_dim: c,
        layers: m,
        heads: if kind == SublayerKind::Attention { 2.min(d) } else { 1 },
        dropout: 0.0,
        layernorm_eps: 1e-5,
    }
}

/// A model whose weights are O(`scale`) rather than the 0.01 used for training.
fn random_model(cfg: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut m = Model::init(cfg, seed).expect("model");
    let mut rng = PrngState::new(seed, Stream::Sampling);
    for t in m.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.normal(scale));
    }
    m
}

fn random_tokens(rng: &mut PrngState, n: usize, u: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(u)).collect()
}

fn exlab_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exlab"))
}

const TABLE_ROWS: [(&str, [u64; 6]); 6] = [
    ("Multiplications", [10_502_144, 10_502_144, 139_476_992, 7_364_608, 5_267_456, 1_056_768]),
    ("Additions", [10_420_096, 10_416_128, 139_411_456, 7_282_688, 5_201_920, 1_040_384]),
    ("Divisions", [16_512, 528_384, 0, 0, 0, 0]),
    ("Exponentiations", [8_256, 264_192, 0, 0, 0, 0]),
    ("Parameters", [65_536, 65_536, 2_129_920, 65_536, 49_152, 128]),
    ("Total arithmetic", [20_947_008, 21_710_848, 278_888_448, 14_647_296, 10_469_376, 2_097_152]),
];

fn c01_op_table() -> Outcome {
    let start = Instant::now();
    let out = exlab_bin().args(["complexity", "--table7"]).output().expect("run exlab");
    let elapsed = start.elapsed();
    if !out.status.success() {
        return outcome(false, format!("exit status {}", out.status));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let mut matched = 0;
    for (label, want) in TABLE_ROWS {
        let Some(line) = text.lines().find(|l| l.starts_with(label)) else {
            continue;
        };
        let got: Vec<u64> = line[label.len()..]
            .split_whitespace()
            .filter_map(|c| c.replace(',', "").parse().ok())
            .collect();
        matched += want.iter().zip(&got).filter(|(a, b)| a == b).count() * usize::from(got.len() == 6);
    }
    outcome(
        matched == 36 && elapsed < Duration::from_secs(1),
        format!("{matched}/36 cells exact, {} ms", elapsed.as_millis()),
    )
}

fn divisors(d: u64) -> Vec<u64> {
    (1..=d).filter(|n| d % n == 0).collect()
}

fn c02_count_oracle() -> Outcome {
    let start = Instant::now();
    let (mut cases, mut bad) = (0, Vec::new());
    for kind in SublayerKind::ALL {
        for phase in Phase::ALL {
            for d in [2u64, 4, 8] {
                for l in [1u64, 2, 4, 8] {
                    for n in divisors(d) {
                        let a = complexity::analytic_counts(kind, phase, d, l, n).expect("analytic");
                        let m = complexity::measured_counts(kind, phase, d, l, n).expect("measured");
                        cases += 1;
                        if a.counts != m.counts {
                            bad.push(format!("{kind}/{phase}/d{d}/l{l}/n{n}"));
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(10),
        format!("{}/{cases} combinations equal, {} ms {}", cases - bad.len(), elapsed.as_millis(), bad.join(" ")),
    )
}

fn c03_param_audit() -> Outcome {
    let (mut cases, mut bad) = (0, Vec::new());
    for kind in SublayerKind::ALL {
        for d in [2usize, 4, 8] {
            for l in [1usize, 2, 4, 8] {
                let ns = if kind == SublayerKind::Attention { divisors(d as u64) } else { vec![1] };
                for n in ns {
                    let mut cfg = small(kind, 2, l, d, 1, 1);
                    cfg.heads = n as usize;
                    let built = ParamSet::zeros(&cfg).expect("params").mixer_params(0) as u64;
                    let formula = complexity::analytic_params(kind, d as u64, l as u64);
                    cases += 1;
                    if built != formula {
                        bad.push(format!("{kind}/d{d}/l{l}/n{n}: {built} vs {formula}"));
                    }
                }
            }
        }
    }
    outcome(bad.is_empty(), format!("{}/{cases} parameter counts equal {}", cases - bad.len(), bad.join(" ")))
}

fn c04_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_elem: f64 = 0.0;
    let mut lines = Vec::new();
    for kind in SublayerKind::ALL {
        let cfg = small(kind, 7, 5, 4, 8, 2);
        let model = random_model(cfg.clone(), 17, 0.3);
        let mut rng = PrngState::new(23, Stream::Sampling);
        let tokens = random_tokens(&mut rng, 5, 7);
        let targets = random_tokens(&mut rng, 5, 7);
        let layout = model.params.layout().clone();
        let report = finite_diff_report(
            |tape, vars| {
                let p = layout.tree.map(|&i| vars[i]);
                let probs = nn::forward_tape(tape, &cfg, &p, &tokens, 5, &mut Dropout::off())?;
                nn::loss_tape(tape, probs, &targets)
            },
            model.params.tensors(),
            1e-5,
        )
        .expect("gradient check");
        worst = worst.max(report.max_tensor_rel);
        worst_elem = worst_elem.max(report.max_rel);
        lines.push(format!("{kind} {:.1e}", report.max_tensor_rel));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(120),
        format!(
            "max per-tensor relative error {worst:.2e} ({}); largest single-coordinate ratio {worst_elem:.2e}; {} ms",
            lines.join(", "),
            elapsed.as_millis()
        ),
    )
}

fn c05_causality() -> Outcome {
    let mut violations = 0;
    let mut checks = 0;
    for kind in SublayerKind::ALL {
        let mut rng = PrngState::new(kind as u64 + 1, Stream::Sampling);
        for trial in 0..20 {
            let model = random_model(small(kind, 7, 5, 4, 8, 2), 100 + trial, 0.5);
            let tokens = random_tokens(&mut rng, 5, 7);
            let base = model.forward(&tokens, Mode::Eval, None).expect("forward");
            for j in 0..5 {
                let mut changed = tokens.clone();
                changed[j] = (changed[j] + 1 + rng.below(6)) % 7;
                let y = model.forward(&changed, Mode::Eval, None).expect("forward");
                for i in 0..j {
                    checks += 1;
                    if y.row(i) != base.row(i) {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} of {checks} earlier rows changed"))
}

fn c06_decode() -> Outcome {
    let mut worst: f64 = 0.0;
    for kind in SublayerKind::ALL {
        for seed in 0..10 {
            let model = random_model(small(kind, 7, 6, 4, 8, 2), 200 + seed, 0.5);
            let mut rng = PrngState::new(seed, Stream::Sampling);
            let tokens = random_tokens(&mut rng, 6, 7);
            let full = model.forward(&tokens, Mode::Eval, None).expect("forward");
            let mut dec = model.decoder();
            for (i, &t) in tokens.iter().enumerate() {
                let row = dec.step(t).expect("step");
                for (a, b) in row.data().iter().zip(full.row(i)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    outcome(worst < 1e-10, format!("max |cached - full| {worst:.2e}"))
}

fn first_cost(cfg: ModelConfig, stream: &[usize], seed: u64) -> f64 {
    let tc = TrainConfig { batch_size: 8, num_batches: 1, seed, ..TrainConfig::default() };
    let mut t = Trainer::new(cfg, &tc, stream).expect("trainer");
    t.step().expect("step").cost
}

fn c07_uniform_baseline(fixture_stream: &[usize], fixture_u: usize) -> Outcome {
    let mut rng = PrngState::new(5, Stream::Sampling);
    let synthetic = random_tokens(&mut rng, 20_000, 5000);
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (u, stream) in [(5000, &synthetic[..]), (fixture_u, fixture_stream)] {
        let target = (u as f64).ln();
        for kind in SublayerKind::ALL {
            let mut cfg = small(kind, u, 32, 64, 256, 2);
            cfg.dropout = 0.1;
            let c = first_cost(cfg, stream, 1);
            worst = worst.max((c - target).abs() / target);
            lines.push(format!("{kind}@{u} {c:.3}"));
        }
    }
    outcome(
        worst < 0.10,
        format!("max relative gap to ln u {:.4} ({})", worst, lines.join(", ")),
    )
}

const SENTENCE: &str = "The quick brown fox jumps over the lazy dog. ";

/// Lowest mean cost any predictor can reach on windows of a cyclic text: the
/// conditional entropy of the next byte given the window prefix, averaged over
/// positions and start offsets.
fn cyclic_floor(text: &[u8], l: usize) -> f64 {
    let n = text.len();
    let at = |i: usize| text[i % n];
    let mut total = 0.0;
    for i in 0..l {
        let mut ctx: std::collections::HashMap<Vec<u8>, std::collections::HashMap<u8, usize>> = Default::default();
        for o in 0..n {
            let key: Vec<u8> = (o..=o + i).map(at).collect();
            *ctx.entry(key).or_default().entry(at(o + i + 1)).or_default() += 1;
        }
        for next in ctx.values() {
            let t: usize = next.values().sum();
            total += next.values().map(|&v| -(v as f64) * (v as f64 / t as f64).ln()).sum::<f64>() / n as f64;
        }
    }
    total / l as f64
}

fn c08_overfit() -> Outcome {
    let vocab = Vocab::base();
    let stream = vocab.encode(&SENTENCE.repeat(40));
    let floor = cyclic_floor(SENTENCE.as_bytes(), 16);
    let mut lines = vec![format!("entropy floor {floor:.4}")];
    let mut all = true;
    for kind in SublayerKind::ALL {
        let start = Instant::now();
        let mut cfg = small(kind, vocab.len(), 16, 32, 128, 2);
        cfg.heads = 1;
        let tc = TrainConfig { batch_size: 8, num_batches: 500, seed: 3, ..TrainConfig::default() };
        let out = training::train(cfg, &tc, &stream, |_| {}).expect("train");
        let costs = out.log.costs();
        let reached = costs.iter().position(|&c| c < 0.1);
        let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let early = median(&costs[..100]);
        let late = median(&costs[400..]);
        all &= reached.is_some() && late < early;
        lines.push(format!(
            "{kind}: {}, best {best:.4} ({:.1}s)",
            reached.map_or("never below 0.1".to_string(), |i| format!("below 0.1 at batch {}", i + 1)),
            start.elapsed().as_secs_f64()
        ));
    }
    outcome(all, lines.join(", "))
}

fn c09_ordering(stream: &[usize], u: usize) -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let mut tails = Vec::new();
        for kind in [SublayerKind::She, SublayerKind::Attention] {
            let cfg = ModelConfig {
                sublayer: kind,
                vocab_size: u,
                context_len: 32,
                model_dim: 64,
                ffn_dim: 256,
                layers: 2,
                heads: 1,
                dropout: 0.1,
                layernorm_eps: 1e-5,
            };
            let tc = TrainConfig { batch_size: 8, num_batches: 2000, seed, ..TrainConfig::default() };
            let out = training::train(cfg, &tc, stream, |_| {}).expect("train");
            tails.push(median(&out.log.costs()[1500..]));
        }
        if tails[0] < tails[1] {
            wins += 1;
        }
        lines.push(format!("seed {seed}: she {:.4} vs attention {:.4}", tails[0], tails[1]));
    }
    outcome(wins >= 2, format!("{wins}/3 seeds with she lower; {}", lines.join("; ")))
}

fn run_train(config: &Path, extra: &[&str]) -> bool {
    exlab_bin()
        .arg("train")
        .arg("--config")
        .arg(config)
        .args(["--log-every", "0"])
        .args(extra)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn c10_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let vocab = root.join("vocab.txt");
    let ok = exlab_bin()
        .args(["train-tokenizer", "--vocab-size", "300", "--corpus"])
        .arg(fixture_dir())
        .arg("--output")
        .arg(&vocab)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false);
    if !ok {
        return outcome(false, "tokenizer training failed");
    }
    let runfile = format!(
        "corpus = {:?}\nvocab = \"vocab.txt\"\nout_dir = \"run_a\"\n\n[model]\nsublayer = \"attention\"\nheads = 2\ncontext_len = 16\nmodel_dim = 16\nffn_dim = 32\nlayers = 1\ndropout = 0.1\n\n[train]\nbatch_size = 4\nnum_batches = 40\nlearning_rate = 0.001\nbeta1 = 0.9\nbeta2 = 0.999\nseed = 11\n",
        fixture_dir().display().to_string()
    );
    let rf = root.join("run.toml");
    std::fs::write(&rf, runfile).expect("write run file");
    let a = root.join("run_a");
    let b = root.join("run_b");
    let c = root.join("run_c");
    let steps = [
        run_train(&rf, &[]),
        run_train(&a.join("manifest.toml"), &["--out-dir", b.to_str().unwrap()]),
        run_train(&rf, &["--sublayer", "she", "--out-dir", c.to_str().unwrap()]),
    ];
    if steps.iter().any(|s| !s) {
        return outcome(false, format!("train runs succeeded: {steps:?}"));
    }
    let read = |p: PathBuf| std::fs::read(p).unwrap_or_default();
    let same_log = read(a.join("costlog.csv")) == read(b.join("costlog.csv"));
    let same_hashes = read(a.join("batch_hashes.csv")) == read(c.join("batch_hashes.csv"));
    let rows = String::from_utf8_lossy(&read(a.join("costlog.csv"))).lines().count();
    outcome(
        same_log && same_hashes && rows == 41,
        format!("manifest rerun costlog identical: {same_log}; batch hashes identical across sublayers: {same_hashes}"),
    )
}

fn c11_tokenizer(corpus: &Corpus, vocab: &Vocab, stream: &[usize]) -> Outcome {
    let mut bad = 0;
    for doc in &corpus.documents {
        if vocab.decode(&vocab.encode(doc)).ok().as_deref() != Some(doc.as_str()) {
            bad += 1;
        }
    }
    let mut window_ok = true;
    for l in [16, 32, 128] {
        let w = Windows::new(stream, l).expect("windows");
        window_ok &= w.count() == stream.len() - l;
    }
    outcome(
        bad == 0 && window_ok,
        format!(
            "{}/{} documents round-trip; window counts match: {window_ok}",
            corpus.documents.len() - bad,
            corpus.documents.len()
        ),
    )
}

fn c12_critical_paths() -> Outcome {
    let quoted = [
        (
            SublayerKind::Attention,
            "multiplication - cumulation - multiplication - cumulation - division - exponentiation - cumulation - division - multiplication - cumulation - multiplication - cumulation",
            12,
        ),
        (SublayerKind::She, "multiplication - cumulation - multiplication - multiplication - cumulation", 5),
        (SublayerKind::Me, "multiplication - cumulation", 2),
    ];
    let mut ok = true;
    let mut lens = Vec::new();
    for (kind, text, len) in quoted {
        let p = complexity::critical_path(kind);
        ok &= p.to_string() == text && p.len() == len && !p.derived;
        ok &= p.stages.iter().all(|s| matches!(s, Stage::Multiplication | Stage::Cumulation | Stage::Division | Stage::Exponentiation));
        lens.push(format!("{kind} {}", p.len()));
    }
    outcome(ok, lens.join(", "))
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; nothing here is listable.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let (corpus, vocab, stream) = fixture();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("operation-count table at d=128, l=128", Box::new(c01_op_table)),
        ("closed-form counts equal literal-loop counts", Box::new(c02_count_oracle)),
        ("parameter audit", Box::new(c03_param_audit)),
        ("gradient check, full model", Box::new(c04_gradients)),
        ("causality", Box::new(c05_causality)),
        ("incremental decoding", Box::new(c06_decode)),
        ("uniform baseline cost", Box::new(|| c07_uniform_baseline(&stream, vocab.len()))),
        ("overfit smoke", Box::new(c08_overfit)),
        ("she below 1-head attention", Box::new(|| c09_ordering(&stream, vocab.len()))),
        ("reproducibility", Box::new(c10_reproducibility)),
        ("tokenizer round trip and windows", Box::new(|| c11_tokenizer(&corpus, &vocab, &stream))),
        ("critical paths", Box::new(c12_critical_paths)),
    ];
    // Numeric arguments select criteria, e.g. `cargo test --test acceptance -- 8 9`.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!(
            "{verdict} criterion {:>2} {name}: {} [{:.1}s]",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
