//! Acceptance suite: one PASS/FAIL line per criterion, then a hard assert.
//!
//! Criteria 7 and 8 train on 1 MB of text. The corpus is taken from
//! `SFRNN_CORPUS` when set, otherwise from the Rust sources under the
//! workspace `examples/` directory, otherwise from the cargo registry sources.
//! They take several minutes on one core.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use sfrnn::backprop::{backward_window, surprisal_logit_grad, GradMode};
use sfrnn::checkpoint::Checkpoint;
use sfrnn::corpus::{Corpus, Split};
use sfrnn::gradcheck::{self, small_config, DEFAULT_EPS, DEFAULT_TOLERANCE, SMALL_BATCH};
use sfrnn::model::{
    forward_step, forward_window, init_params, softmax_rows, CarryState, CellConvention, CellKind,
    ModelConfig, Params,
};
use sfrnn::rng::SplitMix64;
use sfrnn::tensor::Matrix;
use sfrnn::trainer::{evaluate, train_on, FeedbackComparison, TrainConfig};

const MEGABYTE: usize = 1_000_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!(
        "criterion {n} {name}: {} ({})",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn cfg(cell: CellKind, inputs: usize, hidden: usize, feedback: bool, bptt: usize) -> ModelConfig {
    ModelConfig {
        cell,
        inputs,
        hidden,
        feedback,
        bptt,
        convention: CellConvention::Paper,
    }
}

fn random_stream(rng: &mut SplitMix64, steps: usize, batch: usize, m: usize) -> Vec<Vec<usize>> {
    (0..steps)
        .map(|_| (0..batch).map(|_| rng.below(m as u64) as usize).collect())
        .collect()
}

fn rust_sources(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return;
    };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            rust_sources(&p, out);
        } else if p.extension().is_some_and(|x| x == "rs") {
            out.push(p);
        }
    }
}

fn first_megabyte_of(root: &Path) -> Option<Vec<u8>> {
    let mut files = Vec::new();
    rust_sources(root, &mut files);
    files.sort();
    let mut buf = Vec::with_capacity(MEGABYTE);
    for f in files {
        if let Ok(b) = std::fs::read(&f) {
            buf.extend_from_slice(&b);
        }
        if buf.len() >= MEGABYTE {
            buf.truncate(MEGABYTE);
            return Some(buf);
        }
    }
    None
}

fn desk_corpus() -> (Corpus, String) {
    if let Ok(path) = std::env::var("SFRNN_CORPUS") {
        let mut bytes = std::fs::read(&path).expect("SFRNN_CORPUS readable");
        bytes.truncate(MEGABYTE);
        return (Corpus::from_bytes(bytes).unwrap(), path);
    }
    let workspace = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../examples");
    if let Some(b) = first_megabyte_of(&workspace) {
        return (
            Corpus::from_bytes(b).unwrap(),
            "workspace examples/*.rs".into(),
        );
    }
    let home = std::env::var("CARGO_HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(std::env::var("HOME").unwrap()).join(".cargo"));
    let b = first_megabyte_of(&home.join("registry/src")).expect("1 MB of Rust sources available");
    (
        Corpus::from_bytes(b).unwrap(),
        "cargo registry sources".into(),
    )
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut all = true;
    for cell in [CellKind::SimpleRnn, CellKind::Lstm] {
        for feedback in [true, false] {
            let r = gradcheck::check(
                &small_config(cell, feedback),
                SMALL_BATCH,
                1,
                GradMode::Exact,
                DEFAULT_EPS,
                DEFAULT_TOLERANCE,
            )
            .unwrap();
            if !r.pass {
                println!("{r}");
            }
            all &= r.pass;
            worst = r
                .blocks
                .iter()
                .map(|b| b.max_rel_error)
                .fold(worst, f64::max);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        all && secs < 60.0,
        format!("4 configs, worst rel err {worst:.2e} <= 1e-6, {secs:.1}s < 60s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let batch = 1 + rng.below(4) as usize;
        let m = 2 + rng.below(30) as usize;
        let logits: Vec<f64> = (0..batch * m).map(|_| rng.uniform_f64(-4.0, 4.0)).collect();
        let p = softmax_rows(&Matrix::from_vec(batch, m, logits).unwrap());
        let x: Vec<usize> = (0..batch).map(|_| rng.below(m as u64) as usize).collect();
        let ds = Matrix::from_vec(
            batch,
            1,
            (0..batch).map(|_| rng.uniform_f64(-3.0, 3.0)).collect(),
        )
        .unwrap();
        let exact = surprisal_logit_grad(&ds, &p, &x, GradMode::Exact);
        let paper = surprisal_logit_grad(&ds, &p, &x, GradMode::Paper);
        for (a, b) in exact.as_slice().iter().zip(paper.as_slice()) {
            worst = worst.max((a + b).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("100 cases, max |exact + paper| = {worst:.1e} <= 1e-12"),
    )
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Plain LSTM with no surprisal term, written out independently.
fn reference_lstm(
    p: &Params<f64>,
    convention: CellConvention,
    h: &mut [f64],
    c: &mut [f64],
    x: usize,
) -> Vec<f64> {
    let n = h.len();
    let g = 4 * n;
    let mut z: Vec<f64> = (0..g)
        .map(|j| {
            let hu = h
                .iter()
                .enumerate()
                .fold(0.0, |acc, (k, hk)| acc + hk * p.u.get(k, j));
            (p.w.get(x, j) + hu) + p.b.get(0, j)
        })
        .collect();
    for v in &mut z[..3 * n] {
        *v = sigmoid(*v);
    }
    for v in &mut z[3 * n..] {
        *v = v.tanh();
    }
    for j in 0..n {
        let (i, f, o, u) = (z[j], z[n + j], z[2 * n + j], z[3 * n + j]);
        let keep = match convention {
            CellConvention::Paper => 1.0 - f,
            CellConvention::Standard => f,
        };
        c[j] = keep * c[j] + i * u;
        h[j] = o * c[j].tanh();
    }
    z
}

fn bits(m: &Matrix<f64>) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn criterion_3(corpus: &Corpus) -> Outcome {
    let mut forward_ok = true;
    for convention in [CellConvention::Paper, CellConvention::Standard] {
        let mut on = cfg(CellKind::Lstm, 32, 8, true, 10);
        on.convention = convention;
        let off = ModelConfig {
            feedback: false,
            ..on
        };
        let mut params: Params<f64> = init_params(&on, 11).unwrap();
        params.v.fill(0.0);
        let mut rng = SplitMix64::new(99);
        let mut s_on = CarryState::fresh(&on, 1);
        let mut s_off = CarryState::fresh(&off, 1);
        let (mut h, mut c) = (vec![0.0; 8], vec![0.0; 8]);
        for _ in 0..1000 {
            let x = rng.below(32) as usize;
            let a = forward_step(&params, &on, &mut s_on, &[x]).unwrap();
            let b = forward_step(&params, &off, &mut s_off, &[x]).unwrap();
            let gates = reference_lstm(&params, convention, &mut h, &mut c, x);
            let ref_bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            forward_ok &= bits(&a.gates) == bits(&b.gates)
                && bits(&a.h) == bits(&b.h)
                && bits(&a.c) == bits(&b.c)
                && bits(&a.p) == bits(&b.p)
                && bits(&a.gates) == ref_bits(&gates)
                && bits(&a.h) == ref_bits(&h)
                && bits(&a.c) == ref_bits(&c);
        }
    }

    // Feedback-off training: grad mode must not matter at all.
    let base = TrainConfig {
        model: cfg(CellKind::Lstm, 256, 16, false, 20),
        batch: 4,
        seq_len: 200,
        steps: 30,
        eval_every: 0,
        seed: 5,
        ..TrainConfig::default()
    };
    let exact = train_on(corpus, &base).unwrap();
    let paper = train_on(
        corpus,
        &TrainConfig {
            mode: GradMode::Paper,
            ..base.clone()
        },
    )
    .unwrap();
    let mut rng = SplitMix64::new(6);
    let inputs = random_stream(&mut rng, 21, 4, 256);
    let fp = forward_window(
        &exact.params,
        &base.model,
        CarryState::fresh(&base.model, 4),
        &inputs[..20],
        &inputs[1..],
    )
    .unwrap();
    let ge = backward_window(
        &exact.params,
        &base.model,
        &fp.cache,
        &inputs[1..],
        GradMode::Exact,
    )
    .unwrap();
    let gp = backward_window(
        &exact.params,
        &base.model,
        &fp.cache,
        &inputs[1..],
        GradMode::Paper,
    )
    .unwrap();
    let grads_ok = ge.params == gp.params && exact.params == paper.params;
    outcome(
        forward_ok && grads_ok,
        format!(
            "1000 steps x 2 conventions bit-identical: {forward_ok}; feedback-off grads and 30-step runs identical across modes: {grads_ok}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut worst_sum: f64 = 0.0;
    let mut min_s = f64::INFINITY;
    let mut first_err: f64 = 0.0;
    let mut rng = SplitMix64::new(4);
    for cell in [CellKind::SimpleRnn, CellKind::Lstm] {
        for feedback in [true, false] {
            let c = cfg(cell, 256, 16, feedback, 50);
            let mut p: Params<f64> = init_params(&c, rng.next_u64()).unwrap();
            // Larger weights push the softmax towards its floor.
            p.wy.scale(8.0);
            let inputs = random_stream(&mut rng, 301, 3, 256);
            let fp = forward_window(
                &p,
                &c,
                CarryState::fresh(&c, 3),
                &inputs[..300],
                &inputs[1..],
            )
            .unwrap();
            for (t, st) in fp.cache.steps.iter().enumerate() {
                for r in 0..3 {
                    let sum: f64 = st.p.row(r).iter().sum();
                    worst_sum = worst_sum.max((sum - 1.0).abs());
                    let s = st.s.get(r, 0);
                    min_s = min_s.min(s);
                    if t == 0 {
                        first_err = first_err.max((s - 256f64.ln()).abs());
                    }
                }
            }
        }
    }
    let corpus =
        Corpus::from_bytes((0..20_011u32).map(|i| (i * 7919 % 251) as u8).collect()).unwrap();
    let mut bpcs = Vec::new();
    for cell in [CellKind::SimpleRnn, CellKind::Lstm] {
        let c = cfg(cell, 256, 16, true, 100);
        let zero = Params::zeros(&c);
        for split in [Split::Train, Split::Valid, Split::Test] {
            bpcs.push(evaluate(&zero, &c, &corpus, split, 7).unwrap().bpc);
        }
    }
    let eight = bpcs.iter().all(|&b| b == 8.0);
    outcome(
        worst_sum <= 1e-12 && min_s >= 0.0 && first_err <= 1e-12 && eight,
        format!(
            "max |Σp - 1| = {worst_sum:.1e}, min s = {min_s:.3}, |s_1 - ln 256| = {first_err:.1e}, zero model bpc {bpcs:?}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(5);
    for cell in [CellKind::SimpleRnn, CellKind::Lstm] {
        for feedback in [true, false] {
            let s = 25;
            let c = cfg(cell, 40, 12, feedback, s);
            let p: Params<f64> = init_params(&c, rng.next_u64()).unwrap();
            let inputs = random_stream(&mut rng, 2 * s + 1, 3, 40);
            let (x, y) = (&inputs[..2 * s], &inputs[1..]);
            let whole = forward_window(&p, &c, CarryState::fresh(&c, 3), x, y).unwrap();
            let a = forward_window(&p, &c, CarryState::fresh(&c, 3), &x[..s], &y[..s]).unwrap();
            let b = forward_window(&p, &c, a.carry.clone(), &x[s..], &y[s..]).unwrap();
            let chained = a.cache.steps.iter().chain(&b.cache.steps);
            for (u, v) in whole.cache.steps.iter().zip(chained) {
                for (m1, m2) in [
                    (&u.h, &v.h),
                    (&u.c, &v.c),
                    (&u.gates, &v.gates),
                    (&u.p, &v.p),
                    (&u.s, &v.s),
                ] {
                    worst = worst.max(m1.max_abs_diff(m2));
                }
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("4 configs, one 2S window vs two chained S windows, max diff {worst:.1e}"),
    )
}

fn sfrnn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sfrnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn criterion_6(dir: &Path, data: &Path) -> Outcome {
    let run = |tag: &str| {
        let metrics = dir.join(format!("{tag}.jsonl"));
        let ckpt = dir.join(format!("{tag}.bin"));
        let out = sfrnn(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--hidden",
            "16",
            "--bptt",
            "20",
            "--batch",
            "4",
            "--seq-len",
            "200",
            "--steps",
            "40",
            "--eval-every",
            "10",
            "--seed",
            "3",
            "--metrics",
            metrics.to_str().unwrap(),
            "--ckpt",
            ckpt.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        (
            std::fs::read(metrics).unwrap(),
            std::fs::read(ckpt).unwrap(),
            out.stdout,
        )
    };
    let (m1, c1, o1) = run("first");
    let (m2, c2, o2) = run("second");
    let lines = m1.iter().filter(|&&b| b == b'\n').count();
    outcome(
        m1 == m2 && c1 == c2 && o1 == o2 && lines > 0,
        format!(
            "metrics identical: {}, checkpoints identical: {} ({} bytes), {lines} metric lines",
            m1 == m2,
            c1 == c2,
            c1.len()
        ),
    )
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        model: cfg(CellKind::Lstm, 256, 128, true, 100),
        batch: 32,
        steps: 2000,
        eval_every: 0,
        seed: 1,
        ..TrainConfig::default()
    }
}

fn criterion_7(corpus: &Corpus, source: &str) -> (Outcome, sfrnn::trainer::TrainOutcome, f64) {
    let config = desk_config();
    let started = Instant::now();
    let o = train_on(corpus, &config).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let smoothed = o.final_smoothed_bpc().unwrap();
    (
        outcome(
            smoothed < 3.0 && secs <= 1800.0,
            format!(
                "{source}, lstm+feedback N=128 S=100 B=32, 2000 updates: smoothed train bpc {smoothed:.3} < 3.0, {secs:.0}s <= 1800s"
            ),
        ),
        o,
        secs,
    )
}

fn criterion_8(corpus: &Corpus, on: sfrnn::trainer::TrainOutcome) -> Outcome {
    let on_config = desk_config();
    let off_config = TrainConfig {
        model: ModelConfig {
            feedback: false,
            ..on_config.model
        },
        ..on_config.clone()
    };
    let off = train_on(corpus, &off_config).unwrap();
    let valid_on = evaluate(
        &on.params,
        &on_config.model,
        corpus,
        Split::Valid,
        on_config.batch,
    )
    .unwrap();
    let valid_off = evaluate(
        &off.params,
        &off_config.model,
        corpus,
        Split::Valid,
        off_config.batch,
    )
    .unwrap();
    let cmp = FeedbackComparison {
        on,
        off,
        valid_on,
        valid_off,
    };
    for line in cmp.table().lines() {
        println!("    {line}");
    }
    let finite = cmp.valid_on.bpc.is_finite() && cmp.valid_off.bpc.is_finite();
    outcome(
        finite,
        format!(
            "paired runs, same seed and budget: valid bpc on {:.3}, off {:.3}",
            cmp.valid_on.bpc, cmp.valid_off.bpc
        ),
    )
}

fn criterion_9(dir: &Path, data: &Path, corpus: &Corpus) -> Outcome {
    let c = TrainConfig {
        model: cfg(CellKind::Lstm, 256, 64, true, 10),
        batch: 2,
        seq_len: 100,
        steps: 3,
        eval_every: 0,
        checkpoint: Some(dir.join("n64.bin")),
        ..TrainConfig::default()
    };
    train_on(corpus, &c).unwrap();
    let path = c.checkpoint.unwrap();
    let first = std::fs::read(&path).unwrap();
    let again = dir.join("again.bin");
    Checkpoint::load(&path).unwrap().save(&again).unwrap();
    let identical = std::fs::read(&again).unwrap() == first;

    let out = sfrnn(&[
        "eval",
        "--ckpt",
        path.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--hidden",
        "128",
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
    let names_both = stderr.contains("N=64") && stderr.contains("N=128");
    outcome(
        identical && names_both && out.status.code() == Some(2),
        format!("save->load->save identical: {identical}; N=64 into N=128: \"{stderr}\""),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, source) = desk_corpus();
    let small_path = dir.path().join("small.txt");
    std::fs::write(&small_path, &corpus.bytes()[..100_000]).unwrap();
    let small = Corpus::from_bytes(corpus.bytes()[..100_000].to_vec()).unwrap();

    let mut results = Vec::new();
    let mut record = |n: usize, name: &str, o: Outcome| {
        report(n, name, &o);
        results.push((n, o.pass));
    };
    record(1, "gradient correctness", criterion_1());
    record(2, "surprisal-path sign identity", criterion_2());
    record(3, "reduction equivalence", criterion_3(&small));
    record(4, "forward invariants", criterion_4());
    record(5, "window-splitting invariance", criterion_5());
    record(6, "determinism", criterion_6(dir.path(), &small_path));
    let (c7, on_run, _) = criterion_7(&corpus, &source);
    record(7, "desk-scale training sanity", c7);
    record(
        8,
        "paired feedback comparison",
        criterion_8(&corpus, on_run),
    );
    record(
        9,
        "checkpoint round-trip",
        criterion_9(dir.path(), &small_path, &small),
    );

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
