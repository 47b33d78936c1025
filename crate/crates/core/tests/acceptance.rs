//! Acceptance suite. Runs without the libtest harness so every criterion prints
//! exactly one PASS/FAIL line; exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{brute_force_matching, gaussian, ot_cost, top_singular_value};
use direal::cli::{cmd_train, ExperimentConfig, HISTORY_FILE};
use direal::diversity::{
    diversity_grad_exact, diversity_grad_paper, DiversityConfig, LayerSelection, Variant,
};
use direal::gan::{build_model, sample, train, GanModel, MetricsRecord, TrainObserver};
use direal::gradcheck;
use direal::kernel::{normalize_columns, KernelMatrix};
use direal::metrics::{cosine_stats, mode_coverage, wasserstein1d};
use direal::nn::{initial_u, power_iteration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn ring8() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ring8.conf");
    let mut cfg = ExperimentConfig::from_file(&path).unwrap();
    cfg.sample_every = 0;
    cfg.checkpoint_every = 0;
    cfg
}

fn km(m: ndarray::Array2<f64>) -> KernelMatrix {
    KernelMatrix::from_columns(m).unwrap()
}

fn diversity_fidelity() -> Outcome {
    let r = gradcheck::diversity_suite(100, 1, false);
    outcome(
        r.passed(),
        format!(
            "max rel err {:.2e} over {} instances ({})",
            r.max_error, r.cases, r.detail
        ),
    )
}

fn paper_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let m = gaussian(rng.random_range(2..=8), rng.random_range(2..=6), &mut rng);
        let cfg = DiversityConfig::with_tau([0.0, 0.3, 0.5, 0.8][k % 4], Variant::Raw);
        let paper = diversity_grad_paper(&km(m.clone()), &cfg);
        let exact = diversity_grad_exact(&km(m), &cfg);
        for (p, e) in paper.iter().zip(exact.iter()) {
            worst = worst.max((p - 0.5 * e).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max |published - exact/2| = {worst:.2e} over 50 instances"),
    )
}

fn orthogonalization() -> Outcome {
    let cfg = DiversityConfig::with_tau(0.0, Variant::Cosine);
    let mut ok = 0;
    let mut rows = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = normalize_columns(&km(gaussian(16, 8, &mut rng))).into_values();
        let start = cosine_stats(&km(theta.clone())).unwrap().max_offdiag;
        let mut steps = 0;
        while steps < 2000 && cosine_stats(&km(theta.clone())).unwrap().max_offdiag >= 0.1 {
            let g = diversity_grad_exact(&km(theta.clone()), &cfg);
            theta = normalize_columns(&km(&theta - &(g * 0.01))).into_values();
            steps += 1;
        }
        let end = cosine_stats(&km(theta.clone())).unwrap().max_offdiag;
        if start > 0.3 && end < 0.1 {
            ok += 1;
        }
        rows.push(format!("{start:.2}->{end:.3}@{steps}"));
    }
    outcome(ok == 10, format!("{ok}/10 seeds [{}]", rows.join(" ")))
}

/// Checkpoint bytes after every step.
struct Trajectory(Vec<Vec<u8>>);

impl TrainObserver for Trajectory {
    fn on_step(&mut self, model: &GanModel) -> direal::Result<()> {
        let mut b = Vec::new();
        model.write_checkpoint(&mut b)?;
        self.0.push(b);
        Ok(())
    }
}

fn zero_lambda() -> Outcome {
    let mut cfg = ring8();
    cfg.max_steps = 200;
    cfg.lambda_d = 0.0;
    cfg.lambda_g = 0.0;
    let data = cfg.load_dataset().unwrap();
    let run = |reg: &str| {
        let mut c = cfg.clone();
        c.regularizer = reg.into();
        let tc = c.train_config(0).unwrap();
        let model = build_model(&tc, &data, c.architecture().unwrap()).unwrap();
        let mut traj = Trajectory(Vec::new());
        let out = train(&tc, &data, model, &mut traj).unwrap();
        (traj.0, out.history)
    };
    let (a, ha) = run("direal");
    let (b, hb) = run("none");
    let first_diff = a.iter().zip(&b).position(|(x, y)| x != y);
    let same = a.len() == 200 && b.len() == 200 && first_diff.is_none() && ha == hb;
    outcome(
        same,
        match first_diff {
            None => format!(
                "{} steps, parameters and metrics identical at every step",
                a.len()
            ),
            Some(s) => format!("diverged at step {}", s + 1),
        },
    )
}

struct RingRun {
    late_j_d: f64,
    covered: usize,
    hq: f64,
}

fn ring_run(cfg: &ExperimentConfig, regularizer: &str, seed: u64) -> RingRun {
    let mut c = cfg.clone();
    c.seed = seed;
    c.regularizer = regularizer.into();
    c.max_steps = 5000;
    let data = c.load_dataset().unwrap();
    let tc = c.train_config(0).unwrap();
    let model = build_model(&tc, &data, c.architecture().unwrap()).unwrap();
    let out = train(&tc, &data, model, &mut ()).unwrap();
    let tail: Vec<&MetricsRecord> = out.history.iter().skip(out.history.len() * 3 / 4).collect();
    let late_j_d = tail.iter().map(|r| r.j_d).sum::<f64>() / tail.len() as f64;
    let samples = sample(&out.model.generator, c.eval_samples, seed ^ 0xc0ffee).unwrap();
    let cov = mode_coverage(samples.view(), data.modes.as_ref().unwrap()).unwrap();
    RingRun {
        late_j_d,
        covered: cov.covered,
        hq: cov.hq_fraction,
    }
}

fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Criteria 5 and 6 share one set of matched runs.
fn ring_experiments() -> (Outcome, Outcome) {
    let cfg = ring8();
    let mut lower = 0;
    let (mut cov_direal, mut cov_none) = (Vec::new(), Vec::new());
    println!(
        "      seed | J_D late (direal / none) | covered (direal / none) | hq (direal / none)"
    );
    for seed in 0..5 {
        let d = ring_run(&cfg, "direal", seed);
        let n = ring_run(&cfg, "none", seed);
        if d.late_j_d < n.late_j_d {
            lower += 1;
        }
        println!(
            "      {seed:>4} | {:>10.4} / {:>10.4} | {:>6} / {:<6}          | {:.3} / {:.3}",
            d.late_j_d, n.late_j_d, d.covered, n.covered, d.hq, n.hq
        );
        cov_direal.push(d.covered);
        cov_none.push(n.covered);
    }
    let (md, mn) = (median(cov_direal), median(cov_none));
    (
        outcome(
            lower >= 4,
            format!("late J_D lower under regularization in {lower}/5 seeds"),
        ),
        outcome(
            md >= mn && md >= 6,
            format!("median covered {md}/8 regularized, {mn}/8 unregularized"),
        ),
    )
}

fn corpus(cases: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let n = rng.random_range(1..=6);
        if rng.random_bool(0.5) {
            (0..n)
                .map(|_| rng.random_range(0..5) as f64 * 0.25)
                .collect()
        } else {
            (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
        }
    };
    (0..cases)
        .map(|_| (draw(&mut rng), draw(&mut rng)))
        .collect()
}

fn wasserstein_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for (a, b) in corpus(200, 7) {
        let w = wasserstein1d(&a, &b).unwrap();
        worst = worst.max((w - ot_cost(&a, &b)).abs());
        if a.len() == b.len() {
            worst = worst.max((w - brute_force_matching(&a, &b)).abs());
        }
    }
    outcome(
        worst <= 1e-9,
        format!("max |W1 - OT| = {worst:.2e} over 200 pairs"),
    )
}

fn model_gradcheck() -> Outcome {
    let cfg = DiversityConfig {
        lambda_d: 1.0,
        layers: LayerSelection::All,
        ..Default::default()
    };
    let r = gradcheck::discriminator_suite(&cfg, 3, false).unwrap();
    outcome(
        r.passed(),
        format!(
            "max rel err {:.2e} over {} parameters",
            r.max_error, r.cases
        ),
    )
}

fn spectral_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200;
    let mut misses = 0;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let m = gaussian(32, 16, &mut rng);
        let exact = top_singular_value(&m);
        let mut u = initial_u(32, k);
        let err = (power_iteration(m.view(), &mut u, 50) - exact).abs() / exact;
        worst = worst.max(err);
        if err >= 1e-3 {
            misses += 1;
        }
    }
    outcome(
        misses == 0,
        format!("{misses}/{n} matrices outside 1e-3 relative at 50 iterations (worst {worst:.2e})"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ring8();
    cfg.max_steps = 1000;
    let mut histories = Vec::new();
    for name in ["a", "b"] {
        cfg.out = dir.path().join(name);
        cmd_train(&cfg, 0).unwrap();
        histories.push(std::fs::read(cfg.out.join(HISTORY_FILE)).unwrap());
    }
    outcome(
        histories[0] == histories[1],
        format!(
            "{} bytes of history.csv, {} identical",
            histories[0].len(),
            if histories[0] == histories[1] {
                "byte"
            } else {
                "not"
            }
        ),
    )
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let ok = o.passed && took <= limit;
    let slow = if took > limit {
        format!(" (over {}s budget)", limit.as_secs())
    } else {
        String::new()
    };
    println!(
        "{} {id:>2} {name}: {} [{:.1}s{slow}]",
        if ok { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    ok
}

fn main() {
    let secs = Duration::from_secs;
    let mut all = vec![
        report(
            1,
            "diversity gradient fidelity",
            secs(10),
            diversity_fidelity,
        ),
        report(
            2,
            "published gradient is half the exact one",
            secs(1),
            paper_identity,
        ),
        report(3, "orthogonalization dynamics", secs(5), orthogonalization),
        report(4, "zero-lambda no-op", secs(30), zero_lambda),
    ];
    let start = Instant::now();
    let (c5, c6) = ring_experiments();
    let took = start.elapsed();
    // the shared runs count toward both budgets
    all.push(report(
        5,
        "diversity suppression on ring-8",
        secs(15 * 60),
        || Outcome {
            detail: format!("{} (shared runs {:.0}s)", c5.detail, took.as_secs_f64()),
            passed: c5.passed && took <= secs(15 * 60),
        },
    ));
    all.push(report(
        6,
        "collapse mitigation on ring-8",
        secs(20 * 60),
        || Outcome {
            detail: format!("{} (shared runs {:.0}s)", c6.detail, took.as_secs_f64()),
            passed: c6.passed && took <= secs(20 * 60),
        },
    ));
    all.push(report(7, "Wasserstein oracle", secs(5), wasserstein_oracle));
    all.push(report(8, "full-model gradcheck", secs(30), model_gradcheck));
    all.push(report(9, "spectral-norm oracle", secs(5), spectral_oracle));
    all.push(report(10, "training determinism", secs(120), determinism));

    let failed = all.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {}/{} criteria passed",
        all.len() - failed,
        all.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
