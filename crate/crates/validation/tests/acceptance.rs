//! Exit criteria. Prints one line per criterion and exits nonzero if any fail.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use lca_cli::{cmd_analyze, cmd_synth_pair, cmd_train, Cli, Command};
use lca_core::colorspace::Method;
use lca_core::imaging::{difference, features_to_image, histogram_match_score, image_features, load_image, psnr, ssim};
use lca_core::linalg::qr_orthonormalize;
use lca_core::old::{apply_coefficient, gradients, train, train_penalty_baseline};
use lca_core::stiefel::{retract, riemannian_gradient, DESCENT_SLACK};
use lca_core::synth::synth_pair;
use lca_core::{DifferenceDataset, ImageBuffer, Matrix, OldModel, OptimConfig, PerturbMode, StiefelPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_tangent(x: &StiefelPoint, rng: &mut ChaCha8Rng) -> Matrix {
    riemannian_gradient(x, &gaussian(x.ambient_dim(), x.frame_dim(), rng)).unwrap().into_direction()
}

/// `‖XᵀΞ + ΞᵀX‖_F`, computed without the library's helper.
fn skew_residual(x: &Matrix, xi: &Matrix) -> f64 {
    let m = x.t_matmul(xi).unwrap();
    (&m + &m.transpose()).frobenius_norm()
}

fn command(args: &[&str]) -> Command {
    Cli::try_parse_from(std::iter::once("lca").chain(args.iter().copied())).unwrap().command
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn retraction_orthogonality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(1..=64);
        let k = rng.random_range(1..=16.min(c));
        let x = StiefelPoint::random(c, k, &mut rng).unwrap();
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        let xi = random_tangent(&x, &mut rng).scale(scale);
        worst = worst.max(retract(&x, &xi).unwrap().orthogonality_error());
    }
    let t = start.elapsed();
    Outcome::new(worst <= 1e-10 && within(t, 10.0), format!("max ‖W̃ᵀW̃ − I‖ {worst:.2e} (≤ 1e-10), {t:.2?} (< 10 s)"))
}

fn gradient_tangency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut skew, mut idem) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let c = rng.random_range(1..=32);
        let k = rng.random_range(1..=c);
        let x = StiefelPoint::random(c, k, &mut rng).unwrap();
        let g = riemannian_gradient(&x, &gaussian(c, k, &mut rng)).unwrap().into_direction();
        skew = skew.max(skew_residual(x.matrix(), &g));
        let again = riemannian_gradient(&x, &g).unwrap().into_direction();
        idem = idem.max((&again - &g).frobenius_norm());
    }
    Outcome::new(skew <= 1e-9 && idem <= 1e-9, format!("skew residual {skew:.2e}, idempotence {idem:.2e} (≤ 1e-9)"))
}

fn retraction_first_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let h = 1e-5;
    for _ in 0..200 {
        let c = rng.random_range(2..=20);
        let k = rng.random_range(1..=c.min(8));
        let sym = gaussian(c, c, &mut rng).symmetrize();
        let lin = gaussian(c, k, &mut rng);
        let f = |p: &Matrix| p.t_matmul(&sym.matmul(p).unwrap()).unwrap().trace() + lin.inner(p).unwrap();
        let x = StiefelPoint::random(c, k, &mut rng).unwrap();
        let xi = random_tangent(&x, &mut rng);
        let at = |t: f64| f(retract(&x, &xi.scale(t)).unwrap().matrix());
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let egrad = sym.matmul(x.matrix()).unwrap().scale(2.0).checked_add(&lin).unwrap();
        let analytic = riemannian_gradient(&x, &egrad).unwrap().direction().inner(&xi).unwrap();
        worst = worst.max((fd - analytic).abs() / analytic.abs().max(f64::MIN_POSITIVE));
    }
    Outcome::new(worst <= 1e-5, format!("max relative gap {worst:.2e} (≤ 1e-5)"))
}

fn descent_guarantee() -> Outcome {
    let start = Instant::now();
    let (mut increases, mut ok, mut total) = (0, 0, 0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let c = rng.random_range(2..=12);
        let k = rng.random_range(1..c);
        let n = rng.random_range(c..=80);
        let data = DifferenceDataset::new(Matrix::from_fn(c, n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let cfg = OptimConfig { max_iters: 1000, grad_tol: f64::MIN_POSITIVE, seed, ..OptimConfig::default() };
        let (_, trace) = train(&data, k, &cfg).unwrap();
        increases += trace.loss_increases(DESCENT_SLACK);
        let (o, t) = trace.sufficient_decrease_counts(DESCENT_SLACK);
        ok += o;
        total += t;
    }
    let t = start.elapsed();
    let frac = ok as f64 / total as f64;
    Outcome::new(
        increases == 0 && frac >= 0.99 && within(t, 60.0),
        format!(
            "{increases} increases, sufficient decrease in {:.3}% of {total} steps (≥ 99%), {t:.2?} (< 60 s)",
            100.0 * frac
        ),
    )
}

fn pca_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let c = rng.random_range(4..=10);
        let k = rng.random_range(1..=3);
        let n = 200;
        let q = qr_orthonormalize(&gaussian(c, c, &mut rng)).unwrap();
        let z = qr_orthonormalize(&gaussian(n, c, &mut rng)).unwrap();
        // Squared singular values: at least 0.64 on the signal, 0.05 below it.
        let sigma: Vec<f64> = (0..c).map(|i| if i < k { 1.0 - 0.1 * i as f64 } else { 0.05f64.sqrt() }).collect();
        let a = q.matmul(&Matrix::diag(&sigma)).unwrap().matmul(&z.transpose()).unwrap();
        let data = DifferenceDataset::new(a).unwrap();
        let cfg = OptimConfig { seed, ..OptimConfig::default() };
        let (model, _) = train(&data, k, &cfg).unwrap();
        let qk = q.columns(0, k);
        let oracle = qk.matmul(&qk.transpose()).unwrap();
        worst = worst.max((&model.projector() - &oracle).frobenius_norm());
    }
    Outcome::new(worst <= 1e-3, format!("max ‖ΔP‖ {worst:.2e} (≤ 1e-3) over 20 seeds"))
}

fn toy_problem_direction(dir: &Path) -> Outcome {
    let start = Instant::now();
    let d = dir.to_str().unwrap();
    let (input, gt) = cmd_synth_pair(&synth_args(d, "toy")).unwrap();
    let Command::Analyze(args) = command(&[
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--methods",
        "ycbcr,hsv,lab,old",
    ]) else {
        unreachable!()
    };
    let report = cmd_analyze(&args).unwrap();
    let t = start.elapsed();
    let share = |m: &str| report.reports.iter().find(|r| r.method == m).unwrap().residual_share;
    let old = share("old");
    let baselines: Vec<(&str, f64)> =
        [Method::YCbCr, Method::Hsv, Method::Lab].iter().map(|m| (m.name(), share(m.name()))).collect();
    let pass = old < 0.01 && baselines.iter().all(|(_, s)| *s > 0.10) && within(t, 30.0);
    let listed: Vec<String> = baselines.iter().map(|(m, s)| format!("{m} {s:.4}")).collect();
    Outcome::new(pass, format!("old {old:.5} (< 0.01), {} (> 0.10), {t:.2?} (< 30 s)", listed.join(", ")))
}

fn synth_args(dir: &str, stem: &str) -> lca_cli::SynthArgs {
    match command(&["synth-pair", "--out-dir", dir, "--stem", stem, "--gain", "1.4", "--gamma", "1.2"]) {
        Command::SynthPair(a) => a,
        _ => unreachable!(),
    }
}

fn synth_dataset() -> (ImageBuffer, DifferenceDataset) {
    let (input, gt) = synth_pair(256, 256, 1.4, 1.2).unwrap();
    let data = difference(&gt, &input, 1).unwrap();
    (input, data)
}

fn penalty_comparison() -> Outcome {
    let (_, data) = synth_dataset();
    let cfg = OptimConfig { max_iters: 1000, seed: 42, ..OptimConfig::default() };
    let (geo, _) = train(&data, 1, &cfg).unwrap();
    let (pen, _) = train_penalty_baseline(&data, 1, 10.0, &cfg).unwrap();
    let geo_err = geo.w_dec().orthogonality_error();
    let pen_err = pen.orthogonality_error();
    let geo_loss = lca_core::old::reconstruction_loss(&geo, &data).unwrap();
    let pen_loss = pen.reconstruction_loss(&data).unwrap();
    Outcome::new(
        geo_err <= 1e-9 && pen_err >= 1e-4 && geo_loss <= pen_loss * 1.01,
        format!(
            "ortho error geometric {geo_err:.2e} (≤ 1e-9), penalty {pen_err:.2e} (≥ 1e-4); loss {geo_loss:.6} vs {pen_loss:.6} (+1%)"
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let c = rng.random_range(2..=10);
        let k = rng.random_range(1..c);
        let n = rng.random_range(c..=40);
        let a = Matrix::from_fn(c, n, |_, _| rng.random_range(-1.0..1.0));
        let data = DifferenceDataset::new(a.clone()).unwrap();
        let model =
            OldModel::new(gaussian(c, k, &mut rng), StiefelPoint::random(c, k, &mut rng).unwrap(), None).unwrap();
        let (gw, gd) = gradients(&model, &data).unwrap();
        let loss =
            |w: &Matrix, wd: &Matrix| (&a - &wd.matmul(&w.t_matmul(&a).unwrap()).unwrap()).frobenius_norm().powi(2);
        let (w, wd) = (model.w_enc(), model.w_dec().matrix());
        let fd = |perturb_dec: bool| {
            Matrix::from_fn(c, k, |i, j| {
                let (mut plus, mut minus) = if perturb_dec { (wd.clone(), wd.clone()) } else { (w.clone(), w.clone()) };
                plus[(i, j)] += h;
                minus[(i, j)] -= h;
                if perturb_dec {
                    (loss(w, &plus) - loss(w, &minus)) / (2.0 * h)
                } else {
                    (loss(&plus, wd) - loss(&minus, wd)) / (2.0 * h)
                }
            })
        };
        let rel = |fd: &Matrix, g: &Matrix| (fd - g).frobenius_norm() / g.frobenius_norm().max(f64::MIN_POSITIVE);
        worst = worst.max(rel(&fd(true), &gd)).max(rel(&fd(false), &gw));
    }
    Outcome::new(worst <= 1e-5, format!("max relative error {worst:.2e} (≤ 1e-5)"))
}

fn perturbation_ordering(dir: &Path) -> Outcome {
    let d = dir.to_str().unwrap();
    let (input_path, _) = cmd_synth_pair(&synth_args(d, "perturb")).unwrap();
    let model_path = dir.join("perturb.json");
    let Command::Train(args) = command(&["train", d, "-o", model_path.to_str().unwrap()]) else { unreachable!() };
    cmd_train(&args).unwrap();
    let model = OldModel::from_model_file(&std::fs::read_to_string(&model_path).unwrap()).unwrap();
    let input = load_image(&input_path).unwrap();
    let features = image_features(&input, 1).unwrap();
    let perturbed = |alpha: f64, mode: PerturbMode| {
        let f = apply_coefficient(&model, &features, alpha, mode).unwrap();
        let img = features_to_image(&f, &input, 1).unwrap().quantized();
        (histogram_match_score(&img, &input).unwrap(), ssim(&img, &input).unwrap())
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [0.01, 100.0] {
        let (ph, ps) = perturbed(alpha, PerturbMode::Principal);
        let (rh, rs) = perturbed(alpha, PerturbMode::Residual);
        pass &= rh < ph && rs < ps;
        parts.push(format!("α={alpha}: hist residual {rh:.3} vs principal {ph:.3}, ssim {rs:.3} vs {ps:.3}"));
    }
    Outcome::new(pass, parts.join("; ") + " (residual must be lower)")
}

fn metrics_sanity() -> Outcome {
    let (input, _) = synth_pair(64, 64, 1.4, 1.2).unwrap();
    let s = ssim(&input, &input).unwrap();
    let a = ImageBuffer::new(32, 32, 3, vec![0.3; 32 * 32 * 3]).unwrap();
    let b = ImageBuffer::new(32, 32, 3, vec![0.4; 32 * 32 * 3]).unwrap();
    let p = psnr(&a, &b).unwrap();
    let h = histogram_match_score(&input, &input).unwrap();
    Outcome::new(
        s == 1.0 && (p - 20.0).abs() <= 0.01 && h == 1.0,
        format!("ssim(a,a) {s}, psnr at 0.1 error {p:.6} dB, hist(a,a) {h}"),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let d = dir.join("det");
    std::fs::create_dir(&d).unwrap();
    let ds = d.to_str().unwrap();
    cmd_synth_pair(&synth_args(ds, "det")).unwrap();
    let run = |name: &str| {
        let out = dir.join(name);
        let Command::Train(args) = command(&["train", ds, "-o", out.to_str().unwrap(), "--seed", "7"]) else {
            unreachable!()
        };
        cmd_train(&args).unwrap();
        std::fs::read(out).unwrap()
    };
    let (first, second) = (run("det1.json"), run("det2.json"));
    Outcome::new(first == second, format!("{} bytes, identical: {}", first.len(), first == second))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("retraction orthogonality", Box::new(retraction_orthogonality)),
        ("gradient tangency", Box::new(gradient_tangency)),
        ("retraction first-order oracle", Box::new(retraction_first_order)),
        ("descent guarantee", Box::new(descent_guarantee)),
        ("PCA equivalence", Box::new(pca_equivalence)),
        ("toy-problem direction", Box::new(|| toy_problem_direction(p))),
        ("penalty baseline comparison", Box::new(penalty_comparison)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("perturbation ordering", Box::new(|| perturbation_ordering(p))),
        ("metrics sanity", Box::new(metrics_sanity)),
        ("end-to-end determinism", Box::new(|| determinism(p))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome::new(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!outcome.pass);
        println!("criterion {}: {} {name}: {}", i + 1, if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
