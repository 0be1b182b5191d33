//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails. Trained models are shared
//! between criteria and trained at most once.
//!
//! `MCLNN_CRITERIA=1,3` runs a subset; by default all run.

use std::cell::OnceCell;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mclnn::autodiff::{finite_difference_gradient, grad, Real, ScalarFn};
use mclnn::evaluation::{
    baseline_gauge_offset, evaluate_forward, evaluation_state, export_potential_curve,
    force_scatter, generalization_eval, least_squares_slope, mclnn_gauge, ConservationReport,
    Model, TrainingRange, EVAL_SEED_OFFSET,
};
use mclnn::lagrangian::*;
use mclnn::nn::{layer_sizes_for, mlp_eval, MlpParams};
use mclnn::systems::{
    generate_dataset, sample_acceleration_dataset, AccelSample, AnalyticLagrangian, Dataset,
    DatasetConfig, SystemKind, SystemSpec,
};
use mclnn::training::{train_baseline, train_mclnn, ModelKind, TrainConfig, TrainOutcome};

const RECORDS: usize = 100;
/// Epoch budget for the pairwise models and the width sweep.
const MCLNN_EPOCHS: usize = 20_000;
/// Short run standing in for "trained" in the conservation check.
const NONLINEAR_EPOCHS: usize = 1_000;
const BASELINE_EPOCHS: usize = 1_500;
const BASELINE_SAMPLES: usize = 10_000;
const HELD_OUT_SAMPLES: usize = 1_000;

fn log(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Pairwise {
    spec: SystemSpec,
    data: Dataset,
    outcome: TrainOutcome,
}

impl Pairwise {
    fn model(&self) -> Model {
        let gauge = mclnn_gauge(&self.outcome.params, &self.spec, &self.data.trajectories)
            .expect("gauge fit");
        Model::Mclnn {
            params: self.outcome.params.clone(),
            gauge,
        }
    }

    fn range(&self) -> TrainingRange {
        TrainingRange::from_trajectories(&self.data.trajectories).expect("training range")
    }
}

struct Baseline {
    spec: SystemSpec,
    samples: Vec<AccelSample>,
    outcome: TrainOutcome,
}

impl Baseline {
    fn model(&self) -> Model {
        let offset = baseline_gauge_offset(&self.outcome.params, &self.spec, &self.samples)
            .expect("gauge fit");
        Model::Baseline {
            params: self.outcome.params.clone(),
            offset,
        }
    }
}

fn train_pairwise(kind: SystemKind, hidden: &[usize], epochs: usize) -> Pairwise {
    let spec = SystemSpec::new(kind);
    let data = generate_dataset(&spec, &DatasetConfig::default()).expect("dataset");
    let cfg = TrainConfig {
        hidden: hidden.to_vec(),
        epochs,
        ..Default::default()
    };
    let outcome = train_mclnn(&data.trajectories, &cfg).expect("training");
    log(&format!(
        "  trained mclnn {} {:?}: {} epochs, train loss {:.3e}, {:.0} s",
        kind,
        hidden,
        outcome.report.epochs_run(),
        outcome.report.final_train_loss,
        outcome.report.wall_clock_seconds
    ));
    Pairwise { spec, data, outcome }
}

fn train_baseline_model(kind: SystemKind, seed: u64) -> Baseline {
    let spec = SystemSpec::new(kind);
    let samples =
        sample_acceleration_dataset(&spec, BASELINE_SAMPLES, DatasetConfig::default().seed)
            .expect("samples");
    let cfg = TrainConfig {
        model_kind: ModelKind::Baseline,
        epochs: BASELINE_EPOCHS,
        seed,
        ..Default::default()
    };
    let outcome = train_baseline(&samples, &cfg).expect("training");
    log(&format!(
        "  trained baseline {} (seed {seed}): train loss {:.3e}, {:.0} s",
        kind, outcome.report.final_train_loss, outcome.report.wall_clock_seconds
    ));
    Baseline {
        spec,
        samples,
        outcome,
    }
}

#[derive(Default)]
struct Lab {
    linear: OnceCell<Pairwise>,
    nonlinear: OnceCell<Pairwise>,
    gravity: OnceCell<Pairwise>,
    baselines: [OnceCell<Baseline>; 3],
    linear_baseline_seeds: OnceCell<Vec<Baseline>>,
}

impl Lab {
    fn linear(&self) -> &Pairwise {
        self.linear
            .get_or_init(|| train_pairwise(SystemKind::LinearSpring, &[10, 10], MCLNN_EPOCHS))
    }

    fn nonlinear(&self) -> &Pairwise {
        self.nonlinear
            .get_or_init(|| train_pairwise(SystemKind::NonlinearSpring, &[10, 10], NONLINEAR_EPOCHS))
    }

    fn gravity(&self) -> &Pairwise {
        self.gravity
            .get_or_init(|| train_pairwise(SystemKind::Gravity, &[10, 10], MCLNN_EPOCHS))
    }

    fn baseline(&self, kind: SystemKind) -> &Baseline {
        let slot = match kind {
            SystemKind::LinearSpring => 0,
            SystemKind::NonlinearSpring => 1,
            SystemKind::Gravity => 2,
        };
        self.baselines[slot].get_or_init(|| train_baseline_model(kind, TrainConfig::default().seed))
    }

    /// Two more linear-spring baselines with other seeds.
    fn extra_linear_baselines(&self) -> &[Baseline] {
        self.linear_baseline_seeds.get_or_init(|| {
            let seed = TrainConfig::default().seed;
            vec![
                train_baseline_model(SystemKind::LinearSpring, seed + 1),
                train_baseline_model(SystemKind::LinearSpring, seed + 2),
            ]
        })
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> ParticleState {
    loop {
        let q: Vec<Vec3> = (0..n)
            .map(|_| [0; 3].map(|_| rng.gen_range(-2.0..2.0)))
            .collect();
        if pairs(n).any(|p| norm(sub(q[p.i], q[p.j])) < 0.2) {
            continue;
        }
        let v: Vec<Vec3> = (0..n)
            .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        return ParticleState::new(q, v, m).unwrap();
    }
}

fn symmetry() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000u64 {
        let n = rng.gen_range(2..=8);
        let s = random_state(&mut rng, n);
        let params = MlpParams::init(&layer_sizes_for(1, &[10, 10]), case).unwrap();
        let eps: Vec3 = [0; 3].map(|_| rng.gen_range(-10.0..10.0));
        let q = random_rotation(rng.gen());
        let l = mclnn_lagrangian(&params, &s).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let variants = [
            translate(&s, eps),
            rotate_positions(&s, &q).unwrap(),
            rotate(&translate(&s, eps), &q).unwrap(),
            s.permuted(&perm).unwrap(),
        ];
        for t in &variants {
            let lt = mclnn_lagrangian(&params, t).unwrap();
            worst = worst.max((lt - l).abs() / (1.0 + l.abs()));
        }
    }
    verdict(
        worst <= 1e-9,
        format!("1000 states, worst |dL|/(1+|L|) = {worst:.2e} (limit 1e-9)"),
    )
}

/// Drifts of one 100-record rollout from the task's evaluation state.
fn rollout_drifts(spec: &SystemSpec, params: &MlpParams) -> (f64, f64) {
    let s0 = evaluation_state(spec, 0).unwrap();
    let model = Model::Mclnn {
        params: params.clone(),
        gauge: mclnn::evaluation::PairGauge::constant(0.0),
    };
    let d = DatasetConfig::default();
    let rep = evaluate_forward(&model, spec, &s0, RECORDS, d.stride, d.dt).unwrap();
    assert!(rep.divergence.is_none(), "rollout diverged: {:?}", rep.divergence);
    (rep.model.linear_momentum_drift(), rep.model.angular_momentum_drift())
}

fn conservation(lab: &Lab) -> (Verdict, f64) {
    let trained = [lab.linear(), lab.nonlinear(), lab.gravity()];
    let start = Instant::now();
    let (mut p, mut l) = (0.0f64, 0.0f64);
    for model in trained {
        let untrained = MlpParams::init(&layer_sizes_for(1, &[10, 10]), 3).unwrap();
        for params in [&model.outcome.params, &untrained] {
            let (dp, dl) = rollout_drifts(&model.spec, params);
            p = p.max(dp);
            l = l.max(dl);
        }
    }
    (
        verdict(
            p <= 1e-8 && l <= 1e-6,
            format!("3 tasks x trained/untrained: max |dp| = {p:.2e} (1e-8), max |dL| = {l:.2e} (1e-6)"),
        ),
        start.elapsed().as_secs_f64(),
    )
}

struct RandomMlp {
    sizes: Vec<usize>,
    flat: Vec<f64>,
}

impl ScalarFn for RandomMlp {
    fn eval<S: Real>(&self, x: &[S]) -> S {
        let flat: Vec<S> = self.flat.iter().map(|&w| S::constant(w)).collect();
        mlp_eval(&self.sizes, &flat, x)
    }
}

fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    let size = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / size
}

fn autodiff_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut grad_err = 0.0f64;
    for case in 0..100u64 {
        let err = match case % 3 {
            0 => {
                let dim = rng.gen_range(1..=8);
                let hidden: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=12)).collect();
                let params = MlpParams::init(&layer_sizes_for(dim, &hidden), case).unwrap();
                let f = RandomMlp {
                    sizes: params.layer_sizes.clone(),
                    flat: params.to_flat(),
                };
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let g = grad(&f, &x).unwrap();
                let fd = finite_difference_gradient(|y| f.eval(y), &x, 1e-5).unwrap();
                max_rel_error(&g, &fd)
            }
            1 => {
                let n = rng.gen_range(2..=4);
                let s = random_state(&mut rng, n);
                let params = MlpParams::init(&layer_sizes_for(1, &[10, 10]), case).unwrap();
                let f = MclnnLagrangian::new(&params, &s.masses);
                let z = s.phase_vector();
                let g = grad(&f, &z).unwrap();
                let fd = finite_difference_gradient(|y| f.eval(y), &z, 1e-5).unwrap();
                max_rel_error(&g, &fd)
            }
            _ => {
                let kind = [SystemKind::LinearSpring, SystemKind::NonlinearSpring, SystemKind::Gravity]
                    [rng.gen_range(0..3)];
                let n = rng.gen_range(2..=4);
                let s = random_state(&mut rng, n);
                let spec = SystemSpec {
                    masses: s.masses.clone(),
                    ..SystemSpec::with_particles(kind, n)
                };
                let f = AnalyticLagrangian {
                    spec: &spec,
                    masses: &s.masses,
                };
                let z = s.phase_vector();
                let g = grad(&f, &z).unwrap();
                let fd = finite_difference_gradient(|y| f.eval(y), &z, 1e-5).unwrap();
                max_rel_error(&g, &fd)
            }
        };
        grad_err = grad_err.max(err);
    }

    let mut el_err = 0.0f64;
    for case in 0..30u64 {
        let n = 2 + (case as usize % 3);
        let s = random_state(&mut rng, n);
        let params = MlpParams::init(&layer_sizes_for(1, &[10, 10]), 100 + case).unwrap();
        let fast = el_acceleration_fixedke(&params, &s).unwrap();
        let slow = el_acceleration_general(&MclnnLagrangian::new(&params, &s.masses), &s).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            for k in 0..3 {
                el_err = el_err.max((a[k] - b[k]).abs() / (1.0 + a[k].abs()));
            }
        }
    }

    let mut rev_err = 0.0f64;
    for case in 0..30u64 {
        let s = random_state(&mut rng, 3);
        let params = MlpParams::init(&layer_sizes_for(1, &[10, 10]), 200 + case).unwrap();
        let field = |st: &ParticleState| el_acceleration_fixedke(&params, st);
        let fwd = velocity_verlet_step(&field, &s, 1e-3).unwrap();
        let mut flipped = fwd;
        flipped.velocities.iter_mut().for_each(|v| *v = scale(*v, -1.0));
        let mut back = velocity_verlet_step(&field, &flipped, 1e-3).unwrap();
        back.velocities.iter_mut().for_each(|v| *v = scale(*v, -1.0));
        for (a, b) in s.phase_vector().iter().zip(back.phase_vector()) {
            rev_err = rev_err.max((a - b).abs() / (1.0 + a.abs()));
        }
    }
    verdict(
        grad_err < 1e-4 && el_err <= 1e-10 && rev_err < 1e-12,
        format!(
            "grad vs FD {grad_err:.2e} (1e-4) over 100 functions, general vs fixed-KE {el_err:.2e} (1e-10), Verlet round trip {rev_err:.2e} (1e-12)"
        ),
    )
}

fn training(lab: &Lab) -> Verdict {
    let main = lab.linear();
    let loss = main.outcome.report.final_train_loss;
    let main_secs = main.outcome.report.wall_clock_seconds;

    let mut rows = Vec::new();
    for hidden in [vec![2, 2], vec![4, 4], vec![8, 8], vec![16, 16]] {
        let cfg = TrainConfig {
            hidden: hidden.clone(),
            epochs: MCLNN_EPOCHS,
            ..Default::default()
        };
        let out = train_mclnn(&main.data.trajectories, &cfg).expect("sweep run");
        log(&format!(
            "  sweep {:?}: train loss {:.3e} after {} epochs, {:.0} s",
            hidden,
            out.report.final_train_loss,
            out.report.epochs_run(),
            out.report.wall_clock_seconds
        ));
        rows.push((hidden, out.report.final_train_loss, out.report.wall_clock_seconds));
    }

    let narrow = rows[0].1;
    let ratio = rows[1..].iter().map(|r| narrow / r.1).fold(f64::INFINITY, f64::min);
    let slowest = rows.iter().map(|r| r.2).fold(main_secs, f64::max);
    let table: Vec<String> = rows.iter().map(|(h, l, _)| format!("{h:?} {l:.2e}")).collect();
    verdict(
        loss <= 1e-6 && ratio >= 10.0 && slowest < 900.0,
        format!(
            "[10, 10] after {} epochs: {loss:.2e} (1e-6); sweep {}; [2, 2] worse by >= {ratio:.1}x (10x); slowest run {slowest:.0} s (900 s)",
            main.outcome.report.epochs_run(),
            table.join(", ")
        ),
    )
}

fn report_line(name: &str, r: &ConservationReport) -> String {
    format!(
        "{name}: rel L MAE {:.3}, p MAE {:.2e}, L MAE {:.2e}",
        r.relative_lagrangian_mae(),
        r.mae.linear_momentum,
        r.mae.angular_momentum
    )
}

fn against_baseline(lab: &Lab) -> Verdict {
    let start = Instant::now();
    let pair = lab.linear();
    let spec = &pair.spec;
    let s0 = evaluation_state(spec, 0).unwrap();
    let d = DatasetConfig::default();
    let m = evaluate_forward(&pair.model(), spec, &s0, RECORDS, d.stride, d.dt).unwrap();
    let run_baseline = |b: &Baseline| {
        evaluate_forward(&b.model(), &b.spec, &s0, RECORDS, d.stride, d.dt).unwrap()
    };
    let first = run_baseline(lab.baseline(SystemKind::LinearSpring));
    let mclnn_p = m.mae.linear_momentum;
    let mut baseline_p = vec![first.mae.linear_momentum];
    let mut note = report_line("baseline", &first);
    if first.mae.linear_momentum < 10.0 * mclnn_p {
        for b in lab.extra_linear_baselines() {
            baseline_p.push(run_baseline(b).mae.linear_momentum);
        }
        let list: Vec<String> = baseline_p.iter().map(|p| format!("{p:.2e}")).collect();
        note = format!("{note}; 3-seed baseline p MAEs [{}]", list.join(", "));
    }
    baseline_p.sort_by(f64::total_cmp);
    let median = baseline_p[baseline_p.len() / 2];
    let rel = m.relative_lagrangian_mae();
    let momentum_ok = mclnn_p < 1e-6 && m.mae.angular_momentum < 1e-6;
    let ratio_ok = median >= 10.0 * mclnn_p;
    let secs = start.elapsed().as_secs_f64()
        + pair.outcome.report.wall_clock_seconds
        + lab.baseline(SystemKind::LinearSpring).outcome.report.wall_clock_seconds;
    verdict(
        rel < 0.05 && momentum_ok && ratio_ok && secs < 1800.0,
        format!(
            "{} (limits 0.05, 1e-6); {note}; baseline/mclnn p MAE {:.1e} (10x); {secs:.0} s incl. training",
            report_line("mclnn", &m),
            median / mclnn_p.max(f64::MIN_POSITIVE)
        ),
    )
}

fn generalization(lab: &Lab) -> (Verdict, f64) {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (pair, n) in [(lab.linear(), 6), (lab.gravity(), 8)] {
        let r = generalization_eval(&pair.model(), &pair.spec, n, 0, RECORDS).unwrap();
        let rel = r.relative_lagrangian_mae();
        let p = r.model.linear_momentum_drift();
        let l = r.model.angular_momentum_drift();
        pass &= r.len() == RECORDS && rel < 0.05 && p <= 1e-8 && l <= 1e-6;
        parts.push(format!(
            "{} {}->{n}: rel L MAE {rel:.3} (0.05), |dp| {p:.1e}, |dL| {l:.1e}",
            pair.spec.kind, pair.spec.n_particles
        ));
    }
    (verdict(pass, parts.join("; ")), start.elapsed().as_secs_f64())
}

fn interpretability(lab: &Lab) -> (Verdict, f64) {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for pair in [lab.linear(), lab.gravity()] {
        let range = pair.range();
        let curve = export_potential_curve(
            &pair.outcome.params,
            &pair.spec,
            0.5 * range.min(),
            1.5 * range.max(),
            400,
            &range,
        )
        .unwrap();
        let span = curve.analytic_in_range_span().unwrap();
        let ratio = curve.max_in_range_error().unwrap() / span;
        let outside = curve
            .rows
            .iter()
            .filter(|r| !r.in_range)
            .map(|r| (r.v_learned_shifted - r.v_analytic).abs())
            .fold(0.0f64, f64::max);
        pass &= ratio < 0.05;
        parts.push(format!(
            "{}: in-range error {ratio:.3} of span (0.05), outside range up to {:.2} of span",
            pair.spec.kind,
            outside / span
        ));
    }
    (verdict(pass, parts.join("; ")), start.elapsed().as_secs_f64())
}

fn force_fidelity(lab: &Lab) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [SystemKind::LinearSpring, SystemKind::NonlinearSpring, SystemKind::Gravity] {
        let b = lab.baseline(kind);
        let held = sample_acceleration_dataset(&b.spec, HELD_OUT_SAMPLES, EVAL_SEED_OFFSET).unwrap();
        let points = force_scatter(&b.model(), &held).unwrap();
        let x: Vec<f64> = points.iter().map(|p| p.truth).collect();
        let y: Vec<f64> = points.iter().map(|p| p.predicted).collect();
        let slope = least_squares_slope(&x, &y).unwrap();
        let secs = b.outcome.report.wall_clock_seconds;
        pass &= (0.9..=1.1).contains(&slope) && secs < 900.0;
        parts.push(format!("{kind}: slope {slope:.3} ({secs:.0} s)"));
    }
    verdict(pass, format!("{} (limits 0.9..1.1)", parts.join(", ")))
}

fn selected() -> Vec<u8> {
    match std::env::var("MCLNN_CRITERIA") {
        Ok(list) if !list.trim().is_empty() => list
            .split(',')
            .map(|x| x.trim().parse().expect("MCLNN_CRITERIA is a comma-separated list of numbers"))
            .collect(),
        _ => (1..=8).collect(),
    }
}

fn timed(v: Verdict, secs: f64, limit: f64) -> Verdict {
    verdict(v.pass && secs < limit, format!("{}; {secs:.1} s ({limit:.0} s)", v.detail))
}

fn main() {
    let lab = Lab::default();
    let wanted = selected();
    let mut results: Vec<(u8, &str, Verdict)> = Vec::new();
    for id in 1..=8u8 {
        if !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (name, v) = match id {
            1 => ("symmetry", timed(symmetry(), t.elapsed().as_secs_f64(), 10.0)),
            2 => {
                let (v, secs) = conservation(&lab);
                ("momentum conservation", timed(v, secs, 30.0))
            }
            3 => ("autodiff and integrator", timed(autodiff_suite(), t.elapsed().as_secs_f64(), 10.0)),
            4 => ("training reproduction", training(&lab)),
            5 => ("accuracy against the baseline", against_baseline(&lab)),
            6 => {
                let (v, secs) = generalization(&lab);
                ("generalization", timed(v, secs, 600.0))
            }
            7 => {
                let (v, secs) = interpretability(&lab);
                ("interpretability", timed(v, secs, 60.0))
            }
            _ => ("baseline force fidelity", force_fidelity(&lab)),
        };
        log(&format!(
            "criterion {id} [{}] {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        ));
        results.push((id, name, v));
    }

    log("acceptance summary:");
    for (id, name, v) in &results {
        log(&format!("  {id}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }));
    }
    if results.iter().any(|r| !r.2.pass) {
        std::process::exit(1);
    }
}
