//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits non-zero if
//! any fails. An argument filters criteria by number or name substring.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use jdnet_core::data::{load_manifest, load_png, Dataset, Image, PairPattern, RainSynthConfig};
use jdnet_core::gradcheck_suite::{registry, run_suite, CheckGroup, NETWORK_TOL};
use jdnet_core::loss::LossKind;
use jdnet_core::nn::{Ablation, AttentionConfig, Ctx, JdNet, NetConfig, ScaleAgg, SelfAttention, SelfCalibConv};
use jdnet_core::tensor::kernels::conv::{conv2d, ConvGeometry};
use jdnet_core::tensor::kernels::pool::avg_pool;
use jdnet_core::tensor::kernels::ssim::{ssim, ssim_per_item, SsimConfig};
use jdnet_core::tensor::kernels::upsample::upsample_bilinear;
use jdnet_core::train::{lr_at, train, Checkpoint, TrainConfig, Trainer};
use jdnet_core::{Graph, OpKind, ParamId, ParamStore, Shape};

/// Learning rate of the desk-scale overfit runs.
const OVERFIT_LR: f64 = 2e-3;
const OVERFIT_STEPS: u32 = 2000;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("shape and structure invariants", structure_invariants),
        ("overfit experiment", overfit_experiment),
        ("schedule conformance", schedule_conformance),
        ("ablation plumbing", ablation_plumbing),
        ("determinism", determinism),
        ("end-to-end cli", end_to_end_cli),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = (i + 1).to_string();
        if !filters.is_empty() && !filters.iter().any(|f| *f == number || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!v.passed);
        println!(
            "[{}] {number}. {name}: {} ({:.1}s)",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let report = run_suite(CheckGroup::All, None, 0).expect("suite runs");
    let elapsed = start.elapsed().as_secs_f64();
    let cases = registry();
    let covered: BTreeSet<&str> = cases.iter().flat_map(|c| c.covers.iter().map(|k| k.name())).collect();
    let all_ops = covered.len() == OpKind::DIFFERENTIABLE.len();
    let modules = ["scale_aggregation", "self_calibrated_conv", "self_attention"]
        .iter()
        .all(|m| cases.iter().any(|c| c.name == *m));
    let shapes_ok = cases.iter().filter(|c| c.group != CheckGroup::Network).all(|c| c.shapes >= 3);
    let network = report.outcomes.iter().filter(|o| o.group == CheckGroup::Network).all(|o| o.tol <= NETWORK_TOL);
    let worst = report.per_case().into_iter().map(|c| c.1 / c.2).fold(0.0, f64::max);
    let failing: Vec<&str> = report.per_case().into_iter().filter(|c| !c.3).map(|c| c.0).collect();
    verdict(
        report.passed() && all_ops && modules && shapes_ok && network && elapsed < 120.0,
        format!(
            "{} cases / {} shape checks, {}/{} operators covered, worst error {:.2} of tolerance, {elapsed:.1}s{}",
            cases.len(),
            report.outcomes.len(),
            covered.len(),
            OpKind::DIFFERENTIABLE.len(),
            worst,
            if failing.is_empty() { String::new() } else { format!(", failing: {}", failing.join(", ")) }
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut r = rng(100);
    let mut errs: Vec<(&str, f64)> = Vec::new();

    let x = random(Shape::new(2, 3, 7, 6), &mut r);
    let w = random(Shape::new(4, 3, 3, 3), &mut r);
    let b = random(Shape::vector(4), &mut r);
    let mut e = 0.0f64;
    for (stride, pad) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
        let got = conv2d(&x, &w, Some(&b), ConvGeometry::new(stride, pad)).unwrap();
        e = e.max(max_rel(got.data(), conv_ref(&x, &w, Some(&b), stride, pad).data()));
    }
    errs.push(("conv2d", e));

    let x = random(Shape::new(2, 3, 8, 12), &mut r);
    errs.push(("avg_pool", max_rel(avg_pool(&x, 4).unwrap().data(), pool_ref(&x, 4).data())));
    let x = random(Shape::new(2, 3, 4, 5), &mut r);
    errs.push(("upsample", max_rel(upsample_bilinear(&x, 8, 10).unwrap().data(), bilinear_ref(&x, 8, 10).data())));

    let mut store = ParamStore::new();
    let att = SelfAttention::new(&mut store, &mut r, "att", 8, AttentionConfig::default()).unwrap();
    randomize_offsets(&mut store, &mut r);
    let x = random(Shape::new(1, 8, 5, 5), &mut r);
    let got = eval(&mut store, &x, |c, v| att.aggregate(c, v).unwrap());
    errs.push(("attention", max_rel(got.data(), attention_ref(&att, &store, &x).data())));

    let mut store = ParamStore::new();
    let sc = SelfCalibConv::new(&mut store, &mut r, "sc", 8, 2).unwrap();
    randomize_offsets(&mut store, &mut r);
    let x = random(Shape::new(2, 8, 8, 8), &mut r);
    let got = eval(&mut store, &x, |c, v| sc.forward(c, v).unwrap());
    errs.push(("sc_conv", max_rel(got.data(), sc_conv_ref(&sc, &store, &x).data())));

    let a = random_unit(Shape::new(2, 3, 16, 14), &mut r);
    let b = random_unit(Shape::new(2, 3, 16, 14), &mut r);
    errs.push(("ssim", max_rel(&ssim_per_item(&a, &b, &SsimConfig::default()).unwrap(), &ssim_ref(&a, &b))));

    let passed = errs.iter().all(|(_, e)| *e <= 1e-5);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(passed, format!("max relative error: {detail} (limit 1e-5)"))
}

fn grad_norms(store: &mut ParamStore<f64>, x: &jdnet_core::Tensor<f64>, f: impl FnOnce(&mut Ctx<'_, f64>, jdnet_core::Var) -> jdnet_core::Var) -> Vec<(ParamId, f64)> {
    let mut g = Graph::new();
    let loss = {
        let mut ctx = Ctx::new(&mut g, store, true);
        let v = ctx.graph.input(x.clone());
        f(&mut ctx, v)
    };
    let grads = g.backward(loss).unwrap();
    store
        .ids()
        .map(|id| {
            let n = grads.leaves().iter().filter(|l| l.param == Some(id)).flat_map(|l| l.grad.iter()).map(|v| v.abs()).sum();
            (id, n)
        })
        .collect()
}

fn structure_invariants() -> Verdict {
    let mut r = rng(101);
    let mut notes = Vec::new();

    let mut store = ParamStore::new();
    let sa = ScaleAgg::new(&mut store, &mut r, "sa", 8, 2).unwrap();
    let sc = SelfCalibConv::new(&mut store, &mut r, "sc", 8, 2).unwrap();
    let att = SelfAttention::new(&mut store, &mut r, "att", 8, AttentionConfig::default()).unwrap();
    let (net, mut net_store) = JdNet::build::<f64, _>(&mut r, NetConfig::tiny()).unwrap();
    let mut shapes_ok = true;
    for shape in [Shape::new(1, 8, 8, 8), Shape::new(2, 8, 12, 16)] {
        let x = random(shape, &mut r);
        shapes_ok &= eval(&mut store, &x, |c, v| sa.forward(c, v).unwrap()).shape() == shape;
        shapes_ok &= eval(&mut store, &x, |c, v| sc.forward(c, v).unwrap()).shape() == shape;
        shapes_ok &= eval(&mut store, &x, |c, v| att.forward(c, v).unwrap()).shape() == shape;
        let o = random_unit(Shape::new(shape.n, 3, shape.h, shape.w), &mut r);
        shapes_ok &= eval(&mut net_store, &o, |c, v| net.forward(c, v).unwrap().b_hat).shape() == o.shape();
    }
    notes.push(format!("shapes {}", if shapes_ok { "preserved" } else { "CHANGED" }));

    let x = random(Shape::new(2, 8, 9, 7), &mut r);
    let a = eval(&mut store, &x, |c, v| att.weights(c, v).unwrap());
    let p = att.cfg.footprint * att.cfg.footprint;
    let mut sum_err = 0.0f64;
    for n in 0..2 {
        for g in 0..att.groups() {
            for y in 0..9 {
                for xx in 0..7 {
                    let total: f64 = (0..p).map(|q| a.get(n, g * p + q, y, xx)).sum();
                    sum_err = sum_err.max((total - 1.0).abs());
                }
            }
        }
    }
    let weights_ok = sum_err <= 1e-6 && a.data().iter().all(|&v| v >= 0.0);
    notes.push(format!("attention weight sums within {sum_err:.1e} of 1"));

    let calibrated: BTreeSet<ParamId> = sc.calibrated_params().into_iter().collect();
    let plain: BTreeSet<ParamId> = sc.plain_params().into_iter().collect();
    let mut sparsity_ok = true;
    let x = random(Shape::new(2, 8, 8, 8), &mut r);
    for ((lo, hi), live, dead) in [((0, 4), &calibrated, &plain), ((4, 8), &plain, &calibrated)] {
        let norms = grad_norms(&mut store, &x, |c, v| {
            let y = sc.forward(c, v).unwrap();
            let part = c.graph.slice_channels(y, lo, hi).unwrap();
            c.graph.sum(part)
        });
        for (id, norm) in norms {
            if dead.contains(&id) {
                sparsity_ok &= norm == 0.0;
            } else if live.contains(&id) {
                sparsity_ok &= norm > 0.0;
            }
        }
    }
    notes.push(format!("channel-split gradient sparsity {}", if sparsity_ok { "holds" } else { "VIOLATED" }));

    let c = net.cfg.channels;
    let widths: Vec<usize> = net.units.iter().map(|u| u.in_width()).collect();
    let widths_ok = widths.iter().enumerate().all(|(k, &w)| w == k * c + c);
    notes.push(format!("compress widths {widths:?}"));

    verdict(shapes_ok && weights_ok && sparsity_ok && widths_ok, notes.join(", "))
}

fn overfit_data() -> Dataset {
    Dataset::synthetic(8, 64, 64, &RainSynthConfig { seed: 42, ..Default::default() }).unwrap()
}

fn overfit_config(loss: LossKind, ablation: Ablation, epochs: u32) -> TrainConfig {
    TrainConfig {
        epochs,
        base_lr: OVERFIT_LR,
        milestones: TrainConfig::scaled_milestones(epochs),
        loss,
        crop: 64,
        batch_size: 8,
        seed: 1,
        eval_every: 25,
        eval_sample: 8,
        net: NetConfig { ablation, ..NetConfig::tiny() },
        ..Default::default()
    }
}

/// Trains until `done` holds after an epoch or the step budget is spent; returns the per-epoch losses.
fn overfit(t: &mut Trainer, data: &Dataset, mut done: impl FnMut(&jdnet_core::train::EpochLog) -> bool) -> Vec<f64> {
    let mut losses = Vec::new();
    train(t, data, None, |log| {
        losses.push(log.loss);
        !done(log)
    })
    .unwrap();
    losses
}

fn overfit_experiment() -> Verdict {
    let data = overfit_data();
    let baseline = {
        let mut t = Trainer::new(overfit_config(LossKind::NegSsim, Ablation::R3, OVERFIT_STEPS)).unwrap();
        t.quality(&data.pairs).unwrap()
    };

    let mut t = Trainer::new(overfit_config(LossKind::NegSsim, Ablation::R3, OVERFIT_STEPS)).unwrap();
    let losses = overfit(&mut t, &data, |l| l.ssim.is_some_and(|s| s >= 0.90) && l.psnr.is_some_and(|p| p >= 28.0));
    let q = t.quality(&data.pairs).unwrap();
    let steps = t.adam.t;
    let quality_ok = q.ssim >= 0.90 && q.psnr >= 28.0 && steps <= OVERFIT_STEPS as u64;

    let blocks: Vec<f64> = losses.chunks_exact(20).map(|c| c.iter().sum::<f64>() / 20.0).collect();
    let rises = blocks.windows(2).filter(|w| w[1] > w[0]).count();

    let mut m = Trainer::new(overfit_config(LossKind::Mse, Ablation::R3, OVERFIT_STEPS)).unwrap();
    let mse_losses = overfit(&mut m, &data, |l| l.loss < 1e-3);
    let mse_final = mse_losses.last().copied().unwrap_or(f64::NAN);
    let mse_ok = mse_final < 1e-3;

    verdict(
        quality_ok && rises == 0 && mse_ok,
        format!(
            "neg-SSIM: SSIM {:.4} PSNR {:.2} dB after {steps} steps (rainy input {:.4} / {:.2} dB), \
             {rises} rises in {} 20-step loss means; MSE loss {mse_final:.2e} after {} steps",
            q.ssim,
            q.psnr,
            baseline.ssim,
            baseline.psnr,
            blocks.len(),
            m.adam.t
        ),
    )
}

fn schedule_conformance() -> Verdict {
    let cfg = TrainConfig::default();
    let mut wrong = Vec::new();
    for epoch in 1..=1000u32 {
        let want = match epoch {
            1..=600 => 5e-4,
            601..=800 => 5e-5,
            _ => 5e-6,
        };
        let got = lr_at(epoch, &cfg).unwrap();
        if got != want {
            wrong.push(format!("epoch {epoch}: {got:e}"));
        }
    }
    verdict(
        wrong.is_empty(),
        if wrong.is_empty() {
            "1000/1000 epochs exact (5e-4, 5e-5, 5e-6)".to_string()
        } else {
            format!("{} epochs wrong, first {}", wrong.len(), wrong[0])
        },
    )
}

fn ablation_plumbing() -> Verdict {
    let names = |ablation| -> BTreeSet<String> {
        let (_, store) = JdNet::build::<f32, _>(&mut rng(102), NetConfig { ablation, ..NetConfig::tiny() }).unwrap();
        store.names().map(str::to_owned).collect()
    };
    let (r1, r2, r3) = (names(Ablation::R1), names(Ablation::R2), names(Ablation::R3));
    let sc_extra: Vec<&String> = r2.difference(&r1).collect();
    let att_extra: Vec<&String> = r3.difference(&r2).collect();
    let diff_ok = r1.is_subset(&r2)
        && r2.is_subset(&r3)
        && !sc_extra.is_empty()
        && sc_extra.iter().all(|n| n.contains(".sc_conv."))
        && !att_extra.is_empty()
        && att_extra.iter().all(|n| n.contains(".attention."));

    let data = overfit_data();
    let mut step_ok = true;
    let mut ssim = Vec::new();
    for ablation in Ablation::ALL {
        let epochs = if ablation == Ablation::R3 { 1 } else { 300 };
        let mut t = Trainer::new(overfit_config(LossKind::NegSsim, ablation, epochs)).unwrap();
        let losses = overfit(&mut t, &data, |_| false);
        step_ok &= losses.len() == epochs as usize && losses.iter().all(|l| l.is_finite());
        if ablation != Ablation::R3 {
            ssim.push(t.quality(&data.pairs).unwrap().ssim);
        }
    }
    verdict(
        diff_ok && step_ok,
        format!(
            "R2 adds {} sc_conv tensors, R3 adds {} attention tensors; informational after 300 steps: \
             R1 SSIM {:.4}, R2 SSIM {:.4} (R2 > R1: {})",
            sc_extra.len(),
            att_extra.len(),
            ssim[0],
            ssim[1],
            ssim[1] > ssim[0]
        ),
    )
}

fn determinism() -> Verdict {
    let data = overfit_data();
    let epoch_one = || {
        let mut t = Trainer::new(overfit_config(LossKind::NegSsim, Ablation::R3, 1)).unwrap();
        train(&mut t, &data, None, |_| true).unwrap();
        t.checkpoint().encode().unwrap()
    };
    let (a, b) = (epoch_one(), epoch_one());
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = (dir.path().join("a.jdn"), dir.path().join("b.jdn"));
    std::fs::write(&p, &a).unwrap();
    Checkpoint::load(&p).unwrap().save(&q).unwrap();
    let round_trip = std::fs::read(&q).unwrap() == a;
    verdict(
        a == b && round_trip,
        format!(
            "epoch-1 checkpoints {} ({} bytes), save/load/save {}",
            if a == b { "bit-identical" } else { "DIFFER" },
            a.len(),
            if round_trip { "byte-identical" } else { "DIFFERS" }
        ),
    )
}

fn jdnet(args: &[&str]) -> (bool, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_jdnet")).args(args).output().expect("spawn jdnet");
    (o.status.success(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn image_ssim(a: &Image, b: &Image) -> f64 {
    ssim(&a.to_tensor::<f64>(), &b.to_tensor::<f64>(), &SsimConfig::default()).unwrap()
}

fn well_formed_csv(path: &Path, ids: &[String]) -> bool {
    let Ok(text) = std::fs::read_to_string(path) else { return false };
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    rows.len() == ids.len() + 2
        && rows[0] == ["id", "psnr", "ssim"]
        && rows[1..].iter().all(|r| r.len() == 3 && r[1..].iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)))
        && rows[1..=ids.len()].iter().zip(ids).all(|(r, id)| r[0] == id)
        && rows[ids.len() + 1][0] == "mean"
}

fn end_to_end_cli() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let (data, run, out) = (root.path().join("data"), root.path().join("run"), root.path().join("derained"));
    let report = root.path().join("report.csv");
    let lr = OVERFIT_LR.to_string();
    let steps: [(&str, Vec<String>); 4] = [
        ("synth", ["synth", "--procedural", "8", "--size", "64", "--seed", "42", "--out-dir", &s(&data)].map(String::from).to_vec()),
        (
            "train",
            [
                "train", "--data-root", &s(&data), "--out", &s(&run), "--units", "3", "--channels", "8", "--scales", "2",
                "--pool-rate", "2", "--epochs", "200", "--lr", &lr, "--crop", "64", "--batch-size", "8", "--eval-every", "50",
            ]
            .map(String::from)
            .to_vec(),
        ),
        (
            "eval",
            ["eval", "--checkpoint", &s(&run.join("last.jdn")), "--data-root", &s(&data), "--report", &s(&report)]
                .map(String::from)
                .to_vec(),
        ),
        (
            "derain",
            ["derain", "--checkpoint", &s(&run.join("last.jdn")), "--in", &s(&data), "--out", &s(&out)].map(String::from).to_vec(),
        ),
    ];
    for (name, args) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (ok, err) = jdnet(&args);
        if !ok {
            return verdict(false, format!("`jdnet {name}` failed: {}", err.trim()));
        }
    }
    let manifest = load_manifest(&data, &PairPattern::default()).unwrap();
    let ids: Vec<String> = manifest.pairs.iter().map(|p| p.id.clone()).collect();
    let csv_ok = well_formed_csv(&report, &ids);
    let (mut before, mut after) = (0.0, 0.0);
    for p in &manifest.pairs {
        let clean = load_png(&p.clean).unwrap();
        let derained = load_png(&out.join(p.rainy.file_name().unwrap())).unwrap();
        before += image_ssim(&load_png(&p.rainy).unwrap(), &clean);
        after += image_ssim(&derained, &clean);
    }
    let n = manifest.len() as f64;
    let (before, after) = (before / n, after / n);
    verdict(
        csv_ok && after > before,
        format!(
            "synth/train/eval/derain exit 0, report {}, mean SSIM vs clean: rainy {before:.4}, derained {after:.4}",
            if csv_ok { "well-formed" } else { "MALFORMED" }
        ),
    )
}
