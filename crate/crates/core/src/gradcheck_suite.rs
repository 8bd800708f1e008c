//! Registry of 64-bit finite-difference checks covering every differentiable
//! operator, the three feature modules and a small end-to-end network.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{AttentionConfig, Ctx, JdNet, NetConfig, ScaleAgg, SelfAttention, SelfCalibConv};
use crate::tensor::gradcheck::{GradCheck, GradCheckReport};
use crate::tensor::kernels::attention::Footprint;
use crate::tensor::kernels::conv::ConvGeometry;
use crate::tensor::kernels::norm::RunningStats;
use crate::tensor::kernels::ssim::SsimConfig;
use crate::tensor::{Graph, OpKind, ParamStore, Shape, Tensor, Var};

pub const DEFAULT_TOL: f64 = 1e-4;
pub const NETWORK_TOL: f64 = 1e-3;
pub const STEP: f64 = 1e-3;
/// Random shapes per operator or module.
pub const SHAPES_PER_CASE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckGroup {
    All,
    /// Element-wise, pooling, resampling, normalisation and reduction operators.
    Ops,
    Conv,
    Attention,
    ScaleAgg,
    ScConv,
    Ssim,
    Network,
}

impl FromStr for CheckGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => CheckGroup::All,
            "ops" => CheckGroup::Ops,
            "conv" => CheckGroup::Conv,
            "attention" => CheckGroup::Attention,
            "scaleagg" => CheckGroup::ScaleAgg,
            "scconv" => CheckGroup::ScConv,
            "ssim" => CheckGroup::Ssim,
            "network" => CheckGroup::Network,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown gradcheck module `{s}` (all|ops|conv|attention|scaleagg|scconv|ssim|network)"
                )))
            }
        })
    }
}

impl fmt::Display for CheckGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckGroup::All => "all",
            CheckGroup::Ops => "ops",
            CheckGroup::Conv => "conv",
            CheckGroup::Attention => "attention",
            CheckGroup::ScaleAgg => "scaleagg",
            CheckGroup::ScConv => "scconv",
            CheckGroup::Ssim => "ssim",
            CheckGroup::Network => "network",
        })
    }
}

type Runner = fn(&GradCheck, &mut ChaCha8Rng) -> Result<(String, GradCheckReport)>;

/// One registered check: an operator or module exercised on several random shapes.
pub struct CheckCase {
    pub name: &'static str,
    pub group: CheckGroup,
    /// Tape operators whose adjoint this case verifies directly.
    pub covers: &'static [OpKind],
    pub shapes: usize,
    pub default_tol: f64,
    run: Runner,
}

/// Outcome of one case on one shape.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub case: &'static str,
    pub group: CheckGroup,
    pub shape: String,
    pub probes: usize,
    /// Probes re-evaluated with a smaller step because `±h` crossed a kink.
    pub restepped: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.outcomes.is_empty() && self.outcomes.iter().all(|o| o.passed)
    }

    /// `(case, worst error, tol, passed)` aggregated over shapes.
    pub fn per_case(&self) -> Vec<(&'static str, f64, f64, bool)> {
        let mut out: Vec<(&'static str, f64, f64, bool)> = Vec::new();
        for o in &self.outcomes {
            match out.iter_mut().find(|e| e.0 == o.case) {
                Some(e) => {
                    e.1 = e.1.max(o.max_rel_error);
                    e.3 &= o.passed;
                }
                None => out.push((o.case, o.max_rel_error, o.tol, o.passed)),
            }
        }
        out
    }
}

impl CheckCase {
    pub fn in_group(&self, group: CheckGroup) -> bool {
        group == CheckGroup::All || group == self.group
    }

    /// Full per-probe reports for every shape of this case. `tol` overrides the case default.
    pub fn reports(&self, tol: Option<f64>, seed: u64) -> Result<Vec<GradCheckReport>> {
        let checker = GradCheck::new(STEP, tol.unwrap_or(self.default_tol));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(self.name));
        (0..self.shapes).map(|_| (self.run)(&checker, &mut rng).map(|(_, r)| r)).collect()
    }

    pub fn run(&self, tol: Option<f64>, seed: u64) -> Result<Vec<CheckOutcome>> {
        Ok(self
            .reports(tol, seed)?
            .into_iter()
            .map(|report| CheckOutcome {
                case: self.name,
                group: self.group,
                shape: report.label.clone(),
                probes: report.probes.len(),
                restepped: report.restepped(),
                max_rel_error: report.max_rel_error(),
                tol: report.tol,
                passed: report.passed(),
            })
            .collect())
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Every registered check.
pub fn registry() -> Vec<CheckCase> {
    use CheckGroup as G;
    use OpKind as K;
    let case = |name, group, covers, run| CheckCase {
        name,
        group,
        covers,
        shapes: SHAPES_PER_CASE,
        default_tol: DEFAULT_TOL,
        run,
    };
    vec![
        case("conv2d", G::Conv, &[K::Conv2d], check_conv2d as Runner),
        case("avg_pool", G::Ops, &[K::AvgPool], check_avg_pool),
        case("upsample_bilinear", G::Ops, &[K::UpsampleBilinear], check_upsample),
        case("leaky_relu", G::Ops, &[K::LeakyRelu], check_leaky_relu),
        case("sigmoid", G::Ops, &[K::Sigmoid], check_sigmoid),
        case("batch_norm", G::Ops, &[K::BatchNorm], check_batch_norm),
        case("concat_channels", G::Ops, &[K::ConcatChannels], check_concat),
        case("slice_channels", G::Ops, &[K::SliceChannels], check_slice),
        case("add", G::Ops, &[K::Add], check_add),
        case("sub", G::Ops, &[K::Sub], check_sub),
        case("hadamard", G::Ops, &[K::Hadamard], check_hadamard),
        case("scale", G::Ops, &[K::Scale], check_scale),
        case("reshape", G::Ops, &[K::Reshape], check_reshape),
        case("sum", G::Ops, &[K::Sum], check_sum),
        case("mean", G::Ops, &[K::Mean], check_mean),
        case("square", G::Ops, &[K::Square], check_square),
        case("abs", G::Ops, &[K::Abs], check_abs),
        case("softmax_over_positions", G::Attention, &[K::SoftmaxOverPositions], check_softmax),
        case("pairwise_logits", G::Attention, &[K::PairwiseLogits], check_pairwise_logits),
        case("footprint_aggregate", G::Attention, &[K::FootprintAggregate], check_footprint_aggregate),
        case("self_attention", G::Attention, &[], check_self_attention),
        case("scale_aggregation", G::ScaleAgg, &[], check_scale_agg),
        case("self_calibrated_conv", G::ScConv, &[], check_sc_conv),
        case("ssim", G::Ssim, &[K::Ssim], check_ssim),
        CheckCase {
            name: "network",
            group: G::Network,
            covers: &[],
            shapes: 1,
            default_tol: NETWORK_TOL,
            run: check_network,
        },
    ]
}

/// Runs all cases in `group`.
pub fn run_suite(group: CheckGroup, tol: Option<f64>, seed: u64) -> Result<SuiteReport> {
    let mut outcomes = Vec::new();
    for case in registry().iter().filter(|c| c.in_group(group)) {
        outcomes.extend(case.run(tol, seed)?);
    }
    Ok(SuiteReport { outcomes })
}

// ---------------------------------------------------------------------------
// helpers

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn rand_tensor(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    Tensor::from_fn(s, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for operators with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    Tensor::from_fn(s, |_, _, _, _| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

fn unit_interval(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    Tensor::from_fn(s, |_, _, _, _| rng.random_range(0.0..1.0))
}

/// `Σ r ⊙ y` with a fixed random `r`, reducing any output to a scalar.
fn project(g: &mut Graph<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = g.leaf(r.clone(), false);
    let p = g.mul(y, rv)?;
    Ok(g.sum(p))
}

fn projection(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    rand_tensor(rng, s)
}

fn shape_str(shapes: &[Shape]) -> String {
    shapes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
}

fn random_shape(rng: &mut ChaCha8Rng, c_max: usize, hw_max: usize) -> Shape {
    Shape::new(dim(rng, 1, 2), dim(rng, 1, c_max), dim(rng, 2, hw_max), dim(rng, 2, hw_max))
}

/// Checks a single-input operator whose output shape is known in advance.
fn unary(
    gc: &GradCheck,
    rng: &mut ChaCha8Rng,
    x: Tensor<f64>,
    out: Shape,
    op: fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> Result<(String, GradCheckReport)> {
    let r = projection(rng, out);
    let label = shape_str(&[x.shape()]);
    let report = gc.inputs(&label, &[x], |g, v| {
        let y = op(g, v[0])?;
        project(g, y, &r)
    })?;
    Ok((label, report))
}

// ---------------------------------------------------------------------------
// operators

fn check_conv2d(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let k = if rng.random_bool(0.7) { 3 } else { 1 };
    let geom = ConvGeometry::new(dim(rng, 1, 2), dim(rng, 0, 1));
    let xs = Shape::new(dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 3, 6), dim(rng, 3, 6));
    let ws = Shape::new(dim(rng, 1, 3), xs.c, k, k);
    let x = rand_tensor(rng, xs);
    let w = rand_tensor(rng, ws);
    let b = rand_tensor(rng, Shape::vector(ws.n));
    let out = crate::tensor::kernels::conv::output_shape(xs, ws, geom)?;
    let r = projection(rng, out);
    let label = format!("{} {} s{} p{}", xs, ws, geom.stride, geom.padding);
    let report = gc.inputs(&label, &[x, w, b], |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), geom)?;
        project(g, y, &r)
    })?;
    Ok((label, report))
}

fn check_avg_pool(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let r = dim(rng, 1, 3);
    let s = Shape::new(dim(rng, 1, 2), dim(rng, 1, 3), r * dim(rng, 1, 3), r * dim(rng, 1, 3));
    let x = rand_tensor(rng, s);
    let out = Shape::new(s.n, s.c, s.h / r, s.w / r);
    let proj = projection(rng, out);
    let label = format!("{s} r{r}");
    let report = gc.inputs(&label, &[x], |g, v| {
        let y = g.avg_pool(v[0], r)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_upsample(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let (oh, ow) = (s.h + dim(rng, 0, 5), s.w + dim(rng, 0, 5));
    let x = rand_tensor(rng, s);
    let proj = projection(rng, Shape::new(s.n, s.c, oh, ow));
    let label = format!("{s} → {oh}×{ow}");
    let report = gc.inputs(&label, &[x], |g, v| {
        let y = g.upsample_bilinear(v[0], oh, ow)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_leaky_relu(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 5);
    let x = away_from_zero(rng, s);
    unary(gc, rng, x, s, |g, v| Ok(g.leaky_relu(v, 0.2)))
}

fn check_sigmoid(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 5);
    let x = rand_tensor(rng, s).map(|v| 3.0 * v);
    unary(gc, rng, x, s, |g, v| Ok(g.sigmoid(v)))
}

fn check_batch_norm(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = Shape::new(dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 2, 4), dim(rng, 2, 4));
    let x = rand_tensor(rng, s);
    let scale = rand_tensor(rng, Shape::vector(s.c));
    let shift = rand_tensor(rng, Shape::vector(s.c));
    let proj = projection(rng, s);
    let label = s.to_string();
    let report = gc.inputs(&label, &[x, scale, shift], |g, v| {
        let (mut mean, mut var) = (vec![0.0; s.c], vec![1.0; s.c]);
        let running = RunningStats { mean: &mut mean, var: &mut var, momentum: 0.1 };
        let y = g.batch_norm(v[0], v[1], v[2], running, 1e-5, true)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_concat(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let base = random_shape(rng, 1, 4);
    let parts: Vec<Shape> = (0..dim(rng, 1, 3)).map(|_| Shape { c: dim(rng, 1, 3), ..base }).collect();
    let inputs: Vec<Tensor<f64>> = parts.iter().map(|&s| rand_tensor(rng, s)).collect();
    let out = Shape { c: parts.iter().map(|s| s.c).sum(), ..base };
    let proj = projection(rng, out);
    let label = shape_str(&parts);
    let report = gc.inputs(&label, &inputs, |g, v| {
        let y = g.concat_channels(v)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_slice(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = Shape { c: dim(rng, 2, 5), ..random_shape(rng, 1, 4) };
    let start = dim(rng, 0, s.c - 1);
    let end = dim(rng, start + 1, s.c);
    let x = rand_tensor(rng, s);
    let proj = projection(rng, Shape { c: end - start, ..s });
    let label = format!("{s} [{start}..{end})");
    let report = gc.inputs(&label, &[x], |g, v| {
        let y = g.slice_channels(v[0], start, end)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn binary(
    gc: &GradCheck,
    rng: &mut ChaCha8Rng,
    op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let (a, b) = (rand_tensor(rng, s), rand_tensor(rng, s));
    let proj = projection(rng, s);
    let label = s.to_string();
    let report = gc.inputs(&label, &[a, b], |g, v| {
        let y = op(g, v[0], v[1])?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_add(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    binary(gc, rng, |g, a, b| g.add(a, b))
}

fn check_sub(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    binary(gc, rng, |g, a, b| g.sub(a, b))
}

fn check_hadamard(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    binary(gc, rng, |g, a, b| g.mul(a, b))
}

fn check_scale(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let x = rand_tensor(rng, s);
    unary(gc, rng, x, s, |g, v| Ok(g.scale(v, -1.75)))
}

fn check_reshape(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let x = rand_tensor(rng, s);
    let flat = Shape::new(1, 1, 1, s.numel());
    let proj = projection(rng, flat);
    let label = format!("{s} → {flat}");
    let report = gc.inputs(&label, &[x], |g, v| {
        let y = g.reshape(v[0], flat)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_sum(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let x = rand_tensor(rng, s);
    unary(gc, rng, x, Shape::scalar(), |g, v| Ok(g.sum(v)))
}

fn check_mean(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let x = rand_tensor(rng, s);
    unary(gc, rng, x, Shape::scalar(), |g, v| Ok(g.mean(v)))
}

fn check_square(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let x = rand_tensor(rng, s);
    unary(gc, rng, x, s, |g, v| Ok(g.square(v)))
}

fn check_abs(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = random_shape(rng, 3, 4);
    let x = away_from_zero(rng, s);
    unary(gc, rng, x, s, |g, v| Ok(g.abs(v)))
}

fn check_softmax(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let groups = dim(rng, 1, 2);
    let (h, w) = (dim(rng, 2, 4), dim(rng, 2, 4));
    let masked = rng.random_bool(0.5);
    let (positions, mask) = if masked {
        let k = if h.min(w) >= 3 && rng.random_bool(0.5) { 7 } else { 3 };
        let fp = Footprint::new(k, h, w)?;
        (fp.positions(), Some(fp))
    } else {
        (dim(rng, 1, 49), None)
    };
    let s = Shape::new(dim(rng, 1, 2), groups * positions, h, w);
    let x = rand_tensor(rng, s).map(|v| 2.0 * v);
    let proj = projection(rng, s);
    let label = format!("{s} groups {groups} positions {positions}{}", if masked { " masked" } else { "" });
    let report = gc.inputs(&label, &[x], |g, v| {
        let y = g.softmax_over_positions(v[0], groups, mask)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_pairwise_logits(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = Shape::new(dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 5), dim(rng, 2, 5));
    let k = if s.h.min(s.w) >= 3 { 7 } else { 3 };
    let (hidden, groups) = (dim(rng, 1, 3), dim(rng, 1, 2));
    let with_b2 = rng.random_bool(0.5);
    let phi = rand_tensor(rng, s);
    let psi = rand_tensor(rng, s);
    let w1 = rand_tensor(rng, Shape::new(hidden, s.c, 1, 1));
    let b1 = rand_tensor(rng, Shape::vector(hidden));
    let w2 = rand_tensor(rng, Shape::new(groups, hidden, 1, 1));
    let b2 = rand_tensor(rng, Shape::vector(groups));
    let out = Shape::new(s.n, groups * k * k, s.h, s.w);
    let proj = projection(rng, out);
    let label = format!("{s} k{k} hidden {hidden} groups {groups}");
    let mut inputs = vec![phi, psi, w1, b1, w2];
    if with_b2 {
        inputs.push(b2);
    }
    let report = gc.inputs(&label, &inputs, |g, v| {
        let y = g.pairwise_logits(v[0], v[1], v[2], v[3], v[4], v.get(5).copied(), 0.2, k)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_footprint_aggregate(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let (groups, share) = (dim(rng, 1, 2), dim(rng, 1, 2));
    let s = Shape::new(dim(rng, 1, 2), groups * share, dim(rng, 2, 5), dim(rng, 2, 5));
    let k = if s.h.min(s.w) >= 3 { 7 } else { 3 };
    let weights = rand_tensor(rng, Shape::new(s.n, groups * k * k, s.h, s.w));
    let values = rand_tensor(rng, s);
    let proj = projection(rng, s);
    let label = format!("{s} k{k} share {share}");
    let report = gc.inputs(&label, &[weights, values], |g, v| {
        let y = g.footprint_aggregate(v[0], v[1], k, share)?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

fn check_ssim(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let s = Shape::new(dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 11, 16), dim(rng, 11, 16));
    let a = unit_interval(rng, s);
    let b = unit_interval(rng, s);
    let label = s.to_string();
    let cfg = SsimConfig::default();
    let report = gc.inputs(&label, &[a, b], |g, v| g.ssim(v[0], v[1], cfg))?;
    Ok((label, report))
}

// ---------------------------------------------------------------------------
// modules

fn module_check<M>(
    gc: &GradCheck,
    rng: &mut ChaCha8Rng,
    label: String,
    s: Shape,
    build: impl FnOnce(&mut ParamStore<f64>, &mut ChaCha8Rng) -> Result<M>,
    forward: impl Fn(&M, &mut Ctx<'_, f64>, Var) -> Result<Var>,
) -> Result<(String, GradCheckReport)> {
    let mut store = ParamStore::new();
    let module = build(&mut store, rng)?;
    randomize_biases(&mut store, rng);
    let x = rand_tensor(rng, s);
    let proj = projection(rng, s);
    let report = gc.with_params(&label, &mut store, &[x], |g, store, v| {
        let y = forward(&module, &mut Ctx::new(g, store, true), v[0])?;
        project(g, y, &proj)
    })?;
    Ok((label, report))
}

/// Zero biases make every derivative with respect to them degenerate in the same way;
/// random values give the check more to bite on.
fn randomize_biases(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let e = store.entry(id);
        if e.trainable && (e.name.ends_with(".bias") || e.name.ends_with(".shift")) {
            let len = e.tensor.len();
            let vals: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
            store.set_values(id, &vals).expect("same length");
        }
    }
}

fn check_self_attention(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let reduction = dim(rng, 1, 2);
    let s = Shape::new(dim(rng, 1, 2), reduction * dim(rng, 1, 2) * 2, dim(rng, 3, 5), dim(rng, 3, 5));
    let cfg = AttentionConfig { footprint: if rng.random_bool(0.5) { 7 } else { 3 }, reduction, share: 1, ..Default::default() };
    let label = format!("{s} k{} red {}", cfg.footprint, cfg.reduction);
    module_check(
        gc,
        rng,
        label,
        s,
        |store, rng| SelfAttention::new(store, rng, "att", s.c, cfg),
        |m, ctx, x| m.forward(ctx, x),
    )
}

fn check_scale_agg(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let scales = dim(rng, 1, 2);
    let m = 1 << scales;
    let s = Shape::new(dim(rng, 1, 2), dim(rng, 1, 3), m * dim(rng, 1, 2), m * dim(rng, 1, 2));
    let label = format!("{s} n{scales}");
    module_check(
        gc,
        rng,
        label,
        s,
        |store, rng| ScaleAgg::new(store, rng, "sa", s.c, scales),
        |m, ctx, x| m.forward(ctx, x),
    )
}

fn check_sc_conv(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let r = dim(rng, 1, 2);
    let s = Shape::new(dim(rng, 1, 2), 2 * dim(rng, 1, 2), r * dim(rng, 2, 3), r * dim(rng, 2, 3));
    let label = format!("{s} r{r}");
    module_check(
        gc,
        rng,
        label,
        s,
        |store, rng| SelfCalibConv::new(store, rng, "sc", s.c, r),
        |m, ctx, x| m.forward(ctx, x),
    )
}

fn check_network(gc: &GradCheck, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let cfg = NetConfig { units: 2, channels: 4, scales: 2, pool_rate: 2, ..NetConfig::default() };
    let s = Shape::new(1, 3, 16, 16);
    let mut store = ParamStore::new();
    let net = JdNet::new(&mut store, rng, cfg)?;
    randomize_biases(&mut store, rng);
    let o = unit_interval(rng, s);
    let b = unit_interval(rng, s);
    let label = format!("{s} U2 C4");
    let ssim = SsimConfig::default();
    let report = gc.with_params(&label, &mut store, &[o], |g, store, v| {
        let out = net.forward(&mut Ctx::new(g, store, true), v[0])?;
        let target = g.leaf(b.clone(), false);
        crate::loss::neg_ssim_loss(g, out.b_hat, target, &ssim)
    })?;
    Ok((label, report))
}
