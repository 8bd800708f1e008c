//! Central finite-difference verification of analytic gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// One compared gradient entry.
#[derive(Clone, Debug)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Finite-difference step actually used; smaller than the configured step only when
    /// the configured interval straddled a kink of a piecewise-linear operator.
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub label: String,
    pub tol: f64,
    pub step: f64,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// Probes that had to shrink the step to stay on one linear piece.
    pub fn restepped(&self) -> usize {
        self.probes.iter().filter(|p| p.step < self.step).count()
    }

    pub fn passed(&self) -> bool {
        !self.probes.is_empty() && self.probes.iter().all(|p| p.rel_error <= self.tol)
    }
}

/// Finite-difference settings shared by every check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    pub tol: f64,
    /// Upper bound on probed entries per tensor; `None` probes all of them.
    pub max_probes: Option<usize>,
    pub seed: u64,
    /// Smallest step tried when `x ± h` crosses a kink.
    pub min_step: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { h: 1e-3, tol: 1e-4, max_probes: None, seed: 0, min_step: 1e-7 }
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Input(usize),
    Param(ParamId),
}

impl Slot {
    fn get(self, work: &[Tensor<f64>], store: &ParamStore<f64>, idx: usize) -> f64 {
        match self {
            Slot::Input(i) => work[i].data()[idx],
            Slot::Param(id) => store.get(id).data()[idx],
        }
    }

    fn set(self, work: &mut [Tensor<f64>], store: &mut ParamStore<f64>, idx: usize, v: f64) {
        match self {
            Slot::Input(i) => work[i].data_mut()[idx] = v,
            Slot::Param(id) => store.get_mut(id).data_mut()[idx] = v,
        }
    }
}

impl GradCheck {
    pub fn new(h: f64, tol: f64) -> Self {
        GradCheck { h, tol, ..Default::default() }
    }

    pub fn with_max_probes(mut self, n: usize) -> Self {
        self.max_probes = Some(n);
        self
    }

    fn indices(&self, len: usize, salt: u64) -> Vec<usize> {
        match self.max_probes {
            Some(m) if m < len => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let mut idx = sample(&mut rng, len, m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        }
    }

    /// Checks the gradients of a scalar function of several input tensors.
    pub fn inputs<F>(&self, label: &str, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut empty = ParamStore::new();
        self.with_params(label, &mut empty, inputs, |g, _, vars| f(g, vars))
    }

    /// Checks gradients w.r.t. every input tensor and every trainable parameter in `store`.
    pub fn with_params<F>(
        &self,
        label: &str,
        store: &mut ParamStore<f64>,
        inputs: &[Tensor<f64>],
        mut f: F,
    ) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = f(&mut g, store, &vars)?;
        let grads = g.backward(loss)?;

        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        let mut eval = |work: &[Tensor<f64>], store: &mut ParamStore<f64>| -> Result<(f64, Option<u64>)> {
            let mut g = Graph::inference().with_kink_tracking();
            let vars: Vec<Var> = work.iter().map(|t| g.leaf(t.clone(), false)).collect();
            let out = f(&mut g, store, &vars)?;
            let v = g.value(out);
            if v.len() != 1 {
                return Err(Error::shape("finite_diff_check", format!("function must be scalar, got {}", v.shape())));
            }
            Ok((v.item(), g.kink_signature()))
        };
        let (_, base_signature) = eval(&work, store)?;

        let mut slots: Vec<(String, Slot, usize)> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("input{i}"), Slot::Input(i), t.len()))
            .collect();
        for id in store.ids().collect::<Vec<_>>() {
            let e = store.entry(id);
            if e.trainable {
                slots.push((e.name.clone(), Slot::Param(id), e.tensor.len()));
            }
        }

        let mut probes = Vec::new();
        for (salt, (name, slot, len)) in slots.into_iter().enumerate() {
            let analytic: Vec<f64> = match slot {
                Slot::Input(i) => grads.wrt(vars[i]).map(<[f64]>::to_vec),
                Slot::Param(id) => grads.leaves().iter().find(|l| l.param == Some(id)).map(|l| l.grad.clone()),
            }
            .unwrap_or_else(|| vec![0.0; len]);
            for idx in self.indices(len, salt as u64) {
                let orig = slot.get(&work, store, idx);
                let mut h = self.h;
                let numeric = loop {
                    slot.set(&mut work, store, idx, orig + h);
                    let (plus, sig_plus) = eval(&work, store)?;
                    slot.set(&mut work, store, idx, orig - h);
                    let (minus, sig_minus) = eval(&work, store)?;
                    slot.set(&mut work, store, idx, orig);
                    let smooth = sig_plus == base_signature && sig_minus == base_signature;
                    if smooth || h / 10.0 < self.min_step {
                        break (plus - minus) / (2.0 * h);
                    }
                    h /= 10.0;
                };
                let a = analytic[idx];
                probes.push(Probe {
                    tensor: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error: relative_error(a, numeric),
                    step: h,
                });
            }
        }
        Ok(GradCheckReport { label: label.to_string(), tol: self.tol, step: self.h, probes })
    }
}

/// Compares the analytic gradient of scalar `f` at `x` with central differences of step `h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    GradCheck::new(h, tol).inputs("f", std::slice::from_ref(x), |g, v| f(g, v[0]))
}
