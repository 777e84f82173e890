//! Central-difference gradient verification in double precision.
//!
//! Probes whose `±ε` evaluations take a different branch at any ReLU or
//! max-pool (a kink inside the probe interval) are retried with smaller
//! steps and skipped if the kink persists; the report counts them.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::ops::Op;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng::Rng;
use crate::Result;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    /// Largest element-wise relative error over checked probes.
    pub max_rel_error: f64,
    /// Probes compared.
    pub checked: usize,
    /// Probes dropped because every step size straddled a kink.
    pub skipped: usize,
    /// `(input index, element index)` of the largest error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    fn record(&mut self, input: usize, elem: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some((input, elem));
        }
    }
}

impl Tape<f64> {
    /// Hash of every branch decision on the tape (ReLU signs, pool argmax).
    pub(crate) fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

const STEP_SHRINK: [f64; 3] = [1.0, 0.1, 0.01];

/// Central difference at one coordinate; `None` if every step hits a kink.
fn probe(
    eval: &mut dyn FnMut(f64) -> Result<(f64, u64)>,
    x0: f64,
    eps: f64,
    base_sig: u64,
) -> Result<Option<f64>> {
    for shrink in STEP_SHRINK {
        let h = eps * shrink;
        let (fp, sp) = eval(x0 + h)?;
        let (fm, sm) = eval(x0 - h)?;
        if sp == base_sig && sm == base_sig {
            return Ok(Some((fp - fm) / (2.0 * h)));
        }
    }
    Ok(None)
}

/// Compares tape gradients of `f` with central differences for every
/// element of every input.
///
/// `f` records a scalar loss on the given tape from leaf variables holding
/// `inputs`.
pub fn grad_check<Fun>(f: Fun, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let run = |vals: &[Tensor<f64>], grads: bool| -> Result<(f64, u64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        let sig = tape.kink_signature();
        if !grads {
            return Ok((value, sig, vec![]));
        }
        let g = tape.backward(loss)?;
        let gs = vars
            .iter()
            .zip(vals)
            .map(|(v, t)| {
                g.get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect();
        Ok((value, sig, gs))
    };
    let (_, base_sig, analytic) = run(inputs, true)?;
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for e in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[e];
            let mut eval = |x: f64| -> Result<(f64, u64)> {
                work[i].data_mut()[e] = x;
                let (v, s, _) = run(&work, false)?;
                Ok((v, s))
            };
            let numeric = probe(&mut eval, x0, eps, base_sig)?;
            work[i].data_mut()[e] = x0;
            match numeric {
                Some(n) => report.record(i, e, analytic[i].data()[e], n),
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}

/// Gradient check over the trainable entries of a parameter store.
///
/// `f` records a scalar loss reading parameters from the store it is given.
/// Only train-mode losses are supported: buffers the loss mutates must not
/// feed back into its value. With `per_param = Some(k)`, at most `k` seeded random
/// elements of each parameter are probed.
pub fn grad_check_params<Fun>(
    f: Fun,
    store: &ParamStore<f64>,
    eps: f64,
    per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let mut base = store.clone();
    base.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &mut base)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;
    tape.accumulate_param_grads(&grads, &mut base);

    let mut rng = Rng::new(seed);
    let mut report = GradCheckReport::default();
    // running statistics drift between probes but do not enter train-mode
    // outputs, so one working copy serves every evaluation
    let mut work = store.clone();
    for (i, id) in store.ids().into_iter().enumerate() {
        let p = store.get(id);
        if !p.trainable {
            continue;
        }
        let n = p.value.numel();
        let elems: Vec<usize> = match per_param {
            Some(k) if k < n => (0..k).map(|_| rng.below(n)).collect(),
            _ => (0..n).collect(),
        };
        for e in elems {
            let x0 = p.value.data()[e];
            let mut eval = |x: f64| -> Result<(f64, u64)> {
                work.get_mut(id).value.data_mut()[e] = x;
                let mut t = Tape::new();
                let l = f(&mut t, &mut work)?;
                Ok((t.value(l).item(), t.kink_signature()))
            };
            let numeric = probe(&mut eval, x0, eps, base_sig)?;
            work.get_mut(id).value.data_mut()[e] = x0;
            match numeric {
                Some(num) => report.record(i, e, base.get(id).grad.data()[e], num),
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadratic_passes() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn kink_probe_is_skipped() {
        // relu at a kink: forward uses x>0, the probe straddles 0 and is skipped
        let x = Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let y = t.relu(v[0]);
                Ok(t.sum(y))
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
    }
}
