//! Central finite-difference gradient checker, evaluated in `f64`.

use rand::seq::index::sample;
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation applied on either side of each coordinate.
    pub step: f64,
    /// Check at most this many coordinates per parameter tensor.
    pub per_tensor: Option<usize>,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            per_tensor: None,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
    /// Parameters whose analytic gradient was not identically zero.
    pub nonzero_params: Vec<String>,
}

fn eval<F>(store: &ParamStore<f64>, loss: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::inference(store);
    let l = loss(&mut g)?;
    Ok(g.value(l).data()[0])
}

/// Compares `loss`'s analytic parameter gradients against central differences.
pub fn check_gradients<F, R>(
    store: &ParamStore<f64>,
    loss: F,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?.params()
    };
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let grad = analytic.get(id).expect("zero-filled for every parameter");
        if grad.iter().any(|&v| v != 0.0) {
            report.nonzero_params.push(store.name(id).to_string());
        }
        let len = grad.len();
        let picks: Vec<usize> = match opts.per_tensor {
            Some(k) if k < len => sample(rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for i in picks {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.step;
            let up = eval(&work, &loss)?;
            work.get_mut(id).data_mut()[i] = orig - opts.step;
            let down = eval(&work, &loss)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad[i];
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel_err);
                if report.worst.as_ref().is_none_or(|w| rel_err >= w.rel_err) {
                    report.worst = Some(Mismatch {
                        param: store.name(id).to_string(),
                        index: i,
                        analytic: a,
                        numeric,
                        rel_err,
                    });
                }
            }
        }
    }
    Ok(report)
}
