//! Central finite-difference validation of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::param::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// (parameter id, flat index) of the worst coordinate
    pub worst: Option<(String, usize)>,
}

/// How many coordinates of each parameter to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Up to `n` coordinates per parameter, drawn with the given seed.
    Sample { per_param: usize, seed: u64 },
}

fn eval<T: Scalar, F>(f: &mut F, store: &ParamStore<T>) -> Result<f64>
where
    F: FnMut(&ParamStore<T>) -> Result<(Graph<T>, NodeId)>,
{
    let (g, loss) = f(store)?;
    Ok(g.value(loss).values()[0].as_f64())
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences with step `h`, over the parameters in `params`.
///
/// `f` must be deterministic: it is evaluated twice up front and any bitwise
/// difference is reported as a reproducibility error.
pub fn grad_check<T, F>(
    store: &mut ParamStore<T>,
    params: &[ParamId],
    mut f: F,
    h: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> Result<(Graph<T>, NodeId)>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Usage(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    let (graph, loss) = f(store)?;
    let base = graph.value(loss).values()[0].as_f64();
    let again = eval(&mut f, store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Reproducibility(format!(
            "two evaluations gave {base} and {again}"
        )));
    }
    let grads = graph.backward(loss)?;

    let mut rng = match coverage {
        Coverage::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coverage::All => None,
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: 0,
        worst: None,
    };
    for &pid in params {
        let n = store.get(pid).values().len();
        let analytic: Vec<f64> = match grads.of_param(pid) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; n],
        };
        let mut coords: Vec<usize> = (0..n).collect();
        if let (Some(rng), Coverage::Sample { per_param, .. }) = (rng.as_mut(), coverage) {
            coords.shuffle(rng);
            coords.truncate(per_param);
            coords.sort_unstable();
        }
        for idx in coords {
            let orig = store.get(pid).values()[idx];
            store.get_mut(pid).values_mut()[idx] = T::of(orig.as_f64() + h);
            let plus = eval(&mut f, store);
            store.get_mut(pid).values_mut()[idx] = T::of(orig.as_f64() - h);
            let minus = eval(&mut f, store);
            store.get_mut(pid).values_mut()[idx] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic[idx];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((store.get(pid).id().to_string(), idx));
                }
            }
        }
    }
    Ok(report)
}
