//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// (parameter index, flat entry) of the worst entry.
    pub worst: Option<(usize, usize)>,
}

/// Compares tape gradients of the scalar computation `f` against central
/// differences with step `eps`.
///
/// When the parameters hold more than `max_entries` values in total, a
/// seeded random subset of entries is checked.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 || !v.data()[0].is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective {v:?}")));
        }
        Ok(v.data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let flat: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |e| (p, e)))
        .collect();
    let chosen: Vec<(usize, usize)> = if flat.len() <= max_entries {
        flat
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = sample(&mut rng, flat.len(), max_entries).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| flat[i]).collect()
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        entries_checked: chosen.len(),
        worst: None,
    };
    for &(p, e) in &chosen {
        let orig = work[p].data()[e];
        work[p].data_mut()[e] = orig + eps;
        let plus = eval(&work)?;
        work[p].data_mut()[e] = orig - eps;
        let minus = eval(&work)?;
        work[p].data_mut()[e] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[p].data()[e];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((p, e));
        }
    }
    Ok(report)
}
