use super::array::Array;
use super::tape::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::NotScalar {
            rows: v.rows(),
            cols: v.cols(),
        });
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite("finite-difference objective".into()));
    }
    Ok(v)
}

/// Checks every coordinate of every parameter in `params` with central
/// differences of step `h`. `f` must be deterministic.
pub fn finite_diff_check<F>(params: &ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step must be positive, got {h}")));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        let out = f(&mut tape)?;
        if !tape.value(out).is_finite() {
            return Err(Error::NonFinite("finite-difference objective".into()));
        }
        tape.backward(out)?
    };

    let mut probe = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut coordinates = 0;
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval_scalar(&probe, &f)?;
            probe.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval_scalar(&probe, &f)?;
            probe.get_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.get(id).data()[k], numeric);
            coordinates += 1;
            if err > max_rel_err || worst.is_none() {
                max_rel_err = max_rel_err.max(err);
                if err >= max_rel_err {
                    worst = Some((params.name(id).to_string(), k));
                }
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        coordinates,
        pass: max_rel_err < tol,
    })
}

/// Convenience for a single free input array named `x`.
pub fn check_unary<F>(x: Array, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let id = store.add("x", x);
    finite_diff_check(
        &store,
        |tape| {
            let x = tape.param(id);
            f(tape, x)
        },
        h,
        tol,
    )
}
