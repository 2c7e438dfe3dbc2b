use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Var};

/// Compare tape gradients of a scalar function against central differences.
///
/// `f` records a scalar loss given the parameter handles. Returns the maximum
/// over all entries of `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Matrix], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::param(format!("finite-difference step must be positive, got {h}")));
    }

    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    let grads = tape.backward(out)?;

    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for k in 0..params[p].len() {
            let orig = params[p].as_slice()[k];
            work[p].as_mut_slice()[k] = orig + h;
            let up = eval(&work)?;
            work[p].as_mut_slice()[k] = orig - h;
            let down = eval(&work)?;
            work[p].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic.as_slice()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frobenius_square() {
        let w = Matrix::from_rows(&[[0.3, -1.5, 2.0], [0.1, 0.0, -0.7]]);
        let err = grad_check(
            |t, v| {
                let sq = t.square(v[0]);
                Ok(t.sum(sq))
            },
            &[w.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");

        // Closed form: d‖W‖² / dW = 2W.
        let mut tape = Tape::new();
        let v = tape.param(w.clone());
        let sq = tape.square(v);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap().get(v);
        assert!(g.max_abs_diff(&w.scale(2.0)) < 1e-15);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let w = Matrix::from_rows(&[[1.0, 2.0]]);
        let err = grad_check(
            |t, _| Ok(t.constant(Matrix::scalar(3.0))),
            &[w],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let w = Matrix::from_rows(&[[1.0]]);
        let res = grad_check(
            |t, v| {
                let s = t.scale(v[0], f64::INFINITY);
                Ok(t.sum(s))
            },
            &[w],
            1e-5,
        );
        assert!(matches!(res, Err(Error::Numeric(_))));
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(grad_check(|t, v| Ok(t.sum(v[0])), &[Matrix::scalar(1.0)], 0.0).is_err());
    }
}
