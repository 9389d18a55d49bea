use super::{AutodiffError, Tape, Tensor, Var};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Maximum relative error between tape gradients and central differences
/// with step `h`, over every entry of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect();
    grad_check_entries(f, params, h, &entries)
}

/// Like [`grad_check`] but only over the listed `(param, flat index)` entries;
/// for models too large to difference exhaustively.
pub fn grad_check_entries<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    entries: &[(usize, usize)],
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
        .collect();

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for &(p, i) in entries {
        let orig = work[p].data()[i];
        work[p].data_mut()[i] = orig + h;
        let up = eval(&work)?;
        work[p].data_mut()[i] = orig - h;
        let down = eval(&work)?;
        work[p].data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[p].data()[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let w = Tensor::from_vec(4, 1, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let err = grad_check(
            |tape, v| {
                let sq = tape.mul(v[0], v[0])?;
                tape.sum(sq)
            },
            &[w],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function() {
        let w = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = grad_check(
            |tape, _| Ok(tape.constant(Tensor::scalar(3.5))),
            &[w],
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
