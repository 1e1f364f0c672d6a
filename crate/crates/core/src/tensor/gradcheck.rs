use super::{Scalar, Tape, Tensor, TensorError, Var};

/// Worst componentwise relative error between two gradient buffers, with
/// denominator `max(|a|, |b|, 1e-6)`.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> T {
    let floor = T::from_f64_lossy(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .fold(T::zero(), |worst, (&a, &n)| {
            let denom = a.abs().max(n.abs()).max(floor);
            worst.max((a - n).abs() / denom)
        })
}

/// Compare reverse-mode gradients of a scalar function against central
/// finite differences with the given step. Returns the worst relative error.
///
/// `f` receives a fresh tape and the leaf holding the evaluation point; it
/// may call [`Tape::backward`] itself, in which case the check exercises
/// second-order differentiation.
pub fn grad_check<T, E, F>(f: F, point: &Tensor<T>, step: T) -> Result<T, E>
where
    T: Scalar,
    E: From<TensorError>,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    let analytic = tape.gradients(y, &[x])?.remove(0);

    let eval = |p: Tensor<T>| -> Result<T, E> {
        let mut tape = Tape::new();
        let x = tape.leaf(p);
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item())
    };
    let two_h = step + step;
    let mut numeric = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] = plus.data()[i] + step;
        let mut minus = point.clone();
        minus.data_mut()[i] = minus.data()[i] - step;
        numeric.push((eval(plus)? - eval(minus)?) / two_h);
    }
    Ok(max_relative_error(analytic.data(), &numeric))
}
