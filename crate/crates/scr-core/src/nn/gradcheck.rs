//! Central-difference gradient verification.
//!
//! `grad_check` rebuilds the computation from scratch for every perturbed
//! element, so the closure must be a pure function of its inputs. Intended
//! for micro instances (at most a few thousand scalars); cost grows as two
//! forward passes per scalar.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NnError, Result};

/// Compares tape gradients of a scalar-valued computation against central
/// differences and returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor], epsilon: f32) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-4..=1e-1).contains(&epsilon) {
        return Err(NnError::invalid(
            "grad_check",
            format!("epsilon {epsilon} outside [1e-4, 1e-1]"),
        ));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    if tape.val(root).len() != 1 {
        return Err(NnError::invalid(
            "grad_check",
            format!("output must be scalar, got {:?}", tape.val(root).shape()),
        ));
    }
    tape.val(root).assert_finite("grad_check output")?;
    let grads = tape.backward(root)?;

    let eval = |xs: &[Tensor], input_idx: usize| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let r = build(&mut t, &vs)?;
        let v = t.val(r).data()[0];
        if !v.is_finite() {
            return Err(NnError::NonFinite {
                what: format!("grad_check output while perturbing input {input_idx}"),
            });
        }
        Ok(v as f64)
    };

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + epsilon;
            let plus = eval(&work, i)?;
            work[i].data_mut()[j] = orig - epsilon;
            let minus = eval(&work, i)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon as f64);
            let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j] as f64);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}

/// Random `{-1, +1}` tensor for contracting a vector-valued computation to a
/// scalar before `grad_check`.
///
/// A plain mean leaves the scalar root at the magnitude of the outputs while
/// individual derivatives shrink with the element count, so the central
/// difference spans only a handful of f32 ulps and rounding noise dominates.
/// A signed contraction keeps the root near zero and every derivative at the
/// scale of a single output element.
pub fn sign_probe(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
    let data: Vec<f32> = (0..super::tensor::numel(shape))
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches generated data")
}

/// Smallest contracted derivative magnitude, relative to the largest in the
/// same input, that central differences can still resolve below 1e-3.
const MIN_CONDITIONING: f32 = 2e-2;

/// `grad_check` for a vector-valued computation, contracted to a scalar with
/// a random sign probe.
///
/// A probe can still cancel an individual derivative down to the rounding
/// floor, where no choice of epsilon resolves it. Probes are drawn until the
/// contracted gradient has no such element. An exactly-zero derivative is
/// accepted only when perturbing its element leaves the output bitwise
/// unchanged: structural zeros (masked or unused elements) satisfy that,
/// while algebraic cancellations (a probe weighting a softmax row uniformly,
/// whose contraction is constant only in exact arithmetic) do not, and f32
/// rounding would otherwise show up as a spurious nonzero difference.
pub fn grad_check_contracted<F>(
    build: F,
    inputs: &[Tensor],
    out_shape: &[usize],
    epsilon: f32,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    'attempts: for attempt in 0..64u32 {
        let mut rng = crate::util::rng::substream(seed, "sign-probe", attempt as u64);
        let signs = sign_probe(out_shape, &mut rng);
        let contracted = |t: &mut Tape, vs: &[Var]| -> Result<Var> {
            let y = build(t, vs)?;
            let probe = t.leaf(signs.clone());
            let dotted = t.mul(y, probe)?;
            Ok(t.mean_all(dotted))
        };
        let eval = |xs: &[Tensor]| -> Result<f32> {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
            let r = contracted(&mut t, &vs)?;
            Ok(t.val(r).data()[0])
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let root = contracted(&mut tape, &vars)?;
        let grads = tape.backward(root)?;
        let base = tape.val(root).data()[0];
        let mut work: Vec<Tensor> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let g = grads.get(vars[i]);
            let max = g.map_or(0.0, |g| g.data().iter().fold(0.0f32, |m, x| m.max(x.abs())));
            for j in 0..input.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                if gj == 0.0 {
                    let orig = input.data()[j];
                    work[i].data_mut()[j] = orig + epsilon;
                    let moved = eval(&work)?;
                    work[i].data_mut()[j] = orig;
                    if moved != base {
                        continue 'attempts;
                    }
                } else if gj.abs() < MIN_CONDITIONING * max {
                    continue 'attempts;
                }
            }
        }
        return grad_check(contracted, inputs, epsilon);
    }
    Err(NnError::invalid(
        "grad_check_contracted",
        "no well-conditioned sign probe found in 64 attempts",
    ))
}

/// Directional central-difference check of a scalar-valued computation,
/// probing each input along the sign vector of its own analytic gradient.
///
/// The compared quantity per input is the directional derivative, which sums
/// the magnitudes of every gradient element. Deep compositions accumulate
/// f32 rounding noise that swamps a per-element check of their smallest
/// derivatives, while the aggregated signal stays orders of magnitude above
/// that floor; a corrupted gradient element still shifts the sum by its
/// full magnitude. Returns the max relative error over inputs.
pub fn grad_check_directional<F>(build: F, inputs: &[Tensor], epsilon: f32) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-4..=1e-1).contains(&epsilon) {
        return Err(NnError::invalid(
            "grad_check_directional",
            format!("epsilon {epsilon} outside [1e-4, 1e-1]"),
        ));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    if tape.val(root).len() != 1 {
        return Err(NnError::invalid(
            "grad_check_directional",
            format!("output must be scalar, got {:?}", tape.val(root).shape()),
        ));
    }
    tape.val(root).assert_finite("grad_check_directional output")?;
    let grads = tape.backward(root)?;

    let eval = |xs: &[Tensor], input_idx: usize| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let r = build(&mut t, &vs)?;
        let v = t.val(r).data()[0];
        if !v.is_finite() {
            return Err(NnError::NonFinite {
                what: format!("grad_check_directional output while perturbing input {input_idx}"),
            });
        }
        Ok(v as f64)
    };

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let Some(g) = grads.get(vars[i]) else { continue };
        let analytic: f64 = g.data().iter().map(|&x| x.abs() as f64).sum();
        for (w, (&x, &gj)) in work[i]
            .data_mut()
            .iter_mut()
            .zip(input.data().iter().zip(g.data()))
        {
            *w = x + epsilon * gj.signum();
        }
        let plus = eval(&work, i)?;
        for (w, (&x, &gj)) in work[i]
            .data_mut()
            .iter_mut()
            .zip(input.data().iter().zip(g.data()))
        {
            *w = x - epsilon * gj.signum();
        }
        let minus = eval(&work, i)?;
        work[i].data_mut().copy_from_slice(input.data());
        let numeric = (plus - minus) / (2.0 * epsilon as f64);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_checks_to_machine_precision() {
        // Exactly representable epsilon keeps the central difference exact
        // for a linear function, so the error is essentially zero.
        let inputs = [Tensor::scalar(1.0)];
        let err = grad_check(|t, vs| Ok(t.scale(vs[0], 3.0)), &inputs, 0.0625).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn epsilon_range_is_enforced() {
        let inputs = [Tensor::scalar(1.0)];
        assert!(grad_check(|t, vs| Ok(t.scale(vs[0], 2.0)), &inputs, 1e-5).is_err());
        assert!(grad_check(|t, vs| Ok(t.scale(vs[0], 2.0)), &inputs, 0.5).is_err());
    }

    #[test]
    fn non_finite_output_reports_input_index() {
        // exp overflows to inf just above 88.72, so the +epsilon probe trips.
        let inputs = [Tensor::scalar(88.72)];
        let err = grad_check(
            |t, vs| {
                let y = t.exp(vs[0]);
                Ok(t.mean_all(y))
            },
            &inputs,
            0.01,
        )
        .unwrap_err();
        assert!(err.to_string().contains("input 0"), "{err}");
    }

    #[test]
    fn composite_op_passes_at_1e3() {
        let mut rng = crate::util::rng::stream(11, "gc");
        let x = Tensor::randn(&[1, 4, 4, 2], 1.0, &mut rng);
        let k = Tensor::randn(&[3, 3, 2, 3], 0.5, &mut rng);
        let err = grad_check_contracted(
            |t, vs| {
                let c = t.conv2d(vs[0], vs[1], 1, 1)?;
                Ok(t.silu(c))
            },
            &[x, k],
            &[1, 4, 4, 3],
            0.01,
            11,
        )
        .unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }
}
