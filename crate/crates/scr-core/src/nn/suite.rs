//! Central-difference verification of every differentiable op.
//!
//! Instances are deliberately tiny and their input distributions are chosen
//! so that every gradient element stays resolvable in f32: activation inputs
//! avoid the zeros of their derivatives, loss operand pairs keep a bounded
//! gap, reduction paths that sum probe signs have odd element counts so the
//! signs cannot cancel exactly, and embedding ids are distinct so no table
//! row is pulled in opposite directions.

use rand::Rng;

use super::gradcheck::{grad_check, grad_check_contracted, grad_check_directional};
use super::layers::{Attention, ParamSet};
use super::tensor::Tensor;
use super::{NnError, Result};
use crate::util::rng::stream;

/// Exactly representable probe step for ops that are affine in each input,
/// where the central difference has no truncation term.
const EPS_LINEAR: f32 = 0.0625;

/// Probe step for curved ops, balancing truncation against rounding noise.
const EPS_SMOOTH: f32 = 0.01;

/// Magnitudes uniform in `[lo, hi]` with independent random signs. Keeps
/// every element away from zero, unlike a normal draw.
fn randu_signed(shape: &[usize], lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor {
    let data: Vec<f32> = (0..super::tensor::numel(shape))
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches generated data")
}

/// Attaches the suite entry name to a failed check.
fn tag(name: &str, r: Result<f64>) -> Result<f64> {
    r.map_err(|e| NnError::invalid("gradient_suite", format!("{name}: {e}")))
}

/// Runs the whole suite and returns `(op, max relative error)` per entry.
///
/// Deterministic in `seed`; every entry is expected to come in under 1e-3.
pub fn gradient_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    let draw = |label: &str| stream(seed, label);

    {
        let mut rng = draw("add");
        let a = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.add(vs[0], vs[1]),
            &[a, b],
            &[2, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("add", tag("add", err)?));
    }
    {
        let mut rng = draw("add_scalar");
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| Ok(t.add_scalar(vs[0], 0.7)),
            &[x],
            &[2, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("add_scalar", tag("add_scalar", err)?));
    }
    {
        let mut rng = draw("scale");
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| Ok(t.scale(vs[0], -1.7)),
            &[x],
            &[2, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("scale", tag("scale", err)?));
    }
    {
        // Operands bounded away from zero: each side's derivative is the
        // other operand, which a sign probe cannot rescue if it is tiny.
        let mut rng = draw("mul");
        let a = randu_signed(&[2, 3], 0.5, 1.5, &mut rng);
        let b = randu_signed(&[2, 3], 0.5, 1.5, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.mul(vs[0], vs[1]),
            &[a, b],
            &[2, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("mul", tag("mul", err)?));
    }
    {
        // 3x3 spatial grid: the bias gradient sums 9 probe signs, an odd
        // count that cannot cancel to exactly zero.
        let mut rng = draw("add_bias");
        let x = Tensor::randn(&[1, 3, 3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.add_bias(vs[0], vs[1]),
            &[x, b],
            &[1, 3, 3, 4],
            EPS_LINEAR,
            seed,
        );
        out.push(("add_bias", tag("add_bias", err)?));
    }
    {
        let mut rng = draw("add_rows");
        let x = Tensor::randn(&[1, 3, 3, 2], 1.0, &mut rng);
        let e = Tensor::randn(&[1, 2], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.add_rows(vs[0], vs[1]),
            &[x, e],
            &[1, 3, 3, 2],
            EPS_LINEAR,
            seed,
        );
        out.push(("add_rows", tag("add_rows", err)?));
    }
    {
        // At least five non-contracted terms per gradient element across
        // the matmul family: a two-column output makes every input
        // derivative a two-term signed sum, which cancels under the probe
        // too often for retries to rescue.
        let mut rng = draw("matmul");
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.matmul(vs[0], vs[1], false),
            &[a, b],
            &[3, 5],
            EPS_LINEAR,
            seed,
        );
        out.push(("matmul", tag("matmul", err)?));
    }
    {
        let mut rng = draw("matmul_batched");
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 4, 5], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.matmul(vs[0], vs[1], false),
            &[a, b],
            &[2, 3, 5],
            EPS_LINEAR,
            seed,
        );
        out.push(("matmul_batched", tag("matmul_batched", err)?));
    }
    {
        let mut rng = draw("matmul_shared");
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.matmul(vs[0], vs[1], false),
            &[a, b],
            &[2, 3, 5],
            EPS_LINEAR,
            seed,
        );
        out.push(("matmul_shared", tag("matmul_shared", err)?));
    }
    {
        let mut rng = draw("matmul_tb");
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.matmul(vs[0], vs[1], true),
            &[a, b],
            &[3, 5],
            EPS_LINEAR,
            seed,
        );
        out.push(("matmul_tb", tag("matmul_tb", err)?));
    }
    {
        let mut rng = draw("matmul_tb_batched");
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 5, 4], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.matmul(vs[0], vs[1], true),
            &[a, b],
            &[2, 3, 5],
            EPS_LINEAR,
            seed,
        );
        out.push(("matmul_tb_batched", tag("matmul_tb_batched", err)?));
    }
    {
        let mut rng = draw("conv2d");
        let x = randu_signed(&[1, 4, 4, 2], 0.5, 1.5, &mut rng);
        let k = randu_signed(&[3, 3, 2, 3], 0.3, 0.9, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.conv2d(vs[0], vs[1], 1, 1),
            &[x, k],
            &[1, 4, 4, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("conv2d", tag("conv2d", err)?));
    }
    {
        // Pad 0 keeps every kernel element in all four windows, so no
        // gradient element collapses to a low-term sum that a fixed near
        // cancellation in the draw could pin below the conditioning floor.
        let mut rng = draw("conv2d_strided");
        let x = randu_signed(&[1, 5, 5, 2], 0.5, 1.5, &mut rng);
        let k = randu_signed(&[3, 3, 2, 3], 0.3, 0.9, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.conv2d(vs[0], vs[1], 2, 0),
            &[x, k],
            &[1, 2, 2, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("conv2d_strided", tag("conv2d_strided", err)?));
    }
    {
        // Stride and padding interact in the input index arithmetic, so the
        // downsampling configuration gets its own aggregate check. Border
        // truncation makes some per-element gradients unconditionable here,
        // which the directional form does not depend on.
        let mut rng = draw("conv2d_strided_padded");
        let x = randu_signed(&[1, 6, 6, 2], 0.5, 1.5, &mut rng);
        let k = randu_signed(&[3, 3, 2, 3], 0.3, 0.9, &mut rng);
        let err = grad_check_directional(
            |t, vs| {
                let y = t.conv2d(vs[0], vs[1], 2, 1)?;
                Ok(t.mean_all(y))
            },
            &[x, k],
            EPS_LINEAR,
        );
        out.push(("conv2d_strided_padded", tag("conv2d_strided_padded", err)?));
    }
    {
        let mut rng = draw("conv2d_1x1");
        let x = randu_signed(&[1, 3, 3, 2], 0.5, 1.5, &mut rng);
        let k = randu_signed(&[1, 1, 2, 4], 0.3, 0.9, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.conv2d(vs[0], vs[1], 1, 0),
            &[x, k],
            &[1, 3, 3, 4],
            EPS_LINEAR,
            seed,
        );
        out.push(("conv2d_1x1", tag("conv2d_1x1", err)?));
    }
    {
        let mut rng = draw("bilinear_down");
        let x = Tensor::randn(&[1, 4, 4, 2], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.bilinear(vs[0], 2, 2),
            &[x],
            &[1, 2, 2, 2],
            EPS_LINEAR,
            seed,
        );
        out.push(("bilinear_down", tag("bilinear_down", err)?));
    }
    {
        let mut rng = draw("bilinear_up");
        let x = Tensor::randn(&[1, 2, 2, 2], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.bilinear(vs[0], 4, 4),
            &[x],
            &[1, 4, 4, 2],
            EPS_LINEAR,
            seed,
        );
        out.push(("bilinear_up", tag("bilinear_up", err)?));
    }
    {
        let mut rng = draw("upsample2");
        let x = Tensor::randn(&[1, 2, 2, 3], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.upsample2(vs[0]),
            &[x],
            &[1, 4, 4, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("upsample2", tag("upsample2", err)?));
    }
    {
        let mut rng = draw("concat_last");
        let a = Tensor::randn(&[1, 2, 2], 1.0, &mut rng);
        let b = Tensor::randn(&[1, 2, 3], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.concat_last(vs[0], vs[1]),
            &[a, b],
            &[1, 2, 5],
            EPS_LINEAR,
            seed,
        );
        out.push(("concat_last", tag("concat_last", err)?));
    }
    {
        let mut rng = draw("slice_last");
        let x = Tensor::randn(&[1, 2, 5], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.slice_last(vs[0], 1, 4),
            &[x],
            &[1, 2, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("slice_last", tag("slice_last", err)?));
    }
    {
        let mut rng = draw("softmax");
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.softmax(vs[0], None),
            &[x],
            &[3, 4],
            EPS_SMOOTH,
            seed,
        );
        out.push(("softmax", tag("softmax", err)?));
    }
    {
        // Includes a length-1 row, whose output is constantly 1.0 and whose
        // gradient is exactly zero.
        let mut rng = draw("softmax_masked");
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.softmax(vs[0], Some(vec![4, 2, 1])),
            &[x],
            &[3, 4],
            EPS_SMOOTH,
            seed,
        );
        out.push(("softmax_masked", tag("softmax_masked", err)?));
    }
    {
        // Gain bounded away from zero; 9 spatial positions keep the shift
        // gradient's probe-sign sum odd.
        let mut rng = draw("group_norm");
        let x = Tensor::randn(&[1, 3, 3, 4], 1.0, &mut rng);
        let gamma = randu_signed(&[4], 0.5, 1.5, &mut rng);
        let beta = Tensor::randn(&[4], 0.2, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.group_norm(vs[0], vs[1], vs[2], 2),
            &[x, gamma, beta],
            &[1, 3, 3, 4],
            EPS_SMOOTH,
            seed,
        );
        out.push(("group_norm", tag("group_norm", err)?));
    }
    {
        // 3 rows for the same parity reason as group_norm's 9 positions.
        let mut rng = draw("layer_norm");
        let x = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let gamma = randu_signed(&[6], 0.5, 1.5, &mut rng);
        let beta = Tensor::randn(&[6], 0.2, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.layer_norm(vs[0], vs[1], vs[2]),
            &[x, gamma, beta],
            &[3, 6],
            EPS_SMOOTH,
            seed,
        );
        out.push(("layer_norm", tag("layer_norm", err)?));
    }
    {
        // silu' crosses zero near -1.28; magnitudes in [0.25, 1.0] stay clear.
        let mut rng = draw("silu");
        let x = randu_signed(&[2, 4], 0.25, 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| Ok(t.silu(vs[0])),
            &[x],
            &[2, 4],
            EPS_SMOOTH,
            seed,
        );
        out.push(("silu", tag("silu", err)?));
    }
    {
        // gelu' crosses zero near -0.75; magnitudes in [0.9, 2.0] stay clear.
        let mut rng = draw("gelu");
        let x = randu_signed(&[2, 4], 0.9, 2.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| Ok(t.gelu(vs[0])),
            &[x],
            &[2, 4],
            EPS_SMOOTH,
            seed,
        );
        out.push(("gelu", tag("gelu", err)?));
    }
    {
        let mut rng = draw("sigmoid");
        let x = randu_signed(&[2, 4], 0.25, 1.5, &mut rng);
        let err = grad_check_contracted(
            |t, vs| Ok(t.sigmoid(vs[0])),
            &[x],
            &[2, 4],
            EPS_SMOOTH,
            seed,
        );
        out.push(("sigmoid", tag("sigmoid", err)?));
    }
    {
        let mut rng = draw("exp");
        let x = randu_signed(&[2, 4], 0.25, 1.2, &mut rng);
        let err = grad_check_contracted(
            |t, vs| Ok(t.exp(vs[0])),
            &[x],
            &[2, 4],
            EPS_SMOOTH,
            seed,
        );
        out.push(("exp", tag("exp", err)?));
    }
    {
        // Distinct ids: a row referenced twice could have its probe signs
        // cancel exactly, leaving a nonzero numeric against a zero analytic.
        let mut rng = draw("embed");
        let table = Tensor::randn(&[7, 3], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.embed(vs[0], &[2, 0, 6, 3], &[4, 3]),
            &[table],
            &[4, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("embed", tag("embed", err)?));
    }
    {
        let mut rng = draw("reshape");
        let x = Tensor::randn(&[2, 6], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.reshape(vs[0], &[3, 4]),
            &[x],
            &[3, 4],
            EPS_LINEAR,
            seed,
        );
        out.push(("reshape", tag("reshape", err)?));
    }
    {
        let mut rng = draw("permute");
        let x = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let err = grad_check_contracted(
            |t, vs| t.permute(vs[0], &[2, 0, 1]),
            &[x],
            &[4, 2, 3],
            EPS_LINEAR,
            seed,
        );
        out.push(("permute", tag("permute", err)?));
    }
    {
        let mut rng = draw("mean_all");
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let err = grad_check(|t, vs| Ok(t.mean_all(vs[0])), &[x], EPS_LINEAR);
        out.push(("mean_all", tag("mean_all", err)?));
    }
    {
        // Bounded gap keeps both sides' gradients away from zero; the loss
        // is quadratic, so the central difference is exact.
        let mut rng = draw("mse");
        let a = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let gap = randu_signed(&[2, 4], 0.3, 1.2, &mut rng);
        let mut b = a.clone();
        b.add_in_place(&gap);
        let err = grad_check(|t, vs| t.mse(vs[0], vs[1]), &[a, b], EPS_LINEAR);
        out.push(("mse", tag("mse", err)?));
    }
    {
        // Gap in [0.3, 0.9] stays inside the quadratic branch with margin
        // beyond the probe step.
        let mut rng = draw("smooth_l1_quad");
        let a = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let gap = randu_signed(&[2, 4], 0.3, 0.9, &mut rng);
        let mut b = a.clone();
        b.add_in_place(&gap);
        let err = grad_check(|t, vs| t.smooth_l1(vs[0], vs[1], 1.0), &[a, b], EPS_SMOOTH);
        out.push(("smooth_l1_quad", tag("smooth_l1_quad", err)?));
    }
    {
        // Gap in [1.2, 2.0] stays inside the linear branch with margin.
        let mut rng = draw("smooth_l1_lin");
        let a = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let gap = randu_signed(&[2, 4], 1.2, 2.0, &mut rng);
        let mut b = a.clone();
        b.add_in_place(&gap);
        let err = grad_check(|t, vs| t.smooth_l1(vs[0], vs[1], 1.0), &[a, b], EPS_SMOOTH);
        out.push(("smooth_l1_lin", tag("smooth_l1_lin", err)?));
    }
    {
        // Small logit scale keeps class probabilities near uniform, so no
        // gradient element |softmax - onehot| gets close to zero.
        let mut rng = draw("cross_entropy");
        let logits = Tensor::randn(&[3, 5], 0.5, &mut rng);
        let err =
            grad_check(|t, vs| t.cross_entropy(vs[0], &[1, 0, 4]), &[logits], EPS_SMOOTH);
        out.push(("cross_entropy", tag("cross_entropy", err)?));
    }
    {
        // Hard targets with bounded logits keep |sigmoid - target| >= 0.18,
        // and bounded logits keep the target-side gradient -z away from zero.
        let mut rng = draw("bce_logits");
        let logits = randu_signed(&[2, 4], 0.25, 1.5, &mut rng);
        let targets = Tensor::from_vec(
            &[2, 4],
            (0..8).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect(),
        )
        .expect("shape matches generated data");
        let err = grad_check(|t, vs| t.bce_logits(vs[0], vs[1]), &[logits, targets], EPS_SMOOTH);
        out.push(("bce_logits", tag("bce_logits", err)?));
    }
    {
        // Masked multi-head attention end to end, gradients taken through
        // projections, scaling, softmax, and the value contraction. The
        // softmax jacobian attenuates the query path far below the f32
        // noise of the forward values, so this composite uses the
        // directional check, whose aggregated signal stays well above
        // that floor.
        let mut rng = draw("attention");
        let mut ps = ParamSet::new();
        let attn = Attention::new(&mut ps, &mut rng, "gc_attn", 8, 6, 2, false)?;
        let q = Tensor::randn(&[1, 2, 8], 1.0, &mut rng);
        let kv = Tensor::randn(&[1, 3, 6], 1.0, &mut rng);
        let err = grad_check_directional(
            |t, vs| {
                let (y, _w) = attn.forward(t, &ps, vs[0], vs[1], Some(&[2]))?;
                Ok(t.mean_all(y))
            },
            &[q, kv],
            0.0025,
        );
        out.push(("attention", tag("attention", err)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_deterministic() {
        let a = gradient_suite(5).unwrap();
        let b = gradient_suite(5).unwrap();
        assert_eq!(a, b);
    }
}
