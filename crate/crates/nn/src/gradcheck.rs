//! Central finite-difference gradient checks in 64-bit precision.

use crate::error::Result;
use crate::layers::Mode;
use crate::sequential::Sequential;
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

impl GradCheckReport {
    fn record(&mut self, name: String, analytic: f64, numeric: f64) {
        let e = rel_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = format!("{name}: analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
}

/// Loss `sum(out ⊙ w)` and its gradient, a convenient scalar for checking a
/// network with a non-scalar output.
pub fn projection_loss(out: &Tensor<f64>, weights: &[f64]) -> (f64, Tensor<f64>) {
    let l = out.data().iter().zip(weights).map(|(a, b)| a * b).sum();
    (
        l,
        Tensor::new(out.shape().to_vec(), weights[..out.len()].to_vec()).expect("same length"),
    )
}

fn probe_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares the tape gradients of `net` with central differences of step `h`
/// for every parameter (up to `max_per_tensor` evenly spaced entries each)
/// and for the input.
///
/// All passes run in train mode with the same `seed`, so dropout masks are
/// identical across perturbations.
pub fn check_sequential<F>(
    net: &mut Sequential<f64>,
    input: &Tensor<f64>,
    seed: u64,
    h: f64,
    max_per_tensor: Option<usize>,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let mode = Mode::Train { seed };
    net.zero_grad();
    let out = net.forward(input.clone(), &mode)?;
    let (_, dout) = loss(&out);
    let dinput = net.backward(dout)?;

    let eval = |net: &mut Sequential<f64>, x: &Tensor<f64>| -> Result<f64> {
        let out = net.forward(x.clone(), &mode)?;
        net.clear_tape();
        Ok(loss(&out).0)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let analytic: Vec<(String, Vec<f64>)> = net
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.grad.data().to_vec()))
        .collect();
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for idx in probe_indices(grads.len(), max_per_tensor) {
            let orig = net.named_params()[pi].1.value.data()[idx];
            net.named_params_mut()[pi].1.value.data_mut()[idx] = orig + h;
            let up = eval(net, input)?;
            net.named_params_mut()[pi].1.value.data_mut()[idx] = orig - h;
            let down = eval(net, input)?;
            net.named_params_mut()[pi].1.value.data_mut()[idx] = orig;
            report.record(
                format!("{name}[{idx}]"),
                grads[idx],
                (up - down) / (2.0 * h),
            );
        }
    }
    for idx in probe_indices(input.len(), max_per_tensor) {
        let mut x = input.clone();
        x.data_mut()[idx] = input.data()[idx] + h;
        let up = eval(net, &x)?;
        x.data_mut()[idx] = input.data()[idx] - h;
        let down = eval(net, &x)?;
        report.record(
            format!("input[{idx}]"),
            dinput.data()[idx],
            (up - down) / (2.0 * h),
        );
    }
    Ok(report)
}
