//! Central finite-difference gradient checking.

use super::{Param, Parameterized};

/// Central-difference step used by the model gradient checks.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Denominator floor of the relative error. Below it the comparison is
/// effectively absolute: round-off in the finite difference of an O(10) loss
/// is around 1e-10, which would otherwise dominate near-zero gradients.
pub const DEFAULT_FLOOR: f64 = 1e-5;

/// Outcome of a gradient check over every trainable entry of a network.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the largest error occurred.
    pub worst: (String, usize),
    /// Analytic and numeric gradient at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

fn with_param<N: Parameterized + ?Sized>(net: &mut N, name: &str, f: &mut dyn FnMut(&mut Param)) {
    net.visit_mut("", &mut |n, p| {
        if n == name {
            f(p)
        }
    });
}

/// Compares analytic gradients with central differences of step `h`.
///
/// `loss` evaluates the loss for the network's current parameters; when its
/// flag is true it must also accumulate gradients into the (zeroed)
/// parameters. Any randomness inside `loss` must be re-seeded per call so that
/// every evaluation sees the same function.
pub fn check_gradients<N: Parameterized>(
    net: &mut N,
    mut loss: impl FnMut(&mut N, bool) -> f64,
    h: f64,
    floor: f64,
) -> GradCheckReport {
    net.zero_grad();
    loss(net, true);
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    net.visit("", &mut |name, p| {
        if !p.buffer {
            entries.push((name.to_string(), p.grad.iter().copied().collect()));
        }
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for (name, analytic) in entries {
        for (i, &a) in analytic.iter().enumerate() {
            let mut original = 0.0;
            with_param(net, &name, &mut |p| {
                let v = p.value.as_slice_mut().expect("parameters are contiguous");
                original = v[i];
                v[i] = original + h;
            });
            let plus = loss(net, false);
            with_param(net, &name, &mut |p| p.value.as_slice_mut().expect("contiguous")[i] = original - h);
            let minus = loss(net, false);
            with_param(net, &name, &mut |p| p.value.as_slice_mut().expect("contiguous")[i] = original);
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (name.clone(), i);
                report.worst_values = (a, numeric);
            }
            report.checked += 1;
        }
    }
    report
}
