//! Finite-difference gradient verification.
//!
//! Probes a named sample of parameters and compares the model's analytic
//! gradient against a central difference of a caller-supplied loss closure.
//! Run at f64; the step is scaled per-parameter.

use rand::Rng;

use super::Params;


#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Sample `n_probes` parameter coordinates (uniform over tensors, then over
/// elements) and check each. `loss` must be a pure function of the model
/// parameters. The analytic gradients must already sit in `.grad` when this
/// is called, accumulated by exactly one backward pass of the same loss.
pub fn check_gradients<M, F>(
    model: &mut M,
    mut loss: F,
    n_probes: usize,
    rng: &mut impl Rng,
) -> Vec<ProbeResult>
where
    M: Params<f64>,
    F: FnMut(&mut M) -> f64,
{
    // Collect addressable coordinates.
    let mut layout: Vec<(String, usize)> = Vec::new();
    model.visit("", &mut |name, p| {
        layout.push((name.to_string(), p.len()));
    });
    let mut probes: Vec<(usize, usize)> = Vec::new();
    for _ in 0..n_probes {
        let ti = rng.gen_range(0..layout.len());
        let ei = rng.gen_range(0..layout[ti].1);
        probes.push((ti, ei));
    }

    let mut results = Vec::new();
    for (ti, ei) in probes {
        let mut analytic = 0.0;
        let mut base = 0.0;
        {
            let mut idx = 0usize;
            model.visit("", &mut |_, p| {
                if idx == ti {
                    analytic = p.grad.data[ei];
                    base = p.data.data[ei];
                }
                idx += 1;
            });
        }
        let h = 1e-4 * base.abs().max(1.0);
        set_coord(model, ti, ei, base + h);
        let lp = loss(model);
        set_coord(model, ti, ei, base - h);
        let lm = loss(model);
        set_coord(model, ti, ei, base);
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        results.push(ProbeResult {
            name: layout[ti].0.clone(),
            index: ei,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / denom,
        });
    }
    results
}

fn set_coord<M: Params<f64>>(model: &mut M, ti: usize, ei: usize, v: f64) {
    let mut idx = 0usize;
    model.visit("", &mut |_, p| {
        if idx == ti {
            p.data.data[ei] = v;
        }
        idx += 1;
    });
}

/// Convenience: max relative error over probes.
pub fn max_rel_error(results: &[ProbeResult]) -> f64 {
    results.iter().map(|r| r.rel_error).fold(0.0, f64::max)
}
