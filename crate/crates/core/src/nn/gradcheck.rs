//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{Param, Params};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub coords_per_block: usize,
    pub tolerance: f64,
    /// Denominator floor for the relative error, per unit of loss. Central
    /// differences cannot resolve gradients much below `ulp(L) / epsilon`.
    pub floor: f64,
    /// Retries per block when a perturbation crosses a kink.
    pub max_resamples: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            coords_per_block: 20,
            tolerance: 1e-4,
            floor: 1e-6,
            max_resamples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.checked > 0 && b.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<40} {:>7} {:>7} {:>12}\n", "block", "checked", "skipped", "rel_error");
        for b in &self.blocks {
            s += &format!(
                "{:<40} {:>7} {:>7} {:>12.3e}\n",
                b.name, b.checked, b.skipped, b.max_rel_error
            );
        }
        s += &format!(
            "overall: {} (max {:.3e}, tolerance {:.0e})\n",
            if self.passed() { "pass" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        );
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `Param::grad` (already filled by a backward pass at the current
/// parameters) against central differences of `eval`, which returns the loss
/// and a signature of every piecewise-linear branch taken. Coordinates whose
/// perturbation changes the signature are skipped and resampled.
pub fn check_params<M: Params + ?Sized>(
    model: &mut M,
    eval: &mut dyn FnMut(&M) -> Result<(f64, u64)>,
    opts: &GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let (base_loss, base_sig) = eval(model)?;
    let floor = opts.floor * base_loss.abs().max(1.0);
    let mut blocks: Vec<(String, Vec<f64>, usize)> = Vec::new();
    model.visit("", &mut |name, p: &Param| {
        if p.trainable {
            blocks.push((name, p.grad.clone(), p.len()));
        }
    });
    let mut reports = Vec::new();
    for (bi, (name, grad, len)) in blocks.iter().enumerate() {
        let want = opts.coords_per_block.min(*len);
        let budget = (want + opts.max_resamples).min(*len);
        let order = sample(rng, *len, budget);
        let mut report = BlockReport {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for idx in order.iter() {
            if report.checked == want {
                break;
            }
            let set = |model: &mut M, value: f64| {
                let mut i = 0;
                model.visit_mut("", &mut |_, p| {
                    if p.trainable {
                        if i == bi {
                            p.value[idx] = value;
                        }
                        i += 1;
                    }
                });
            };
            let orig = {
                let mut v = 0.0;
                let mut i = 0;
                model.visit("", &mut |_, p| {
                    if p.trainable {
                        if i == bi {
                            v = p.value[idx];
                        }
                        i += 1;
                    }
                });
                v
            };
            let (hi, lo) = (orig + opts.epsilon, orig - opts.epsilon);
            set(model, hi);
            let plus = eval(model);
            set(model, lo);
            let minus = eval(model);
            set(model, orig);
            let ((lp, sp), (lm, sm)) = (plus?, minus?);
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (hi - lo);
            let err = relative_error(grad[idx], numeric, floor);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        blocks: reports,
        tolerance: opts.tolerance,
    })
}
