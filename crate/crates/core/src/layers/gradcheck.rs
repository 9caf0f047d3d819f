//! Central finite-difference verification of analytic gradients.
//!
//! The layer output is reduced to a scalar through a fixed random
//! projection, `L = Σ out ⊙ P`, so one backward pass with `grad_out = P`
//! exercises the full Jacobian. Every checked element `θ` is compared
//! against `(L(θ + h) - L(θ - h)) / 2h`.
//!
//! Piecewise-linear layers make `L` non-differentiable on a set of measure
//! zero, but a large network has so many kinks that `[θ - h, θ + h]` often
//! contains one, and the central difference then measures neither one-sided
//! slope. Each perturbed forward pass records its discrete choices (ReLU
//! masks, max winners); when either side differs from the unperturbed pass
//! the element is counted as a kink crossing instead of being scored.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::branch::traced;
use super::{Layer, Mode};
use crate::{Result, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub h: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Fraction of elements per tensor to perturb; `1.0` checks all.
    pub sample_fraction: f64,
    /// Lower bound on the relative-error denominator, so that elements
    /// whose true gradient is zero are judged on absolute error.
    pub denominator_floor: f64,
    /// Absolute disagreement below this many units of central-difference
    /// roundoff, `ε·Σ|out ⊙ P| / h`, is treated as agreement. This matters
    /// for gradients that are exactly zero, such as a bias feeding batch
    /// norm.
    pub roundoff_multiple: f64,
    pub check_input: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            mode: Mode::Train,
            seed: 0,
            tolerance: 1e-4,
            sample_fraction: 1.0,
            denominator_floor: 1e-6,
            roundoff_multiple: 10.0,
            check_input: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EntryReport {
    pub name: String,
    /// Elements compared, excluding kink crossings.
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl EntryReport {
    fn new(name: String) -> Self {
        EntryReport {
            name,
            checked: 0,
            kinks: 0,
            max_rel_error: 0.0,
            worst_element: 0,
            analytic: 0.0,
            numeric: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<EntryReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn failures(&self) -> Vec<&EntryReport> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_error >= self.tolerance)
            .collect()
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().map(|e| e.checked).sum()
    }

    pub fn kinks(&self) -> usize {
        self.entries.iter().map(|e| e.kinks).sum()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<48} n={:<6} kinks={:<3} max_rel={:.3e} (elem {} analytic {:.6e} numeric {:.6e})",
                e.name, e.checked, e.kinks, e.max_rel_error, e.worst_element, e.analytic, e.numeric
            )?;
        }
        Ok(())
    }
}

struct Probe<'a> {
    input: &'a Tensor<f64>,
    proj: &'a Tensor<f64>,
    mode: Mode,
    base_branches: u64,
    two_h: f64,
    floor: f64,
}

impl Probe<'_> {
    fn loss<L: Layer<f64>>(&self, layer: &mut L, input: Option<&Tensor<f64>>) -> Result<(f64, u64)> {
        let (out, branches) = traced(|| layer.forward(input.unwrap_or(self.input), self.mode));
        let (out, _) = out?;
        Ok((
            out.data().iter().zip(self.proj.data()).map(|(a, b)| a * b).sum(),
            branches,
        ))
    }

    fn score(&self, report: &mut EntryReport, elem: usize, analytic: f64, plus: (f64, u64), minus: (f64, u64)) {
        if plus.1 != self.base_branches || minus.1 != self.base_branches {
            report.kinks += 1;
            return;
        }
        report.checked += 1;
        let numeric = (plus.0 - minus.0) / self.two_h;
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor);
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_element = elem;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
}

fn pick(len: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..len).collect();
    }
    let count = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
    let mut v = sample(rng, len, count).into_vec();
    v.sort_unstable();
    v
}

/// Compare analytic gradients of `layer` against central differences.
///
/// Runs in 64-bit precision. The layer's parameter gradients are cleared
/// first and hold the analytic gradients afterwards.
pub fn gradient_check<L: Layer<f64>>(
    layer: &mut L,
    input: &Tensor<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    layer.zero_grad();
    let (forward, base_branches) = traced(|| layer.forward(input, cfg.mode));
    let (out, ctx) = forward?;
    let proj = Tensor::<f64>::randn(out.dims().to_vec(), 1.0, &mut rng);
    let grad_in = layer.backward(ctx, &proj)?;
    let magnitude: f64 = out.data().iter().zip(proj.data()).map(|(a, b)| (a * b).abs()).sum();
    let noise = cfg.roundoff_multiple * f64::EPSILON * magnitude / cfg.h;
    let probe = Probe {
        input,
        proj: &proj,
        mode: cfg.mode,
        base_branches,
        two_h: 2.0 * cfg.h,
        floor: cfg.denominator_floor.max(noise / cfg.tolerance),
    };

    let mut analytic: Vec<(String, Tensor<f64>)> = Vec::new();
    layer.visit("", &mut |name, p| {
        if p.trainable {
            analytic.push((name.to_string(), p.grad.clone()));
        }
    });

    let mut entries = Vec::new();
    for (entry_idx, (name, grad)) in analytic.iter().enumerate() {
        let mut report = EntryReport::new(name.clone());
        for elem in pick(grad.len(), cfg.sample_fraction, &mut rng) {
            let set = |value: Option<f64>, layer: &mut L| -> f64 {
                let mut seen = 0;
                let mut orig = 0.0;
                layer.visit_mut("", &mut |_, p| {
                    if p.trainable {
                        if seen == entry_idx {
                            orig = p.value.data()[elem];
                            if let Some(v) = value {
                                p.value.data_mut()[elem] = v;
                            }
                        }
                        seen += 1;
                    }
                });
                orig
            };
            // absolute set/restore: `+h` then `-2h` does not round-trip exactly
            let orig = set(None, layer);
            set(Some(orig + cfg.h), layer);
            let plus = probe.loss(layer, None)?;
            set(Some(orig - cfg.h), layer);
            let minus = probe.loss(layer, None)?;
            set(Some(orig), layer);
            probe.score(&mut report, elem, grad.data()[elem], plus, minus);
        }
        entries.push(report);
    }

    if cfg.check_input {
        let mut report = EntryReport::new("input".into());
        let mut x = input.clone();
        for elem in pick(input.len(), cfg.sample_fraction, &mut rng) {
            let orig = x.data()[elem];
            x.data_mut()[elem] = orig + cfg.h;
            let plus = probe.loss(layer, Some(&x))?;
            x.data_mut()[elem] = orig - cfg.h;
            let minus = probe.loss(layer, Some(&x))?;
            x.data_mut()[elem] = orig;
            probe.score(&mut report, elem, grad_in.data()[elem], plus, minus);
        }
        entries.push(report);
    }

    // Leave analytic gradients in place for callers that inspect them.
    layer.zero_grad();
    let mut idx = 0;
    layer.visit_mut("", &mut |_, p| {
        if p.trainable {
            p.grad = analytic[idx].1.clone();
            idx += 1;
        }
    });

    Ok(GradCheckReport {
        entries,
        tolerance: cfg.tolerance,
    })
}
