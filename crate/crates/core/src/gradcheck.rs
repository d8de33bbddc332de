//! Central finite-difference checks of analytic parameter gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Module;

/// Agreement between analytic and numerical gradients over every checked
/// coordinate. The relative error of a coordinate is
/// `|a - n| / max(|a|, |n|, floor)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub coords: usize,
    pub errors: Vec<f64>,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.errors.is_empty() {
            return 1.0;
        }
        self.errors.iter().filter(|&&e| e <= tol).count() as f64 / self.errors.len() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

pub const REL_FLOOR: f64 = 1e-6;

/// Compare the gradient of `loss` with central differences of step `h` for
/// every parameter of `module` whose name passes `select`.
pub fn check_gradients<M, F, S>(module: &mut M, h: f64, select: S, loss: F) -> Result<GradCheckReport>
where
    M: Module<f64>,
    S: Fn(&str) -> bool,
    F: for<'t> Fn(&M, &'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    let mut analytic = Vec::new();
    {
        let tape = Tape::new();
        let l = loss(module, &tape)?;
        let grads = tape.backward(l)?;
        module.visit("", &mut |name, p| {
            if select(name) {
                let g = grads.param(p.id()).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; p.value().numel()]);
                analytic.push((name.to_string(), g));
            }
        });
    }
    let eval = |m: &M| -> Result<f64> {
        let tape = Tape::new();
        let v = loss(m, &tape)?.value().item();
        if !v.is_finite() {
            return Err(Error::Numerical("loss is not finite during the finite-difference check".into()));
        }
        Ok(v)
    };
    let nudge = |m: &mut M, target: &str, i: usize, delta: f64| {
        m.visit_mut("", &mut |name, p| {
            if name == target {
                p.value_mut().data_mut()[i] += delta;
            }
        });
    };
    let mut report = GradCheckReport { coords: 0, errors: Vec::new(), worst: None };
    for (name, grad) in &analytic {
        for (i, &a) in grad.iter().enumerate() {
            nudge(module, name, i, h);
            let up = eval(module);
            nudge(module, name, i, -2.0 * h);
            let down = eval(module);
            nudge(module, name, i, h);
            let numeric = (up? - down?) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if report.worst.as_ref().is_none_or(|w| {
                let prev = (w.2 - w.3).abs() / w.2.abs().max(w.3.abs()).max(REL_FLOOR);
                err > prev
            }) {
                report.worst = Some((name.clone(), i, a, numeric));
            }
            report.errors.push(err);
            report.coords += 1;
        }
    }
    Ok(report)
}
