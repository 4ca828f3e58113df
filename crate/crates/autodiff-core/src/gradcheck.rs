use crate::error::AdResult;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference half step, scaled by `max(1, |x|)` per entry.
    pub step: f64,
    pub tol: f64,
    /// Denominator floor of the relative discrepancy, multiplied by
    /// `max(1, |f|)` since central-difference roundoff grows with `|f|`.
    pub abs_floor: f64,
    /// Check at most this many evenly strided entries of each parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
            max_entries_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiscrepancy {
    pub name: String,
    pub max_relative: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamDiscrepancy>,
    pub max_relative: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative <= self.tol
    }

    pub fn worst(&self) -> Option<&ParamDiscrepancy> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_relative.total_cmp(&b.max_relative))
    }
}

fn evaluate<F>(store: &ParamStore, f: &F) -> AdResult<f64>
where
    F: Fn(&mut Tape) -> AdResult<Var>,
{
    let mut tape = Tape::new(store);
    let root = f(&mut tape)?;
    Ok(tape.value(root).item())
}

/// Compares backward gradients of the scalar `f` against central differences
/// for every trainable parameter of `store`. Values are restored afterwards.
pub fn grad_check<F>(store: &mut ParamStore, f: F, config: &GradCheckConfig) -> AdResult<GradCheckReport>
where
    F: Fn(&mut Tape) -> AdResult<Var>,
{
    let (analytic, f0) = {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        (tape.backward(root)?, tape.value(root).item())
    };
    let floor = config.abs_floor * f0.abs().max(1.0);
    let mut per_param = Vec::new();
    let ids: Vec<_> = store.ids().filter(|id| store.get(*id).requires_grad).collect();
    for id in ids {
        let numel = store.value(id).numel();
        let stride = config
            .max_entries_per_param
            .map_or(1, |m| numel.div_ceil(m.max(1)).max(1));
        let mut worst = ParamDiscrepancy {
            name: store.get(id).name.clone(),
            max_relative: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            entries_checked: 0,
        };
        for k in (0..numel).step_by(stride) {
            let x = store.value(id).data()[k];
            let h = config.step * x.abs().max(1.0);
            store.value_mut(id).data_mut()[k] = x + h;
            let plus = evaluate(store, &f);
            store.value_mut(id).data_mut()[k] = x - h;
            let minus = evaluate(store, &f);
            store.value_mut(id).data_mut()[k] = x;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic.param(id).map_or(0.0, |g| g.data()[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst.entries_checked += 1;
            if rel > worst.max_relative || worst.entries_checked == 1 {
                worst.max_relative = rel;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        per_param.push(worst);
    }
    let max_relative = per_param.iter().map(|p| p.max_relative).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_relative,
        tol: config.tol,
    })
}
