use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Gradients below this magnitude are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    /// Entries whose finite-difference estimate is unreliable (see
    /// [`gradcheck_piecewise`]); excluded from `max_rel_error`.
    pub unresolved: usize,
    /// No path from this parameter to the loss; its analytic gradient is zero.
    pub unreachable: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn unreachable(&self) -> impl Iterator<Item = &str> {
        self.params.iter().filter(|p| p.unreachable).map(|p| p.name.as_str())
    }

    pub fn entries(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }

    pub fn unresolved(&self) -> usize {
        self.params.iter().map(|p| p.unresolved).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare reverse-mode gradients of every trainable parameter against
/// central finite differences `(f(x+eps) - f(x-eps)) / (2 eps)`.
///
/// `max_entries` caps how many entries per parameter are perturbed (evenly
/// strided); `None` checks all of them.
pub fn gradcheck<F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    max_entries: Option<usize>,
    loss_fn: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    check(store, eps, max_entries, None, loss_fn)
}

/// Like [`gradcheck`], for losses that are only piecewise smooth (ReLU, `|x|`,
/// max-pooling, nearest-neighbour matching).
///
/// Each entry is also differenced with step `eps / 2`. A smooth stencil gives
/// two estimates within `O(eps²)` of each other. When they differ by more
/// than `smooth_tol` (relative) the stencil crosses a kink or roundoff swamps
/// a near-zero gradient; the entry is counted in `unresolved` and left out
/// of the comparison. The test never
/// consults the analytic gradient, so a wrong backward pass still fails on
/// every smooth entry.
pub fn gradcheck_piecewise<F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    max_entries: Option<usize>,
    smooth_tol: f64,
    loss_fn: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    check(store, eps, max_entries, Some(smooth_tol), loss_fn)
}

fn check<F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    max_entries: Option<usize>,
    smooth_tol: Option<f64>,
    loss_fn: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference(s);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        params: Vec::new(),
    };
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).requires_grad).collect();
    for id in ids {
        let grad = analytic
            .params()
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone());
        let n = store.value(id).numel();
        let stride = max_entries.map_or(1, |m| n.div_ceil(m.max(1)));
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: 0.0,
            entries: 0,
            unresolved: 0,
            unreachable: grad.is_none(),
        };
        for k in (0..n).step_by(stride) {
            let mut central = |h: f64| -> Result<f64> {
                let orig = store.value(id).data()[k];
                store.get_mut(id).value_mut().data_mut()[k] = orig + h;
                let plus = eval(store);
                store.get_mut(id).value_mut().data_mut()[k] = orig - h;
                let minus = eval(store);
                store.get_mut(id).value_mut().data_mut()[k] = orig;
                Ok((plus? - minus?) / (2.0 * h))
            };
            let numeric = central(eps)?;
            check.entries += 1;
            if let Some(tol) = smooth_tol {
                if relative_error(numeric, central(eps / 2.0)?) > tol {
                    check.unresolved += 1;
                    continue;
                }
            }
            let a = grad.as_ref().map_or(0.0, |g| g.data()[k]);
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}
