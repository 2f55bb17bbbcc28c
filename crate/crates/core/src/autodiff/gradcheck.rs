//! Central finite-difference gradient checking, used by the test suites to
//! validate every pullback against an oracle that never touches the
//! backward pass.
//!
//! A coordinate whose `±eps` perturbation changes a branch of a
//! non-differentiable operator (relu sign, max winner, gate clamp) has no
//! meaningful central difference; such coordinates are skipped, counted, and
//! replaced by further random draws.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// (coordinate label, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, label: String, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-10);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(rel);
            self.worst = Some((label, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            if other.worst.is_some() {
                self.worst = other.worst;
            }
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Loss value and branch signature of one evaluation.
type Probe = (f64, Vec<u32>);

/// Visits coordinates in random order until `coords` smooth ones are checked.
fn run_checks(
    total: usize,
    coords: usize,
    seed: u64,
    base_sig: &[u32],
    mut probe: impl FnMut(usize, f64) -> Result<Probe>,
    mut label_and_grad: impl FnMut(usize) -> (String, f64),
    eps: f64,
) -> Result<GradCheckReport> {
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut report = GradCheckReport::default();
    for k in order {
        if report.checked >= coords {
            break;
        }
        let (fp, sp) = probe(k, eps)?;
        let (fm, sm) = probe(k, -eps)?;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let (label, analytic) = label_and_grad(k);
        report.record(label, analytic, (fp - fm) / (2.0 * eps));
    }
    Ok(report)
}

/// Checks d(loss)/d(inputs) for a graph built by `build` from leaf inputs.
/// Up to `coords` coordinates are sampled across all inputs.
pub fn check_inputs<F>(
    inputs: &[(Vec<usize>, Vec<f64>)],
    build: F,
    eps: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[(Vec<usize>, Vec<f64>)]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|(s, d)| g.input(s.clone(), d.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, &vars)?;
        Ok((g, vars, loss))
    };
    let (g, vars, loss) = eval(inputs)?;
    let grads = g.gradients(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, (_, d))| grads.of(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d.len()]))
        .collect();
    let base_sig = g.branch_signature();
    let offsets: Vec<usize> = inputs
        .iter()
        .scan(0, |acc, (_, d)| {
            let o = *acc;
            *acc += d.len();
            Some(o)
        })
        .collect();
    let locate = |flat: usize| {
        let which = offsets.iter().rposition(|&o| o <= flat).unwrap();
        (which, flat - offsets[which])
    };
    let total: usize = inputs.iter().map(|(_, d)| d.len()).sum();
    run_checks(
        total,
        coords,
        seed,
        &base_sig,
        |flat, delta| {
            let (which, idx) = locate(flat);
            let mut moved = inputs.to_vec();
            moved[which].1[idx] += delta;
            let (g, _, l) = eval(&moved)?;
            Ok((g.scalar(l), g.branch_signature()))
        },
        |flat| {
            let (which, idx) = locate(flat);
            (format!("input{which}[{idx}]"), analytic[which][idx])
        },
        eps,
    )
}

/// Checks d(loss)/d(params) for every trainable parameter of `store`;
/// up to `coords` coordinates are sampled over all trainable values.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    build: F,
    eps: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let loss = build(&mut g, &work)?;
    g.backward(loss, &mut work)?;
    let base_sig = g.branch_signature();

    let trainable: Vec<(ParamId, usize)> = work
        .ids()
        .filter(|&id| work.get(id).requires_grad)
        .flat_map(|id| (0..work.get(id).len()).map(move |i| (id, i)))
        .collect();
    let mut scratch = store.clone();
    run_checks(
        trainable.len(),
        coords,
        seed,
        &base_sig,
        |k, delta| {
            let (id, i) = trainable[k];
            let orig = store.get(id).data()[i];
            scratch.get_mut(id).data_mut()[i] = orig + delta;
            let mut g = Graph::new();
            let l = build(&mut g, &scratch);
            scratch.get_mut(id).data_mut()[i] = orig;
            let l = l?;
            Ok((g.scalar(l), g.branch_signature()))
        },
        |k| {
            let (id, i) = trainable[k];
            (format!("{}[{i}]", store.name(id)), work.get(id).grad()[i])
        },
        eps,
    )
}
