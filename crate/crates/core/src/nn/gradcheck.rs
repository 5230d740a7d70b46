use rand::seq::SliceRandom;
use rand::Rng;

use super::{Graph, NnError, NodeId, ParamStore};

/// Settings for a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference half step.
    pub step: f64,
    /// Number of parameter coordinates sampled.
    pub samples: usize,
    pub tolerance: f64,
    /// Only parameters whose names start with one of these prefixes are
    /// sampled. Empty means every parameter.
    pub prefixes: Vec<String>,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: 200,
            tolerance: 1e-4,
            prefixes: Vec::new(),
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates dropped because a ReLU switched inside the difference interval.
    pub skipped_kinks: usize,
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward-pass gradients of the scalar built by `build` with central
/// differences over a random sample of parameter coordinates.
pub fn grad_check<R, F>(
    store: &ParamStore,
    build: F,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport, NnError>
where
    R: Rng,
    F: Fn(&mut Graph) -> Result<NodeId, NnError>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };

    let mut coords = Vec::new();
    for (index, name) in store.indexed_names() {
        if opts.prefixes.is_empty() || opts.prefixes.iter().any(|p| name.starts_with(p.as_str())) {
            for j in 0..store.value(index).len() {
                coords.push((index, j));
            }
        }
    }
    if coords.is_empty() {
        return Err(NnError::Usage("grad_check: no parameters match the requested prefixes".into()));
    }
    coords.shuffle(rng);
    coords.truncate(opts.samples);

    let mut work = store.clone();
    let eval = |work: &ParamStore| -> Result<(f64, u64), NnError> {
        let mut g = Graph::new(work);
        let loss = build(&mut g)?;
        Ok((g.scalar(loss), g.activation_signature()))
    };
    let (_, base_sig) = eval(&work)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
        tolerance: opts.tolerance,
        passed: true,
    };
    for (index, j) in coords {
        let original = work.value(index).data()[j];
        work.value_mut(index).data_mut()[j] = original + opts.step;
        let (plus, sig_plus) = eval(&work)?;
        work.value_mut(index).data_mut()[j] = original - opts.step;
        let (minus, sig_minus) = eval(&work)?;
        work.value_mut(index).data_mut()[j] = original;
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * opts.step);
        let analytic = grads.get(index).map_or(0.0, |t| t.data()[j]);
        let err = relative_error(analytic, numeric, opts.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((store.name(index).to_string(), j, analytic, numeric));
        }
    }
    report.passed = report.checked > 0 && report.max_rel_error <= opts.tolerance;
    Ok(report)
}
