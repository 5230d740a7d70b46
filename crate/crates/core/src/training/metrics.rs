use std::io::Write;

use super::TrainError;

/// Aggregated statistics of one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Mean final loss over the batch.
    pub loss: f64,
    /// Mean `ℓ_m` over the batch examples that ran at least `m` simulations.
    pub per_sim_losses: Vec<f64>,
    pub success_ratio: Option<f64>,
    pub grad_norm: f64,
    pub entropy: Option<f64>,
    /// Mean squared score-function weight, a cheap proxy for estimator variance.
    pub score_weight_sq: f64,
}

/// CSV stream with header `step,loss,l_1..l_K,success_ratio,grad_norm,entropy`.
pub struct MetricsWriter<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, max_simulations: usize) -> Result<Self, TrainError> {
        out.write_all(header(max_simulations).as_bytes())?;
        Ok(Self {
            out,
            columns: max_simulations,
        })
    }

    /// Appends to an existing stream without writing a header.
    pub fn resume(out: W, max_simulations: usize) -> Self {
        Self {
            out,
            columns: max_simulations,
        }
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<(), TrainError> {
        let mut row = format!("{},{}", m.step, m.loss);
        for i in 0..self.columns {
            row.push(',');
            if let Some(l) = m.per_sim_losses.get(i) {
                row.push_str(&l.to_string());
            }
        }
        row.push(',');
        if let Some(s) = m.success_ratio {
            row.push_str(&s.to_string());
        }
        row.push_str(&format!(",{},", m.grad_norm));
        if let Some(e) = m.entropy {
            row.push_str(&e.to_string());
        }
        row.push('\n');
        self.out.write_all(row.as_bytes())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn header(max_simulations: usize) -> String {
    let mut h = String::from("step,loss");
    for m in 1..=max_simulations {
        h.push_str(&format!(",l_{m}"));
    }
    h.push_str(",success_ratio,grad_norm,entropy\n");
    h
}
