//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::error::{Error, Result};

/// Anything exposing its parameters as named flat blocks.
///
/// Block order must be stable across calls; gradients are matched to
/// parameters by position.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

/// Worst finite-difference disagreement within one parameter block.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Finite-difference report over all parameter blocks of one loss.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    pub fn failing_blocks(&self, tol: f64) -> Vec<&BlockCheck> {
        self.blocks.iter().filter(|b| b.max_rel_err >= tol).collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "  {:<40} entries {:>6}  max rel err {:.3e}  (analytic {:+.6e}, numeric {:+.6e})",
                b.name, b.entries, b.max_rel_err, b.analytic_at_worst, b.numeric_at_worst
            )?;
        }
        Ok(())
    }
}

/// Relative error with a denominator floor of `1e-5`: central
/// differences of unit-scale losses bottom out around `1e-10` absolute,
/// so for near-zero gradients the comparison is effectively absolute at
/// that noise floor instead of dividing roundoff by roundoff.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-5);
    (analytic - numeric).abs() / denom
}

/// Compare `analytic` gradients against central finite differences of
/// `loss` with the given `step`, block by block, entry by entry.
///
/// `analytic` must align with `model.blocks()`. The loss must be a pure
/// function of the model parameters (targets and noise held fixed).
pub fn check_gradients<M, F>(
    model: &mut M,
    mut loss: F,
    analytic: &[(String, Vec<f64>)],
    step: f64,
) -> Result<GradCheckReport>
where
    M: ParamBlocks,
    F: FnMut(&M) -> Result<f64>,
{
    let n_blocks = model.blocks().len();
    assert_eq!(
        n_blocks,
        analytic.len(),
        "analytic gradient block count mismatch"
    );

    let set = |m: &mut M, bi: usize, j: usize, v: f64| -> f64 {
        let mut blocks = m.blocks_mut();
        let old = blocks[bi].1[j];
        blocks[bi].1[j] = v;
        old
    };

    let mut report = GradCheckReport { blocks: Vec::new() };
    for bi in 0..n_blocks {
        let (name, len) = {
            let blocks = model.blocks();
            (blocks[bi].0.clone(), blocks[bi].1.len())
        };
        let (g_name, g) = &analytic[bi];
        assert_eq!(&name, g_name, "gradient block order mismatch");
        assert_eq!(g.len(), len, "gradient block length mismatch for `{name}`");

        let mut check = BlockCheck {
            name,
            entries: len,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for j in 0..len {
            let mut probe = |h: f64, m: &mut M| -> Result<f64> {
                let x = set(m, bi, j, 0.0); // read; value restored just below
                set(m, bi, j, x + h);
                let lp = loss(m)?;
                set(m, bi, j, x - h);
                let lm = loss(m)?;
                set(m, bi, j, x);
                if !lp.is_finite() || !lm.is_finite() {
                    return Err(Error::Divergence(format!(
                        "loss returned non-finite value while probing entry {j}"
                    )));
                }
                Ok((lp - lm) / (2.0 * h))
            };
            let mut numeric = probe(step, model)?;
            let mut err = rel_err(g[j], numeric);
            // A piecewise-linear activation kink inside the probe window
            // corrupts the secant; shrinking the step moves the window off
            // the kink, while a genuinely wrong analytic gradient stays
            // wrong at every step size.
            if err > 1e-5 {
                for shrink in [4.0, 16.0] {
                    let n2 = probe(step / shrink, model)?;
                    let e2 = rel_err(g[j], n2);
                    if e2 < err {
                        err = e2;
                        numeric = n2;
                    }
                }
            }
            if err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_index = j;
                check.analytic_at_worst = g[j];
                check.numeric_at_worst = numeric;
            }
        }
        report.blocks.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        p: Vec<f64>,
    }

    impl ParamBlocks for Quadratic {
        fn blocks(&self) -> Vec<(String, &[f64])> {
            vec![("p".to_string(), self.p.as_slice())]
        }
        fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
            vec![("p".to_string(), self.p.as_mut_slice())]
        }
    }

    #[test]
    fn quadratic_loss_analytic_gradient_passes() {
        // loss = |p|^2, gradient 2p.
        let mut model = Quadratic {
            p: vec![0.5, -1.2, 2.0],
        };
        let analytic = vec![("p".to_string(), model.p.iter().map(|v| 2.0 * v).collect())];
        let report = check_gradients(
            &mut model,
            |m| Ok(m.p.iter().map(|v| v * v).sum()),
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-8), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut model = Quadratic {
            p: vec![0.5, -1.2, 2.0],
        };
        let mut grads: Vec<f64> = model.p.iter().map(|v| 2.0 * v).collect();
        grads[1] += 0.5;
        let analytic = vec![("p".to_string(), grads)];
        let report = check_gradients(
            &mut model,
            |m| Ok(m.p.iter().map(|v| v * v).sum()),
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.blocks[0].worst_index, 1);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let mut model = Quadratic { p: vec![1.0] };
        let analytic = vec![("p".to_string(), vec![0.0])];
        let err = check_gradients(&mut model, |_| Ok(f64::NAN), &analytic, 1e-5).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }
}
