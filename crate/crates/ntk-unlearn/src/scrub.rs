//! The one-shot kernel-based unlearning update.
//!
//! Given Jacobians J_r, J_f of the retain and forget sets and logit-space
//! residuals a = y − f(D), the masked parameter update is
//!
//!   δ = (P·J_fᵀ) · M · V
//!
//! with P = I − J_rᵀ·K_rr⁻¹·J_r (never materialized), M the inverse of the
//! Schur complement K_ff − K_rfᵀ·K_rr⁻¹·K_rf, and V = K_rfᵀ·K_rr⁻¹·a_r − a_f.
//! For a linear model this lands exactly on the retain-only least-squares
//! solution grown from the initialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SolveStage};
use crate::models::{Model, ParamMask};
use crate::ntk::{assemble_jacobian, kernel_blocks, memory_estimate, Jacobian};
use crate::numerics::{l2_norm, min_eig_estimate, solve_psd_staged, DenseMatrix, JitterPolicy, PsdFactor};

/// Where the residuals y − f(D) are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPoint {
    /// The pre-fine-tune initialization (the default; matches the
    /// linearize-around-initialization derivation).
    Initialization,
    /// The fine-tuned parameters (ablation only).
    Final,
}

/// Logit-space residuals of the retain and forget sets, flattened
/// sample-major, class-minor.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub a_r: Vec<f64>,
    pub a_f: Vec<f64>,
    pub eval_point: EvalPoint,
}

impl Residuals {
    /// Evaluates y − f(D) for both splits on the given model.
    pub fn evaluate(
        model: &Model,
        retain_inputs: &DenseMatrix,
        retain_labels: &[usize],
        forget_inputs: &DenseMatrix,
        forget_labels: &[usize],
        eval_point: EvalPoint,
    ) -> Result<Residuals> {
        Ok(Residuals {
            a_r: residual_vector(model, retain_inputs, retain_labels)?,
            a_f: residual_vector(model, forget_inputs, forget_labels)?,
            eval_point,
        })
    }
}

/// One-hot targets minus logits, flattened sample-major class-minor.
pub fn residual_vector(model: &Model, inputs: &DenseMatrix, labels: &[usize]) -> Result<Vec<f64>> {
    let c = model.spec.num_classes;
    if labels.len() != inputs.rows() {
        return Err(Error::DimensionMismatch {
            context: "residuals".into(),
            expected: format!("{} labels", inputs.rows()),
            got: format!("{}", labels.len()),
        });
    }
    for &y in labels {
        if y >= c {
            return Err(Error::LabelRange {
                label: y,
                num_classes: c,
            });
        }
    }
    let f = model.forward(inputs)?;
    let mut a = vec![0.0; inputs.rows() * c];
    for s in 0..inputs.rows() {
        for cl in 0..c {
            let y = if labels[s] == cl { 1.0 } else { 0.0 };
            a[s * c + cl] = y - f[(s, cl)];
        }
    }
    Ok(a)
}

/// The update plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct ScrubReport {
    pub delta: Vec<f64>,
    pub jitter_rr: f64,
    pub jitter_schur: f64,
    pub schur_min_eig_estimate: f64,
    pub v_norm: f64,
    pub m_norm: f64,
    pub delta_norm: f64,
}

impl ScrubReport {
    /// Key-value text form consumed by the experiment harness.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("d_masked = {}\n", self.delta.len()));
        out.push_str(&format!("jitter_rr = {}\n", self.jitter_rr));
        out.push_str(&format!("jitter_schur = {}\n", self.jitter_schur));
        out.push_str(&format!(
            "schur_min_eig_estimate = {}\n",
            self.schur_min_eig_estimate
        ));
        out.push_str(&format!("v_norm = {}\n", self.v_norm));
        out.push_str(&format!("m_norm = {}\n", self.m_norm));
        out.push_str(&format!("delta_norm = {}\n", self.delta_norm));
        out
    }
}

fn symmetrize(m: &mut DenseMatrix) {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of the Schur complement S = K_ff − K_rfᵀ·K_rr⁻¹·K_rf, plus the
/// Schur-stage jitter and a minimum-eigenvalue estimate of S before jitter.
pub fn compute_m_with_diagnostics(
    k_ff: &DenseMatrix,
    k_rf: &DenseMatrix,
    rr_solver: &PsdFactor,
    policy: &JitterPolicy,
) -> Result<(DenseMatrix, f64, f64)> {
    let nf = k_ff.rows();
    if k_rf.cols() != nf || k_rf.rows() != rr_solver.n() {
        return Err(Error::DimensionMismatch {
            context: "compute_m".into(),
            expected: format!("K_rf {}x{}", rr_solver.n(), nf),
            got: format!("K_rf {}x{}", k_rf.rows(), k_rf.cols()),
        });
    }
    if nf == 0 {
        return Ok((DenseMatrix::zeros(0, 0), 0.0, 0.0));
    }
    let (x, _) = rr_solver.solve(k_rf)?;
    m_from_solved(k_ff, k_rf, &x, policy)
}

/// M, Schur jitter, and the min-eigenvalue diagnostic from a precomputed
/// Z = K_rr⁻¹·K_rf.
fn m_from_solved(
    k_ff: &DenseMatrix,
    k_rf: &DenseMatrix,
    z: &DenseMatrix,
    policy: &JitterPolicy,
) -> Result<(DenseMatrix, f64, f64)> {
    let nf = k_ff.rows();
    if nf == 0 {
        return Ok((DenseMatrix::zeros(0, 0), 0.0, 0.0));
    }
    let mut s = k_ff.clone();
    let cross = k_rf.matmul_t_left(z);
    for i in 0..nf {
        for j in 0..nf {
            s[(i, j)] -= cross[(i, j)];
        }
    }
    symmetrize(&mut s);
    let schur_min_eig = min_eig_estimate(&s)?;
    let identity = DenseMatrix::identity(nf);
    let (mut m, jitter_schur) = solve_psd_staged(&s, &identity, policy, SolveStage::Schur)?;
    symmetrize(&mut m);
    Ok((m, jitter_schur, schur_min_eig))
}

/// Inverse of the Schur complement K_ff − K_rfᵀ·K_rr⁻¹·K_rf.
pub fn compute_m(
    k_ff: &DenseMatrix,
    k_rf: &DenseMatrix,
    rr_solver: &PsdFactor,
    policy: &JitterPolicy,
) -> Result<DenseMatrix> {
    compute_m_with_diagnostics(k_ff, k_rf, rr_solver, policy).map(|(m, _, _)| m)
}

/// V = K_rfᵀ·K_rr⁻¹·a_r − a_f.
pub fn compute_v(residuals: &Residuals, k_rf: &DenseMatrix, rr_solver: &PsdFactor) -> Result<Vec<f64>> {
    if residuals.a_r.len() != k_rf.rows() || residuals.a_f.len() != k_rf.cols() {
        return Err(Error::DimensionMismatch {
            context: "compute_v".into(),
            expected: format!("a_r {} and a_f {}", k_rf.rows(), k_rf.cols()),
            got: format!("a_r {} and a_f {}", residuals.a_r.len(), residuals.a_f.len()),
        });
    }
    let (y, _) = rr_solver.solve_vec(&residuals.a_r)?;
    let mut v = k_rf.matvec_t(&y);
    for (vi, af) in v.iter_mut().zip(&residuals.a_f) {
        *vi -= af;
    }
    Ok(v)
}

/// P·J_fᵀ = J_fᵀ − J_rᵀ·K_rr⁻¹·K_rf, without forming P. Columns are
/// orthogonal to every row of J_r (up to solver tolerance).
pub fn project_forget(j_r: &DenseMatrix, j_f: &DenseMatrix, rr_solver: &PsdFactor) -> Result<DenseMatrix> {
    if j_r.cols() != j_f.cols() {
        return Err(Error::DimensionMismatch {
            context: "project_forget".into(),
            expected: format!("{} masked parameters", j_r.cols()),
            got: format!("{}", j_f.cols()),
        });
    }
    let k_rf = crate::numerics::gram(j_r, j_f)?;
    let (x, _) = rr_solver.solve(&k_rf)?;
    Ok(projected_from_solved(j_r, j_f, &x))
}

/// J_fᵀ − J_rᵀ·Z from a precomputed Z = K_rr⁻¹·K_rf.
fn projected_from_solved(j_r: &DenseMatrix, j_f: &DenseMatrix, z: &DenseMatrix) -> DenseMatrix {
    let mut out = j_f.transpose();
    let correction = j_r.matmul_t_left(z);
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            out[(i, j)] -= correction[(i, j)];
        }
    }
    out
}

/// Computes the scrub update from preassembled Jacobians and residuals.
pub fn scrub_with_jacobians(
    j_r: &Jacobian,
    j_f: &Jacobian,
    residuals: &Residuals,
    policy: &JitterPolicy,
) -> Result<ScrubReport> {
    let (k_rr, k_rf, k_ff) = kernel_blocks(j_r, j_f)?;
    let rr_solver = PsdFactor::new(k_rr.matrix, *policy, SolveStage::RetainKernel)?;
    let v = compute_v(residuals, &k_rf.matrix, &rr_solver)?;
    // Z = K_rr⁻¹·K_rf feeds both the Schur complement and the projection;
    // solving it once keeps this path bit-identical to the standalone ops.
    let (z, _) = rr_solver.solve(&k_rf.matrix)?;
    let (m, jitter_schur, schur_min_eig_estimate) =
        m_from_solved(&k_ff.matrix, &k_rf.matrix, &z, policy)?;
    let projected = projected_from_solved(&j_r.matrix, &j_f.matrix, &z);
    let mv = m.matvec(&v);
    let delta = projected.matvec(&mv);
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            context: "scrub delta".into(),
        });
    }
    Ok(ScrubReport {
        jitter_rr: rr_solver.jitter_observed(),
        jitter_schur,
        schur_min_eig_estimate,
        v_norm: l2_norm(&v),
        m_norm: m.frobenius_norm(),
        delta_norm: l2_norm(&delta),
        delta,
    })
}

/// Controls for a scrub run.
#[derive(Debug, Clone)]
pub struct ScrubOptions {
    pub policy: JitterPolicy,
    pub residuals_at: EvalPoint,
    /// Sample block size for Jacobian assembly.
    pub block_size: usize,
    /// Upper bound on the dense pipeline's memory estimate, if any.
    pub memory_budget: Option<u64>,
}

impl Default for ScrubOptions {
    fn default() -> Self {
        ScrubOptions {
            policy: JitterPolicy::default(),
            residuals_at: EvalPoint::Initialization,
            block_size: 64,
            memory_budget: None,
        }
    }
}

/// One-shot unlearning: Jacobians at the fine-tuned parameters, residuals at
/// the chosen evaluation point (initialization by default), update applied on
/// the masked entries only.
#[allow(clippy::too_many_arguments)]
pub fn scrub(
    model: &Model,
    model_init: &Model,
    retain_inputs: &DenseMatrix,
    retain_labels: &[usize],
    forget_inputs: &DenseMatrix,
    forget_labels: &[usize],
    mask: &ParamMask,
    options: &ScrubOptions,
) -> Result<(ScrubReport, Model)> {
    if model.params.layout() != model_init.params.layout() {
        return Err(Error::DimensionMismatch {
            context: "scrub".into(),
            expected: "fine-tuned and initial models with identical layouts".into(),
            got: "layout mismatch".into(),
        });
    }
    let c = model.spec.num_classes;
    let estimate = memory_estimate(retain_inputs.rows(), forget_inputs.rows(), c, mask.len());
    if let Some(budget) = options.memory_budget {
        if estimate > budget {
            return Err(Error::BudgetExceeded { estimate, budget });
        }
    }
    let residual_model = match options.residuals_at {
        EvalPoint::Initialization => model_init,
        EvalPoint::Final => model,
    };
    let residuals = Residuals::evaluate(
        residual_model,
        retain_inputs,
        retain_labels,
        forget_inputs,
        forget_labels,
        options.residuals_at,
    )?;
    let j_r = assemble_jacobian(model, retain_inputs, mask, options.block_size)?;
    let j_f = assemble_jacobian(model, forget_inputs, mask, options.block_size)?;
    let report = scrub_with_jacobians(&j_r, &j_f, &residuals, &options.policy)?;
    let scrubbed = model.with_delta(mask, &report.delta)?;
    Ok((report, scrubbed))
}

#[cfg(test)]
mod tests;
