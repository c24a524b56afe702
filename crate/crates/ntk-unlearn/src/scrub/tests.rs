use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::models::{select_params, Architecture, MaskStrategy, Model, ModelSpec};
use crate::ntk::{assemble_jacobian, Jacobian};
use crate::numerics::{gram, solve_psd, DenseMatrix};
use crate::rng::{gaussian, rng_for};

fn linear_spec(input_dim: usize, num_classes: usize) -> ModelSpec {
    ModelSpec {
        architecture: Architecture::MlpNorm,
        layer_sizes: vec![],
        input_dim,
        num_classes,
        prompt_length: 0,
        embed_dim: 0,
        kernel_size: 0,
        in_channels: 0,
        out_channels: 0,
        groups: 1,
        use_bias: false,
        prompt_slots_masked: false,
    }
}

fn mlp_spec(input_dim: usize, hidden: usize, num_classes: usize) -> ModelSpec {
    ModelSpec {
        layer_sizes: vec![hidden],
        use_bias: true,
        ..linear_spec(input_dim, num_classes)
    }
}

fn random_matrix(rows: usize, cols: usize, tag: &str) -> DenseMatrix {
    let mut rng = rng_for(99, tag);
    DenseMatrix::from_fn(rows, cols, |_, _| gaussian(&mut rng))
}

fn random_labels(n: usize, num_classes: usize, tag: &str) -> Vec<usize> {
    use rand::Rng;
    let mut rng = rng_for(99, tag);
    (0..n).map(|_| rng.gen_range(0..num_classes)).collect()
}

fn single_logit_jacobian(matrix: DenseMatrix) -> Jacobian {
    Jacobian {
        n: matrix.rows(),
        num_classes: 1,
        mask_strategy: "full".into(),
        d_masked: matrix.cols(),
        matrix,
    }
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "got {g}, want {w} (tol {tol})");
    }
}

/// Two-parameter system with one retain and one forget sample:
/// J_r = [1, 0], J_f = [1, 1], a_r = [1], a_f = [0].
#[test]
fn worked_example_parts() {
    let j_r = DenseMatrix::from_rows(&[vec![1.0, 0.0]]);
    let j_f = DenseMatrix::from_rows(&[vec![1.0, 1.0]]);
    let policy = JitterPolicy::default();
    let k_rr = gram(&j_r, &j_r).unwrap();
    let k_rf = gram(&j_r, &j_f).unwrap();
    let k_ff = gram(&j_f, &j_f).unwrap();
    assert_eq!(k_rr[(0, 0)], 1.0);
    assert_eq!(k_rf[(0, 0)], 1.0);
    assert_eq!(k_ff[(0, 0)], 2.0);

    let rr = PsdFactor::new(k_rr, policy, SolveStage::RetainKernel).unwrap();
    let residuals = Residuals {
        a_r: vec![1.0],
        a_f: vec![0.0],
        eval_point: EvalPoint::Initialization,
    };
    let v = compute_v(&residuals, &k_rf, &rr).unwrap();
    assert_close(&v, &[1.0], 1e-12);

    let (m, jitter_schur, schur_min) = compute_m_with_diagnostics(&k_ff, &k_rf, &rr, &policy).unwrap();
    assert_eq!(jitter_schur, 0.0);
    assert!((schur_min - 1.0).abs() <= 1e-12);
    assert!((m[(0, 0)] - 1.0).abs() <= 1e-12);

    let projected = project_forget(&j_r, &j_f, &rr).unwrap();
    assert_eq!((projected.rows(), projected.cols()), (2, 1));
    assert_close(&[projected[(0, 0)], projected[(1, 0)]], &[0.0, 1.0], 1e-12);

    let delta = projected.matvec(&m.matvec(&v));
    assert_close(&delta, &[0.0, 1.0], 1e-12);
    let theta = [1.0, -1.0];
    let theta_r: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
    assert_close(&theta_r, &[1.0, 0.0], 1e-12);
}

#[test]
fn worked_example_full_pipeline() {
    let j_r = single_logit_jacobian(DenseMatrix::from_rows(&[vec![1.0, 0.0]]));
    let j_f = single_logit_jacobian(DenseMatrix::from_rows(&[vec![1.0, 1.0]]));
    let residuals = Residuals {
        a_r: vec![1.0],
        a_f: vec![0.0],
        eval_point: EvalPoint::Initialization,
    };
    let report = scrub_with_jacobians(&j_r, &j_f, &residuals, &JitterPolicy::default()).unwrap();
    assert_close(&report.delta, &[0.0, 1.0], 1e-12);
    assert_eq!(report.jitter_rr, 0.0);
    assert_eq!(report.jitter_schur, 0.0);
    assert!((report.schur_min_eig_estimate - 1.0).abs() <= 1e-12);
    assert!((report.v_norm - 1.0).abs() <= 1e-12);
    assert!((report.m_norm - 1.0).abs() <= 1e-12);
    assert!((report.delta_norm - 1.0).abs() <= 1e-12);
}

#[test]
fn empty_forget_yields_zero_update() {
    let j_r = single_logit_jacobian(DenseMatrix::from_rows(&[vec![1.0, 0.0]]));
    let j_f = single_logit_jacobian(DenseMatrix::zeros(0, 2));
    let residuals = Residuals {
        a_r: vec![1.0],
        a_f: vec![],
        eval_point: EvalPoint::Initialization,
    };
    let report = scrub_with_jacobians(&j_r, &j_f, &residuals, &JitterPolicy::default()).unwrap();
    assert_eq!(report.delta, vec![0.0, 0.0]);
    assert_eq!(report.delta_norm, 0.0);
    assert_eq!(report.v_norm, 0.0);
    assert_eq!(report.m_norm, 0.0);
}

/// With no retain data the projector is the identity and the update reduces
/// to −J_fᵀ·K_ff⁻¹·a_f.
#[test]
fn empty_retain_uses_forget_kernel_alone() {
    let j_r = single_logit_jacobian(DenseMatrix::zeros(0, 2));
    let j_f = single_logit_jacobian(DenseMatrix::from_rows(&[vec![1.0, 0.0]]));
    let residuals = Residuals {
        a_r: vec![],
        a_f: vec![2.0],
        eval_point: EvalPoint::Initialization,
    };
    let report = scrub_with_jacobians(&j_r, &j_f, &residuals, &JitterPolicy::default()).unwrap();
    assert_close(&report.delta, &[-2.0, 0.0], 1e-12);
}

/// Orthogonal retain and forget rows decouple: M inverts K_ff directly and V
/// ignores the retain residuals.
#[test]
fn zero_cross_kernel_decouples_sets() {
    let j_r = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
    let j_f = DenseMatrix::from_rows(&[vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let policy = JitterPolicy::default();
    let k_rf = gram(&j_r, &j_f).unwrap();
    let k_ff = gram(&j_f, &j_f).unwrap();
    let rr = PsdFactor::new(gram(&j_r, &j_r).unwrap(), policy, SolveStage::RetainKernel).unwrap();

    let m = compute_m(&k_ff, &k_rf, &rr, &policy).unwrap();
    assert_close(m.data(), &[0.25, 0.0, 0.0, 1.0], 1e-12);

    let residuals = Residuals {
        a_r: vec![5.0],
        a_f: vec![3.0, -1.0],
        eval_point: EvalPoint::Initialization,
    };
    let v = compute_v(&residuals, &k_rf, &rr).unwrap();
    assert_close(&v, &[-3.0, 1.0], 1e-12);
}

#[test]
fn zero_residuals_give_exactly_zero_update() {
    let j_r = single_logit_jacobian(random_matrix(3, 8, "zr_jr"));
    let j_f = single_logit_jacobian(random_matrix(2, 8, "zr_jf"));
    let residuals = Residuals {
        a_r: vec![0.0; 3],
        a_f: vec![0.0; 2],
        eval_point: EvalPoint::Initialization,
    };
    let report = scrub_with_jacobians(&j_r, &j_f, &residuals, &JitterPolicy::default()).unwrap();
    assert!(report.delta.iter().all(|d| *d == 0.0));
    assert_eq!(report.v_norm, 0.0);
}

#[test]
fn projection_annihilates_retain_rows() {
    let j_r = random_matrix(4, 12, "ann");
    let j_r_rhs = j_r.clone();
    let rr = PsdFactor::new(
        gram(&j_r, &j_r).unwrap(),
        JitterPolicy::default(),
        SolveStage::RetainKernel,
    )
    .unwrap();
    let projected = project_forget(&j_r, &j_r_rhs, &rr).unwrap();
    let scale = 1.0_f64.max(j_r.max_abs());
    assert!(projected.max_abs() <= 1e-10 * scale, "max {} over scale {scale}", projected.max_abs());
}

/// Columns of P·J_fᵀ carry no component along any retain gradient.
#[test]
fn projected_columns_orthogonal_to_retain() {
    let j_r = random_matrix(3, 10, "orth_r");
    let j_f = random_matrix(2, 10, "orth_f");
    let rr = PsdFactor::new(
        gram(&j_r, &j_r).unwrap(),
        JitterPolicy::default(),
        SolveStage::RetainKernel,
    )
    .unwrap();
    let projected = project_forget(&j_r, &j_f, &rr).unwrap();
    assert_eq!(rr.jitter_observed(), 0.0);
    let overlap = j_r.matmul(&projected);
    let bound = 1e-8 * j_r.frobenius_norm() * j_f.frobenius_norm();
    assert!(overlap.max_abs() <= bound, "overlap {} > {bound}", overlap.max_abs());
}

/// The materialized projector (test only; the library never forms it) is
/// idempotent and symmetric.
#[test]
fn projector_is_symmetric_idempotent() {
    let j_r = random_matrix(4, 9, "proj");
    let rr = PsdFactor::new(
        gram(&j_r, &j_r).unwrap(),
        JitterPolicy::default(),
        SolveStage::RetainKernel,
    )
    .unwrap();
    let (x, _) = rr.solve(&j_r).unwrap();
    let mut p = DenseMatrix::identity(9);
    let correction = j_r.matmul_t_left(&x);
    for i in 0..9 {
        for j in 0..9 {
            p[(i, j)] -= correction[(i, j)];
        }
    }
    let pp = p.matmul(&p);
    let mut idem = 0.0;
    let mut asym = 0.0_f64;
    for i in 0..9 {
        for j in 0..9 {
            let d = pp[(i, j)] - p[(i, j)];
            idem += d * d;
            asym = asym.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    assert!(idem.sqrt() <= 1e-8, "‖P²−P‖ = {}", idem.sqrt());
    assert!(asym <= 1e-10, "max |P−Pᵀ| = {asym}");
}

struct LinearFixture {
    spec: ModelSpec,
    model_init: Model,
    model_star: Model,
    retain_inputs: DenseMatrix,
    retain_labels: Vec<usize>,
    forget_inputs: DenseMatrix,
    forget_labels: Vec<usize>,
    mask: crate::models::ParamMask,
    expected_retain_only: Vec<f64>,
}

/// Builds a pure-linear model, fine-tunes it in closed form to interpolate
/// all ten samples, and precomputes the retain-only interpolant the scrub
/// must land on.
fn linear_fixture() -> LinearFixture {
    let spec = linear_spec(12, 2);
    let model_init = Model::init(spec.clone(), 7).unwrap();
    let mask = select_params(&spec, &MaskStrategy::Full).unwrap();
    let n_r = 7;
    let n_f = 3;
    let retain_inputs = random_matrix(n_r, 12, "lin_retain");
    let forget_inputs = random_matrix(n_f, 12, "lin_forget");
    let retain_labels = random_labels(n_r, 2, "lin_retain_y");
    let forget_labels = random_labels(n_f, 2, "lin_forget_y");

    let mut all_inputs = DenseMatrix::zeros(n_r + n_f, 12);
    for s in 0..n_r {
        all_inputs.row_mut(s).copy_from_slice(retain_inputs.row(s));
    }
    for s in 0..n_f {
        all_inputs.row_mut(n_r + s).copy_from_slice(forget_inputs.row(s));
    }
    let mut all_labels = retain_labels.clone();
    all_labels.extend_from_slice(&forget_labels);

    let policy = JitterPolicy::default();
    let j_all = assemble_jacobian(&model_init, &all_inputs, &mask, 64).unwrap();
    let a_all = residual_vector(&model_init, &all_inputs, &all_labels).unwrap();
    let k_all = gram(&j_all.matrix, &j_all.matrix).unwrap();
    let b = DenseMatrix::from_vec(a_all.len(), 1, a_all.clone());
    let (w, jitter) = solve_psd(&k_all, &b, &policy).unwrap();
    assert_eq!(jitter, 0.0, "fixture kernel must be well conditioned");
    let delta_star = j_all.matrix.matvec_t(&w.col(0));
    let model_star = model_init.with_delta(&mask, &delta_star).unwrap();
    let interp = residual_vector(&model_star, &all_inputs, &all_labels).unwrap();
    assert!(l2_norm(&interp) <= 1e-8, "fixture must interpolate, residual {}", l2_norm(&interp));

    let j_r = assemble_jacobian(&model_init, &retain_inputs, &mask, 64).unwrap();
    let a_r = residual_vector(&model_init, &retain_inputs, &retain_labels).unwrap();
    let k_rr = gram(&j_r.matrix, &j_r.matrix).unwrap();
    let b_r = DenseMatrix::from_vec(a_r.len(), 1, a_r);
    let (w_r, _) = solve_psd(&k_rr, &b_r, &policy).unwrap();
    let delta_r = j_r.matrix.matvec_t(&w_r.col(0));
    let expected_retain_only = model_init
        .params
        .values()
        .iter()
        .zip(&delta_r)
        .map(|(t, d)| t + d)
        .collect();

    LinearFixture {
        spec,
        model_init,
        model_star,
        retain_inputs,
        retain_labels,
        forget_inputs,
        forget_labels,
        mask,
        expected_retain_only,
    }
}

/// For a linear model the one-shot update lands on the retain-only solution
/// grown from the same initialization.
#[test]
fn linear_scrub_matches_retain_only_solution() {
    let fx = linear_fixture();
    let (report, scrubbed) = scrub(
        &fx.model_star,
        &fx.model_init,
        &fx.retain_inputs,
        &fx.retain_labels,
        &fx.forget_inputs,
        &fx.forget_labels,
        &fx.mask,
        &ScrubOptions::default(),
    )
    .unwrap();
    assert!(report.delta_norm > 0.0);
    let got = scrubbed.params.values();
    let want = &fx.expected_retain_only;
    let mut err = 0.0;
    let mut scale = 0.0;
    for (g, w) in got.iter().zip(want) {
        err += (g - w) * (g - w);
        scale += w * w;
    }
    let rel = err.sqrt() / 1.0_f64.max(scale.sqrt());
    assert!(rel <= 1e-6, "relative distance {rel}");
    assert_eq!(scrubbed.spec, fx.spec);
}

/// Residuals taken at the fine-tuned point of an interpolating model are
/// zero, so the update collapses.
#[test]
fn final_point_residuals_collapse_update() {
    let fx = linear_fixture();
    let options = ScrubOptions {
        residuals_at: EvalPoint::Final,
        ..ScrubOptions::default()
    };
    let (report, scrubbed) = scrub(
        &fx.model_star,
        &fx.model_init,
        &fx.retain_inputs,
        &fx.retain_labels,
        &fx.forget_inputs,
        &fx.forget_labels,
        &fx.mask,
        &options,
    )
    .unwrap();
    assert!(report.delta_norm <= 1e-6, "delta norm {}", report.delta_norm);
    let max_shift = scrubbed
        .params
        .values()
        .iter()
        .zip(fx.model_star.params.values())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(max_shift <= 1e-6);
}

/// The update is confined to the masked coordinates: everything else comes
/// through bit-identical.
#[test]
fn masked_scrub_leaves_unmasked_bitwise() {
    let spec = mlp_spec(4, 5, 2);
    let model_init = Model::init(spec.clone(), 11).unwrap();
    let full = select_params(&spec, &MaskStrategy::Full).unwrap();
    let mut drift_rng = rng_for(11, "drift");
    let drift: Vec<f64> = (0..full.len()).map(|_| 0.05 * gaussian(&mut drift_rng)).collect();
    let model = model_init.with_delta(&full, &drift).unwrap();

    let mask = select_params(&spec, &MaskStrategy::HeadOnly).unwrap();
    let retain_inputs = random_matrix(3, 4, "mask_retain");
    let forget_inputs = random_matrix(2, 4, "mask_forget");
    let (report, scrubbed) = scrub(
        &model,
        &model_init,
        &retain_inputs,
        &random_labels(3, 2, "mask_retain_y"),
        &forget_inputs,
        &random_labels(2, 2, "mask_forget_y"),
        &mask,
        &ScrubOptions::default(),
    )
    .unwrap();
    assert_eq!(report.delta.len(), mask.len());

    let mut cursor = 0;
    for (i, (before, after)) in model
        .params
        .values()
        .iter()
        .zip(scrubbed.params.values())
        .enumerate()
    {
        if cursor < mask.len() && mask.indices()[cursor] == i {
            let want = before + report.delta[cursor];
            assert_eq!(after.to_bits(), want.to_bits(), "masked index {i}");
            cursor += 1;
        } else {
            assert_eq!(after.to_bits(), before.to_bits(), "unmasked index {i}");
        }
    }
}

#[test]
fn model_level_empty_forget_is_identity() {
    let fx = linear_fixture();
    let empty_inputs = DenseMatrix::zeros(0, 12);
    let (report, scrubbed) = scrub(
        &fx.model_star,
        &fx.model_init,
        &fx.retain_inputs,
        &fx.retain_labels,
        &empty_inputs,
        &[],
        &fx.mask,
        &ScrubOptions::default(),
    )
    .unwrap();
    assert_eq!(report.delta_norm, 0.0);
    for (a, b) in scrubbed.params.values().iter().zip(fx.model_star.params.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn singular_retain_kernel_reports_rr_stage() {
    let j_r = single_logit_jacobian(DenseMatrix::zeros(1, 2));
    let j_f = single_logit_jacobian(DenseMatrix::from_rows(&[vec![1.0, 1.0]]));
    let residuals = Residuals {
        a_r: vec![1.0],
        a_f: vec![0.0],
        eval_point: EvalPoint::Initialization,
    };
    let err = scrub_with_jacobians(&j_r, &j_f, &residuals, &JitterPolicy::default()).unwrap_err();
    assert!(
        matches!(err, Error::SingularBeyondPolicy { stage: SolveStage::RetainKernel, .. }),
        "got {err}"
    );
    assert!(err.to_string().contains("rr"));
}

/// A forget gradient living entirely inside the retain span makes the Schur
/// complement exactly zero; the failure names the schur stage.
#[test]
fn degenerate_schur_reports_schur_stage() {
    let row = DenseMatrix::from_rows(&[vec![1.0, 0.0]]);
    let j_r = single_logit_jacobian(row.clone());
    let j_f = single_logit_jacobian(row);
    let residuals = Residuals {
        a_r: vec![1.0],
        a_f: vec![1.0],
        eval_point: EvalPoint::Initialization,
    };
    let err = scrub_with_jacobians(&j_r, &j_f, &residuals, &JitterPolicy::default()).unwrap_err();
    assert!(
        matches!(err, Error::SingularBeyondPolicy { stage: SolveStage::Schur, .. }),
        "got {err}"
    );
    assert!(err.to_string().contains("schur"));
}

#[test]
fn memory_budget_enforced() {
    let fx = linear_fixture();
    let options = ScrubOptions {
        memory_budget: Some(8),
        ..ScrubOptions::default()
    };
    let err = scrub(
        &fx.model_star,
        &fx.model_init,
        &fx.retain_inputs,
        &fx.retain_labels,
        &fx.forget_inputs,
        &fx.forget_labels,
        &fx.mask,
        &options,
    )
    .unwrap_err();
    let expected = crate::ntk::memory_estimate(7, 3, 2, fx.mask.len());
    match err {
        Error::BudgetExceeded { estimate, budget } => {
            assert_eq!(estimate, expected);
            assert_eq!(budget, 8);
        }
        other => panic!("expected budget error, got {other}"),
    }
}

#[test]
fn mismatched_model_layouts_rejected() {
    let fx = linear_fixture();
    let other_init = Model::init(linear_spec(12, 3), 7).unwrap();
    let err = scrub(
        &fx.model_star,
        &other_init,
        &fx.retain_inputs,
        &fx.retain_labels,
        &fx.forget_inputs,
        &fx.forget_labels,
        &fx.mask,
        &ScrubOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }), "got {err}");
}

#[test]
fn residuals_validate_labels() {
    let spec = linear_spec(3, 2);
    let model = Model::init(spec, 1).unwrap();
    let inputs = random_matrix(2, 3, "labels");
    let err = residual_vector(&model, &inputs, &[0, 2]).unwrap_err();
    assert!(
        matches!(err, Error::LabelRange { label: 2, num_classes: 2 }),
        "got {err}"
    );
    let err = residual_vector(&model, &inputs, &[0]).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }), "got {err}");
}

#[test]
fn report_text_lists_every_diagnostic() {
    let report = ScrubReport {
        delta: vec![0.0, 1.0],
        jitter_rr: 0.0,
        jitter_schur: 1e-8,
        schur_min_eig_estimate: 0.5,
        v_norm: 1.0,
        m_norm: 2.0,
        delta_norm: 1.0,
    };
    let text = report.to_text();
    assert_eq!(text.lines().count(), 7);
    for key in [
        "d_masked = 2",
        "jitter_rr = 0",
        "jitter_schur = 0.00000001",
        "schur_min_eig_estimate = 0.5",
        "v_norm = 1",
        "m_norm = 2",
        "delta_norm = 1",
    ] {
        assert!(text.lines().any(|l| l == key), "missing `{key}` in:\n{text}");
    }
}

fn jacobian_pair_strategy() -> impl Strategy<Value = (DenseMatrix, DenseMatrix)> {
    (2usize..=10).prop_flat_map(|d| {
        let entries = -2.0..2.0f64;
        ((1usize..=3), (1usize..=3), proptest::collection::vec(entries.clone(), 30), proptest::collection::vec(entries, 30))
            .prop_map(move |(nr, nf, ev_r, ev_f)| {
                let j_r = DenseMatrix::from_fn(nr, d, |i, j| ev_r[i * d + j]);
                let j_f = DenseMatrix::from_fn(nf, d, |i, j| ev_f[i * d + j]);
                (j_r, j_f)
            })
    })
}

proptest! {
    /// To first order the update never moves retain outputs: J_r·δ ≈ 0
    /// whenever no jitter was needed.
    #[test]
    fn retain_outputs_invariant_when_well_conditioned(
        (j_r, j_f) in jacobian_pair_strategy(),
        a_r in proptest::collection::vec(-1.0..1.0f64, 3),
        a_f in proptest::collection::vec(-1.0..1.0f64, 3),
    ) {
        let residuals = Residuals {
            a_r: a_r[..j_r.rows()].to_vec(),
            a_f: a_f[..j_f.rows()].to_vec(),
            eval_point: EvalPoint::Initialization,
        };
        let jr = single_logit_jacobian(j_r.clone());
        let jf = single_logit_jacobian(j_f.clone());
        let Ok(report) = scrub_with_jacobians(&jr, &jf, &residuals, &JitterPolicy::default()) else {
            // Degenerate draw; singularity handling is covered elsewhere.
            return Ok(());
        };
        if report.jitter_rr == 0.0 && report.jitter_schur == 0.0 {
            let moved = j_r.matvec(&report.delta);
            // Solver contract: ‖K_rf − K_rr·X‖ ≤ 1e-8·max(1,‖K_rf‖), and the
            // moved logits are that residual times M·V.
            let bound = 1e-6
                * 1.0_f64.max(j_r.frobenius_norm() * j_f.frobenius_norm())
                * 1.0_f64.max(report.m_norm * report.v_norm);
            prop_assert!(l2_norm(&moved) <= bound, "retain logits moved by {}", l2_norm(&moved));
        }
    }

    /// Empty forget sets always return a zero update, whatever the retain set.
    #[test]
    fn empty_forget_always_identity((j_r, _) in jacobian_pair_strategy()) {
        let d = j_r.cols();
        let jr = single_logit_jacobian(j_r.clone());
        let jf = single_logit_jacobian(DenseMatrix::zeros(0, d));
        let residuals = Residuals {
            a_r: vec![0.5; j_r.rows()],
            a_f: vec![],
            eval_point: EvalPoint::Initialization,
        };
        let Ok(report) = scrub_with_jacobians(&jr, &jf, &residuals, &JitterPolicy::default()) else {
            return Ok(());
        };
        prop_assert!(report.delta.iter().all(|v| *v == 0.0));
    }
}
