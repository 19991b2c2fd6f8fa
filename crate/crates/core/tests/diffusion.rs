//! Forward-process, loss, and ancestral-sampler tests. The statistical
//! oracle is a conditional Gaussian whose exact posterior noise is known in
//! closed form, so the sampler can be validated end to end without training.

use boltzgen_core::diffusion::{
    ancestral_sample_batch, com_noise, com_project, loss_term_with_eps, make_schedule, q_sample,
    q_step, squared_error, squared_error_on, Denoiser, GaussianOracle, NetworkDenoiser,
    NoiseSchedule, ScheduleKind, ALPHA_BAR_TERMINAL_MAX,
};
use boltzgen_core::encoder::{encode, init_gtn, EncodedGraph, GtnConfig};
use boltzgen_core::exec::Serial;
use boltzgen_core::graph::{Atom, Bond, BondOrder, MolecularGraph};
use boltzgen_core::lappe::laplacian_pe;
use boltzgen_core::opt::ParamSet;
use boltzgen_core::rng::RngState;
use boltzgen_core::score::{init_schnet, SchnetConfig};
use boltzgen_core::tape::Tape;
use boltzgen_core::{CoreError, Tensor};

fn atom(z: u32) -> Atom {
    Atom {
        atomic_number: z,
        formal_charge: 0,
    }
}

fn diatomic() -> MolecularGraph {
    MolecularGraph::new(
        vec![atom(6), atom(8)],
        vec![Bond {
            i: 0,
            j: 1,
            order: BondOrder::Single,
        }],
    )
    .unwrap()
}

struct ZeroDenoiser {
    n: usize,
}

impl Denoiser for ZeroDenoiser {
    fn n_atoms(&self) -> usize {
        self.n
    }
    fn predict(&self, coords: &Tensor, _n_items: usize, _t: usize) -> boltzgen_core::error::Result<Tensor> {
        Ok(Tensor::zeros(&[coords.rows(), 3]))
    }
}

struct NanAtDenoiser {
    n: usize,
    bad_t: usize,
}

impl Denoiser for NanAtDenoiser {
    fn n_atoms(&self) -> usize {
        self.n
    }
    fn predict(&self, coords: &Tensor, _n_items: usize, t: usize) -> boltzgen_core::error::Result<Tensor> {
        let mut out = Tensor::zeros(&[coords.rows(), 3]);
        if t == self.bad_t {
            out.set(0, 0, f64::NAN);
        }
        Ok(out)
    }
}

// ----- schedules -----

#[test]
fn linear_schedule_spaces_betas_evenly() {
    let s = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    assert_eq!(s.t_max(), 1000);
    assert!((s.beta(1).unwrap() - 1e-4).abs() < 1e-18);
    assert!((s.beta(1000).unwrap() - 0.02).abs() < 1e-18);
    let step = (0.02 - 1e-4) / 999.0;
    for t in 2..=1000 {
        let d = s.beta(t).unwrap() - s.beta(t - 1).unwrap();
        assert!((d - step).abs() < 1e-15, "t={t}: uneven spacing {d}");
    }
}

#[test]
fn default_linear_terminal_signal_matches_independent_product() {
    let s = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    // Independent recomputation in reverse order.
    let mut prod = 1.0;
    for t in (1..=1000).rev() {
        prod *= 1.0 - s.beta(t).unwrap();
    }
    let abar = s.alpha_bar(1000).unwrap();
    assert!((abar - prod).abs() < 1e-12, "forward {abar} vs reverse {prod}");
    assert!(abar < ALPHA_BAR_TERMINAL_MAX);
    // Pinned value for the default schedule.
    assert!(
        (abar - 4.0358e-5).abs() < 1e-8,
        "terminal signal fraction drifted: {abar}"
    );
}

#[test]
fn sigmoid_schedule_follows_the_logistic_ramp() {
    let t_max = 1000;
    let (b0, b1) = (1e-4, 0.02);
    let s = make_schedule(ScheduleKind::Sigmoid, t_max, b0, b1).unwrap();
    // Midpoint: logistic(0) = 1/2 exactly.
    let mid = s.beta(t_max / 2).unwrap();
    assert!((mid - (b0 + (b1 - b0) * 0.5)).abs() < 1e-18);
    // Endpoint: logistic(6).
    let sig6 = 1.0 / (1.0 + libm::exp(-6.0));
    assert!((s.beta(t_max).unwrap() - (b0 + (b1 - b0) * sig6)).abs() < 1e-18);
    // Monotone non-decreasing, all within (b0, b1).
    for t in 2..=t_max {
        assert!(s.beta(t).unwrap() >= s.beta(t - 1).unwrap());
    }
    assert!(s.beta(1).unwrap() > b0 && s.beta(t_max).unwrap() < b1);
    assert!(s.alpha_bar(t_max).unwrap() < ALPHA_BAR_TERMINAL_MAX);
}

#[test]
fn schedule_kind_names_round_trip() {
    assert_eq!(ScheduleKind::from_name("linear"), Some(ScheduleKind::Linear));
    assert_eq!(ScheduleKind::from_name("sigmoid"), Some(ScheduleKind::Sigmoid));
    assert_eq!(ScheduleKind::from_name("cosine"), None);
    assert_eq!(ScheduleKind::Linear.name(), "linear");
    assert_eq!(ScheduleKind::Sigmoid.name(), "sigmoid");
}

#[test]
fn invalid_schedules_are_rejected() {
    assert!(NoiseSchedule::from_betas(vec![]).is_err());
    assert!(NoiseSchedule::from_betas(vec![0.0]).is_err());
    assert!(NoiseSchedule::from_betas(vec![1.0]).is_err());
    assert!(NoiseSchedule::from_betas(vec![0.1, f64::NAN]).is_err());
    assert!(make_schedule(ScheduleKind::Linear, 10, 0.02, 1e-4).is_err(), "start > end");
    assert!(make_schedule(ScheduleKind::Linear, 10, 1e-4, 1.0).is_err(), "end at 1");
    // Too little total noise: terminal signal fraction stays near 1.
    match make_schedule(ScheduleKind::Linear, 10, 1e-4, 2e-4) {
        Err(CoreError::InvalidSchedule { reason }) => {
            assert!(reason.contains("terminal"), "unexpected reason: {reason}")
        }
        other => panic!("expected InvalidSchedule, got {other:?}"),
    }
}

#[test]
fn time_indexing_is_one_based_and_bounded() {
    let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
    assert!((s.beta(1).unwrap() - 0.1).abs() < 1e-18);
    assert!((s.beta(2).unwrap() - 0.2).abs() < 1e-18);
    assert!(matches!(s.beta(0), Err(CoreError::TimeOutOfRange { t: 0, t_max: 2 })));
    assert!(matches!(s.alpha_bar(3), Err(CoreError::TimeOutOfRange { t: 3, t_max: 2 })));
}

#[test]
fn two_step_hand_schedule_has_known_signal_split() {
    // betas (0.1, 0.2): abar_1 = 0.9, abar_2 = 0.9 * 0.8 = 0.72, so the noise
    // variance at t=2 is 0.28.
    let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
    assert!((s.alpha_bar(1).unwrap() - 0.9).abs() < 1e-15);
    assert!((s.alpha_bar(2).unwrap() - 0.72).abs() < 1e-15);
    assert!((s.alpha(2).unwrap() - 0.8).abs() < 1e-15);
}

#[test]
fn per_step_moments_match_closed_form_for_the_full_horizon() {
    // Signal scale obeys scale_t = sqrt(1 - beta_t) scale_{t-1} and noise
    // variance v_t = (1 - beta_t) v_{t-1} + beta_t; both must agree with the
    // closed-form abar expressions at every t, with no sampling involved.
    let s = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let mut scale = 1.0f64;
    let mut v = 0.0f64;
    for t in 1..=1000 {
        let beta = s.beta(t).unwrap();
        scale *= libm::sqrt(1.0 - beta);
        v = (1.0 - beta) * v + beta;
        let abar = s.alpha_bar(t).unwrap();
        assert!(
            (scale - libm::sqrt(abar)).abs() < 1e-12,
            "t={t}: scale recursion {scale} vs sqrt(abar) {}",
            libm::sqrt(abar)
        );
        assert!(
            (v - (1.0 - abar)).abs() < 1e-12,
            "t={t}: variance recursion {v} vs 1-abar {}",
            1.0 - abar
        );
    }
}

// ----- forward process -----

#[test]
fn q_step_applies_single_step_coefficients() {
    let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
    let c0 = Tensor::from_rows3(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]]);
    let eps = Tensor::from_rows3(&[[0.5, -0.5, 0.25], [0.0, 1.0, -1.0]]);
    let c1 = q_step(&s, &c0, 1, &eps).unwrap();
    for i in 0..2 {
        for a in 0..3 {
            let expect = libm::sqrt(0.9) * c0.at(i, a) + libm::sqrt(0.1) * eps.at(i, a);
            assert!((c1.at(i, a) - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn chained_noiseless_steps_match_the_closed_form() {
    let s = make_schedule(ScheduleKind::Linear, 400, 5e-4, 0.04).unwrap();
    let c0 = Tensor::from_rows3(&[[0.4, -1.1, 2.0], [-0.4, 1.1, -2.0]]);
    let zero = Tensor::zeros(&[2, 3]);
    let mut c = c0.clone();
    for t in 1..=400 {
        c = q_step(&s, &c, t, &zero).unwrap();
    }
    let closed = q_sample(&s, &c0, 400, &zero).unwrap();
    for i in 0..2 {
        for a in 0..3 {
            assert!(
                (c.at(i, a) - closed.at(i, a)).abs() < 1e-12,
                "iterated q_step disagrees with closed form at ({i}, {a})"
            );
        }
    }
}

#[test]
fn q_sample_mixes_signal_and_noise_with_abar_weights() {
    let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
    let c0 = Tensor::from_rows3(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]]);
    let eps = Tensor::from_rows3(&[[1.0, 1.0, 1.0], [-1.0, 0.0, 2.0]]);
    let c2 = q_sample(&s, &c0, 2, &eps).unwrap();
    for i in 0..2 {
        for a in 0..3 {
            let expect = libm::sqrt(0.72) * c0.at(i, a) + libm::sqrt(0.28) * eps.at(i, a);
            assert!((c2.at(i, a) - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn q_sample_empirical_variance_matches_one_minus_abar() {
    // From c0 = 0 at t=2 of the (0.1, 0.2) schedule, each coordinate of the
    // zero-CoM state has variance 0.28 * (1 - 1/n).
    let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
    let n = 4usize;
    let c0 = Tensor::zeros(&[n, 3]);
    let rng = RngState::from_seed(404);
    let draws = 50_000usize;
    let mut sum_sq = 0.0;
    for k in 0..draws {
        let eps = com_noise(&rng.child(k as u64), n, 3);
        let ct = q_sample(&s, &c0, 2, &eps).unwrap();
        sum_sq += ct.data().iter().map(|v| v * v).sum::<f64>();
    }
    let per_coord = sum_sq / (draws * n * 3) as f64;
    let expect = 0.28 * (1.0 - 1.0 / n as f64);
    assert!(
        (per_coord - expect).abs() / expect < 0.02,
        "empirical {per_coord} vs analytic {expect}"
    );
}

// ----- center-of-mass projection -----

#[test]
fn com_project_is_idempotent_and_linear_and_kills_constants() {
    let rng = RngState::from_seed(5);
    let x = rng.child(0).gaussian(&[6, 3]);
    let y = rng.child(1).gaussian(&[6, 3]);
    let px = com_project(&x);
    let ppx = com_project(&px);
    for (a, b) in px.data().iter().zip(ppx.data().iter()) {
        assert!((a - b).abs() < 1e-15, "projection must be idempotent");
    }
    // Linearity: P(2x - 3y) = 2 P(x) - 3 P(y).
    let combo = x.scale(2.0).add_scaled(&y, -3.0).unwrap();
    let p_combo = com_project(&combo);
    let expect = px.scale(2.0).add_scaled(&com_project(&y), -3.0).unwrap();
    for (a, b) in p_combo.data().iter().zip(expect.data().iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    // Constant rows are the kernel.
    let mut konst = Tensor::zeros(&[5, 3]);
    for i in 0..5 {
        for a in 0..3 {
            konst.set(i, a, [1.5, -2.0, 0.25][a]);
        }
    }
    let pk = com_project(&konst);
    assert!(pk.data().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn projected_noise_has_three_n_minus_one_expected_norm() {
    // E ||P eps||^2 = 3 (n - 1); for n = 4 that is 9.
    let n = 4usize;
    let rng = RngState::from_seed(11);
    let draws = 40_000usize;
    let mut total = 0.0;
    for k in 0..draws {
        let e = com_noise(&rng.child(k as u64), n, 3);
        total += e.data().iter().map(|v| v * v).sum::<f64>();
    }
    let mean = total / draws as f64;
    assert!(
        (mean - 9.0).abs() < 0.1,
        "mean squared norm {mean} should be 3(n-1) = 9"
    );
}

// ----- loss -----

#[test]
fn squared_error_is_zero_on_the_target_and_sums_squares_otherwise() {
    let eps = RngState::from_seed(3).gaussian(&[4, 3]);
    assert_eq!(squared_error(&eps, &eps).unwrap(), 0.0);
    let zero = Tensor::zeros(&[4, 3]);
    let err = squared_error(&zero, &eps).unwrap();
    let expect: f64 = eps.data().iter().map(|v| v * v).sum();
    assert!((err - expect).abs() < 1e-12);
    // The tape version agrees with the plain version.
    let mut tape = Tape::new();
    let pred = tape.constant(zero);
    let on_tape = squared_error_on(&mut tape, pred, &eps, 1).unwrap();
    assert!((tape.value(on_tape).first() - expect).abs() < 1e-12);
}

/// Network fixture for loss tests: tiny encoder + score net on a diatomic.
struct LossFixture {
    graph: MolecularGraph,
    gtn_cfg: GtnConfig,
    s_cfg: SchnetConfig,
    params: ParamSet,
}

impl LossFixture {
    fn new(seed: u64) -> Self {
        let gtn_cfg = GtnConfig {
            layers: 1,
            heads: 2,
            model_dim: 6,
            pe_dim: 2,
            feedforward_dim: 8,
            dropout: 0.0,
        };
        let s_cfg = SchnetConfig {
            interaction_blocks: 1,
            feature_dim: 8,
            rbf_count: 5,
            r_cut: 10.0,
            time_dim: 4,
            denom_floor: 1e-6,
        };
        let rng = RngState::from_seed(seed);
        let mut params = init_gtn(&gtn_cfg, &rng.child_tag("enc")).unwrap();
        params
            .extend(init_schnet(&s_cfg, gtn_cfg.model_dim, &rng.child_tag("score")).unwrap())
            .unwrap();
        LossFixture {
            graph: diatomic(),
            gtn_cfg,
            s_cfg,
            params,
        }
    }

    fn loss(&self, graph: &MolecularGraph, schedule: &NoiseSchedule, c0: &Tensor, t: usize, eps: &Tensor) -> f64 {
        let pe = laplacian_pe(graph, self.gtn_cfg.pe_dim, None).unwrap();
        self.loss_with_pe(graph, &pe, schedule, c0, t, eps)
    }

    fn loss_with_pe(
        &self,
        graph: &MolecularGraph,
        pe: &Tensor,
        schedule: &NoiseSchedule,
        c0: &Tensor,
        t: usize,
        eps: &Tensor,
    ) -> f64 {
        let latent = encode(&self.params, &self.gtn_cfg, graph, pe, false, None).unwrap();
        let mut tape = Tape::new();
        let vars = self.params.register_frozen_on(&mut tape);
        let encoded = EncodedGraph {
            h_v: tape.constant(latent.h_v.clone()),
            h_e: tape.constant(latent.h_e.clone()),
            bonds: latent.bonds.clone(),
        };
        let out = loss_term_with_eps(
            &mut tape,
            &vars,
            &self.s_cfg,
            graph,
            &encoded,
            schedule,
            c0,
            t,
            eps,
        )
        .unwrap();
        tape.value(out).first()
    }
}

#[test]
fn loss_with_zeroed_network_reduces_to_noise_norm() {
    let mut fx = LossFixture::new(9);
    // Zero every score parameter: the prediction becomes exactly zero and the
    // loss is the squared norm of the projected noise.
    let names: Vec<String> = fx
        .params
        .names()
        .filter(|n| n.starts_with("score."))
        .cloned()
        .collect();
    for name in names {
        let t = fx.params.get_mut(&name).unwrap();
        let zero = Tensor::zeros(t.shape());
        *t = zero;
    }
    let schedule = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
    let c0 = Tensor::from_rows3(&[[0.6, 0.0, 0.0], [-0.6, 0.0, 0.0]]);
    let eps = RngState::from_seed(31).gaussian(&[2, 3]);
    let loss = fx.loss(&diatomic(), &schedule, &c0, 2, &eps);
    let expect: f64 = com_project(&eps).data().iter().map(|v| v * v).sum();
    assert!(
        (loss - expect).abs() < 1e-12,
        "zero net loss {loss} vs projected noise norm {expect}"
    );
}

#[test]
fn loss_is_invariant_under_rigid_motions_of_data_and_noise() {
    let fx = LossFixture::new(10);
    let schedule = NoiseSchedule::from_betas(vec![0.05, 0.1, 0.15]).unwrap();
    let c0 = Tensor::from_rows3(&[[0.7, 0.2, -0.1], [-0.7, -0.2, 0.1]]);
    let eps = RngState::from_seed(77).gaussian(&[2, 3]);
    let base = fx.loss(&fx.graph, &schedule, &c0, 2, &eps);

    let mut s = RngState::from_seed(400).stream();
    for k in 0..20 {
        // Random rotation via normalized axis + angle.
        let mut axis = [s.normal(), s.normal(), s.normal()];
        let norm = libm::sqrt(axis.iter().map(|v| v * v).sum::<f64>()).max(1e-9);
        for v in &mut axis {
            *v /= norm;
        }
        let theta = s.uniform() * core::f64::consts::TAU;
        let (c, sn) = (libm::cos(theta), libm::sin(theta));
        let (x, y, z) = (axis[0], axis[1], axis[2]);
        let r = [
            [c + x * x * (1.0 - c), x * y * (1.0 - c) - z * sn, x * z * (1.0 - c) + y * sn],
            [y * x * (1.0 - c) + z * sn, c + y * y * (1.0 - c), y * z * (1.0 - c) - x * sn],
            [z * x * (1.0 - c) - y * sn, z * y * (1.0 - c) + x * sn, c + z * z * (1.0 - c)],
        ];
        let shift = [s.normal() * 4.0, s.normal() * 4.0, s.normal() * 4.0];
        let rotate = |src: &Tensor, translate: bool| {
            let mut out = Tensor::zeros(&[2, 3]);
            for i in 0..2 {
                for a in 0..3 {
                    let mut v = 0.0;
                    for b in 0..3 {
                        v += src.at(i, b) * r[a][b];
                    }
                    if translate {
                        v += shift[a];
                    }
                    out.set(i, a, v);
                }
            }
            out
        };
        // Coordinates rotate and translate; the noise rotates with the frame.
        let moved = fx.loss(&fx.graph, &schedule, &rotate(&c0, true), 2, &rotate(&eps, false));
        assert!(
            (moved - base).abs() < 1e-8,
            "transform {k}: loss moved from {base} to {moved}"
        );
    }
}

#[test]
fn loss_is_invariant_under_atom_relabeling() {
    // The positional encoding is itself only defined up to column sign, so
    // the permuted evaluation must see the row-permuted encoding of the
    // original graph rather than a freshly canonicalized one.
    let fx = LossFixture::new(12);
    let schedule = NoiseSchedule::from_betas(vec![0.05, 0.1]).unwrap();
    let c0 = Tensor::from_rows3(&[[0.55, 0.1, 0.0], [-0.55, -0.1, 0.0]]);
    let eps = RngState::from_seed(88).gaussian(&[2, 3]);
    let pe = laplacian_pe(&fx.graph, fx.gtn_cfg.pe_dim, None).unwrap();
    let base = fx.loss_with_pe(&fx.graph, &pe, &schedule, &c0, 1, &eps);

    let perm = [1usize, 0];
    let graph_p = fx.graph.permuted(&perm);
    let permute_rows = |src: &Tensor| {
        let cols = src.cols();
        let mut out = Tensor::zeros(&[2, cols]);
        for i in 0..2 {
            for a in 0..cols {
                out.set(perm[i], a, src.at(i, a));
            }
        }
        out
    };
    let permuted = fx.loss_with_pe(
        &graph_p,
        &permute_rows(&pe),
        &schedule,
        &permute_rows(&c0),
        1,
        &permute_rows(&eps),
    );
    assert!(
        (permuted - base).abs() < 1e-8,
        "relabeling changed the loss: {base} vs {permuted}"
    );
}

// ----- ancestral sampling -----

#[test]
fn gaussian_oracle_sampler_recovers_target_variance() {
    // Sampling against the exact posterior noise of an isotropic Gaussian
    // must reproduce its per-coordinate variance on the zero-CoM subspace:
    // sigma^2 (1 - 1/n).
    let schedule = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let sigma = 1.3f64;
    let n = 5usize;
    let n_items = 4000usize;
    let oracle = GaussianOracle {
        sigma,
        n_atoms: n,
        schedule: schedule.clone(),
    };
    let rng = RngState::from_seed(225).child_tag("gen");
    let out = ancestral_sample_batch(&schedule, &oracle, n_items, &rng, |_, _| {}).unwrap();
    assert_eq!(out.shape(), &[n_items * n, 3]);
    let mean: f64 = out.data().iter().sum::<f64>() / out.data().len() as f64;
    let var: f64 =
        out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / out.data().len() as f64;
    let target = sigma * sigma * (1.0 - 1.0 / n as f64);
    let rel = (var - target).abs() / target;
    assert!(
        rel < 0.03,
        "sampled per-coordinate variance {var} vs target {target} (rel {rel:.4})"
    );
    assert!(mean.abs() < 0.02, "sampled mean {mean} should be near zero");
}

#[test]
fn every_sampling_step_stays_on_the_zero_com_subspace() {
    let schedule = NoiseSchedule::from_betas(vec![0.02; 50]).unwrap();
    let oracle = GaussianOracle {
        sigma: 0.9,
        n_atoms: 3,
        schedule: schedule.clone(),
    };
    let rng = RngState::from_seed(7).child_tag("gen");
    let n_items = 10usize;
    let mut steps_seen = 0usize;
    ancestral_sample_batch(&schedule, &oracle, n_items, &rng, |t, state| {
        steps_seen += 1;
        for item in 0..n_items {
            for a in 0..3 {
                let mean: f64 = (0..3).map(|i| state.at(item * 3 + i, a)).sum::<f64>() / 3.0;
                assert!(
                    mean.abs() < 1e-8,
                    "step t={t}, item {item}, axis {a}: CoM drifted to {mean}"
                );
            }
        }
    })
    .unwrap();
    assert_eq!(steps_seen, 50, "the hook must observe every step");
}

#[test]
fn final_step_adds_no_noise() {
    // With a denoiser that predicts zero, every update is deterministic
    // except the injected sigma_t z term; reconstructing the t=1 update from
    // the captured t=2 state must match the output exactly, which fails if
    // sigma_1 were nonzero.
    let schedule = NoiseSchedule::from_betas(vec![0.3, 0.2]).unwrap();
    let den = ZeroDenoiser { n: 3 };
    let rng = RngState::from_seed(55).child_tag("gen");
    let mut after_t2: Option<Tensor> = None;
    let out = ancestral_sample_batch(&schedule, &den, 2, &rng, |t, state| {
        if t == 2 {
            after_t2 = Some(state.clone());
        }
    })
    .unwrap();
    let expect = after_t2.unwrap().scale(1.0 / libm::sqrt(1.0 - 0.3));
    for (a, b) in out.data().iter().zip(expect.data().iter()) {
        assert_eq!(a, b, "t=1 update must be exactly the noiseless mean");
    }
}

#[test]
fn sampler_is_deterministic_and_item_streams_are_independent_of_batching() {
    let schedule = NoiseSchedule::from_betas(vec![0.05; 20]).unwrap();
    let oracle = GaussianOracle {
        sigma: 1.0,
        n_atoms: 2,
        schedule: schedule.clone(),
    };
    let rng = RngState::from_seed(31).child_tag("gen");
    let a = ancestral_sample_batch(&schedule, &oracle, 3, &rng, |_, _| {}).unwrap();
    let b = ancestral_sample_batch(&schedule, &oracle, 3, &rng, |_, _| {}).unwrap();
    assert_eq!(a.data(), b.data(), "same stream must reproduce bit-identically");
    // Item 0 of a 1-item run equals item 0 of the 3-item run: per-item
    // streams do not depend on how many items are drawn together.
    let solo = ancestral_sample_batch(&schedule, &oracle, 1, &rng, |_, _| {}).unwrap();
    for i in 0..2 {
        for c in 0..3 {
            assert_eq!(solo.at(i, c), a.at(i, c));
        }
    }
    let other = ancestral_sample_batch(&schedule, &oracle, 3, &rng.child(1), |_, _| {}).unwrap();
    assert_ne!(a.data(), other.data(), "different stream must differ");
}

#[test]
fn non_finite_prediction_reports_the_failing_step() {
    let schedule = NoiseSchedule::from_betas(vec![0.05; 10]).unwrap();
    let den = NanAtDenoiser { n: 2, bad_t: 7 };
    let rng = RngState::from_seed(1).child_tag("gen");
    match ancestral_sample_batch(&schedule, &den, 1, &rng, |_, _| {}) {
        Err(CoreError::NonFiniteAtStep { t, .. }) => assert_eq!(t, 7),
        other => panic!("expected NonFiniteAtStep, got {other:?}"),
    }
}

#[test]
fn network_denoiser_output_is_independent_of_chunking() {
    let fx = LossFixture::new(21);
    let pe = laplacian_pe(&fx.graph, fx.gtn_cfg.pe_dim, None).unwrap();
    let latent = encode(&fx.params, &fx.gtn_cfg, &fx.graph, &pe, false, None).unwrap();
    let schedule = NoiseSchedule::from_betas(vec![0.05; 10]).unwrap();
    let rng = RngState::from_seed(90).child_tag("gen");
    let sample = |chunk_items: usize| {
        let den = NetworkDenoiser {
            params: &fx.params,
            config: &fx.s_cfg,
            graph: &fx.graph,
            latent: &latent,
            t_max: schedule.t_max(),
            executor: &Serial,
            chunk_items,
        };
        ancestral_sample_batch(&schedule, &den, 5, &rng, |_, _| {}).unwrap()
    };
    let whole = sample(5);
    let chopped = sample(1);
    let pairs = sample(2);
    assert_eq!(whole.data(), chopped.data(), "chunk size must not change results");
    assert_eq!(whole.data(), pairs.data());
}
