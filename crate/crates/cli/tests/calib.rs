// Scratch calibration for the acceptance recipes. Deleted before finishing.

use boltzgen_core::boltzeval::{
    diatomic_graph, evaluate_generator, feature_values, mcmc_record, mcmc_sample, wasserstein1,
    McmcParams, ToyPotential,
};
use boltzgen_core::diffusion::{make_schedule, ScheduleKind};
use boltzgen_core::encoder::GtnConfig;
use boltzgen_core::exec::Serial;
use boltzgen_core::rng::RngState;
use boltzgen_core::score::SchnetConfig;
use boltzgen_core::train::{pretrain, TrainConfig};
use std::time::Instant;

#[test]
fn calibrate_c5_diatomic() {
    let potential = ToyPotential::HarmonicDiatomic { k: 10.0, d0: 1.5 };
    let mcmc = McmcParams {
        step_size: 0.3,
        burn_in: 2000,
        thin: 20,
    };
    let rng = RngState::from_seed(5);
    let graph = diatomic_graph(6, 8).unwrap();

    let t0 = Instant::now();
    let record = mcmc_record(
        "c5",
        graph.clone(),
        &potential,
        2000,
        &mcmc,
        &rng.child_tag("data"),
        false,
    )
    .unwrap();
    eprintln!("data: {:?}", t0.elapsed());

    // Oracle-vs-oracle noise floor with the same MCMC settings.
    let t0 = Instant::now();
    let oa = mcmc_sample(&potential, 2000, &mcmc, &rng.child_tag("floor-a")).unwrap();
    let ob = mcmc_sample(&potential, 2000, &mcmc, &rng.child_tag("floor-b")).unwrap();
    let fa = feature_values(&potential, &oa.ensemble).unwrap();
    let fb = feature_values(&potential, &ob.ensemble).unwrap();
    let floor = wasserstein1(&fa, &fb).unwrap();
    eprintln!("floor: {floor:.5} ({:?}), acc {:.3}/{:.3}", t0.elapsed(), oa.acceptance_rate, ob.acceptance_rate);

    let gtn = GtnConfig {
        layers: 1,
        heads: 2,
        model_dim: 32,
        pe_dim: 2,
        feedforward_dim: 64,
        dropout: 0.0,
    };
    let schnet = SchnetConfig {
        interaction_blocks: 3,
        feature_dim: 32,
        rbf_count: 24,
        r_cut: 10.0,
        time_dim: 16,
        denom_floor: 1e-6,
    };
    let schedule = make_schedule(ScheduleKind::Linear, 400, 3e-4, 0.04).unwrap();
    eprintln!("abar_T = {:.3e}", schedule.alpha_bar(schedule.t_max()).unwrap());
    let cfg = TrainConfig {
        epochs: 150,
        batch_size: 32,
        learning_rate: 3e-3,
        valid_fraction: 0.1,
        seed: 5,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let records = vec![record];
    let out = pretrain(
        &records,
        &gtn,
        &schnet,
        &schedule,
        &cfg,
        &Serial,
        32,
        &mut |log| {
            if log.epoch % 25 == 0 {
                eprintln!(
                    "  epoch {:>3}: train {:?} valid {:.4}",
                    log.epoch, log.train_loss, log.valid_loss
                );
            }
        },
    )
    .unwrap();
    eprintln!("train: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let report = evaluate_generator(
        &out.checkpoint,
        &graph,
        &potential,
        2000,
        &mcmc,
        &rng.child_tag("eval"),
        &Serial,
        64,
    )
    .unwrap();
    eprintln!("eval: {:?}", t0.elapsed());
    eprintln!(
        "W1 = {:.5} (floor {floor:.5}, 2x floor {:.5}); gen mean {:.4} oracle mean {:.4}; gen var {:.5} oracle var {:.5}",
        report.w1,
        2.0 * floor,
        report.generated.mean,
        report.oracle.mean,
        report.generated.variance,
        report.oracle.variance
    );
}
