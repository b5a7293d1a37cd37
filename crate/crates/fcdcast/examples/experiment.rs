use fcdcast::data::{chronological_split, generate_synthetic, mask_night_hours, SyntheticConfig};
use fcdcast::eval::evaluate_model;
use fcdcast::featurize::{build_sample, enumerate_samples, enumerate_samples_in, SampleSpec};
use fcdcast::models::{Arch, InputMode, ModelConfig};
use fcdcast::rng::substream;
use fcdcast::train::{train, TrainConfig, TrainSet};

fn main() {
    let t0 = std::time::Instant::now();
    let panel = mask_night_hours(generate_synthetic(&SyntheticConfig {
        n_edges: 32, n_days: 60, congestion_amplitude: 0.6, noise_std: 0.03, rng_seed: 20607,
    }).unwrap(), 23, 5);
    let split = chronological_split(&panel, 0.9).unwrap();
    let spec = SampleSpec::reduced();
    let anchors = enumerate_samples(&split.train, &spec, 5);
    let samples: Vec<_> = anchors.iter().map(|&(e, s)| build_sample(&split.train, &spec, e, s).unwrap()).collect();
    let set = TrainSet::Static(samples);
    let mut tcfg = TrainConfig::default();
    tcfg.t_mb = 50;
    tcfg.max_epochs = 50_000;
    tcfg.eta0 = 1e-3;
    tcfg.alpha0 = 0.0;
    tcfg.lambda_l1 = 1e-2;
    tcfg.lambda_l2 = 1e-2;
    tcfg.patience = 50;
    tcfg.rng_seed = 1;
    let mut mcfg = ModelConfig::new(Arch::Fnn1, InputMode::Reduced);
    mcfg.hidden_size = 32;
    let mut model = mcfg.build(&mut substream(1, "init")).unwrap();
    for bn in model.batch_norms_mut() { bn.ema_momentum = Some(0.01); }
    let (log, _) = train(&mut model, &set, &spec, 480, &tcfg).unwrap();
    println!("trained {} iters, best val {:.5} @ {} ({:?})", log.iterations.len(), log.best_val_rmse.unwrap(), log.best_iteration, t0.elapsed());

    let test_anchors = enumerate_samples_in(&panel, &spec, 5, split.boundary_slot, panel.n_slots());
    let report = evaluate_model(&model, &panel, &spec, &test_anchors, Some(panel.free_flow()), true, 1).unwrap();
    let all = report.curve("all").unwrap();
    println!("aggregate q2 {:.4} rmse {:.4} bench {:.4}", all.agg_q2.unwrap(), all.agg_rmse_kph, all.agg_rmse_bench_kph);
    let min5 = (5..20).map(|h| all.q2[h].unwrap()).fold(f64::INFINITY, f64::min);
    let min1 = (1..20).map(|h| all.q2[h].unwrap()).fold(f64::INFINITY, f64::min);
    println!("min q2 [h>=5]: {min5:.4}; min q2 [h>=1]: {min1:.4}");
    let (c, ch, s) = (report.curve("constant").unwrap(), report.curve("changing").unwrap(), report.curve("standard").unwrap());
    println!("regime rmse: constant {:.4} < standard {:.4} < changing {:.4} ?", c.agg_rmse_kph, s.agg_rmse_kph, ch.agg_rmse_kph);
    println!("regime q2: changing {:.4} > constant {:.4} ?", ch.agg_q2.unwrap(), c.agg_q2.unwrap());
    println!("total {:?}", t0.elapsed());
}
