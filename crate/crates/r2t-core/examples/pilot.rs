//! Scratch pilot: throughput and loss trajectory at reduced scale.
use r2t_core::eval::{evaluate_dataset, improvement_factor, percentile_table, Method};
use r2t_core::io::Dataset;
use r2t_core::nn::{Model, ModelConfig};
use r2t_core::robust::RobustLossKind;
use r2t_core::symbolic::ParamCodec;
use r2t_core::synth::{generate_block, GenConfig};
use r2t_core::trainer::{train, TrainConfig};
use std::time::Instant;

fn main() {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2048);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let gen = GenConfig::default();
    let t0 = Instant::now();
    let ds = Dataset { records: generate_block(100, 0..n, &gen).unwrap() };
    eprintln!("generated {n} sequences in {:.1}s", t0.elapsed().as_secs_f64());
    let mcfg = ModelConfig::default();
    let tcfg = TrainConfig { epochs, patience: epochs, batch_size: 256, seed: 1, ..TrainConfig::default() };
    let t0 = Instant::now();
    let report = train(&ds, &mcfg, &tcfg, None).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    eprintln!("trained {} epochs in {:.1}s ({:.2}s/epoch)", report.history.epochs.len(), dt, dt / report.history.epochs.len() as f64);
    for e in report.history.epochs.iter() {
        if e.epoch % 5 == 0 || e.epoch + 1 == epochs {
            eprintln!("epoch {:3}  train {:.3e}  val {:.3e}  lr {:.2e}", e.epoch, e.train_loss, e.val_loss, e.lr);
        }
    }
    if let Some(b) = report.best_val_breakdown {
        eprintln!("best val: total {:.3e} | t {:.2e} hr {:.2e} spo2 {:.2e} | cp {:.2e} mt {:.2e} rhr {:.2e}",
            b.total, b.mse_t, b.mse_hr, b.mse_spo2, b.mse_cp, b.mse_mt, b.mse_rhr);
    }
    // quick eval on 256 fresh corrupted sequences
    let test = Dataset { records: generate_block(999, 0..256, &gen).unwrap() };
    let model = Model::new(mcfg).unwrap();
    let t0 = Instant::now();
    let records = evaluate_dataset(&test, &model, &report.weights, &[RobustLossKind::Linear], 1.0, &ParamCodec::default()).unwrap();
    eprintln!("eval took {:.1}s", t0.elapsed().as_secs_f64());
    for m in [Method::R2t, Method::Ols] {
        let t = percentile_table(&records, m).unwrap();
        eprintln!("{:8} medians: t {:.2e} hr {:.2e} spo2 {:.2e}", m.as_str(), t.deciles[0][4], t.deciles[1][4], t.deciles[2][4]);
    }
    for (s, name) in ["temp", "hr", "spo2"].iter().enumerate() {
        eprintln!("factor vs OLS ({name}): {:.1}", improvement_factor(&records, Method::Ols, s).unwrap());
    }
}
