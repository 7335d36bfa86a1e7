//! Trains the three encoder regimes on the toy retrieval benchmark and prints mAP.
//!
//! Usage: retrieval_bench [iterations] [n] [lr] [seeds] [include_positive] [temperature] [regimes]

use std::time::Instant;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use fiqa_core::data_io::{retrieval_benchmark, ToyOptions};
use fiqa_core::dsl::{train_encoder, EncoderConfig, Regime};
use fiqa_core::metrics::{retrieval_experiment, separability};

fn main() -> fiqa_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let iterations: usize = arg(1, "500").parse().unwrap();
    let n: usize = arg(2, "32").parse().unwrap();
    let lr: f64 = arg(3, "1e-3").parse().unwrap();
    let seeds: u64 = arg(4, "1").parse().unwrap();
    let include_positive: bool = arg(5, "false").parse().unwrap();
    let temperature: f64 = arg(6, "1.0").parse().unwrap();
    let regimes: Vec<Regime> = arg(7, "dsl,patch,naive").split(',').map(|r| r.parse().unwrap()).collect();
    let bench = retrieval_benchmark(300, 100, &ToyOptions::default(), 7)?;
    for seed in 0..seeds {
        for &regime in &regimes {
            let cfg = EncoderConfig {
                iterations,
                n,
                learning_rate: lr,
                seed,
                include_positive,
                temperature,
                ..EncoderConfig::default()
            };
            let t = Instant::now();
            let trained = train_encoder(regime, &bench.clean_pool, &bench.real, cfg)?;
            let res = retrieval_experiment(&trained.encoder, &bench.queries, &bench.gallery, 5)?;
            let reps = trained.encoder.encode_images(&bench.queries.iter().map(|q| q.0.clone()).collect::<Vec<_>>())?;
            let sep = separability(&reps.into_iter().zip(bench.queries.iter().map(|q| q.1)).collect::<Vec<_>>())?;
            let log = &trained.log;
            println!(
                "seed {seed} {regime:>5}: mAP {:.4} sep {:.3} loss {:.4} -> {:.4} ({:.1}s)",
                res.map,
                sep,
                log[0].1,
                log[log.len() - 1].1,
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
