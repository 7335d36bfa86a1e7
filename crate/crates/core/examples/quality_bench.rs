//! Trains the quality model on a 500-image toy set and reports held-out correlation.
//!
//! Usage: quality_bench [iterations] [lr] [batch] [encoder_iterations] [landmarks] [seed] [real_style] [patch] [token] [embed]

use std::time::Instant;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use fiqa_core::data_io::{loaded_from_samples, toy_samples, Split, ToyOptions};
use fiqa_core::dsl::{train_encoder, EncoderConfig, Regime};
use fiqa_core::gfiqa::{evaluate_gfiqa, train_gfiqa, GfiqaSample, ModelConfig};

fn main() -> fiqa_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let iterations: usize = arg(1, "300").parse().unwrap();
    let lr: f64 = arg(2, "5e-4").parse().unwrap();
    let batch: usize = arg(3, "16").parse().unwrap();
    let enc_iters: usize = arg(4, "0").parse().unwrap();
    let use_landmarks: bool = arg(5, "true").parse().unwrap();
    let seed: u64 = arg(6, "0").parse().unwrap();
    let real_style: bool = arg(7, "true").parse().unwrap();
    let patch_size: usize = arg(8, "32").parse().unwrap();
    let token_size: usize = arg(9, "4").parse().unwrap();
    let embed_dim: usize = arg(10, "32").parse().unwrap();
    let t = Instant::now();
    let samples = toy_samples(
        500,
        11,
        &ToyOptions {
            real_style,
            mos_noise: 0.0,
            ..ToyOptions::default()
        },
    )?;
    let enc_cfg = EncoderConfig {
        iterations: enc_iters,
        n: 32,
        learning_rate: 1e-3,
        include_positive: true,
        seed,
        ..EncoderConfig::default()
    };
    let pool: Vec<_> = samples.iter().filter(|s| s.record.split == Split::Train).map(|s| s.clean.clone()).collect();
    let train_only: Vec<_> = samples.iter().filter(|s| s.record.split == Split::Train).cloned().collect();
    let real = loaded_from_samples(&train_only)?;
    let cache = std::env::temp_dir().join(format!("quality_bench_enc_{enc_iters}_{seed}_{real_style}.ckpt"));
    let encoder = match fiqa_core::dsl::TrainedEncoder::load(&cache) {
        Ok(t) => t.encoder,
        Err(_) => {
            let t = train_encoder(Regime::Dsl, &pool, &real, enc_cfg)?;
            t.save(&cache)?;
            t.encoder
        }
    };
    println!("encoder {:.1}s", t.elapsed().as_secs_f64());
    let to = |sp: Split| -> Vec<GfiqaSample> {
        samples
            .iter()
            .filter(|s| s.record.split == sp)
            .map(|s| GfiqaSample {
                image: s.image.clone(),
                landmarks: s.landmarks.clone(),
                mos: s.record.mos.unwrap(),
            })
            .collect()
    };
    let (train, test) = (to(Split::Train), to(Split::Test));
    let cfg = ModelConfig {
        iterations,
        learning_rate: lr,
        batch,
        use_landmarks,
        seed,
        patch_size,
        token_size,
        embed_dim,
        ..ModelConfig::default()
    };
    let trained = train_gfiqa(&train, &encoder, cfg)?;
    let mean = |s: &[(usize, f64)]| s.iter().map(|l| l.1).sum::<f64>() / s.len() as f64;
    let n = trained.log.len();
    println!(
        "loss {:.4} -> {:.4} ({:.1}s)",
        mean(&trained.log[..10.min(n)]),
        mean(&trained.log[n.saturating_sub(10)..]),
        t.elapsed().as_secs_f64()
    );
    let (_, tr) = evaluate_gfiqa(&trained.model, &encoder, &train, "train")?;
    println!("train srcc {:.4} plcc {:.4}", tr.srcc, tr.plcc);
    let (_, report) = evaluate_gfiqa(&trained.model, &encoder, &test, "test")?;
    println!("test srcc {:.4} plcc {:.4} n {} ({:.1}s)", report.srcc, report.plcc, report.n, t.elapsed().as_secs_f64());
    Ok(())
}
