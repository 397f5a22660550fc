//! Runs a benchmark on the synthetic task and prints median errors.
//!
//! cargo run --release --example synthetic_benchmark -- [seeds] [methods] [metric_noise]

use metricmap::benchmark::{parse_method_list, run_benchmark, summarize};
use metricmap::synthetic::{synthetic_task, SyntheticSpec};
use metricmap::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(Ok(3), |s| s.parse())?;
    let methods = parse_method_list(
        args.get(2)
            .map_or("akrmap,akrmap_no_gk,akrmap_no_kr,pca_rbf(silverman)", |s| s.as_str()),
    )?;
    let mut spec = SyntheticSpec::default();
    if let Some(noise) = args.get(3) {
        spec.metric_noise = noise.parse()?;
    }
    let task = synthetic_task(&spec)?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let started = std::time::Instant::now();
    let reports = run_benchmark(&task.train, &task.test, &methods, &seeds, &TrainConfig::default())?;
    for r in &reports {
        println!(
            "{:<36} seed {} out mae {:.4} rmse {:.4} in mae {:.4} T20 {:.3} alpha {:?} beta {:?} h {:?} {:.1}s",
            r.method,
            r.seed,
            r.out_of_sample.mae,
            r.out_of_sample.rmse,
            r.in_sample.mae,
            r.trustworthiness.get(&20).copied().unwrap_or(f64::NAN),
            r.alpha,
            r.beta,
            r.bandwidth,
            r.runtime_s
        );
    }
    for s in summarize(&reports) {
        println!("{:<36} median out mae {:.4} rmse {:.4}", s.method, s.mae, s.rmse);
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
