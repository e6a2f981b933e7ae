//! Builds a markdown comparison table from evaluation reports and round-trips
//! a report through its JSONL form.
//!
//! cargo run --example report_table

use attrmanip::eval::protocol::mean_std;
use attrmanip::eval::{comparison_table, EvalReport, RunOutcome};

fn report(task: &str, method: &str, accuracies: &[f64], failed: &[usize]) -> EvalReport {
    let mut accs = accuracies.iter();
    let runs: Vec<RunOutcome> = (0..accuracies.len() + failed.len())
        .map(|run| RunOutcome {
            run,
            rng_seed: run as u64,
            accuracy: if failed.contains(&run) { None } else { accs.next().copied() },
            train_size: 20,
            error: failed.contains(&run).then(|| "class `world` has no training examples".to_string()),
        })
        .collect();
    let ms = mean_std(accuracies);
    EvalReport {
        task_id: task.into(),
        method: method.into(),
        algorithm: "nc".into(),
        k: None,
        provider_id: "stub-64".into(),
        shots: 10,
        accuracies: accuracies.to_vec(),
        mean: ms.map(|m| m.0),
        std: ms.map(|m| m.1),
        run_count: runs.len(),
        config_digest: "example".into(),
        partial: !failed.is_empty(),
        failed_runs: failed.to_vec(),
        runs,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reports = vec![
        report("sst2", "seeds_only", &[0.61, 0.66, 0.58], &[]),
        report("sst2", "cotam", &[0.78, 0.81, 0.75], &[]),
        report("agnews", "seeds_only", &[0.52, 0.49], &[1]),
        report("agnews", "cotam", &[0.71, 0.74, 0.69], &[]),
    ];
    println!("{}", comparison_table(&reports));
    let jsonl = reports[1].to_jsonl();
    let back = EvalReport::from_jsonl(&jsonl)?;
    println!("round trip consistent: {}", back.is_consistent());
    Ok(())
}
