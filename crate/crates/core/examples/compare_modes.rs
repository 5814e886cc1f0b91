//! Runs the synthetic benchmark for every filter mode and prints final NMSE.
//!
//! Usage: `compare_modes [runs] [key=value ...]` where keys are
//! `FilterConfig` fields (`sigma_g=0.5`, `centering=ensemble-mean`, ...).

use gpenkf::experiments::{run_synthetic, ExperimentConfig};
use gpenkf::{FilterConfig, FilterMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let runs = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut doc = serde_json::to_value(FilterConfig::default())?;
    for kv in args {
        let (k, v) = kv.split_once('=').ok_or("expected key=value")?;
        doc[k] = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.into()));
    }
    let filter: FilterConfig = serde_json::from_value(doc)?;
    for mode in FilterMode::ALL {
        let cfg = ExperimentConfig {
            mode,
            runs,
            filter,
            ..Default::default()
        };
        let r = run_synthetic(&cfg)?;
        let finals: Vec<String> = r.runs.iter().map(|x| format!("{:.2}", x.final_nmse)).collect();
        println!(
            "{:<24} nmse {:.4}  time {:.2}s  failures {}  [{}]",
            mode.label(),
            r.mean_final_nmse,
            r.mean_elapsed_s,
            r.failures.len(),
            finals.join(" ")
        );
    }
    Ok(())
}
