//! Fit one simulated dataset and print the fused clusters of every tree variable.
//!
//! cargo run --release --example fit_simulated

use treefuse::simulation::{generate_dataset, SimConfig};
use treefuse::tree::{fit_model, FitOptions};
use treefuse::StopRule;

fn main() -> treefuse::Result<()> {
    let (data, _truth) = generate_dataset(&SimConfig::default(), 1)?;
    let model = fit_model(&data, &FitOptions::default(), StopRule::PValue { alpha: 0.05 })?;
    println!("{} splits", model.n_splits);
    for cs in &model.clusters {
        let cells: Vec<String> = cs
            .cells
            .iter()
            .map(|c| format!("{{{}}}={:.2}", c.labels.join(","), c.effect))
            .collect();
        println!("{:>4}: {}", cs.variable, cells.join(" "));
    }
    for b in &model.linear {
        println!("{:>4}: {:.3}", b.name, b.value);
    }
    Ok(())
}
