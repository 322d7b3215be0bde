//! Run the three frameworks on one random 24x24 scenario.
//!
//! `cargo run --release --example single_scenario -- [seed] [frames_dir]`

use std::fs;
use std::path::PathBuf;

use absnav::abstraction::default_theta_set;
use absnav::grid_world::CellPos;
use absnav::mapgen::{random_scenario, MapGenParams};
use absnav::render::{self, Frame};
use absnav::simulator::{run_scenario_with, Framework, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> absnav::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let frames: Option<PathBuf> = args.next().map(PathBuf::from);

    let sc = random_scenario(&MapGenParams::default(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let cfg = ScenarioConfig::new(sc.seeker_start, sc.seeker_goal, sc.supporter_path.clone());
    let thetas = default_theta_set(7, 7, 10)?;
    let dims = sc.map.dims();

    for fw in Framework::ALL {
        let mut last_estimate = Vec::new();
        let result = run_scenario_with(&cfg, &sc.map, &thetas, fw, |f| {
            last_estimate = f.estimate.to_vec();
            if let Some(dir) = &frames {
                let img = Frame::new()
                    .layer(render::SUPPORTER_PATH, cfg.supporter_path.iter().copied())
                    .layer(render::TRAJECTORY, f.trajectory.iter().copied())
                    .layer(render::PLAN, f.plan.vertices.iter().copied())
                    .render(dims, f.estimate, 8);
                fs::create_dir_all(dir).unwrap();
                fs::write(dir.join(format!("{fw}_t{:04}.ppm", f.t)), img).unwrap();
            }
        })?;
        println!(
            "{fw:>2}: cost {:7.3}, {:4} bits, {:3} steps, reached {}",
            result.cost,
            result.total_bits,
            result.steps.len(),
            result.reached
        );
        // trajectory over the final estimate: '#' believed infeasible
        for r in 0..dims.height {
            let line: String = (0..dims.width)
                .map(|c| {
                    let p = CellPos::new(r, c);
                    if result.trajectory.contains(&p) {
                        'o'
                    } else if last_estimate[dims.index(p)] > cfg.epsilon {
                        '#'
                    } else {
                        '.'
                    }
                })
                .collect();
            println!("    {line}");
        }
    }
    Ok(())
}
