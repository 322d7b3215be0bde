//! One encoder step: score every template for the Supporter's window and
//! show the trade-off between reconstruction error and bits.

use absnav::abstraction::{default_theta_set, BitAccounting, BitCostParams};
use absnav::constraints::ConstraintStore;
use absnav::decoder::{Decoder, PriorModel};
use absnav::encoder::{path_weights, select_abstraction, EncoderConfig, SelectionInput, SupporterBelief};
use absnav::grid_world::CellPos;
use absnav::mapgen::{generate_map, MapGenParams};
use absnav::planner::{cost_map, shortest_path, PlannerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> absnav::Result<()> {
    let params = MapGenParams {
        width: 16,
        height: 16,
        walls: 1,
        ..MapGenParams::default()
    };
    let map = generate_map(&params, &mut ChaCha8Rng::seed_from_u64(5))?;
    let (seeker, goal, supporter) = (CellPos::new(8, 0), CellPos::new(8, 15), CellPos::new(7, 5));

    let n = map.len();
    let prior = PriorModel::uniform(n);
    let planner = PlannerConfig::new(0.025, 0.501, n)?;
    // the Seeker's plan before any help: unknown cells at the prior mean
    let plan = shortest_path(&cost_map(&prior.mean, &planner), map.dims(), seeker, goal, &planner)?;
    let weights = path_weights(&plan, 20.0, map.dims())?;

    let seeker_lm = map.local_window(seeker, 3, 3)?;
    let supporter_lm = map.local_window(supporter, 7, 7)?;
    let mut belief = SupporterBelief::new(n);
    belief.mark_seeker_window(&seeker_lm);
    belief.sense(&supporter_lm);

    let thetas = default_theta_set(7, 7, 10)?;
    for beta in [0.0, 0.003, 0.05] {
        let config = EncoderConfig {
            beta,
            bits: BitCostParams::default(),
            accounting: BitAccounting::Effective,
        };
        let selection = select_abstraction(
            &SelectionInput {
                weights: &weights,
                belief: &belief,
                store_prev: &ConstraintStore::new(n),
                theta_set: &thetas,
                seeker_lm: &seeker_lm,
                supporter_lm: &supporter_lm,
                prior: &prior,
                config: &config,
            },
            &mut Decoder::default(),
        )?;
        println!("beta = {beta}: chosen theta {:?}", selection.theta());
        for c in &selection.candidates {
            if let (Some(bits), Some(err), Some(j)) = (c.bits, c.weighted_error, c.j) {
                println!("  theta {:2}: {:3} bits, error {:.4}, J {:.4}", c.theta, bits, err, j);
            }
        }
    }
    Ok(())
}
