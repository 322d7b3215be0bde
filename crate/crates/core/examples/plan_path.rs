//! Cell costs and deterministic shortest paths on a small map with a wall.

use absnav::grid_world::{CellPos, WorldMap};
use absnav::planner::{cell_cost, cost_map, shortest_path, PlannerConfig};

fn main() -> absnav::Result<()> {
    let rows = [
        "0.0,0.0,0.0,0.0,0.0,0.0",
        "0.0,0.9,0.9,0.9,0.9,0.0",
        "0.0,0.2,0.0,0.0,0.9,0.0",
        "0.0,0.9,0.9,0.0,0.9,0.0",
        "0.0,0.0,0.0,0.0,0.0,0.0",
    ];
    let map = WorldMap::from_csv_str(&rows.join("\n"), "inline")?;
    let cfg = PlannerConfig::new(0.025, 0.501, map.len())?;

    for x in [0.0, 0.3, 0.501, 0.6] {
        println!("cost({x}) = {}", cell_cost(x, &cfg));
    }

    let costs = cost_map(map.occupancy(), &cfg);
    let path = shortest_path(&costs, map.dims(), CellPos::new(2, 2), CellPos::new(2, 5), &cfg)?;
    println!("{} cells, total cost {:.3}", path.len(), path.total_cost);
    for r in 0..map.height() {
        let line: String = (0..map.width())
            .map(|c| {
                let p = CellPos::new(r, c);
                if path.vertices.contains(&p) {
                    '*'
                } else if map.value(p) > cfg.epsilon {
                    '#'
                } else {
                    '.'
                }
            })
            .collect();
        println!("{line}");
    }
    Ok(())
}
