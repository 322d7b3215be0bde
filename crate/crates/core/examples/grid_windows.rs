//! Build a map, round-trip it through CSV and PGM, and cut field-of-view
//! windows at the centre and at a corner.

use absnav::grid_world::{CellPos, WorldMap};

fn main() -> absnav::Result<()> {
    let occupancy: Vec<f64> = (0..9 * 7)
        .map(|i| if i % 9 == 4 && i / 9 != 3 { 0.9 } else { 0.1 })
        .collect();
    let map = WorldMap::new(9, 7, occupancy)?;

    let csv = map.to_csv_string();
    assert_eq!(WorldMap::from_csv_str(&csv, "inline")?, map);
    let pgm = WorldMap::from_pgm_bytes(&map.to_pgm_bytes(), "inline")?;
    println!("{}x{} map, CSV exact, PGM within {:.4}", map.width(), map.height(), max_diff(&map, &pgm));

    for center in [CellPos::new(3, 4), CellPos::new(0, 0)] {
        let lm = map.local_window(center, 7, 7)?;
        println!("7x7 window at {center:?}: {} cells in bounds", lm.len());
        for (cell, value) in lm.iter().take(3) {
            println!("  cell {cell} ({:?}) = {value}", map.dims().pos(cell));
        }
    }
    Ok(())
}

fn max_diff(a: &WorldMap, b: &WorldMap) -> f64 {
    a.occupancy()
        .iter()
        .zip(b.occupancy())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
