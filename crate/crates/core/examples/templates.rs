//! The generated template set: summary, one message, the file format and a
//! rejected file.

use absnav::abstraction::{apply_template, default_theta_set, BitAccounting, BitCostParams, TemplateSet};
use absnav::grid_world::{CellPos, WorldMap};

fn main() -> absnav::Result<()> {
    let set = default_theta_set(7, 7, 10)?;
    println!("{}\n", set.report());

    let map = WorldMap::new(9, 9, (0..81).map(|i| (i % 10) as f64 / 10.0).collect())?;
    let window = map.local_window(CellPos::new(4, 4), 7, 7)?;
    let params = BitCostParams::default();
    for tpl in &set.templates {
        let msg = apply_template(tpl, &window, |_| false, &params, BitAccounting::Effective)
            .expect("a full window always yields a message");
        println!("theta {:2}: {:2} values, {:3} bits", tpl.id, msg.values.len(), msg.bits);
    }

    let text = set.to_text();
    assert_eq!(TemplateSet::parse(&text, "inline")?, set);

    let bad = "window 3 3\ntemplate 1\ngroup 0,0@0.5 0,1@0.49\nend\n";
    let report = TemplateSet::parse(bad, "bad")?.report();
    println!("\nhand-written file:\n{report}");
    Ok(())
}
