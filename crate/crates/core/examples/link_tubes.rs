//! Links detections of two walkers crossing a frame into tubes.

use tubesearch::proposal::{propose_all, select_top_candidates, BBox, Detection};

fn main() -> tubesearch::Result<()> {
    let mut detections = Vec::new();
    for f in 0..8u32 {
        let x = 10.0 * f as f64;
        detections.push(Detection::new("demo", f, BBox::new(x, 20.0, x + 30.0, 100.0)?, 0.9));
        detections.push(Detection::new("demo", f, BBox::new(200.0 - x, 25.0, 230.0 - x, 105.0)?, 0.7));
        if f % 3 == 0 {
            detections.push(Detection::new("demo", f, BBox::new(300.0, 0.0, 320.0, 30.0)?, 0.2));
        }
    }
    let tubes = propose_all(&detections, 1.0)?;
    for t in select_top_candidates(&tubes, 5) {
        let first = t.boxes[0];
        let last = t.boxes[t.len() - 1];
        println!(
            "{}  frames {}..={}  energy {:.3}  x {:.0} -> {:.0}",
            t.id,
            t.start_frame,
            t.end_frame(),
            t.energy,
            first.x1,
            last.x1
        );
    }
    Ok(())
}
