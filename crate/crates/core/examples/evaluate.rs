//! Localization score and Recall@K on a hand-made example.

use std::collections::{BTreeMap, HashMap};

use tubesearch::eval::{localization_score, recall_table, GroundTruth, RankedResult};
use tubesearch::proposal::{BBox, Tube};

fn tube(id: &str, shift: f64) -> Tube {
    Tube {
        id: id.into(),
        clip_id: "clip".into(),
        start_frame: 0,
        boxes: (0..4)
            .map(|f| BBox {
                x1: 10.0 * f as f64 + shift,
                y1: 0.0,
                x2: 10.0 * f as f64 + shift + 20.0,
                y2: 40.0,
            })
            .collect(),
        scores: vec![0.9; 4],
        energy: 0.0,
    }
}

fn main() -> tubesearch::Result<()> {
    let person = tube("truth", 0.0);
    let gt = GroundTruth {
        person_id: "p".into(),
        clip_id: "clip".into(),
        eligible_frames: (0..4).collect(),
        boxes: person.frames().zip(person.boxes.iter().copied()).collect::<BTreeMap<_, _>>(),
    };
    let candidates = [tube("close", 3.0), tube("offset", 10.0), tube("far", 25.0)];
    for c in &candidates {
        println!("S_loc(gt, {:6}) = {:.3}", c.id, localization_score(&gt, c, &gt.eligible_frames)?);
    }
    let ids: Vec<String> = candidates.iter().map(|t| t.id.clone()).collect();
    let geometry: HashMap<String, Tube> = candidates.iter().map(|t| (t.id.clone(), t.clone())).collect();
    let results = [
        RankedResult::from_scores("q1", &ids, &[0.9, 0.5, 0.1])?,
        RankedResult::from_scores("q2", &ids, &[0.2, 0.5, 0.9])?,
        RankedResult::from_scores("q3", &ids, &[0.1, 0.9, 0.5])?,
    ];
    let truths = [&gt, &gt, &gt];
    for (k, r) in recall_table(&results, &truths, &geometry, &[1, 2, 3], 0.5)? {
        println!("R@{k} = {r:.3}");
    }
    Ok(())
}
