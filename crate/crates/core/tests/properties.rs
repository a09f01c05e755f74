use std::collections::{BTreeSet, HashMap, HashSet};

use nalgebra::DMatrix;
use proptest::prelude::*;
use serde_json::json;

use tubesearch::eval::{localization_score, recall_table, GroundTruth, RankedResult};
use tubesearch::io::fmat::{decode_matrix, encode_matrix, Bundle};
use tubesearch::io::{read_jsonl, write_jsonl, TubeRecord};
use tubesearch::proposal::{iou, link_score, propose_tubes, BBox, Detection, Tube};

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64).prop_map(|(x, y, w, h)| BBox {
        x1: x,
        y1: y,
        x2: x + w,
        y2: y + h,
    })
}

fn segment() -> impl Strategy<Value = Vec<Vec<Detection>>> {
    prop::collection::vec(prop::collection::vec((bbox(), 0.0..1.0f64), 1..5), 1..6).prop_map(|frames| {
        frames
            .into_iter()
            .enumerate()
            .map(|(f, dets)| dets.into_iter().map(|(b, s)| Detection::new("c", f as u32, b, s)).collect())
            .collect()
    })
}

fn tube(id: &'static str) -> impl Strategy<Value = Tube> {
    (0u32..10, prop::collection::vec(bbox(), 1..8)).prop_map(move |(start, boxes)| Tube {
        id: id.into(),
        clip_id: "c".into(),
        start_frame: start,
        scores: vec![0.5; boxes.len()],
        boxes,
        energy: 0.0,
    })
}

fn f32_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (0usize..6, 0usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e6f32..1e6f32, r * c)
            .prop_map(move |v| DMatrix::from_row_iterator(r, c, v.into_iter().map(f64::from)))
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn link_score_is_symmetric(a in bbox(), b in bbox(), sa in 0.0..1.0f64, sb in 0.0..1.0f64, lambda in 0.0..3.0f64) {
        let fwd = link_score(&Detection::new("c", 0, a, sa), &Detection::new("c", 1, b, sb), lambda).unwrap();
        let rev = link_score(&Detection::new("c", 0, b, sb), &Detection::new("c", 1, a, sa), lambda).unwrap();
        prop_assert!((fwd - rev).abs() < 1e-12);
    }

    #[test]
    fn proposals_are_disjoint_and_sorted(frames in segment(), lambda in 0.0..2.0f64) {
        let tubes = propose_tubes(&frames, lambda).unwrap();
        let min_count = frames.iter().map(Vec::len).min().unwrap();
        prop_assert_eq!(tubes.len(), min_count);
        let mut used = HashSet::new();
        for t in &tubes {
            prop_assert_eq!(t.len(), frames.len());
            prop_assert!((t.recompute_energy(lambda).unwrap() - t.energy).abs() < 1e-12);
            for (i, b) in t.boxes.iter().enumerate() {
                prop_assert!(used.insert((i, b.x1.to_bits(), b.y1.to_bits(), t.scores[i].to_bits())));
            }
        }
        for w in tubes.windows(2) {
            prop_assert!(w[1].energy <= w[0].energy);
        }
    }

    #[test]
    fn localization_score_is_symmetric_and_bounded(a in tube("a"), b in tube("b"), mask in prop::collection::vec(any::<bool>(), 20)) {
        let eligible: BTreeSet<u32> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i as u32).collect();
        let ab = localization_score(&a, &b, &eligible).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - localization_score(&b, &a, &eligible).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn recall_grows_with_k(
        pool in prop::collection::vec(tube("t"), 2..12),
        scores in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 12), 1..6),
        picks in prop::collection::vec(0usize..12, 6),
    ) {
        let pool: Vec<Tube> = pool.into_iter().enumerate().map(|(i, mut t)| { t.id = format!("t{i}"); t }).collect();
        let ids: Vec<String> = pool.iter().map(|t| t.id.clone()).collect();
        let tubes: HashMap<String, Tube> = pool.iter().map(|t| (t.id.clone(), t.clone())).collect();
        let results: Vec<RankedResult> = scores
            .iter()
            .enumerate()
            .map(|(q, s)| RankedResult::from_scores(format!("q{q}"), &ids, &s[..ids.len()]).unwrap())
            .collect();
        let truths: Vec<GroundTruth> = (0..results.len())
            .map(|q| {
                let t = &pool[picks[q] % pool.len()];
                GroundTruth {
                    person_id: format!("p{q}"),
                    clip_id: "c".into(),
                    eligible_frames: (0..20).collect(),
                    boxes: t.frames().zip(t.boxes.iter().copied()).collect(),
                }
            })
            .collect();
        let refs: Vec<&GroundTruth> = truths.iter().collect();
        let table = recall_table(&results, &refs, &tubes, &[1, 2, 5, 10, 20], 0.5).unwrap();
        for w in table.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
        // every query's own tube is in the pool, so the full list always hits
        prop_assert_eq!(table[4].1, 1.0);
    }

    #[test]
    fn matrix_roundtrip_is_bit_exact(m in f32_matrix()) {
        let bytes = encode_matrix(&m);
        prop_assert_eq!(bytes.len(), 21 + 4 * m.len());
        let (back, used) = decode_matrix(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn bundle_roundtrip(a in f32_matrix(), b in f32_matrix()) {
        let mut bundle = Bundle::new(json!({ "kind": "test", "n": 2 }));
        bundle.push("a", a.clone());
        bundle.push("b", b.clone());
        let back = Bundle::decode(&bundle.encode().unwrap()).unwrap();
        prop_assert_eq!(back.get("a").unwrap(), &a);
        prop_assert_eq!(back.get("b").unwrap(), &b);
        prop_assert_eq!(back.meta, bundle.meta);
    }

    #[test]
    fn tube_records_roundtrip(t in tube("c:0:0")) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[TubeRecord::from_tube(&t)]).unwrap();
        let back: Vec<TubeRecord> = read_jsonl(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back[0].tube(), t);
    }
}

#[test]
fn corrupt_bundle_is_rejected() {
    let mut bundle = Bundle::new(json!({}));
    bundle.push("x", DMatrix::from_element(2, 2, 1.0));
    let mut bytes = bundle.encode().unwrap();
    let n = bytes.len();
    bytes[n - 1] = b'X';
    assert!(Bundle::decode(&bytes).is_err());
    assert!(Bundle::decode(&bytes[..10]).is_err());
}
