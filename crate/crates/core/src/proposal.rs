//! Candidate tube proposal.
//!
//! Person detections from consecutive frames (one frame per second) are linked
//! into tubes. A tube's energy is the sum of linking scores along the path,
//! divided by the number of boxes `T`:
//!
//! ```text
//! link(a, b)  = s_det(a) + s_det(b) + lambda * IoU(a, b)
//! energy(B)   = (1 / T) * sum_{t=1}^{T-1} link(B_t, B_{t+1})
//! ```
//!
//! The highest-energy path through a segment is found with a Viterbi pass.
//! Paths are extracted and their detections removed until some frame of the
//! segment runs out of detections. Finally the `N_c` best tubes over the whole
//! dataset are kept as retrieval candidates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-form bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and empty extents.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::contract(format!("invalid box {:?}", self)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One scored person box in one frame of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub clip_id: String,
    pub frame: u32,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(clip_id: impl Into<String>, frame: u32, bbox: BBox, score: f64) -> Self {
        Detection {
            clip_id: clip_id.into(),
            frame,
            bbox,
            score,
        }
    }
}

/// A linked sequence of boxes, one per consecutive frame of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub id: String,
    pub clip_id: String,
    pub start_frame: u32,
    pub boxes: Vec<BBox>,
    /// Detector scores of the linked boxes, parallel to `boxes`.
    pub scores: Vec<f64>,
    pub energy: f64,
}

impl Tube {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn end_frame(&self) -> u32 {
        self.start_frame + self.boxes.len() as u32 - 1
    }

    /// Box at an absolute frame number, if the tube covers it.
    pub fn box_at(&self, frame: u32) -> Option<&BBox> {
        if frame < self.start_frame {
            return None;
        }
        self.boxes.get((frame - self.start_frame) as usize)
    }

    pub fn frames(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.boxes.len() as u32).map(move |i| self.start_frame + i)
    }

    /// Rebuilds the detections the tube was linked from.
    pub fn detections(&self) -> Vec<Detection> {
        self.boxes
            .iter()
            .zip(&self.scores)
            .enumerate()
            .map(|(i, (b, s))| Detection::new(self.clip_id.clone(), self.start_frame + i as u32, *b, *s))
            .collect()
    }

    /// Energy recomputed from the tube's own detections.
    pub fn recompute_energy(&self, lambda: f64) -> Result<f64> {
        tube_energy(&self.detections(), lambda)
    }
}

/// Tie-breaking rule for equal-energy Viterbi paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Prefer the lowest detection index at the latest frame where paths differ.
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalConfig {
    /// Weight of the IoU term in the linking score.
    pub lambda: f64,
    /// Number of top-energy tubes kept as retrieval candidates.
    pub n_candidates: usize,
    pub tie_break: TieBreak,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            lambda: 1.0,
            n_candidates: 350,
            tie_break: TieBreak::LowestIndex,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract("lambda must be finite and >= 0"));
        }
        if self.n_candidates < 1 {
            return Err(Error::contract("n_candidates must be >= 1"));
        }
        Ok(())
    }
}

// Shared by `link_score`, `tube_energy` and the Viterbi pass so that all three
// produce bit-identical sums.
#[inline]
fn link_value(a: &Detection, b: &Detection, lambda: f64) -> f64 {
    a.score + b.score + lambda * iou(&a.bbox, &b.bbox)
}

/// Linking score between a detection and one in the following frame.
pub fn link_score(a: &Detection, b: &Detection, lambda: f64) -> Result<f64> {
    if a.clip_id != b.clip_id {
        return Err(Error::contract(format!(
            "cannot link detections from clips {} and {}",
            a.clip_id, b.clip_id
        )));
    }
    if a.frame + 1 != b.frame {
        return Err(Error::contract(format!(
            "linked detections must be in adjacent frames, got {} and {}",
            a.frame, b.frame
        )));
    }
    Ok(link_value(a, b, lambda))
}

/// Energy of a path: the summed linking scores divided by the path length.
pub fn tube_energy(path: &[Detection], lambda: f64) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::contract("tube energy of an empty path"));
    }
    let mut sum = 0.0;
    for pair in path.windows(2) {
        sum += link_score(&pair[0], &pair[1], lambda)?;
    }
    Ok(sum / path.len() as f64)
}

/// Result of one Viterbi pass: the chosen detection index per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PathChoice {
    pub indices: Vec<usize>,
    pub energy: f64,
}

fn check_segment(frames: &[Vec<Detection>]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::contract("segment has no frames"));
    }
    for (t, dets) in frames.iter().enumerate() {
        if dets.is_empty() {
            return Err(Error::contract(format!(
                "frame {t} of the segment has no detections; split segments first"
            )));
        }
    }
    for pair in frames.windows(2) {
        let (a, b) = (&pair[0][0], &pair[1][0]);
        if a.clip_id != b.clip_id || a.frame + 1 != b.frame {
            return Err(Error::contract("segment frames must be consecutive within one clip"));
        }
    }
    Ok(())
}

/// Viterbi pass over a segment, returning chosen indices and the path energy.
pub fn best_path_indices(frames: &[Vec<Detection>], lambda: f64) -> Result<PathChoice> {
    check_segment(frames)?;
    let n_frames = frames.len();
    let mut acc: Vec<f64> = vec![0.0; frames[0].len()];
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n_frames);
    back.push(Vec::new());

    for t in 1..n_frames {
        let (prev, cur) = (&frames[t - 1], &frames[t]);
        let mut next = Vec::with_capacity(cur.len());
        let mut ptr = Vec::with_capacity(cur.len());
        for b in cur {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for (i, a) in prev.iter().enumerate() {
                let v = acc[i] + link_value(a, b, lambda);
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            next.push(best);
            ptr.push(best_i);
        }
        acc = next;
        back.push(ptr);
    }

    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, &v) in acc.iter().enumerate() {
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut indices = vec![0; n_frames];
    indices[n_frames - 1] = last;
    for t in (1..n_frames).rev() {
        indices[t - 1] = back[t][indices[t]];
    }
    Ok(PathChoice {
        indices,
        energy: best / n_frames as f64,
    })
}

fn tube_from_choice(frames: &[Vec<Detection>], choice: &PathChoice, id: String) -> Tube {
    let first = &frames[0][choice.indices[0]];
    let (boxes, scores) = frames
        .iter()
        .zip(&choice.indices)
        .map(|(dets, &i)| (dets[i].bbox, dets[i].score))
        .unzip();
    Tube {
        id,
        clip_id: first.clip_id.clone(),
        start_frame: first.frame,
        boxes,
        scores,
        energy: choice.energy,
    }
}

/// Highest-energy tube through a segment of consecutive, non-empty frames.
pub fn best_path(frames: &[Vec<Detection>], lambda: f64) -> Result<Tube> {
    let choice = best_path_indices(frames, lambda)?;
    let id = format!("{}:{}:0", frames[0][0].clip_id, frames[0][0].frame);
    Ok(tube_from_choice(frames, &choice, id))
}

/// Repeatedly extracts the best path and removes its detections until some
/// frame of the segment is left empty.
///
/// Tube ids are `"{clip_id}:{start_frame}:{k}"` with `k` the extraction order.
pub fn propose_tubes(frames: &[Vec<Detection>], lambda: f64) -> Result<Vec<Tube>> {
    check_segment(frames)?;
    let mut remaining: Vec<Vec<Detection>> = frames.to_vec();
    let mut tubes = Vec::new();
    let (clip, start) = (frames[0][0].clip_id.clone(), frames[0][0].frame);
    while remaining.iter().all(|f| !f.is_empty()) {
        let choice = best_path_indices(&remaining, lambda)?;
        let id = format!("{clip}:{start}:{}", tubes.len());
        tubes.push(tube_from_choice(&remaining, &choice, id));
        for (dets, &i) in remaining.iter_mut().zip(&choice.indices) {
            dets.remove(i);
        }
    }
    Ok(tubes)
}

/// Groups one clip's detections by frame and splits them into maximal runs of
/// consecutive frames that all have at least one detection.
pub fn split_segments(detections: &[Detection]) -> Vec<Vec<Vec<Detection>>> {
    let mut by_frame: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_frame.entry(d.frame).or_default().push(d.clone());
    }
    let mut segments: Vec<Vec<Vec<Detection>>> = Vec::new();
    let mut last_frame: Option<u32> = None;
    for (frame, dets) in by_frame {
        match last_frame {
            Some(f) if f + 1 == frame => segments.last_mut().unwrap().push(dets),
            _ => segments.push(vec![dets]),
        }
        last_frame = Some(frame);
    }
    segments
}

/// Proposes tubes for every clip. Output is ordered by clip id, then segment
/// start, then extraction order.
pub fn propose_all(detections: &[Detection], lambda: f64) -> Result<Vec<Tube>> {
    let mut by_clip: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        d.bbox.validate()?;
        if !d.score.is_finite() {
            return Err(Error::contract(format!("non-finite detection score in clip {}", d.clip_id)));
        }
        by_clip.entry(d.clip_id.as_str()).or_default().push(d.clone());
    }
    let mut tubes = Vec::new();
    for dets in by_clip.values() {
        for segment in split_segments(dets) {
            tubes.extend(propose_tubes(&segment, lambda)?);
        }
    }
    Ok(tubes)
}

/// Keeps the `n_candidates` highest-energy tubes, ties broken by
/// `(clip_id, start_frame, id)`.
pub fn select_top_candidates(tubes: &[Tube], n_candidates: usize) -> Vec<Tube> {
    let mut sorted: Vec<&Tube> = tubes.iter().collect();
    sorted.sort_by(|a, b| {
        b.energy
            .total_cmp(&a.energy)
            .then_with(|| a.clip_id.cmp(&b.clip_id))
            .then_with(|| a.start_frame.cmp(&b.start_frame))
            .then_with(|| a.id.cmp(&b.id))
    });
    sorted.into_iter().take(n_candidates).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(frame: u32, b: BBox, score: f64) -> Detection {
        Detection::new("c", frame, b, score)
    }

    /// IoU by counting unit cells on the integer grid.
    fn raster_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> f64 {
        let inside = |r: (i32, i32, i32, i32), x: i32, y: i32| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
        let (mut inter, mut uni) = (0, 0);
        for x in -50..50 {
            for y in -50..50 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    uni += 1;
                }
            }
        }
        inter as f64 / uni as f64
    }

    /// Every path through the segment, enumerated.
    fn all_paths(sizes: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &n in sizes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..n).map(move |i| {
                        let mut q = p.clone();
                        q.push(i);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn brute_best(frames: &[Vec<Detection>], lambda: f64) -> (Vec<usize>, f64) {
        let sizes: Vec<usize> = frames.iter().map(|f| f.len()).collect();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in all_paths(&sizes) {
            let path: Vec<Detection> = p.iter().enumerate().map(|(t, &i)| frames[t][i].clone()).collect();
            let e = tube_energy(&path, lambda).unwrap();
            let better = match &best {
                None => true,
                Some((bp, be)) => {
                    e > *be || (e == *be && {
                        // lowest index at the latest differing frame
                        let t = (0..p.len()).rev().find(|&t| p[t] != bp[t]).unwrap();
                        p[t] < bp[t]
                    })
                }
            };
            if better {
                best = Some((p, e));
            }
        }
        best.unwrap()
    }

    fn random_segment(rng: &mut ChaCha8Rng, n_frames: usize, max_dets: usize) -> Vec<Vec<Detection>> {
        (0..n_frames)
            .map(|t| {
                let n = rng.random_range(1..=max_dets);
                (0..n)
                    .map(|_| {
                        let x = rng.random_range(0.0..40.0);
                        let y = rng.random_range(0.0..40.0);
                        let w = rng.random_range(5.0..20.0);
                        let h = rng.random_range(5.0..20.0);
                        det(t as u32, bx(x, y, x + w, y + h), rng.random_range(0.0..1.0))
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        let oracle = raster_iou((0, 0, 10, 10), (5, 0, 15, 10));
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &bx(5.0, 0.0, 15.0, 10.0)) - oracle).abs() < 1e-12);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 5.0).is_err());
    }

    #[test]
    fn link_score_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let s = link_score(&det(0, a, 0.5), &det(1, a, 0.5), 1.0).unwrap();
        assert_eq!(s, 2.0);
        let s = link_score(&det(0, a, 0.9), &det(1, bx(20.0, 20.0, 30.0, 30.0), 0.8), 2.0).unwrap();
        assert!((s - 1.7).abs() < 1e-12);
        let s = link_score(&det(0, a, 0.0), &det(1, bx(5.0, 0.0, 15.0, 10.0), 0.0), 3.0).unwrap();
        assert!((s - 3.0 * raster_iou((0, 0, 10, 10), (5, 0, 15, 10))).abs() < 1e-12);
    }

    #[test]
    fn link_score_requires_adjacent_frames() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert!(matches!(link_score(&det(0, a, 0.5), &det(2, a, 0.5), 1.0), Err(Error::Contract(_))));
        let other = Detection::new("d", 1, a, 0.5);
        assert!(link_score(&det(0, a, 0.5), &other, 1.0).is_err());
    }

    #[test]
    fn energy_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(tube_energy(&[det(0, a, 0.7)], 1.0).unwrap(), 0.0);
        assert_eq!(tube_energy(&[det(0, a, 0.5), det(1, a, 0.5)], 1.0).unwrap(), 1.0);
        // link scores 1.2 and 0.6 with disjoint boxes: scores 0.6, 0.6, 0.0
        let far = bx(100.0, 100.0, 110.0, 110.0);
        let path = [det(0, a, 0.6), det(1, far, 0.6), det(2, a, 0.0)];
        assert!((tube_energy(&path, 1.0).unwrap() - 0.6).abs() < 1e-12);
        assert!(tube_energy(&[], 1.0).is_err());
    }

    #[test]
    fn best_path_single_detection() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let t = best_path(&[vec![det(3, a, 0.4)]], 1.0).unwrap();
        assert_eq!(t.boxes, vec![a]);
        assert_eq!(t.energy, 0.0);
        assert_eq!(t.start_frame, 3);
    }

    #[test]
    fn best_path_rejects_empty_frame() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let frames = vec![vec![det(0, a, 0.4)], vec![]];
        assert!(best_path(&frames, 1.0).is_err());
    }

    #[test]
    fn best_path_matches_enumeration_2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut frames = random_segment(&mut rng, 2, 2);
            for f in &mut frames {
                while f.len() < 2 {
                    let extra = f[0].clone();
                    f.push(extra);
                }
            }
            let (p, e) = brute_best(&frames, 1.0);
            let got = best_path_indices(&frames, 1.0).unwrap();
            assert_eq!(got.indices, p);
            assert_eq!(got.energy, e);
        }
    }

    #[test]
    fn best_path_matches_enumeration_5x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<Vec<Detection>> = random_segment(&mut rng, 5, 4)
            .into_iter()
            .map(|mut f| {
                while f.len() < 4 {
                    let mut d = f[0].clone();
                    d.score = rng.random_range(0.0..1.0);
                    f.push(d);
                }
                f
            })
            .collect();
        let (_, e) = brute_best(&frames, 0.7);
        let got = best_path(&frames, 0.7).unwrap();
        assert!((got.energy - e).abs() < 1e-9);
        assert!((got.recompute_energy(0.7).unwrap() - got.energy).abs() < 1e-9);
    }

    #[test]
    fn ties_take_lowest_index() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let frames = vec![vec![det(0, a, 0.5), det(0, a, 0.5)], vec![det(1, a, 0.5), det(1, a, 0.5)]];
        let got = best_path_indices(&frames, 1.0).unwrap();
        assert_eq!(got.indices, vec![0, 0]);
    }

    #[test]
    fn propose_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let frames: Vec<Vec<Detection>> = (0..3).map(|t| vec![det(t, a, 0.5)]).collect();
        assert_eq!(propose_tubes(&frames, 1.0).unwrap().len(), 1);

        let frames = vec![
            vec![det(0, a, 0.5), det(0, a, 0.3)],
            vec![det(1, a, 0.5), det(1, a, 0.2), det(1, a, 0.9)],
        ];
        assert_eq!(propose_tubes(&frames, 1.0).unwrap().len(), 2);
    }

    #[test]
    fn propose_matches_independent_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let frames: Vec<Vec<Detection>> = random_segment(&mut rng, 4, 3)
            .into_iter()
            .map(|mut f| {
                while f.len() < 3 {
                    let mut d = f[0].clone();
                    d.bbox.x1 += 1.0;
                    d.bbox.x2 += 1.0;
                    f.push(d);
                }
                f
            })
            .collect();
        let tubes = propose_tubes(&frames, 1.0).unwrap();
        assert_eq!(tubes.len(), 3);

        // re-run the greedy loop with brute force extraction
        let mut remaining = frames.clone();
        for tube in &tubes {
            let (p, e) = brute_best(&remaining, 1.0);
            assert_eq!(tube.energy, e);
            for (t, &i) in p.iter().enumerate() {
                assert_eq!(tube.boxes[t], remaining[t][i].bbox);
                remaining[t].remove(i);
            }
        }
        for w in tubes.windows(2) {
            assert!(w[1].energy <= w[0].energy);
        }
    }

    #[test]
    fn segments_split_at_gaps() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let dets = vec![det(0, a, 0.5), det(1, a, 0.5), det(3, a, 0.5), det(4, a, 0.5), det(4, a, 0.1)];
        let segs = split_segments(&dets);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].len(), 2);
        assert_eq!(segs[1][1].len(), 2);
        let tubes = propose_all(&dets, 1.0).unwrap();
        assert_eq!(tubes.len(), 2);
        assert_eq!(tubes[1].start_frame, 3);
    }

    fn tube_with(clip: &str, start: u32, energy: f64) -> Tube {
        Tube {
            id: format!("{clip}:{start}:0"),
            clip_id: clip.into(),
            start_frame: start,
            boxes: vec![bx(0.0, 0.0, 1.0, 1.0)],
            scores: vec![0.0],
            energy,
        }
    }

    #[test]
    fn top_candidates() {
        let tubes: Vec<Tube> = (0..10).map(|i| tube_with("c", i, i as f64)).collect();
        assert_eq!(select_top_candidates(&tubes, 350).len(), 10);
        let tubes = vec![tube_with("a", 0, 3.0), tube_with("b", 0, 1.0), tube_with("c", 0, 2.0)];
        let top = select_top_candidates(&tubes, 2);
        assert_eq!(top.iter().map(|t| t.energy).collect::<Vec<_>>(), vec![3.0, 2.0]);
        let tubes = vec![tube_with("b", 0, 1.0), tube_with("a", 5, 1.0), tube_with("a", 2, 1.0)];
        let top = select_top_candidates(&tubes, 3);
        assert_eq!(top[0].id, "a:2:0");
        assert_eq!(top[1].id, "a:5:0");
        assert_eq!(ProposalConfig::default().n_candidates, 350);
    }
}
