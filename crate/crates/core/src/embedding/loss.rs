//! Triplet ranking losses over a batch of paired embeddings.
//!
//! Row `i` of `x` (tube side) and row `i` of `y` (description side) form a
//! pair with group label `groups[i]`. Items sharing a group are positives for
//! each other, all other items are negatives.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    /// Weight of the description-anchored cross-modal term.
    pub alpha1: f64,
    /// Weight of the tube-side structure term.
    pub alpha2: f64,
    /// Weight of the description-side structure term.
    pub alpha3: f64,
    /// Weight of the positive-pair distance term (DSPE++ only).
    pub alpha4: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.1,
            alpha1: 2.0,
            alpha2: 0.2,
            alpha3: 0.2,
            alpha4: 0.5,
        }
    }
}

/// The four triplet families, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    TubeToDesc,
    DescToTube,
    WithinTube,
    WithinDesc,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::TubeToDesc, Family::DescToTube, Family::WithinTube, Family::WithinDesc];
}

/// Active/inactive flag of every enumerated triplet, per family, in
/// `(anchor, positive, negative)` lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletMasks {
    pub families: [Vec<bool>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Enumerated triplets per family.
    pub counts: [usize; 4],
    /// Triplets with a positive hinge per family.
    pub active: [usize; 4],
    pub grad_x: DMatrix<f64>,
    pub grad_y: DMatrix<f64>,
    pub masks: TripletMasks,
}

impl LossOutput {
    /// Number of tube-anchored cross-modal triplets in the batch.
    pub fn n_primary(&self) -> usize {
        self.counts[0]
    }
}

fn distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| (a.row(i) - b.row(j)).norm())
}

fn check(x: &DMatrix<f64>, y: &DMatrix<f64>, groups: &[usize]) -> Result<()> {
    if x.shape() != y.shape() || x.nrows() != groups.len() {
        return Err(Error::contract("loss inputs must have matching rows and dimensions"));
    }
    Ok(())
}

fn triplet_count(groups: &[usize], within: bool) -> usize {
    groups
        .iter()
        .map(|gi| {
            let same = groups.iter().filter(|g| *g == gi).count();
            let pos = if within { same - 1 } else { same };
            pos * (groups.len() - same)
        })
        .sum()
}

struct FamilyResult {
    loss: f64,
    count: usize,
    active: usize,
    mask: Vec<bool>,
    pos_coef: DMatrix<f64>,
    neg_coef: DMatrix<f64>,
}

/// One hinge family with anchors from one matrix and positives/negatives from
/// the distance matrix `d` (anchors are rows). `within` excludes `j == i`.
fn hinge_family(d: &DMatrix<f64>, groups: &[usize], margin: f64, within: bool, fixed: Option<&[bool]>) -> FamilyResult {
    let n = groups.len();
    let mut r = FamilyResult {
        loss: 0.0,
        count: 0,
        active: 0,
        mask: Vec::new(),
        pos_coef: DMatrix::zeros(n, n),
        neg_coef: DMatrix::zeros(n, n),
    };
    for i in 0..n {
        for j in 0..n {
            if groups[j] != groups[i] || (within && j == i) {
                continue;
            }
            for k in 0..n {
                if groups[k] == groups[i] {
                    continue;
                }
                let h = margin + d[(i, j)] - d[(i, k)];
                let on = match fixed {
                    Some(m) => m[r.count],
                    None => h > 0.0,
                };
                r.count += 1;
                r.mask.push(on);
                if on {
                    r.active += 1;
                    r.loss += h;
                    r.pos_coef[(i, j)] += 1.0;
                    r.neg_coef[(i, k)] += 1.0;
                }
            }
        }
    }
    r
}

/// Adds `w * sum_j coef[i,j] * d/da_i ||a_i - b_j||` to `ga` and the matching
/// terms to `gb`. The derivative at zero distance is taken as zero.
fn scatter(a: &DMatrix<f64>, b: &DMatrix<f64>, coef: &DMatrix<f64>, w: f64, ga: &mut DMatrix<f64>, gb: &mut DMatrix<f64>) {
    for i in 0..coef.nrows() {
        for j in 0..coef.ncols() {
            let c = coef[(i, j)];
            if c == 0.0 {
                continue;
            }
            let diff = a.row(i) - b.row(j);
            let norm = diff.norm();
            if norm == 0.0 {
                continue;
            }
            let u = diff * (w * c / norm);
            let mut gi = ga.row_mut(i);
            gi += &u;
            let mut gj = gb.row_mut(j);
            gj -= &u;
        }
    }
}

/// DSPE loss and its gradient with respect to both embedding matrices.
///
/// With `masks` given, the active triplets are taken from it instead of the
/// hinge signs; this freezes the piecewise-linear regime for finite
/// differencing.
pub fn dspe_loss(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    groups: &[usize],
    config: &LossConfig,
    masks: Option<&TripletMasks>,
) -> Result<LossOutput> {
    check(x, y, groups)?;
    let (n, dim) = x.shape();
    let dxy = distances(x, y);
    let dyx = dxy.transpose();
    let dxx = distances(x, x);
    let dyy = distances(y, y);
    let weights = [1.0, config.alpha1, config.alpha2, config.alpha3];

    let mut out = LossOutput {
        loss: 0.0,
        counts: [0; 4],
        active: [0; 4],
        grad_x: DMatrix::zeros(n, dim),
        grad_y: DMatrix::zeros(n, dim),
        masks: TripletMasks::default(),
    };
    for (f, family) in Family::ALL.into_iter().enumerate() {
        let fixed = masks.map(|m| m.families[f].as_slice());
        let (d, within) = match family {
            Family::TubeToDesc => (&dxy, false),
            Family::DescToTube => (&dyx, false),
            Family::WithinTube => (&dxx, true),
            Family::WithinDesc => (&dyy, true),
        };
        if let Some(m) = fixed {
            if triplet_count(groups, within) != m.len() {
                return Err(Error::contract("triplet mask does not match the batch"));
            }
        }
        let r = hinge_family(d, groups, config.margin, within, fixed);
        let w = weights[f];
        out.loss += w * r.loss;
        out.counts[f] = r.count;
        out.active[f] = r.active;
        let (gx, gy) = (&mut out.grad_x, &mut out.grad_y);
        match family {
            Family::TubeToDesc => {
                scatter(x, y, &r.pos_coef, w, gx, gy);
                scatter(x, y, &r.neg_coef, -w, gx, gy);
            }
            Family::DescToTube => {
                scatter(y, x, &r.pos_coef, w, gy, gx);
                scatter(y, x, &r.neg_coef, -w, gy, gx);
            }
            Family::WithinTube => {
                let mut other = DMatrix::zeros(n, dim);
                scatter(x, x, &r.pos_coef, w, gx, &mut other);
                scatter(x, x, &r.neg_coef, -w, gx, &mut other);
                *gx += other;
            }
            Family::WithinDesc => {
                let mut other = DMatrix::zeros(n, dim);
                scatter(y, y, &r.pos_coef, w, gy, &mut other);
                scatter(y, y, &r.neg_coef, -w, gy, &mut other);
                *gy += other;
            }
        }
        out.masks.families[f] = r.mask;
    }
    if out.counts.iter().all(|c| *c == 0) {
        warn!("batch has no valid triplet; loss is 0");
    }
    Ok(out)
}

/// DSPE loss plus `alpha4` times the summed tube/description distance over
/// all positive pairs.
pub fn dspepp_loss(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    groups: &[usize],
    config: &LossConfig,
    masks: Option<&TripletMasks>,
) -> Result<LossOutput> {
    let mut out = dspe_loss(x, y, groups, config, masks)?;
    let n = groups.len();
    let mut pos = DMatrix::zeros(n, n);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if groups[i] == groups[j] {
                pos[(i, j)] = 1.0;
                s += (x.row(i) - y.row(j)).norm();
            }
        }
    }
    out.loss += config.alpha4 * s;
    scatter(x, y, &pos, config.alpha4, &mut out.grad_x, &mut out.grad_y);
    Ok(out)
}
