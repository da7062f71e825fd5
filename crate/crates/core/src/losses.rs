//! Contrastive, triplet and N-pair losses with analytic embedding gradients.
//!
//! All three are plain sums over their mined index sets. Gradients are
//! accumulated additively per embedding row in a fixed serial order, so
//! results are bit-reproducible.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot_unchecked, sq_dist, Matrix};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuplet {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TupletSet {
    pub tuplets: Vec<Tuplet>,
}

/// Loss value and its gradient with respect to every embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub value: f64,
    pub d_embeddings: Matrix,
}

impl LossGradients {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            value: 0.0,
            d_embeddings: Matrix::zeros(rows, cols),
        }
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::InvalidIndexSet(format!(
            "index {i} out of bounds for batch of {n}"
        )));
    }
    Ok(())
}

fn check_distinct(i: usize, j: usize) -> Result<()> {
    if i == j {
        return Err(Error::InvalidIndexSet(format!("self-pair ({i}, {i})")));
    }
    Ok(())
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks bounds, `i != j`, and label agreement for every pair.
    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        for (&(i, j), same) in self
            .positives
            .iter()
            .map(|p| (p, true))
            .chain(self.negatives.iter().map(|p| (p, false)))
        {
            check_index(i, n)?;
            check_index(j, n)?;
            check_distinct(i, j)?;
            if (labels[i] == labels[j]) != same {
                return Err(Error::InvalidIndexSet(format!(
                    "pair ({i}, {j}) has wrong label relation"
                )));
            }
        }
        Ok(())
    }
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        for t in &self.triplets {
            for idx in [t.anchor, t.positive, t.negative] {
                check_index(idx, n)?;
            }
            check_distinct(t.anchor, t.positive)?;
            if labels[t.anchor] != labels[t.positive] || labels[t.anchor] == labels[t.negative] {
                return Err(Error::InvalidIndexSet(format!("bad triplet {t:?}")));
            }
        }
        Ok(())
    }
}

impl TupletSet {
    pub fn len(&self) -> usize {
        self.tuplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuplets.is_empty()
    }

    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        for t in &self.tuplets {
            check_index(t.anchor, n)?;
            check_index(t.positive, n)?;
            check_distinct(t.anchor, t.positive)?;
            if labels[t.anchor] != labels[t.positive] {
                return Err(Error::InvalidIndexSet(format!("bad positive in {t:?}")));
            }
            if t.negatives.is_empty() {
                return Err(Error::InvalidIndexSet("tuplet without negatives".into()));
            }
            let mut seen = vec![labels[t.anchor]];
            for &k in &t.negatives {
                check_index(k, n)?;
                if seen.contains(&labels[k]) {
                    return Err(Error::InvalidIndexSet(format!(
                        "negative {k} repeats a class in {t:?}"
                    )));
                }
                seen.push(labels[k]);
            }
        }
        Ok(())
    }
}

/// Contrastive loss: squared distance over positive pairs plus a hinge
/// `max(0, margin - D)` over negative pairs.
pub fn contrastive_loss(embeddings: &Matrix, pairs: &PairSet, margin: f64) -> Result<LossGradients> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    let (n, d) = embeddings.shape();
    let mut out = LossGradients::zeros(n, d);
    let mut diff = vec![0.0; d];

    for &(i, j) in &pairs.positives {
        check_index(i, n)?;
        check_index(j, n)?;
        check_distinct(i, j)?;
        let (fi, fj) = (embeddings.row(i), embeddings.row(j));
        out.value += sq_dist(fi, fj);
        for ((g, a), b) in diff.iter_mut().zip(fi).zip(fj) {
            *g = 2.0 * (a - b);
        }
        axpy(out.d_embeddings.row_mut(i), 1.0, &diff);
        axpy(out.d_embeddings.row_mut(j), -1.0, &diff);
    }

    for &(i, j) in &pairs.negatives {
        check_index(i, n)?;
        check_index(j, n)?;
        check_distinct(i, j)?;
        let (fi, fj) = (embeddings.row(i), embeddings.row(j));
        let slack = margin - sq_dist(fi, fj);
        // At slack == 0 the subgradient is taken as 0.
        if slack > 0.0 {
            out.value += slack;
            for ((g, a), b) in diff.iter_mut().zip(fi).zip(fj) {
                *g = 2.0 * (a - b);
            }
            axpy(out.d_embeddings.row_mut(i), -1.0, &diff);
            axpy(out.d_embeddings.row_mut(j), 1.0, &diff);
        }
    }
    Ok(out)
}

/// Triplet loss: `max(0, margin + D(a, p) - D(a, n))` summed over triplets.
pub fn triplet_loss(embeddings: &Matrix, triplets: &TripletSet, margin: f64) -> Result<LossGradients> {
    if triplets.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    let (n, d) = embeddings.shape();
    let mut out = LossGradients::zeros(n, d);
    let mut g_anchor = vec![0.0; d];
    let mut g_pos = vec![0.0; d];
    let mut g_neg = vec![0.0; d];

    for t in &triplets.triplets {
        for idx in [t.anchor, t.positive, t.negative] {
            check_index(idx, n)?;
        }
        check_distinct(t.anchor, t.positive)?;
        let fa = embeddings.row(t.anchor);
        let fp = embeddings.row(t.positive);
        let fn_ = embeddings.row(t.negative);
        let term = margin + sq_dist(fa, fp) - sq_dist(fa, fn_);
        if term > 0.0 {
            out.value += term;
            for c in 0..d {
                g_anchor[c] = 2.0 * (fn_[c] - fp[c]);
                g_pos[c] = -2.0 * (fa[c] - fp[c]);
                g_neg[c] = 2.0 * (fa[c] - fn_[c]);
            }
            axpy(out.d_embeddings.row_mut(t.anchor), 1.0, &g_anchor);
            axpy(out.d_embeddings.row_mut(t.positive), 1.0, &g_pos);
            axpy(out.d_embeddings.row_mut(t.negative), 1.0, &g_neg);
        }
    }
    Ok(out)
}

/// N-pair loss: `log(1 + sum_k exp(f_a.f_k - f_a.f_p))` per tuplet.
///
/// Evaluated as a max-shifted log-sum-exp so large inner-product gaps
/// cannot overflow.
pub fn npair_loss(embeddings: &Matrix, tuplets: &TupletSet) -> Result<LossGradients> {
    if tuplets.is_empty() {
        return Err(Error::EmptyTupletSet);
    }
    let (n, d) = embeddings.shape();
    let mut out = LossGradients::zeros(n, d);
    let mut scores = Vec::new();
    let mut g_anchor = vec![0.0; d];

    for t in &tuplets.tuplets {
        check_index(t.anchor, n)?;
        check_index(t.positive, n)?;
        check_distinct(t.anchor, t.positive)?;
        if t.negatives.is_empty() {
            return Err(Error::InvalidIndexSet("tuplet without negatives".into()));
        }
        let fa = embeddings.row(t.anchor);
        let fp = embeddings.row(t.positive);
        let pos_sim = dot_unchecked(fa, fp);

        scores.clear();
        for &k in &t.negatives {
            check_index(k, n)?;
            scores.push(dot_unchecked(fa, embeddings.row(k)) - pos_sim);
        }
        // The implicit "1" is exp(0), so the shift includes 0.
        let shift = scores.iter().copied().fold(0.0f64, f64::max);
        let mut denom = (-shift).exp();
        for s in scores.iter_mut() {
            *s = (*s - shift).exp();
            denom += *s;
        }
        out.value += shift + denom.ln();

        // scores now hold softmax weights after division.
        g_anchor.iter_mut().for_each(|g| *g = 0.0);
        let mut weight_sum = 0.0;
        for (s, &k) in scores.iter().zip(&t.negatives) {
            let p = *s / denom;
            weight_sum += p;
            let fk = embeddings.row(k);
            for c in 0..d {
                g_anchor[c] += p * (fk[c] - fp[c]);
            }
            axpy(out.d_embeddings.row_mut(k), p, fa);
        }
        axpy(out.d_embeddings.row_mut(t.anchor), 1.0, &g_anchor);
        axpy(out.d_embeddings.row_mut(t.positive), -weight_sum, fa);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::l2_normalize;

    fn emb(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    /// Unit vector at angle `theta` in the plane.
    fn at(theta: f64) -> [f64; 2] {
        [theta.cos(), theta.sin()]
    }

    /// Angle whose chord has squared length `d`: d = 2 - 2 cos(theta).
    fn angle_for(d: f64) -> f64 {
        (1.0 - d / 2.0).acos()
    }

    #[test]
    fn contrastive_examples() {
        let e = emb(&[&[0.6, 0.8], &[0.6, 0.8]]);
        let pairs = PairSet { positives: vec![(0, 1)], negatives: vec![] };
        assert_eq!(contrastive_loss(&e, &pairs, 1.0).unwrap().value, 0.0);

        let e = emb(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let pairs = PairSet { positives: vec![], negatives: vec![(0, 1)] };
        let out = contrastive_loss(&e, &pairs, 1.0).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.d_embeddings.as_slice().iter().all(|&g| g == 0.0));

        // positive and negative pair both at D = 0.5
        let a = angle_for(0.5);
        let e = emb(&[&at(0.0), &at(a), &at(2.0), &at(2.0 + a)]);
        let pairs = PairSet { positives: vec![(0, 1)], negatives: vec![(2, 3)] };
        let v = contrastive_loss(&e, &pairs, 1.0).unwrap().value;
        assert!((v - 1.0).abs() < 1e-12, "{v}");

        assert!(matches!(
            contrastive_loss(&e, &PairSet::default(), 1.0),
            Err(Error::EmptyPairSet)
        ));
    }

    #[test]
    fn contrastive_hinge_boundary_has_zero_gradient() {
        // distance exactly 1 == margin
        let e = emb(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let pairs = PairSet { positives: vec![], negatives: vec![(0, 1)] };
        let out = contrastive_loss(&e, &pairs, 1.0).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.d_embeddings.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn triplet_examples() {
        let e = emb(&[&[1.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0]]);
        let ts = TripletSet { triplets: vec![Triplet { anchor: 0, positive: 1, negative: 2 }] };
        assert_eq!(triplet_loss(&e, &ts, 1.0).unwrap().value, 0.0);

        let e = emb(&[&at(0.0), &at(angle_for(0.5)), &at(-angle_for(0.8))]);
        let v = triplet_loss(&e, &ts, 1.0).unwrap().value;
        assert!((v - 0.7).abs() < 1e-12, "{v}");

        let e = emb(&[&[0.6, 0.8], &[0.6, 0.8], &[0.6, 0.8]]);
        assert_eq!(triplet_loss(&e, &ts, 1.0).unwrap().value, 1.0);

        assert!(matches!(
            triplet_loss(&e, &TripletSet::default(), 1.0),
            Err(Error::EmptyTripletSet)
        ));
    }

    #[test]
    fn npair_examples() {
        let e = emb(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let one = TupletSet {
            tuplets: vec![Tuplet { anchor: 0, positive: 1, negatives: vec![2] }],
        };
        let v = npair_loss(&e, &one).unwrap().value;
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        let e = emb(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let v = npair_loss(&e, &one).unwrap().value;
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.313262).abs() < 1e-6);

        let same = l2_normalize(&[1.0, 1.0]).unwrap();
        let rows: Vec<&[f64]> = vec![&same; 6];
        let e = emb(&rows);
        let four = TupletSet {
            tuplets: vec![Tuplet { anchor: 0, positive: 1, negatives: vec![2, 3, 4, 5] }],
        };
        let v = npair_loss(&e, &four).unwrap().value;
        assert!((v - 5.0f64.ln()).abs() < 1e-12);
        assert!((v - 1.609438).abs() < 1e-6);

        assert!(matches!(npair_loss(&e, &TupletSet::default()), Err(Error::EmptyTupletSet)));
    }

    #[test]
    fn npair_is_stable_for_large_scores() {
        // Non-normalized debug inputs with a huge inner-product gap.
        let e = emb(&[&[100.0, 0.0], &[-100.0, 0.0], &[100.0, 0.0]]);
        let t = TupletSet {
            tuplets: vec![Tuplet { anchor: 0, positive: 1, negatives: vec![2] }],
        };
        let out = npair_loss(&e, &t).unwrap();
        assert!(out.value.is_finite());
        assert!((out.value - 20000.0).abs() < 1e-6);
        assert!(out.d_embeddings.is_finite());
    }

    #[test]
    fn out_of_bounds_indices_are_rejected() {
        let e = emb(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let pairs = PairSet { positives: vec![(0, 2)], negatives: vec![] };
        assert!(matches!(contrastive_loss(&e, &pairs, 1.0), Err(Error::InvalidIndexSet(_))));
        let pairs = PairSet { positives: vec![(1, 1)], negatives: vec![] };
        assert!(contrastive_loss(&e, &pairs, 1.0).is_err());
    }

    #[test]
    fn validate_checks_labels() {
        let labels = [0, 0, 1];
        let good = PairSet { positives: vec![(0, 1)], negatives: vec![(0, 2), (1, 2)] };
        good.validate(&labels).unwrap();
        let bad = PairSet { positives: vec![(0, 2)], negatives: vec![] };
        assert!(bad.validate(&labels).is_err());

        let labels = [0, 0, 1, 1, 2];
        let t = TupletSet {
            tuplets: vec![Tuplet { anchor: 0, positive: 1, negatives: vec![2, 3] }],
        };
        assert!(t.validate(&labels).is_err(), "two negatives from class 1");
        let t = TupletSet {
            tuplets: vec![Tuplet { anchor: 0, positive: 1, negatives: vec![2, 4] }],
        };
        t.validate(&labels).unwrap();
    }
}
