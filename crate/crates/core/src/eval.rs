//! Retrieval and clustering evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::{avg_intra_distance, group_by_class};
use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Matrix};

pub const DEFAULT_KS: [usize; 4] = [1, 2, 4, 8];

/// Recall@K for each requested K.
///
/// Neighbors are ranked by squared Euclidean distance, excluding the query
/// itself, with ties broken by ascending row index. A query whose class has
/// no other member never succeeds.
pub fn recall_at_k(embeddings: &Matrix, labels: &[usize], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if n < 2 {
        return Ok(ks.into_iter().map(|k| (k, 0.0)).collect());
    }

    // rank (1-based) of the first same-class neighbor, or None
    let mut first_hit = Vec::with_capacity(n);
    let mut dists = vec![0.0; n];
    for q in 0..n {
        let fq = embeddings.row(q);
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            dists[j] = sq_dist(fq, embeddings.row(j));
            if j != q && labels[j] == labels[q] && best.is_none_or(|(d, _)| dists[j] < d) {
                best = Some((dists[j], j));
            }
        }
        first_hit.push(best.map(|(d_hit, hit)| {
            1 + (0..n)
                .filter(|&j| j != q && (dists[j] < d_hit || (dists[j] == d_hit && j < hit)))
                .count()
        }));
    }

    Ok(ks
        .into_iter()
        .map(|k| {
            let hits = first_hit.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 100, restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

/// k-means with k-means++ seeding, keeping the lowest-inertia restart
/// (earliest restart on ties).
pub fn kmeans(points: &Matrix, num_clusters: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(points, num_clusters, seed, KMeansConfig::default())
}

pub fn kmeans_with(points: &Matrix, num_clusters: usize, seed: u64, cfg: KMeansConfig) -> Result<KMeansResult> {
    if num_clusters == 0 || num_clusters > points.rows() {
        return Err(Error::TooFewPoints {
            points: points.rows(),
            clusters: num_clusters,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let centroids = plus_plus_init(points, num_clusters, &mut rng);
        let run = lloyd(points, centroids, cfg.max_iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = points
        .iter_rows()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a centroid; take any unchosen row
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn assign(points: &Matrix, centroids: &Matrix, assignments: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter_rows().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, mu) in centroids.iter_rows().enumerate() {
            let d = sq_dist(p, mu);
            if d < best.0 {
                best = (d, c);
            }
        }
        assignments[i] = best.1;
        dists[i] = best.0;
        inertia += best.0;
    }
    inertia
}

fn lloyd(points: &Matrix, mut centroids: Matrix, max_iters: usize) -> KMeansResult {
    let (n, dim) = points.shape();
    let k = centroids.rows();
    let mut assignments = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut prev = assignments.clone();

    for _ in 0..max_iters.max(1) {
        let inertia = assign(points, &centroids, &mut assignments, &mut dists);
        history.push(inertia);
        if assignments == prev {
            break;
        }
        prev.clone_from(&assignments);

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            crate::linalg::axpy(sums.row_mut(c), 1.0, points.row(i));
        }
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                // re-seed from the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= 1");
                centroids.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
            } else {
                let inv = 1.0 / count as f64;
                for (m, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *m = s * inv;
                }
            }
        }
    }
    let inertia = *history.last().expect("one iteration");
    KMeansResult {
        assignments,
        centroids,
        inertia,
        inertia_history: history,
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(A;B) / ((H(A) + H(B)) / 2)`, natural log.
///
/// Two single-cluster partitions score 1; if exactly one side has zero
/// entropy the score is 0.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() || labels.is_empty() {
        return Err(Error::LengthMismatch {
            left: assignments.len(),
            right: labels.len(),
        });
    }
    let n = labels.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in assignments.iter().zip(labels) {
        *joint.entry((a, b)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cb.entry(b).or_default() += 1;
    }
    // sorted iteration keeps the float sums order-independent
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let sorted = |m: HashMap<usize, usize>| {
        let mut v: Vec<_> = m.into_iter().collect();
        v.sort_unstable();
        v
    };
    let (ca, cb) = (sorted(ca), sorted(cb));
    let ha = entropy(ca.iter().map(|&(_, c)| c), n);
    let hb = entropy(cb.iter().map(|&(_, c)| c), n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let lookup = |v: &[(usize, usize)], key: usize| v[v.binary_search_by_key(&key, |&(k, _)| k).expect("present")].1;
    let mi: f64 = cells
        .iter()
        .map(|&((a, b), c)| {
            let pab = c as f64 / n;
            let pa = lookup(&ca, a) as f64 / n;
            let pb = lookup(&cb, b) as f64 / n;
            pab * (pab / (pa * pb)).ln()
        })
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// Per-class density of an embedding set. Classes with one sample are
/// left out.
pub fn density_report(embeddings: &Matrix, labels: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if embeddings.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: embeddings.rows(),
            right: labels.len(),
        });
    }
    let mut out = BTreeMap::new();
    for (c, idx) in group_by_class(labels) {
        if idx.len() < 2 {
            warn!("class {c} has a single sample; omitted from density report");
            continue;
        }
        out.insert(c, avg_intra_distance(c, &embeddings.select_rows(&idx))?.d_avg);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub per_class_density: BTreeMap<String, f64>,
    pub num_queries: usize,
}

impl EvalReport {
    pub fn mean_density(&self) -> f64 {
        if self.per_class_density.is_empty() {
            return 0.0;
        }
        self.per_class_density.values().sum::<f64>() / self.per_class_density.len() as f64
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries   {}", self.num_queries);
        let _ = writeln!(s, "NMI       {:.2}", 100.0 * self.nmi);
        for (k, r) in &self.recall_at {
            let _ = writeln!(s, "R@{k:<7} {:.2}", 100.0 * r);
        }
        let _ = writeln!(s, "density   {:.6} (mean over {} classes)", self.mean_density(), self.per_class_density.len());
        for (name, d) in &self.per_class_density {
            let _ = writeln!(s, "  {name:<12} {d:.6}");
        }
        s
    }

    /// One `key=value` record per line.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "num_queries={}", self.num_queries);
        let _ = writeln!(s, "nmi={:?}", self.nmi);
        for (k, r) in &self.recall_at {
            let _ = writeln!(s, "recall@{k}={r:?}");
        }
        let _ = writeln!(s, "mean_density={:?}", self.mean_density());
        for (name, d) in &self.per_class_density {
            let _ = writeln!(s, "density.{name}={d:?}");
        }
        s
    }

    pub fn from_records(text: &str) -> Result<Self> {
        let mut report = EvalReport {
            recall_at: BTreeMap::new(),
            nmi: 0.0,
            per_class_density: BTreeMap::new(),
            num_queries: 0,
        };
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let err = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            let num = || value.parse::<f64>().map_err(|_| err("invalid number"));
            if key == "num_queries" {
                report.num_queries = value.parse().map_err(|_| err("invalid count"))?;
            } else if key == "nmi" {
                report.nmi = num()?;
            } else if let Some(k) = key.strip_prefix("recall@") {
                report.recall_at.insert(k.parse().map_err(|_| err("invalid K"))?, num()?);
            } else if let Some(name) = key.strip_prefix("density.") {
                report.per_class_density.insert(name.to_string(), num()?);
            } else if key != "mean_density" {
                return Err(err("unknown key"));
            }
        }
        Ok(report)
    }
}

/// Recall@K, k-means NMI with one cluster per class, and densities.
pub fn evaluate(
    embeddings: &Matrix,
    labels: &[usize],
    class_names: &[String],
    ks: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    let recall_at = recall_at_k(embeddings, labels, ks)?;
    let num_clusters = group_by_class(labels).len();
    let clusters = kmeans(embeddings, num_clusters, seed)?;
    let nmi = nmi(&clusters.assignments, labels)?;
    let per_class_density = density_report(embeddings, labels)?
        .into_iter()
        .map(|(c, d)| (class_names.get(c).cloned().unwrap_or_else(|| c.to_string()), d))
        .collect();
    Ok(EvalReport {
        recall_at,
        nmi,
        per_class_density,
        num_queries: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig, Strategy};

    fn m(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn recall_examples() {
        let e = m(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let r = recall_at_k(&e, &[0, 0, 1, 1], &[1]).unwrap();
        assert_eq!(r[&1], 1.0);

        // nearest neighbor of every point belongs to the other class
        let e = m(&[[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0]]);
        let r = recall_at_k(&e, &[0, 1, 0, 1], &[1, 2, 3]).unwrap();
        assert_eq!(r[&1], 0.0);
        assert_eq!(r[&3], 1.0);
    }

    #[test]
    fn recall_tie_break_and_singletons() {
        // query 0 has rows 1 (other class) and 2 (same class) at equal distance
        let e = m(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [9.0, 9.0]]);
        let r = recall_at_k(&e, &[0, 1, 0, 2], &[1, 2, 3]).unwrap();
        // query 0: tie, row 1 ranks first -> miss at K=1
        // query 2: nearest same-class is row 0 at distance 1, first -> hit
        // row 1 and row 3 are singletons -> never hit
        assert_eq!(r[&1], 0.25);
        assert_eq!(r[&2], 0.5);
        assert_eq!(r[&3], 0.5);
    }

    #[test]
    fn kmeans_examples() {
        let e = m(&[[0.0, 0.0], [0.0, 0.0], [3.0, 3.0], [3.0, 3.0], [-2.0, 5.0]]);
        let r = kmeans(&e, 3, 1).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        let mut distinct = r.assignments.clone();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 3);
        assert_eq!(r.inertia, 0.0);

        let one = kmeans(&e, 1, 1).unwrap();
        assert!(one.assignments.iter().all(|&a| a == 0));

        let all = kmeans(&m(&[[0.0, 1.0], [2.0, 0.5], [1.0, 1.0]]), 3, 4).unwrap();
        assert_eq!(all.inertia, 0.0);

        assert!(matches!(kmeans(&e, 6, 0), Err(Error::TooFewPoints { .. })));
        assert_eq!(kmeans(&e, 2, 9).unwrap(), kmeans(&e, 2, 9).unwrap());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[5, 5, 7, 7, 9]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert!(matches!(nmi(&[0], &[0, 1]), Err(Error::LengthMismatch { .. })));
        // {0,0,1,1} vs {a,a,b,c}: H(A) = ln 2, H(L) = 1.5 ln 2, I = ln 2
        let v = nmi(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!((v - 0.8).abs() < 1e-12, "{v}");
    }

    #[test]
    fn density_report_examples() {
        let e = m(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
        let r = density_report(&e, &[0, 0, 1]).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[&0] - 0.5).abs() < 1e-15);
        let collapsed = m(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        assert!(density_report(&collapsed, &[0, 0, 1, 1]).unwrap().values().all(|&d| d == 0.0));
    }

    #[test]
    fn report_records_round_trip() {
        let e = m(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]);
        let names = vec!["x".to_string(), "y".to_string()];
        let report = evaluate(&e, &[0, 0, 1, 1], &names, &DEFAULT_KS, 0).unwrap();
        assert_eq!(report.recall_at[&1], 1.0);
        assert!((report.nmi - 1.0).abs() < 1e-12);
        assert_eq!(EvalReport::from_records(&report.to_records()).unwrap(), report);
        assert!(report.to_table().contains("R@8"));
    }

    fn cloud() -> impl Strategy<Value = (Matrix, Vec<usize>)> {
        (4usize..24).prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, n * 3),
                prop::collection::vec(0usize..4, n),
            )
                .prop_map(move |(v, l)| (Matrix::from_vec(n, 3, v).unwrap(), l))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn recall_is_monotone_in_k((e, l) in cloud()) {
            let r = recall_at_k(&e, &l, &[1, 2, 3, 5, 8, 30]).unwrap();
            let vals: Vec<f64> = r.values().copied().collect();
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn exhaustive_recall_is_one_without_singletons((e, l) in cloud()) {
            let has_singleton = group_by_class(&l).values().any(|g| g.len() < 2);
            let r = recall_at_k(&e, &l, &[e.rows() - 1]).unwrap();
            if !has_singleton {
                prop_assert_eq!(r[&(e.rows() - 1)], 1.0);
            }
        }

        #[test]
        fn nmi_is_symmetric_and_bounded(a in prop::collection::vec(0usize..4, 1..30), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..3)).collect();
            let ab = nmi(&a, &b).unwrap();
            let ba = nmi(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn lloyd_inertia_never_increases((e, _) in cloud(), k in 1usize..4, seed in 0u64..50) {
            let r = kmeans(&e, k.min(e.rows()), seed).unwrap();
            for w in r.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", r.inertia_history);
            }
        }

        #[test]
        fn density_report_ignores_row_order((e, l) in cloud(), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..l.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let e2 = e.select_rows(&perm);
            let l2: Vec<usize> = perm.iter().map(|&i| l[i]).collect();
            let a = density_report(&e, &l).unwrap();
            let b = density_report(&e2, &l2).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (k, v) in a {
                prop_assert!((v - b[&k]).abs() < 1e-12);
            }
        }
    }
}
