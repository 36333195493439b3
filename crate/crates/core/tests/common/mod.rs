//! Direct-from-definition metric implementations used as oracles.
#![allow(dead_code)]

use rand::Rng;

/// (confidence, correct) pairs.
pub type Points = Vec<(f64, bool)>;

fn bin_of(c: f64, m: usize) -> usize {
    // first j with c <= (j+1)/m, scanning upward
    (0..m).find(|&j| c <= (j + 1) as f64 / m as f64).unwrap_or(m - 1)
}

fn gap_sum(groups: &[Points], n: usize) -> Vec<f64> {
    groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                return 0.0;
            }
            let acc = g.iter().filter(|p| p.1).count() as f64 / g.len() as f64;
            let conf = g.iter().map(|p| p.0).sum::<f64>() / g.len() as f64;
            (acc - conf).abs() * g.len() as f64 / n as f64
        })
        .collect()
}

fn width_groups(pts: &[(f64, bool)], m: usize) -> Vec<Points> {
    (0..m)
        .map(|j| pts.iter().copied().filter(|p| bin_of(p.0, m) == j).collect())
        .collect()
}

pub fn ece(pts: &[(f64, bool)], m: usize) -> f64 {
    gap_sum(&width_groups(pts, m), pts.len()).iter().sum()
}

pub fn mce(pts: &[(f64, bool)], m: usize) -> f64 {
    let groups = width_groups(pts, m);
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let acc = g.iter().filter(|p| p.1).count() as f64 / g.len() as f64;
            let conf = g.iter().map(|p| p.0).sum::<f64>() / g.len() as f64;
            (acc - conf).abs()
        })
        .fold(0.0, f64::max)
}

pub fn ada_ece(pts: &[(f64, bool)], m: usize) -> f64 {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| pts[a].0.total_cmp(&pts[b].0).then(a.cmp(&b)));
    let n = pts.len();
    let bins = m.min(n);
    let mut groups = vec![Vec::new(); bins];
    // sample at sorted position r goes to the bin whose cumulative size first exceeds r
    let sizes: Vec<usize> = (0..bins).map(|j| n / bins + usize::from(j < n % bins)).collect();
    for (r, &i) in order.iter().enumerate() {
        let mut acc = 0;
        let j = sizes.iter().position(|&s| {
            acc += s;
            r < acc
        });
        groups[j.unwrap()].push(pts[i]);
    }
    gap_sum(&groups, n).iter().sum()
}

pub fn classwise_ece(probs: &[Vec<f64>], labels: &[usize], m: usize) -> f64 {
    let k = probs[0].len();
    (0..k)
        .map(|c| {
            let pts: Points = probs.iter().zip(labels).map(|(p, &y)| (p[c], y == c)).collect();
            ece(&pts, m)
        })
        .sum::<f64>()
        / k as f64
}

pub fn smece(pts: &[(f64, bool)], h: f64) -> f64 {
    let n = pts.len();
    let mut total = 0.0;
    for &(ci, _) in pts {
        let logw: Vec<f64> = pts.iter().map(|&(cj, _)| -((ci - cj) / h).powi(2) / 2.0).collect();
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        let smoothed: f64 = w.iter().zip(pts).filter(|(_, p)| p.1).map(|(w, _)| w / z).sum();
        total += (smoothed - ci).abs();
    }
    total / n as f64
}

/// Pairwise count over all (correct, incorrect) pairs.
pub fn auroc(pts: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = pts.iter().filter(|p| p.1).map(|p| p.0).collect();
    let neg: Vec<f64> = pts.iter().filter(|p| !p.1).map(|p| p.0).collect();
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Random softmax rows with labels; some rows are duplicated to create ties.
pub fn random_rows<R: Rng>(rng: &mut R, n: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let scale = rng.random_range(0.5..4.0);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.1) {
            let j = rng.random_range(0..i);
            rows.push(rows[j].clone());
            labels.push(labels[j]);
            continue;
        }
        let z: Vec<f64> = (0..classes).map(|_| scale * rng.random_range(-2.0..2.0)).collect();
        rows.push(softmax(&z));
        labels.push(rng.random_range(0..classes));
    }
    (rows, labels)
}

/// Top-1 confidence and correctness with ties broken toward the lowest index.
pub fn top1(rows: &[Vec<f64>], labels: &[usize]) -> Points {
    rows.iter()
        .zip(labels)
        .map(|(r, &y)| {
            let mut best = 0;
            for k in 1..r.len() {
                if r[k] > r[best] {
                    best = k;
                }
            }
            (r[best], best == y)
        })
        .collect()
}
