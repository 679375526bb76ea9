//! Rankings, Kendall rank correlation, regression summaries and timing.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frc::frc_resolution;
use crate::image::{partition_patches, Image};
use crate::net::{aggregate, forward_patches, Model};

/// Kendall's tau-b between two paired samples, in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("Kendall tau needs finite values".into()));
    }
    let n = x.len() as u64;
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!("{n} observations")));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = n * (n - 1) / 2;
    let x_ties = tie_pairs(&pairs, |a, b| a.0 == b.0);
    let joint_ties = tie_pairs(&pairs, |a, b| a == b);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = merge_count(&mut ys, &mut buf);
    let y_ties = tie_pairs(&ys, |a, b| a == b);

    let s = n0 as i64 - x_ties as i64 - y_ties as i64 + joint_ties as i64 - 2 * swaps as i64;
    tau_b(s, n0, x_ties, y_ties)
}

fn tau_b(s: i64, n0: u64, x_ties: u64, y_ties: u64) -> Result<f64> {
    let denom = ((n0 - x_ties) as f64 * (n0 - y_ties) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the samples is constant".into()));
    }
    Ok(s as f64 / denom)
}

/// Number of tied pairs within runs of equal consecutive elements.
fn tie_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// Group-averaged Kendall correlation between predicted scores and artifact
/// level. Scores are averaged within each level and correlated with the
/// level sequence. The sign is oriented so that +1 means quality falls as
/// the artifact level rises, whichever direction the score runs.
pub fn grouped_krcc(scores: &[f64], levels: &[u32], higher_is_better: bool) -> Result<f64> {
    let groups = group_means(scores, levels)?;
    let quality: Vec<f64> = groups
        .values()
        .map(|&m| if higher_is_better { m } else { -m })
        .collect();
    let level_quality: Vec<f64> = groups.keys().map(|&l| -(l as f64)).collect();
    kendall_tau(&quality, &level_quality)
}

/// Mean score per level, ordered by level.
pub fn group_means(scores: &[f64], levels: &[u32]) -> Result<BTreeMap<u32, f64>> {
    if scores.len() != levels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} levels",
            scores.len(),
            levels.len()
        )));
    }
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&s, &l) in scores.iter().zip(levels) {
        let e = sums.entry(l).or_default();
        e.0 += s;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub rank: usize,
    pub id: String,
    pub score: f64,
}

/// Orders images best first; equal scores keep id order.
pub fn build_ranking(ids: &[String], scores: &[f64], higher_is_better: bool) -> Result<Vec<RankingEntry>> {
    if ids.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!("{} ids vs {} scores", ids.len(), scores.len())));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = if higher_is_better {
            scores[b].total_cmp(&scores[a])
        } else {
            scores[a].total_cmp(&scores[b])
        };
        by_score.then_with(|| ids[a].cmp(&ids[b]))
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| RankingEntry { rank: rank + 1, id: ids[i].clone(), score: scores[i] })
        .collect())
}

pub fn write_ranking(ranking: &[RankingEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in ranking {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub pearson: f64,
    pub mse: f64,
    pub mae: f64,
}

/// Least-squares fit of predictions against targets plus error summaries.
pub fn regression_report(targets: &[f64], predictions: &[f64]) -> Result<RegressionReport> {
    if targets.len() != predictions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets vs {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    let n = targets.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("regression needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = targets.iter().sum::<f64>() / nf;
    let my = predictions.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in targets.iter().zip(predictions) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant targets or predictions".into()));
    }
    let slope = sxy / sxx;
    let pearson = sxy / (sxx * syy).sqrt();
    let residuals = targets.iter().zip(predictions).map(|(x, y)| y - x);
    Ok(RegressionReport {
        n,
        slope,
        intercept: my - slope * mx,
        r_squared: pearson * pearson,
        pearson,
        mse: residuals.clone().map(|r| r * r).sum::<f64>() / nf,
        mae: residuals.map(f64::abs).sum::<f64>() / nf,
    })
}

pub fn write_scatter(ids: &[String], targets: &[f64], predictions: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "target", "prediction"])?;
    for ((id, t), p) in ids.iter().zip(targets).zip(predictions) {
        w.write_record([id.clone(), t.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub frc_seconds: f64,
    pub model_seconds: f64,
    pub model_faster: bool,
    pub threads: usize,
}

/// Wall-clock of direct FRC versus model prediction over the same images.
pub fn bench(images: &[Image], model: &Model) -> Result<BenchReport> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("benchmark needs at least one image".into()))?;

    let start = Instant::now();
    for img in images {
        std::hint::black_box(frc_resolution(img)?);
    }
    let frc_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    for img in images {
        let pred = forward_patches(model, &partition_patches(img)?)?;
        std::hint::black_box(model.denormalize(aggregate(&pred)));
    }
    let model_seconds = start.elapsed().as_secs_f64();

    Ok(BenchReport {
        images: images.len(),
        height: first.height(),
        width: first.width(),
        frc_seconds,
        model_seconds,
        model_faster: model_seconds < frc_seconds,
        threads: rayon::current_num_threads(),
    })
}

/// Fraction of adjacent level pairs whose group means move in the
/// quality-correct direction.
pub fn ordering_agreement(means: &[f64], higher_is_better: bool) -> f64 {
    if means.len() < 2 {
        return 1.0;
    }
    let ok = means
        .windows(2)
        .filter(|w| {
            let ord = w[0].partial_cmp(&w[1]).unwrap_or(Ordering::Equal);
            if higher_is_better {
                ord == Ordering::Greater
            } else {
                ord == Ordering::Less
            }
        })
        .count();
    ok as f64 / (means.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn ties_use_tau_b() {
        // Pairs (1,1),(1,2),(2,2),(3,3): 4 concordant, 0 discordant,
        // one tie in x and one in y -> 4 / sqrt(5 * 5) = 0.8.
        let t = kendall_tau(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert!((t - 0.8).abs() < 1e-15);
    }

    #[test]
    fn undefined_cases() {
        assert!(kendall_tau(&[1.0], &[2.0]).is_err());
        assert!(kendall_tau(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(kendall_tau(&[1.0, f64::NAN], &[2.0, 3.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn grouped_orientation() {
        let levels = [1, 1, 2, 2, 3, 3];
        // Quality-like score falling with level: perfect.
        let s = [0.9, 0.8, 0.6, 0.5, 0.2, 0.1];
        assert_eq!(grouped_krcc(&s, &levels, true).unwrap(), 1.0);
        // Same data read as a lower-is-better target: reversed.
        assert_eq!(grouped_krcc(&s, &levels, false).unwrap(), -1.0);
    }

    #[test]
    fn grouped_minus_point_two() {
        // Level means against quality rank: 4 concordant, 6 discordant pairs.
        let means = [0.3, 0.1, 0.5, 0.2, 0.4];
        let levels = [1, 2, 3, 4, 5];
        let t = grouped_krcc(&means, &levels, true).unwrap();
        let brute = {
            let (mut c, mut d) = (0i32, 0i32);
            for i in 0..5 {
                for j in i + 1..5 {
                    let a = (means[i] - means[j]) * (-(levels[i] as f64) + levels[j] as f64);
                    if a > 0.0 {
                        c += 1
                    } else if a < 0.0 {
                        d += 1
                    }
                }
            }
            (c - d) as f64 / 10.0
        };
        assert!((t - brute).abs() < 1e-15);
        assert!((t + 0.2).abs() < 1e-15, "{t}");
    }

    #[test]
    fn ranking_is_stable() {
        let ids: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let r = build_ranking(&ids, &[1.0, 2.0, 1.0], true).unwrap();
        let order: Vec<&str> = r.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
        let r = build_ranking(&ids, &[1.0, 2.0, 1.0], false).unwrap();
        let order: Vec<&str> = r.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
        assert_eq!(r[2].rank, 3);
    }

    #[test]
    fn regression_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let r = regression_report(&x, &y).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!((r.intercept + 1.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!((r.mae - 1.5).abs() < 1e-12);
    }

    #[test]
    fn adjacent_agreement() {
        assert_eq!(ordering_agreement(&[3.0, 2.0, 1.0], true), 1.0);
        assert_eq!(ordering_agreement(&[3.0, 2.0, 2.5], false), 0.5);
    }
}
