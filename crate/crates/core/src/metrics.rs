//! Appropriateness, diversity and synchrony metrics over sets of clips.
//!
//! * FRDist: DTW distance to the closest appropriate real reaction.
//! * FRCorr / PCC: concordance / Pearson correlation with the best-matching
//!   appropriate real reaction, averaged over attributes.
//! * FRVar, FRDiv, FRDvs: variation across frames, across reactions to one
//!   behaviour, and across behaviours.
//! * TLCC: lag of peak speaker/listener cross-correlation.
//!
//! Zero-variance series never abort an evaluation. Their correlations count
//! as 0 and the report carries a flag naming them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ReactionClip;

/// Symmetric-step DTW with absolute-difference local cost.
pub fn dtw(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for xi in x {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (xi - y[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
fn variance(v: &[f64]) -> f64 {
    let mu = mean(v);
    v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64
}

fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (vx, vy) = (variance(x), variance(y));
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some((covariance(x, y) / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Lin's concordance correlation; `None` when both series are the same constant.
pub fn concordance(x: &[f64], y: &[f64]) -> Option<f64> {
    let denom = variance(x) + variance(y) + (mean(x) - mean(y)).powi(2);
    if denom <= 0.0 {
        return None;
    }
    Some(2.0 * covariance(x, y) / denom)
}

/// A score together with whether any degenerate input was replaced by 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub degenerate: bool,
}

fn check_shapes(a: &ReactionClip, b: &ReactionClip) -> Result<()> {
    if a.attributes() != b.attributes() {
        return Err(Error::domain(format!(
            "clips {} and {} have {} vs {} attributes",
            a.clip_id,
            b.clip_id,
            a.attributes(),
            b.attributes()
        )));
    }
    Ok(())
}

/// DTW summed over attributes.
pub fn clip_dtw(a: &ReactionClip, b: &ReactionClip) -> Result<f64> {
    check_shapes(a, b)?;
    Ok((0..a.attributes()).map(|i| dtw(a.series(i), b.series(i))).sum())
}

fn clip_correlation(a: &ReactionClip, b: &ReactionClip, f: fn(&[f64], &[f64]) -> Option<f64>) -> Result<Scored> {
    check_shapes(a, b)?;
    if a.frames() != b.frames() {
        return Err(Error::domain("correlation needs equal frame counts"));
    }
    let mut degenerate = false;
    let total: f64 = (0..a.attributes())
        .map(|i| {
            f(a.series(i), b.series(i)).unwrap_or_else(|| {
                degenerate = true;
                0.0
            })
        })
        .sum();
    Ok(Scored {
        value: total / a.attributes() as f64,
        degenerate,
    })
}

pub fn clip_pcc(a: &ReactionClip, b: &ReactionClip) -> Result<Scored> {
    clip_correlation(a, b, pearson)
}

pub fn clip_ccc(a: &ReactionClip, b: &ReactionClip) -> Result<Scored> {
    clip_correlation(a, b, concordance)
}

/// Reactions generated for one speaker behaviour, the behaviour itself, and
/// the real reactions judged appropriate for it.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub speaker: ReactionClip,
    pub generated: Vec<ReactionClip>,
    pub appropriate_real: Vec<ReactionClip>,
}

impl EvalPair {
    fn check(&self) -> Result<()> {
        if self.generated.is_empty() || self.appropriate_real.is_empty() {
            return Err(Error::domain("evaluation needs non-empty generated and real sets"));
        }
        Ok(())
    }
}

pub fn fr_dist(pair: &EvalPair) -> Result<f64> {
    pair.check()?;
    let mut total = 0.0;
    for g in &pair.generated {
        let mut best = f64::INFINITY;
        for r in &pair.appropriate_real {
            best = best.min(clip_dtw(g, r)?);
        }
        total += best;
    }
    Ok(total / pair.generated.len() as f64)
}

fn best_correlation(pair: &EvalPair, f: fn(&ReactionClip, &ReactionClip) -> Result<Scored>) -> Result<Scored> {
    pair.check()?;
    let mut total = 0.0;
    let mut degenerate = false;
    for g in &pair.generated {
        let mut best = f64::NEG_INFINITY;
        for r in &pair.appropriate_real {
            let s = f(g, r)?;
            degenerate |= s.degenerate;
            best = best.max(s.value);
        }
        total += best;
    }
    Ok(Scored {
        value: total / pair.generated.len() as f64,
        degenerate,
    })
}

pub fn fr_corr(pair: &EvalPair) -> Result<Scored> {
    best_correlation(pair, clip_ccc)
}

pub fn pcc(pair: &EvalPair) -> Result<Scored> {
    best_correlation(pair, clip_pcc)
}

/// Mean per-attribute temporal variance, averaged over clips.
pub fn fr_var(clips: &[ReactionClip]) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::domain("FRVar of an empty set"));
    }
    let total: f64 = clips
        .iter()
        .map(|c| (0..c.attributes()).map(|i| variance(c.series(i))).sum::<f64>() / c.attributes() as f64)
        .sum();
    Ok(total / clips.len() as f64)
}

fn mean_squared_difference(a: &ReactionClip, b: &ReactionClip) -> Result<f64> {
    if a.values().shape() != b.values().shape() {
        return Err(Error::domain(format!(
            "clips {} and {} differ in shape",
            a.clip_id, b.clip_id
        )));
    }
    let (x, y) = (a.values().as_slice(), b.values().as_slice());
    Ok(x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64)
}

/// Mean pairwise squared difference among reactions to one behaviour.
/// A single clip scores 0 and is flagged degenerate.
pub fn fr_div(clips: &[ReactionClip]) -> Result<Scored> {
    if clips.is_empty() {
        return Err(Error::domain("FRDiv of an empty set"));
    }
    if clips.len() == 1 {
        return Ok(Scored {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..clips.len() {
        for b in a + 1..clips.len() {
            total += mean_squared_difference(&clips[a], &clips[b])?;
            count += 1;
        }
    }
    Ok(Scored {
        value: total / count as f64,
        degenerate: false,
    })
}

/// Mean squared difference over every pair of clips generated for two
/// different behaviours.
pub fn fr_dvs(groups: &[Vec<ReactionClip>]) -> Result<Scored> {
    if groups.iter().all(Vec::is_empty) {
        return Err(Error::domain("FRDvs of an empty corpus"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            for x in &groups[a] {
                for y in &groups[b] {
                    total += mean_squared_difference(x, y)?;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Ok(Scored {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Scored {
        value: total / count as f64,
        degenerate: false,
    })
}

/// Result of a lagged cross-correlation scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tlcc {
    /// Lag maximising the attribute-averaged correlation. Positive means the
    /// generated series trails the speaker.
    pub lag: i64,
    /// Mean absolute best lag over non-degenerate attributes.
    pub score: f64,
    pub degenerate: bool,
}

pub fn default_tlcc_window(frames: usize) -> usize {
    (frames / 10).max(1)
}

fn lagged(speaker: &[f64], generated: &[f64], lag: i64) -> Option<f64> {
    let t = speaker.len();
    let l = lag.unsigned_abs() as usize;
    if lag >= 0 {
        pearson(&speaker[..t - l], &generated[l..])
    } else {
        pearson(&speaker[l..], &generated[..t - l])
    }
}

pub fn synchrony_tlcc(speaker: &ReactionClip, generated: &ReactionClip, window: usize) -> Result<Tlcc> {
    check_shapes(speaker, generated)?;
    let t = speaker.frames();
    if generated.frames() != t {
        return Err(Error::domain("TLCC needs equal frame counts"));
    }
    if window + 2 > t {
        return Err(Error::domain(format!("TLCC window {window} too large for {t} frames")));
    }
    let w = window as i64;
    // Scan lags outward from 0 so ties resolve to the smallest |lag|.
    let lags: Vec<i64> = std::iter::once(0).chain((1..=w).flat_map(|l| [l, -l])).collect();

    let mut sums = vec![0.0; lags.len()];
    let mut counts = vec![0usize; lags.len()];
    let mut abs_lag_total = 0.0;
    let mut live = 0usize;
    let mut degenerate = false;
    for i in 0..speaker.attributes() {
        if variance(generated.series(i)) <= 0.0 {
            degenerate = true;
            continue;
        }
        let mut best: Option<(f64, i64)> = None;
        for (k, &lag) in lags.iter().enumerate() {
            if let Some(c) = lagged(speaker.series(i), generated.series(i), lag) {
                sums[k] += c;
                counts[k] += 1;
                if best.is_none_or(|(b, _)| c > b) {
                    best = Some((c, lag));
                }
            }
        }
        match best {
            Some((_, lag)) => {
                abs_lag_total += lag.unsigned_abs() as f64;
                live += 1;
            }
            None => degenerate = true,
        }
    }
    if live == 0 {
        return Ok(Tlcc {
            lag: 0,
            score: 0.0,
            degenerate: true,
        });
    }
    let mut best = (f64::NEG_INFINITY, 0i64);
    for (k, &lag) in lags.iter().enumerate() {
        if counts[k] > 0 {
            let avg = sums[k] / counts[k] as f64;
            if avg > best.0 {
                best = (avg, lag);
            }
        }
    }
    Ok(Tlcc {
        lag: best.1,
        score: abs_lag_total / live as f64,
        degenerate,
    })
}

/// Corpus-level report, serialised with the metric names as keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "FRDist")]
    pub fr_dist: f64,
    #[serde(rename = "FRCorr")]
    pub fr_corr: f64,
    #[serde(rename = "PCC")]
    pub pcc: f64,
    #[serde(rename = "FRVar")]
    pub fr_var: f64,
    #[serde(rename = "FRDiv")]
    pub fr_div: f64,
    #[serde(rename = "FRDvs")]
    pub fr_dvs: f64,
    #[serde(rename = "TLCC")]
    pub tlcc: f64,
    #[serde(rename = "FRRea")]
    pub fr_rea: String,
    pub flags: Vec<String>,
}

/// Evaluates every pair; means are taken in input order.
pub fn evaluate(pairs: &[EvalPair], tlcc_window: Option<usize>) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::domain("evaluation needs at least one pair"));
    }
    let n = pairs.len() as f64;
    let mut flags = Vec::new();
    let (mut dist, mut corr, mut p, mut div, mut sync) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (b, pair) in pairs.iter().enumerate() {
        dist += fr_dist(pair)?;
        let c = fr_corr(pair)?;
        let q = pcc(pair)?;
        corr += c.value;
        p += q.value;
        if c.degenerate || q.degenerate {
            flags.push(format!("pair {b}: zero-variance series in correlation"));
        }
        let d = fr_div(&pair.generated)?;
        div += d.value;
        if d.degenerate {
            flags.push(format!("pair {b}: single generated clip, FRDiv = 0"));
        }
        let window = tlcc_window.unwrap_or_else(|| default_tlcc_window(pair.speaker.frames()));
        let mut s = 0.0;
        for g in &pair.generated {
            let t = synchrony_tlcc(&pair.speaker, g, window)?;
            if t.degenerate {
                flags.push(format!("pair {b}: zero-variance series in TLCC ({})", g.clip_id));
            }
            s += t.score;
        }
        sync += s / pair.generated.len() as f64;
    }
    let all: Vec<ReactionClip> = pairs.iter().flat_map(|p| p.generated.iter().cloned()).collect();
    let groups: Vec<Vec<ReactionClip>> = pairs.iter().map(|p| p.generated.clone()).collect();
    let dvs = fr_dvs(&groups)?;
    if dvs.degenerate {
        flags.push("single behaviour, FRDvs = 0".to_string());
    }
    Ok(MetricReport {
        fr_dist: dist / n,
        fr_corr: corr / n,
        pcc: p / n,
        fr_var: fr_var(&all)?,
        fr_div: div / n,
        fr_dvs: dvs.value,
        tlcc: sync / n,
        fr_rea: "not computed".to_string(),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    fn clip(rows: &[Vec<f64>]) -> ReactionClip {
        ReactionClip::new("c", Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn dtw_absorbs_shift() {
        let x = [0.0, 0.0, 1.0, 2.0, 3.0, 3.0, 3.0];
        let y = [0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        assert_eq!(dtw(&x, &y), 0.0);
        assert_eq!(dtw(&x, &x), 0.0);
    }

    #[test]
    fn pcc_of_negation_is_minus_one() {
        let a = clip(&[vec![0.1, 0.5, 0.3, 0.9], vec![0.2, 0.1, 0.7, 0.4]]);
        let neg = clip(&[vec![-0.1, -0.5, -0.3, -0.9], vec![-0.2, -0.1, -0.7, -0.4]]);
        assert!((clip_pcc(&a, &neg).unwrap().value + 1.0).abs() < 1e-12);
        assert!((clip_pcc(&a, &a).unwrap().value - 1.0).abs() < 1e-12);
        assert!((clip_ccc(&a, &a).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_degenerate_not_error() {
        let a = clip(&[vec![0.5; 4], vec![0.1, 0.2, 0.3, 0.4]]);
        let s = clip_pcc(&a, &a).unwrap();
        assert!(s.degenerate);
        assert!((s.value - 0.5).abs() < 1e-12);
        assert_eq!(fr_var(&[clip(&[vec![0.3; 5], vec![0.3; 5]])]).unwrap(), 0.0);
    }

    #[test]
    fn diversity_of_identical_clips_is_zero() {
        let a = clip(&[vec![0.1, 0.5, 0.3], vec![0.2, 0.1, 0.7]]);
        assert_eq!(fr_div(&[a.clone(), a.clone(), a.clone()]).unwrap().value, 0.0);
        let single = fr_div(&[a]).unwrap();
        assert!(single.degenerate && single.value == 0.0);
    }

    #[test]
    fn empty_sets_are_domain_errors() {
        let a = clip(&[vec![0.1, 0.5], vec![0.2, 0.1]]);
        let pair = EvalPair {
            speaker: a.clone(),
            generated: vec![],
            appropriate_real: vec![a],
        };
        assert!(fr_dist(&pair).is_err());
        assert!(fr_var(&[]).is_err());
    }

    #[test]
    fn tlcc_zero_variance_generated() {
        let s = clip(&[vec![0.1, 0.5, 0.3, 0.9, 0.2], vec![0.2, 0.1, 0.7, 0.4, 0.6]]);
        let g = clip(&[vec![0.4; 5], vec![0.4; 5]]);
        let t = synchrony_tlcc(&s, &g, 1).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.score, 0.0);
        assert!(synchrony_tlcc(&s, &s, 4).is_err());
    }

    #[test]
    fn report_serialises_metric_names() {
        let a = clip(&[vec![0.1, 0.5, 0.3, 0.9, 0.2, 0.4], vec![0.2, 0.1, 0.7, 0.4, 0.6, 0.5]]);
        let pair = EvalPair {
            speaker: a.clone(),
            generated: vec![a.clone()],
            appropriate_real: vec![a],
        };
        let r = evaluate(&[pair], None).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        for key in ["FRDist", "FRCorr", "PCC", "FRVar", "FRDiv", "FRDvs", "TLCC", "\"FRRea\":\"not computed\"", "flags"] {
            assert!(json.contains(key), "{key} missing from {json}");
        }
        assert_eq!(r.fr_dist, 0.0);
        assert!((r.pcc - 1.0).abs() < 1e-12);
    }
}
