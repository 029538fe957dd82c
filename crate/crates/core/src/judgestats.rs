//! Statistics over judge score records: per-metric summaries, Pearson
//! correlations with their t statistics, critical r, mean-gap matrices and
//! plot-ready distributions.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::corpus::{SkipReport, Skipped};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Context,
    Completeness,
    Creativity,
    Fluency,
    Grammar,
    Overall,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Context,
        Metric::Completeness,
        Metric::Creativity,
        Metric::Fluency,
        Metric::Grammar,
        Metric::Overall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Context => "context",
            Metric::Completeness => "completeness",
            Metric::Creativity => "creativity",
            Metric::Fluency => "fluency",
            Metric::Grammar => "grammar",
            Metric::Overall => "overall",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("metric", format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub context: f64,
    pub completeness: f64,
    pub creativity: f64,
    pub fluency: f64,
    pub grammar: f64,
    pub overall: f64,
}

impl ScoreRecord {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Context => self.context,
            Metric::Completeness => self.completeness,
            Metric::Creativity => self.creativity,
            Metric::Fluency => self.fluency,
            Metric::Grammar => self.grammar,
            Metric::Overall => self.overall,
        }
    }

    pub fn from_scores(id: impl Into<String>, s: [f64; 6]) -> Self {
        ScoreRecord {
            id: id.into(),
            context: s[0],
            completeness: s[1],
            creativity: s[2],
            fluency: s[3],
            grammar: s[4],
            overall: s[5],
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for m in Metric::ALL {
            let v = self.get(m);
            if !v.is_finite() || !(0.0..=10.0).contains(&v) {
                return Err(format!("{m} = {v} is outside [0, 10]"));
            }
        }
        Ok(())
    }
}

/// Reads score JSONL. Blank lines are ignored; unparsable lines and
/// records with a score outside [0, 10] are reported and skipped.
pub fn load_scores(path: &Path) -> Result<(Vec<ScoreRecord>, SkipReport)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut skips = SkipReport::default();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ScoreRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r));
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => skips.skipped.push(Skipped { line: i + 1, reason }),
        }
    }
    Ok((records, skips))
}

pub fn column(records: &[ScoreRecord], m: Metric) -> Vec<f64> {
    records.iter().map(|r| r.get(m)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStats {
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// `None` for a single record.
    pub std: Option<f64>,
}

pub fn summary_stats(records: &[ScoreRecord], metric: Metric) -> Result<SummaryStats> {
    let xs = column(records, metric);
    Ok(SummaryStats {
        metric,
        n: xs.len(),
        mean: stats::mean(&xs)?,
        median: stats::median(&xs)?,
        std: if xs.len() >= 2 {
            Some(stats::sample_std(&xs)?)
        } else {
            None
        },
    })
}

pub fn summary_all(records: &[ScoreRecord]) -> Result<Vec<SummaryStats>> {
    Metric::ALL.par_iter().map(|&m| summary_stats(records, m)).collect()
}

fn serialize_t<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else if *t > 0.0 {
        s.serialize_str("+inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
    /// Infinite when |r| = 1; serialized as "+inf" / "-inf".
    #[serde(serialize_with = "serialize_t")]
    pub t: f64,
    pub df: usize,
}

impl CorrelationResult {
    pub fn from_r(r: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid("n", "a t statistic needs at least three pairs"));
        }
        if !(-1.0..=1.0).contains(&r) {
            return Err(Error::invalid("r", format!("{r} is not a correlation")));
        }
        Ok(CorrelationResult {
            r,
            n,
            t: stats::t_from_r(r, n),
            df: n - 2,
        })
    }

    /// Two-tailed p-value of the t statistic.
    pub fn p_value(&self) -> f64 {
        stats::student_t_two_tailed(self.t, self.df as f64)
    }
}

pub fn pearson_xy(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    if xs.len() < 3 {
        return Err(Error::invalid("n", "a t statistic needs at least three pairs"));
    }
    CorrelationResult::from_r(stats::pearson(xs, ys)?, xs.len())
}

pub fn pearson_with_t(records: &[ScoreRecord], a: Metric, b: Metric) -> Result<CorrelationResult> {
    pearson_xy(&column(records, a), &column(records, b))
}

pub use crate::stats::critical_r;

/// `gaps[i][j] = mean(metric i) − mean(metric j)` in [`Metric::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapMatrix {
    pub metrics: Vec<Metric>,
    pub means: Vec<f64>,
    pub gaps: Vec<Vec<f64>>,
}

impl GapMatrix {
    pub fn from_means(means: [f64; 6]) -> Self {
        let gaps = means.iter().map(|a| means.iter().map(|b| a - b).collect()).collect();
        GapMatrix {
            metrics: Metric::ALL.to_vec(),
            means: means.to_vec(),
            gaps,
        }
    }

    pub fn gap(&self, a: Metric, b: Metric) -> f64 {
        self.gaps[a.index()][b.index()]
    }
}

pub fn gap_matrix(records: &[ScoreRecord]) -> Result<GapMatrix> {
    let mut means = [0.0; 6];
    for m in Metric::ALL {
        means[m.index()] = stats::mean(&column(records, m))?;
    }
    Ok(GapMatrix::from_means(means))
}

/// Pearson r between per-metric means and per-metric standard deviations.
pub fn mean_std_correlation(means: &[f64], stds: &[f64]) -> Result<f64> {
    if means.len() != stds.len() {
        return Err(Error::invalid("stds", "needs one value per mean"));
    }
    stats::pearson(means, stds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantile {
    pub q: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub metric: Metric,
    pub n: usize,
    pub bins: Vec<HistogramBin>,
    /// q = 0.00, 0.01, ..., 1.00; empty when there are no records.
    pub quantiles: Vec<Quantile>,
}

impl Distribution {
    pub fn bins_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
        }
        s
    }

    pub fn quantiles_csv(&self) -> String {
        let mut s = String::from("q,value\n");
        for q in &self.quantiles {
            s.push_str(&format!("{},{}\n", q.q, q.value));
        }
        s
    }
}

/// Equal-width bins over [0, 10]; each bin is half-open except the last,
/// which also holds 10.
pub fn distribution_export(records: &[ScoreRecord], metric: Metric, bins: usize) -> Result<Distribution> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    let width = 10.0 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: i as f64 * width,
            hi: if i + 1 == bins { 10.0 } else { (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    let mut xs = column(records, metric);
    for &x in &xs {
        let i = ((x / width).floor() as usize).min(bins - 1);
        out[i].count += 1;
    }
    xs.sort_by(f64::total_cmp);
    let quantiles = if xs.is_empty() {
        Vec::new()
    } else {
        (0..=100)
            .map(|i| {
                let q = i as f64 / 100.0;
                Quantile {
                    q,
                    value: stats::quantile_sorted(&xs, q),
                }
            })
            .collect()
    };
    Ok(Distribution {
        metric,
        n: xs.len(),
        bins: out,
        quantiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: usize, s: [f64; 6]) -> ScoreRecord {
        ScoreRecord::from_scores(format!("r{id}"), s)
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("style".parse::<Metric>().is_err());
    }

    #[test]
    fn summary_small() {
        let rs: Vec<_> = [8.0, 9.0, 7.0]
            .iter()
            .enumerate()
            .map(|(i, &g)| rec(i, [g; 6]))
            .collect();
        let s = summary_stats(&rs, Metric::Grammar).unwrap();
        assert_eq!((s.mean, s.median, s.std), (8.0, 8.0, Some(1.0)));
        let rs: Vec<_> = (0..4).map(|i| rec(i, [6.5; 6])).collect();
        assert_eq!(summary_stats(&rs, Metric::Overall).unwrap().std, Some(0.0));
        assert!(summary_stats(&[], Metric::Overall).is_err());
        assert_eq!(summary_stats(&rs[..1], Metric::Overall).unwrap().std, None);
    }

    #[test]
    fn load_skips_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(
            &p,
            concat!(
                r#"{"id":"a","context":8,"completeness":8,"creativity":7,"fluency":9,"grammar":9,"overall":8}"#,
                "\n",
                r#"{"id":"b","context":8,"completeness":8,"creativity":7,"fluency":9,"grammar":11,"overall":8}"#,
                "\n\n",
                r#"{"id":"c","context":8}"#,
                "\n",
            ),
        )
        .unwrap();
        let (rs, skips) = load_scores(&p).unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(skips.skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![2, 4]);
        fs::write(&p, "").unwrap();
        assert!(load_scores(&p).unwrap().0.is_empty());
        assert!(load_scores(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn t_statistics() {
        let c = CorrelationResult::from_r(0.73, 3000).unwrap();
        assert_eq!(c.df, 2998);
        assert!((c.t - 58.48).abs() < 0.05);
        assert!((CorrelationResult::from_r(0.80, 3000).unwrap().t - 73.01).abs() < 0.05);
        assert_eq!(CorrelationResult::from_r(0.0, 50).unwrap().t, 0.0);
    }

    #[test]
    fn perfect_line_reports_infinite_t() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let c = pearson_xy(&xs, &ys).unwrap();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.t, f64::INFINITY);
        assert_eq!(serde_json::to_value(&c).unwrap()["t"], "+inf");
        assert!(pearson_xy(&xs, &[1.0; 4]).is_err());
        assert!(pearson_xy(&xs[..2], &ys[..2]).is_err());
    }

    #[test]
    fn gaps_from_means() {
        let g = GapMatrix::from_means([7.73, 7.78, 7.81, 8.55, 8.91, 7.79]);
        assert!((g.gap(Metric::Grammar, Metric::Context) - 1.18).abs() < 1e-9);
        for i in Metric::ALL {
            assert_eq!(g.gap(i, i), 0.0);
            for j in Metric::ALL {
                assert_eq!(g.gap(i, j), -g.gap(j, i));
            }
        }
    }

    #[test]
    fn mean_std_degenerate_cases() {
        let means = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let neg: Vec<f64> = means.iter().map(|m| -m).collect();
        assert!((mean_std_correlation(&means, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            mean_std_correlation(&means, &[0.5; 6]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn histogram_basics() {
        let rs: Vec<_> = (0..7).map(|i| rec(i, [8.0; 6])).collect();
        let d = distribution_export(&rs, Metric::Fluency, 10).unwrap();
        assert_eq!(d.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(d.bins[8].count, 7);
        assert_eq!(d.quantiles.len(), 101);
        let top = distribution_export(&[rec(0, [10.0; 6])], Metric::Fluency, 4).unwrap();
        assert_eq!(top.bins[3].count, 1);
        assert!(distribution_export(&rs, Metric::Fluency, 0).is_err());
    }

    #[test]
    fn uniform_scores_are_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rs: Vec<_> = (0..10_000).map(|i| rec(i, [rng.random_range(0.0..10.0); 6])).collect();
        let d = distribution_export(&rs, Metric::Context, 10).unwrap();
        let expected = 1000.0;
        let chi2: f64 = d
            .bins
            .iter()
            .map(|b| (b.count as f64 - expected).powi(2) / expected)
            .sum();
        // 9 degrees of freedom; the 0.999 quantile is about 27.9
        assert!(chi2 < 27.9, "chi2 = {chi2}");
        assert_eq!(d.bins.iter().map(|b| b.count).sum::<u64>(), 10_000);
    }
}
