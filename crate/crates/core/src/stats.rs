//! Per-group and per-example size statistics: word counts, exact quantiles,
//! letter values and log-normal Q-Q points.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{display_key, Error, Result};
use crate::group_stream::shard_groups;
use crate::partition::PartitionedDataset;

/// Number of maximal runs of non-whitespace characters.
pub fn count_words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupRow {
    #[serde(serialize_with = "serialize_key")]
    pub key: Vec<u8>,
    pub num_examples: u64,
    pub num_words: u64,
}

fn serialize_key<S: serde::Serializer>(key: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&display_key(key))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupStats {
    /// One row per group, sorted by key.
    pub rows: Vec<GroupRow>,
    /// Words of every example, in shard-then-key order.
    pub example_words: Vec<u64>,
}

impl GroupStats {
    pub fn num_examples(&self) -> u64 {
        self.example_words.len() as u64
    }

    pub fn num_words(&self) -> u64 {
        self.example_words.iter().sum()
    }
}

/// Text of one payload: the whole payload, or one string field of a JSON
/// object payload.
pub fn payload_text<'a>(payload: &'a [u8], text_field: Option<&str>) -> std::result::Result<std::borrow::Cow<'a, str>, String> {
    match text_field {
        None => std::str::from_utf8(payload)
            .map(std::borrow::Cow::Borrowed)
            .map_err(|e| format!("payload is not UTF-8: {e}")),
        Some(field) => {
            let value: serde_json::Value =
                serde_json::from_slice(payload).map_err(|e| format!("payload is not JSON: {e}"))?;
            match value.get(field) {
                Some(serde_json::Value::String(s)) => Ok(std::borrow::Cow::Owned(s.clone())),
                Some(_) => Err(format!("field `{field}` is not a string")),
                None => Err(format!("payload has no field `{field}`")),
            }
        }
    }
}

fn shard_stats(dataset: &PartitionedDataset, shard: usize, text_field: Option<&str>) -> Result<GroupStats> {
    let mut out = GroupStats::default();
    for group in shard_groups(dataset, shard)? {
        let group = group?;
        let mut words = 0;
        let mut examples = 0;
        for (index, payload) in group.examples().enumerate() {
            let payload = payload?;
            let text = payload_text(&payload, text_field).map_err(|message| Error::Decode {
                group: display_key(group.key()),
                index: index as u64,
                message,
            })?;
            let w = count_words(&text);
            out.example_words.push(w);
            words += w;
            examples += 1;
        }
        out.rows.push(GroupRow {
            key: group.key().to_vec(),
            num_examples: examples,
            num_words: words,
        });
    }
    Ok(out)
}

/// Word counts of every group and example, in one pass over the shards.
///
/// With `parallel`, shards are processed concurrently and their results
/// concatenated in shard order, which gives the same output as the serial pass.
pub fn compute_group_stats(dataset: &PartitionedDataset, text_field: Option<&str>, parallel: bool) -> Result<GroupStats> {
    let shards: Vec<usize> = (0..dataset.num_shards()).collect();
    let parts: Vec<GroupStats> = if parallel {
        shards
            .par_iter()
            .map(|&s| shard_stats(dataset, s, text_field))
            .collect::<Result<_>>()?
    } else {
        shards
            .iter()
            .map(|&s| shard_stats(dataset, s, text_field))
            .collect::<Result<_>>()?
    };
    let mut out = GroupStats::default();
    for part in parts {
        out.rows.extend(part.rows);
        out.example_words.extend(part.example_words);
    }
    out.rows.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

/// Quantile `q` of an already sorted slice by linear interpolation at
/// position `q (n - 1)`.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile probability {q} outside [0, 1]")));
    }
    let p = q * (sorted.len() - 1) as f64;
    let lo = p.floor() as usize;
    if lo + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    Ok(sorted[lo] + (p - lo as f64) * (sorted[lo + 1] - sorted[lo]))
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn exact_quantile(values: &[f64], q: f64) -> Result<f64> {
    sorted_quantile(&sorted_copy(values), q)
}

pub const SUMMARY_PROBS: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileSummary {
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
}

impl QuantileSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let v = sorted_copy(values);
        let q = |p| sorted_quantile(&v, p);
        Ok(QuantileSummary {
            p10: q(0.10)?,
            p25: q(0.25)?,
            median: q(0.50)?,
            p75: q(0.75)?,
            p90: q(0.90)?,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.p10, self.p25, self.median, self.p75, self.p90]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LetterValue {
    pub level: u32,
    pub label: String,
    pub lower: f64,
    pub upper: f64,
}

/// Conventional letter-value labels: M, F, E, D, C, B, A, Z, Y, X, ...
pub fn letter_label(level: u32) -> String {
    match level {
        0 => "M".into(),
        1 => "F".into(),
        2..=6 => char::from(b'E' - (level as u8 - 2)).to_string(),
        7..=31 => char::from(b'Z' - (level as u8 - 7)).to_string(),
        _ => format!("L{level}"),
    }
}

/// The median (level 0) and the tail quantiles `2^-(k+1)` and `1 - 2^-(k+1)`
/// for levels `k = 1..=depth`.
pub fn letter_values(values: &[f64], depth: u32) -> Result<Vec<LetterValue>> {
    let v = sorted_copy(values);
    let median = sorted_quantile(&v, 0.5)?;
    let mut out = vec![LetterValue {
        level: 0,
        label: letter_label(0),
        lower: median,
        upper: median,
    }];
    for k in 1..=depth {
        let tail = 0.5f64.powi(k as i32 + 1);
        out.push(LetterValue {
            level: k,
            label: letter_label(k),
            lower: sorted_quantile(&v, tail)?,
            upper: sorted_quantile(&v, 1.0 - tail)?,
        });
    }
    Ok(out)
}

// Rational approximation of the normal quantile (P. J. Acklam), relative
// error below 1.2e-9 before refinement.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    let [a0, a1, a2, a3, a4, a5] = ACKLAM_A;
    let [b0, b1, b2, b3, b4] = ACKLAM_B;
    let [c0, c1, c2, c3, c4, c5] = ACKLAM_C;
    let [d0, d1, d2, d3] = ACKLAM_D;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q
            / (((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0)
    }
}

/// Standard normal quantile function.
///
/// One Halley step on `Phi(x) - p`, with `Phi` evaluated through `erfc`,
/// brings the rational approximation to near machine precision.
pub fn inv_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    if p > 0.5 {
        // 1 - p is exact here, and the lower tail is where erfc is accurate.
        return inv_normal_cdf(1.0 - p).map(|z| -z);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let x = acklam(p);
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// Q-Q points of `log(sizes)` against a standard normal.
///
/// Logs are sorted and standardized by their mean and population standard
/// deviation; the i-th order statistic is paired with the normal quantile at
/// the plotting position `(i + 0.5) / n`.
pub fn qq_lognormal_points(sizes: &[f64]) -> Result<Vec<(f64, f64)>> {
    if let Some(&bad) = sizes.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::NonPositiveSize(bad));
    }
    if sizes.len() < 3 {
        return Err(Error::Domain(format!("Q-Q points need at least 3 sizes, got {}", sizes.len())));
    }
    let mut logs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    logs.sort_by(f64::total_cmp);
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    // Relative to the magnitude of the logs, so exact duplicates that pick up
    // rounding in ln() still count as degenerate.
    let scale = logs.iter().map(|l| l.abs()).fold(1.0, f64::max);
    if var.sqrt() <= 1e-12 * scale {
        return Err(Error::ZeroVariance);
    }
    let std = var.sqrt();
    logs.iter()
        .enumerate()
        .map(|(i, l)| Ok((inv_normal_cdf((i as f64 + 0.5) / n)?, (l - mean) / std)))
        .collect()
}

/// Coefficient of determination of the least-squares line through `points`.
pub fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

/// Table-1-shaped summary row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub words: u64,
    pub groups: u64,
    pub words_per_group: QuantileSummary,
    pub examples: u64,
    pub words_per_example: QuantileSummary,
}

impl SummaryRow {
    pub fn of(stats: &GroupStats) -> Result<Self> {
        let per_group: Vec<f64> = stats.rows.iter().map(|r| r.num_words as f64).collect();
        let per_example: Vec<f64> = stats.example_words.iter().map(|&w| w as f64).collect();
        Ok(SummaryRow {
            words: stats.num_words(),
            groups: stats.rows.len() as u64,
            words_per_group: QuantileSummary::of(&per_group)?,
            examples: stats.num_examples(),
            words_per_example: QuantileSummary::of(&per_example)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StatsOutputOptions {
    pub letter_value_depth: u32,
}

impl Default for StatsOutputOptions {
    fn default() -> Self {
        StatsOutputOptions { letter_value_depth: 5 }
    }
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io_at(format!("creating {}", path.display()), e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `group_stats.csv`, `summary.csv`, `letter_values.csv` and
/// `qq_points.csv` into `dir`.
///
/// Summary, letter values and Q-Q points need a non-empty dataset and are
/// skipped for an empty one. Q-Q points use groups with at least one word,
/// since a log-normal fit is only defined for positive sizes.
pub fn write_stats_outputs(stats: &GroupStats, dir: &Path, options: StatsOutputOptions) -> Result<()> {
    let mut w = csv_writer(dir, "group_stats.csv")?;
    w.write_record(["key", "examples", "words"])?;
    for row in &stats.rows {
        w.write_record([display_key(&row.key), row.num_examples.to_string(), row.num_words.to_string()])?;
    }
    w.flush()?;

    if stats.rows.is_empty() {
        log::warn!("dataset has no groups; skipping summary, letter values and Q-Q points");
        return Ok(());
    }

    let summary = SummaryRow::of(stats)?;
    let mut w = csv_writer(dir, "summary.csv")?;
    let mut header = vec!["words".to_owned(), "groups".to_owned()];
    header.extend(quantile_columns("words_per_group"));
    header.push("examples".to_owned());
    header.extend(quantile_columns("words_per_example"));
    w.write_record(&header)?;
    let mut row = vec![summary.words.to_string(), summary.groups.to_string()];
    row.extend(summary.words_per_group.values().iter().map(|v| v.to_string()));
    row.push(summary.examples.to_string());
    row.extend(summary.words_per_example.values().iter().map(|v| v.to_string()));
    w.write_record(&row)?;
    w.flush()?;

    let per_group: Vec<f64> = stats.rows.iter().map(|r| r.num_words as f64).collect();
    let per_example: Vec<f64> = stats.example_words.iter().map(|&w| w as f64).collect();
    let mut w = csv_writer(dir, "letter_values.csv")?;
    w.write_record(["measure", "level", "label", "lower", "upper"])?;
    for (measure, values) in [("words_per_group", &per_group), ("words_per_example", &per_example)] {
        for lv in letter_values(values, options.letter_value_depth)? {
            w.write_record([
                measure.to_owned(),
                lv.level.to_string(),
                lv.label,
                lv.lower.to_string(),
                lv.upper.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let positive: Vec<f64> = per_group.iter().copied().filter(|&w| w > 0.0).collect();
    if positive.len() < per_group.len() {
        log::warn!(
            "{} groups without words left out of the Q-Q points",
            per_group.len() - positive.len()
        );
    }
    match qq_lognormal_points(&positive) {
        Ok(points) => {
            let mut w = csv_writer(dir, "qq_points.csv")?;
            w.write_record(["theoretical_z", "standardized_log_words"])?;
            for (z, s) in points {
                w.write_record([z.to_string(), s.to_string()])?;
            }
            w.flush()?;
        }
        Err(e @ (Error::ZeroVariance | Error::Domain(_))) => {
            log::warn!("skipping Q-Q points: {e}");
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn quantile_columns(prefix: &str) -> Vec<String> {
    ["p10", "p25", "median", "p75", "p90"]
        .iter()
        .map(|s| format!("{prefix}_{s}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, LogNormal};

    #[test]
    fn word_counts() {
        assert_eq!(count_words("a b  c"), 3);
        assert_eq!(count_words(""), 0);
        assert_eq!(count_words("  hello\nworld "), 2);
        assert_eq!(count_words("tab\tsep\u{00a0}nbsp"), 3);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(exact_quantile(&[1.0, 2.0, 3.0], 0.5).unwrap(), 2.0);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((exact_quantile(&ten, 0.9).unwrap() - 9.1).abs() < 1e-12);
        assert_eq!(exact_quantile(&[4.0], 0.3).unwrap(), 4.0);
        assert!(matches!(exact_quantile(&[], 0.5), Err(Error::EmptyInput)));
        assert!(exact_quantile(&[1.0], 1.5).is_err());
    }

    /// Order-statistic oracle: weights on floor and ceil positions.
    fn oracle_quantile(values: &[f64], q: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = q * (v.len() as f64 - 1.0);
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let w = pos - lo as f64;
        (1.0 - w) * v[lo] + w * v[hi]
    }

    #[test]
    fn quantiles_match_oracle_on_random_lists() {
        let mut rng = stream_rng(1, "quantile-oracle", b"");
        for _ in 0..1000 {
            let n = rng.random_range(1..200);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
            let q: f64 = rng.random();
            let got = exact_quantile(&v, q).unwrap();
            let want = oracle_quantile(&v, q);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn letter_value_examples() {
        let one_to_eight: Vec<f64> = (1..=8).map(f64::from).collect();
        let lv = letter_values(&one_to_eight, 1).unwrap();
        assert_eq!(lv[0].label, "M");
        assert_eq!((lv[0].lower, lv[0].upper), (4.5, 4.5));
        assert_eq!(lv[1].label, "F");
        assert!((lv[1].lower - 2.75).abs() < 1e-12);
        assert!((lv[1].upper - 6.25).abs() < 1e-12);
        assert_eq!(letter_values(&one_to_eight, 0).unwrap().len(), 1);
        assert_eq!(
            (0..9).map(letter_label).collect::<Vec<_>>(),
            ["M", "F", "E", "D", "C", "B", "A", "Z", "Y"]
        );
    }

    #[test]
    fn inverse_normal_examples() {
        assert_eq!(inv_normal_cdf(0.5).unwrap(), 0.0);
        assert!((inv_normal_cdf(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((inv_normal_cdf(0.025).unwrap() + 1.959_963_984_540_054).abs() < 1e-12);
        for p in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(matches!(inv_normal_cdf(p), Err(Error::Domain(_))));
        }
        let mut rng = stream_rng(2, "symmetry", b"");
        for _ in 0..100 {
            let p: f64 = rng.random_range(1e-12..1.0);
            let sum = inv_normal_cdf(p).unwrap() + inv_normal_cdf(1.0 - p).unwrap();
            assert!(sum.abs() < 1e-10, "p {p}: {sum}");
        }
    }

    #[test]
    fn inverse_normal_inverts_the_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let z = inv_normal_cdf(p).unwrap();
            let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
            assert!((cdf - p).abs() < 1e-15, "p {p}");
        }
    }

    #[test]
    fn qq_three_points() {
        let e = std::f64::consts::E;
        let pts = qq_lognormal_points(&[e * e, 1.0, e]).unwrap();
        let s = (1.5f64).sqrt();
        assert!((pts[0].1 + s).abs() < 1e-12);
        assert!(pts[1].0.abs() < 1e-15 && pts[1].1.abs() < 1e-12);
        assert!((pts[2].1 - s).abs() < 1e-12);
        assert!((pts[0].0 - inv_normal_cdf(0.5 / 3.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn qq_errors() {
        assert!(matches!(qq_lognormal_points(&[3.0, 3.0, 3.0]), Err(Error::ZeroVariance)));
        assert!(matches!(qq_lognormal_points(&[1.0, 0.0, 2.0]), Err(Error::NonPositiveSize(_))));
        assert!(matches!(qq_lognormal_points(&[1.0, -2.0, 2.0]), Err(Error::NonPositiveSize(_))));
        assert!(qq_lognormal_points(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn lognormal_sample_is_straight() {
        let mut rng = stream_rng(3, "lognormal", b"");
        let dist = LogNormal::new(5.0, 1.7).unwrap();
        let sizes: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let r2 = r_squared(&qq_lognormal_points(&sizes).unwrap());
        assert!(r2 > 0.99, "R^2 {r2}");
    }

    #[test]
    fn json_text_field() {
        assert_eq!(payload_text(br#"{"text":"a b"}"#, Some("text")).unwrap(), "a b");
        assert!(payload_text(br#"{"text":1}"#, Some("text")).is_err());
        assert!(payload_text(b"\xff", None).is_err());
    }

    #[test]
    fn two_group_table() {
        use crate::group_stream::test_support::write_dataset;
        let dir = tempfile::tempdir().unwrap();
        let ds = write_dataset(
            dir.path(),
            &[vec![("b", vec!["w".into()])], vec![("a", vec!["x y".into(), "z".into()])]],
        );
        for parallel in [false, true] {
            let stats = compute_group_stats(&ds, None, parallel).unwrap();
            let rows: Vec<_> = stats.rows.iter().map(|r| (r.key.clone(), r.num_examples, r.num_words)).collect();
            assert_eq!(rows, [(b"a".to_vec(), 2, 3), (b"b".to_vec(), 1, 1)]);
            assert_eq!(stats.example_words, [1, 2, 1]);
        }
        let empty = write_dataset(&dir.path().join("empty"), &[vec![]]);
        assert_eq!(compute_group_stats(&empty, None, true).unwrap(), GroupStats::default());
    }

    #[test]
    fn decode_errors_name_the_group() {
        use crate::group_stream::test_support::write_dataset;
        let dir = tempfile::tempdir().unwrap();
        let ds = write_dataset(dir.path(), &[vec![("g", vec![r#"{"text":"ok"}"#.into(), "oops".into()])]]);
        match compute_group_stats(&ds, Some("text"), false).unwrap_err() {
            Error::Decode { group, index, .. } => assert_eq!((group.as_str(), index), ("g", 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn summary_is_monotone(v in prop::collection::vec(-1e6f64..1e6, 1..300)) {
            let s = QuantileSummary::of(&v).unwrap().values();
            prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn letter_values_widen(v in prop::collection::vec(-1e6f64..1e6, 1..300), depth in 0u32..8) {
            let lv = letter_values(&v, depth).unwrap();
            prop_assert_eq!(lv.len(), depth as usize + 1);
            for w in lv.windows(2) {
                prop_assert!(w[1].lower <= w[0].lower && w[1].upper >= w[0].upper);
            }
        }

        #[test]
        fn qq_ignores_scale(v in prop::collection::vec(1e-3f64..1e6, 3..100), c in 1e-3f64..1e3) {
            if let Ok(a) = qq_lognormal_points(&v) {
                let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
                let b = qq_lognormal_points(&scaled).unwrap();
                for (p, q) in a.iter().zip(&b) {
                    prop_assert_eq!(p.0, q.0);
                    prop_assert!((p.1 - q.1).abs() < 1e-6);
                }
            }
        }
    }
}
