//! Confusion-Dice matrices, region Dice and score reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dice_losses::{mean_dice, wasserstein_dice, DICE_EPSILON};
use crate::error::{Error, Result};
use crate::label_metric::{GroundMetric, LabelSpace};
use crate::segmentation::{check_pair, CrispSegmentation, ProbSegmentation};

/// Soft Dice between every ground-truth class (rows) and every predicted
/// class (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionDiceMatrix {
    n: usize,
    values: Vec<f64>,
    present: Vec<bool>,
}

impl ConfusionDiceMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, gt: usize, pred: usize) -> f64 {
        self.values[gt * self.n + pred]
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether the ground truth contains the class of each row. Rows of
    /// absent classes only carry smoothing artefacts.
    pub fn present(&self) -> &[bool] {
        &self.present
    }

    /// Rows with absent ground-truth classes set to `None`.
    pub fn masked_rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n)
            .map(|l| {
                (0..self.n)
                    .map(|l2| self.present[l].then(|| self.get(l, l2)))
                    .collect()
            })
            .collect()
    }
}

pub fn confusion_dice(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<ConfusionDiceMatrix> {
    check_pair(p, g, "confusion dice")?;
    let n = p.num_labels();
    let mut cross = vec![0.0; n * n];
    let mut gsum = vec![0.0; n];
    let mut psum = vec![0.0; n];
    for i in 0..g.len() {
        let gl = g.label(i);
        let v = p.voxel(i);
        gsum[gl] += 1.0;
        for (l2, &x) in v.iter().enumerate() {
            cross[gl * n + l2] += x;
            psum[l2] += x;
        }
    }
    let mut values = vec![0.0; n * n];
    for l in 0..n {
        for l2 in 0..n {
            values[l * n + l2] =
                (2.0 * cross[l * n + l2] + DICE_EPSILON) / (gsum[l] + psum[l2] + DICE_EPSILON);
        }
    }
    Ok(ConfusionDiceMatrix {
        n,
        values,
        present: gsum.iter().map(|&c| c > 0.0).collect(),
    })
}

/// `sum_{l != l'} M[l, l'] * D[l, l']` over rows whose class is present.
pub fn tree_weighted_confusion_mass(conf: &ConfusionDiceMatrix, metric: &GroundMetric) -> Result<f64> {
    let rows = conf.masked_rows();
    confusion_mass_from_rows(&rows, metric)
}

pub fn confusion_mass_from_rows(rows: &[Vec<Option<f64>>], metric: &GroundMetric) -> Result<f64> {
    let n = metric.size();
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::mismatch("confusion mass", format!("{n}x{n}"), format!("{} rows", rows.len())));
    }
    let mut mass = 0.0;
    for (l, row) in rows.iter().enumerate() {
        for (l2, v) in row.iter().enumerate() {
            if let (true, Some(v)) = (l != l2, v) {
                mass += metric.get(l, l2) * v;
            }
        }
    }
    Ok(mass)
}

/// A named set of foreground labels evaluated as one binary region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    name: String,
    members: Vec<usize>,
}

impl RegionSpec {
    pub fn new(name: impl Into<String>, members: impl IntoIterator<Item = usize>, space: &LabelSpace) -> Result<Self> {
        let name = name.into();
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(Error::invalid_arg(format!("region `{name}`"), "no labels"));
        }
        for &m in &members {
            if m >= space.len() {
                return Err(Error::invalid_arg(format!("region `{name}`"), format!("unknown label {m}")));
            }
            if m == space.background() {
                return Err(Error::invalid_arg(format!("region `{name}`"), "contains the background label"));
            }
        }
        Ok(Self { name, members })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Whole (1,2,3,4), core (1,3,4) and enhancing (4) tumour.
    pub fn brats() -> Vec<Self> {
        let s = LabelSpace::brats();
        vec![
            Self::new("whole", [1, 2, 3, 4], &s).expect("static region"),
            Self::new("core", [1, 3, 4], &s).expect("static region"),
            Self::new("enhancing", [4], &s).expect("static region"),
        ]
    }

    /// Parses lines of `name: label, label, ...`, labels given by id or name.
    pub fn parse_list(text: &str, space: &LabelSpace, source_name: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |reason: String| Error::Parse {
                source_name: source_name.to_string(),
                line: k + 1,
                reason,
            };
            let (name, rest) = line
                .split_once(':')
                .ok_or_else(|| perr("expected `name: labels`".into()))?;
            let members = rest
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<usize>()
                        .ok()
                        .or_else(|| space.id_of(t))
                        .ok_or_else(|| perr(format!("unknown label `{t}`")))
                })
                .collect::<Result<Vec<usize>>>()?;
            out.push(Self::new(name.trim(), members, space).map_err(|e| perr(e.to_string()))?);
        }
        if out.is_empty() {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: 0,
                reason: "no regions defined".into(),
            });
        }
        Ok(out)
    }
}

/// Binary soft Dice of the merged region.
pub fn region_dice(p: &ProbSegmentation, g: &CrispSegmentation, region: &RegionSpec) -> Result<f64> {
    check_pair(p, g, "region dice")?;
    let n = p.num_labels();
    if let Some(&m) = region.members().iter().find(|&&m| m >= n) {
        return Err(Error::LabelOutOfRange { label: m, size: n });
    }
    let mut is_member = vec![false; n];
    for &m in region.members() {
        is_member[m] = true;
    }
    let (mut inter, mut total) = (0.0, 0.0);
    for i in 0..g.len() {
        // a sum of member probabilities can round above 1
        let pf = region.members().iter().map(|&m| p.voxel(i)[m]).sum::<f64>().min(1.0);
        let gf = if is_member[g.label(i)] { 1.0 } else { 0.0 };
        inter += gf * pf;
        total += gf + pf;
    }
    Ok((2.0 * inter + DICE_EPSILON) / (total + DICE_EPSILON))
}

/// A ground metric with the name used for it in reports.
#[derive(Debug, Clone)]
pub struct NamedMetric {
    pub name: String,
    /// Where the metric came from, e.g. a file path or `builtin`.
    pub source: String,
    pub metric: GroundMetric,
}

impl NamedMetric {
    pub fn new(name: impl Into<String>, source: impl Into<String>, metric: GroundMetric) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
            metric,
        }
    }

    /// `zero_one` and `tree` on the tumour label space.
    pub fn brats_defaults() -> Vec<Self> {
        vec![
            Self::new("zero_one", "builtin", GroundMetric::zero_one(LabelSpace::brats())),
            Self::new("tree", "builtin", GroundMetric::brats_tree()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedScore {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub labels: Vec<String>,
    pub background: usize,
    pub dims: Vec<usize>,
    pub metrics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Scores of one prediction against one ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub regions: Vec<NamedScore>,
    pub mean_dice: f64,
    pub wasserstein_dice: Vec<NamedScore>,
    /// Row-major confusion-Dice matrix; rows of classes absent from the
    /// ground truth are `null`.
    pub confusion: Vec<Vec<Option<f64>>>,
    pub meta: ReportMeta,
}

pub fn build_report(
    p: &ProbSegmentation,
    g: &CrispSegmentation,
    metrics: &[NamedMetric],
    regions: &[RegionSpec],
) -> Result<ScoreReport> {
    check_pair(p, g, "report")?;
    let space = match metrics.first() {
        Some(m) => m.metric.space().clone(),
        None => LabelSpace::anonymous(p.num_labels())?,
    };
    if let Some(m) = metrics.iter().find(|m| m.metric.space() != &space) {
        return Err(Error::invalid_arg(
            format!("metric `{}`", m.name),
            "label space differs from the first metric",
        ));
    }
    let region_scores = regions
        .iter()
        .map(|r| {
            Ok(NamedScore {
                name: r.name().to_string(),
                score: region_dice(p, g, r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let wd = metrics
        .iter()
        .map(|m| {
            Ok(NamedScore {
                name: m.name.clone(),
                score: wasserstein_dice(p, g, &m.metric)?.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let conf = confusion_dice(p, g)?;
    Ok(ScoreReport {
        regions: region_scores,
        mean_dice: mean_dice(p, g)?,
        wasserstein_dice: wd,
        confusion: conf.masked_rows(),
        meta: ReportMeta {
            labels: space.names().to_vec(),
            background: space.background(),
            dims: p.dims().axes().to_vec(),
            metrics: metrics.iter().map(|m| format!("{}={}", m.name, m.source)).collect(),
            timestamp: None,
        },
    })
}

impl ScoreReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn wasserstein(&self, name: &str) -> Option<f64> {
        self.wasserstein_dice.iter().find(|s| s.name == name).map(|s| s.score)
    }

    pub fn region(&self, name: &str) -> Option<f64> {
        self.regions.iter().find(|s| s.name == name).map(|s| s.score)
    }

    /// Aligned plain-text rendering, scores to 4 decimals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>8}", "score", "value");
        for r in &self.regions {
            let _ = writeln!(out, "{:<24} {:>8.4}", format!("dice[{}]", r.name), r.score);
        }
        let _ = writeln!(out, "{:<24} {:>8.4}", "mean_dice", self.mean_dice);
        for w in &self.wasserstein_dice {
            let _ = writeln!(out, "{:<24} {:>8.4}", format!("wasserstein[{}]", w.name), w.score);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "confusion dice (rows: ground truth, columns: prediction)");
        let width = self.meta.labels.iter().map(String::len).max().unwrap_or(4).max(6);
        let _ = write!(out, "{:<width$}", "");
        for name in &self.meta.labels {
            let _ = write!(out, " {:>w$}", truncate(name, width), w = width);
        }
        let _ = writeln!(out);
        for (name, row) in self.meta.labels.iter().zip(&self.confusion) {
            let _ = write!(out, "{name:<width$}");
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, " {v:>width$.4}");
                    }
                    None => {
                        let _ = write!(out, " {:>width$}", "n/a");
                    }
                }
            }
            let _ = writeln!(out);
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((k, _)) => &s[..k],
        None => s,
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        Self { mean, std: var.sqrt(), count }
    }
}

/// Per-volume scores aggregated across a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub volumes: usize,
    pub regions: Vec<(String, MeanStd)>,
    pub mean_dice: MeanStd,
    pub wasserstein_dice: Vec<(String, MeanStd)>,
    /// Cellwise mean over volumes whose ground truth contains the row class.
    pub confusion: Vec<Vec<Option<MeanStd>>>,
}

pub fn summarize(reports: &[ScoreReport]) -> Result<ReportSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid_arg("reports", "nothing to summarise"))?;
    for r in reports {
        if r.meta.labels != first.meta.labels {
            return Err(Error::invalid_arg("reports", "label spaces differ"));
        }
    }
    let collect = |f: &dyn Fn(&ScoreReport) -> Option<f64>| -> MeanStd {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        MeanStd::of(&v)
    };
    let regions = first
        .regions
        .iter()
        .map(|s| (s.name.clone(), collect(&|r| r.region(&s.name))))
        .collect();
    let wasserstein_dice = first
        .wasserstein_dice
        .iter()
        .map(|s| (s.name.clone(), collect(&|r| r.wasserstein(&s.name))))
        .collect();
    let n = first.meta.labels.len();
    let confusion = (0..n)
        .map(|l| {
            (0..n)
                .map(|l2| {
                    let v: Vec<f64> = reports.iter().filter_map(|r| r.confusion[l][l2]).collect();
                    (!v.is_empty()).then(|| MeanStd::of(&v))
                })
                .collect()
        })
        .collect();
    Ok(ReportSummary {
        volumes: reports.len(),
        regions,
        mean_dice: collect(&|r| Some(r.mean_dice)),
        wasserstein_dice,
        confusion,
    })
}

impl ReportSummary {
    /// Mean confusion rows, for [`confusion_mass_from_rows`].
    pub fn mean_confusion(&self) -> Vec<Vec<Option<f64>>> {
        self.confusion
            .iter()
            .map(|row| row.iter().map(|c| c.map(|c| c.mean)).collect())
            .collect()
    }

    pub fn render_table(&self, labels: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} volume(s), mean(std)", self.volumes);
        for (name, s) in &self.regions {
            let _ = writeln!(out, "{:<24} {:.4}({:.4})", format!("dice[{name}]"), s.mean, s.std);
        }
        let _ = writeln!(out, "{:<24} {:.4}({:.4})", "mean_dice", self.mean_dice.mean, self.mean_dice.std);
        for (name, s) in &self.wasserstein_dice {
            let _ = writeln!(out, "{:<24} {:.4}({:.4})", format!("wasserstein[{name}]"), s.mean, s.std);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "mean confusion dice (rows: ground truth, columns: prediction)");
        for (name, row) in labels.iter().zip(&self.confusion) {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Some(c) => format!("{:>8.4}", c.mean),
                    None => format!("{:>8}", "n/a"),
                })
                .collect();
            let _ = writeln!(out, "{:<20} {}", truncate(name, 20), cells.join(" "));
        }
        out
    }
}

/// One column of a side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub name: String,
    pub regions: Vec<(String, f64)>,
    pub mean_dice: f64,
    pub wasserstein_dice: Vec<(String, f64)>,
    pub confusion_mass: f64,
}

/// Columns in input order; differences are taken against the first column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub columns: Vec<ComparisonColumn>,
}

/// Compares report sets. Each entry is a name and the reports of one run;
/// several reports are averaged per volume first.
pub fn compare_reports(sets: &[(String, Vec<ScoreReport>)], mass_metric: &GroundMetric) -> Result<Comparison> {
    if sets.is_empty() {
        return Err(Error::invalid_arg("reports", "nothing to compare"));
    }
    let labels = mass_metric.space().names().to_vec();
    let mut columns = Vec::new();
    for (name, reports) in sets {
        let summary = summarize(reports)?;
        if reports[0].meta.labels != labels {
            return Err(Error::invalid_arg(
                format!("report set `{name}`"),
                "label space differs from the comparison metric",
            ));
        }
        columns.push(ComparisonColumn {
            name: name.clone(),
            regions: summary.regions.iter().map(|(n, s)| (n.clone(), s.mean)).collect(),
            mean_dice: summary.mean_dice.mean,
            wasserstein_dice: summary.wasserstein_dice.iter().map(|(n, s)| (n.clone(), s.mean)).collect(),
            confusion_mass: confusion_mass_from_rows(&summary.mean_confusion(), mass_metric)?,
        });
    }
    Ok(Comparison { columns })
}

impl Comparison {
    fn rows(&self) -> Vec<(String, Vec<Option<f64>>)> {
        let first = &self.columns[0];
        let mut rows = Vec::new();
        for (name, _) in &first.regions {
            rows.push((
                format!("dice[{name}]"),
                self.columns
                    .iter()
                    .map(|c| c.regions.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
                    .collect(),
            ));
        }
        rows.push(("mean_dice".into(), self.columns.iter().map(|c| Some(c.mean_dice)).collect()));
        for (name, _) in &first.wasserstein_dice {
            rows.push((
                format!("wasserstein[{name}]"),
                self.columns
                    .iter()
                    .map(|c| c.wasserstein_dice.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
                    .collect(),
            ));
        }
        rows.push((
            "confusion_mass".into(),
            self.columns.iter().map(|c| Some(c.confusion_mass)).collect(),
        ));
        rows
    }

    /// Side-by-side table with a difference column per additional set.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<24}", "score");
        for c in &self.columns {
            let _ = write!(out, " {:>12}", truncate(&c.name, 12));
        }
        for c in self.columns.iter().skip(1) {
            let _ = write!(out, " {:>12}", truncate(&format!("d[{}]", c.name), 12));
        }
        if self.columns.len() == 1 {
            let _ = write!(out, " {:>12}", "diff");
        }
        let _ = writeln!(out);
        for (label, values) in self.rows() {
            let _ = write!(out, "{label:<24}");
            for v in &values {
                let _ = write!(out, " {}", fmt_cell(*v));
            }
            let base = values[0];
            let diffs: Vec<Option<f64>> = if values.len() == 1 {
                vec![base.map(|_| 0.0)]
            } else {
                values[1..]
                    .iter()
                    .map(|v| match (base, v) {
                        (Some(a), Some(b)) => Some(b - a),
                        _ => None,
                    })
                    .collect()
            };
            for d in diffs {
                let _ = write!(out, " {}", fmt_cell(d));
            }
            let _ = writeln!(out);
        }
        out
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:>12.4}"),
        None => format!("{:>12}", "n/a"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dice_losses::per_class_dice;
    use crate::segmentation::Dims;

    fn seg(labels: &[u8]) -> CrispSegmentation {
        CrispSegmentation::new(Dims::d1(labels.len()), 5, labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_confusion() {
        let g = seg(&[0, 0, 1, 2, 2, 4]);
        let c = confusion_dice(&ProbSegmentation::from_crisp(&g), &g).unwrap();
        for l in 0..5 {
            if g.histogram()[l] > 0 {
                assert!((c.get(l, l) - 1.0).abs() < 1e-12);
                for l2 in (0..5).filter(|&l2| l2 != l && g.histogram()[l2] > 0) {
                    assert!(c.get(l, l2) < 1.0);
                }
            }
        }
        assert_eq!(c.present(), &[true, true, true, false, true]);
        assert!(c.masked_rows()[3].iter().all(Option::is_none));
    }

    #[test]
    fn uniform_prediction_has_identical_columns() {
        let g = seg(&[0, 0, 1, 2, 2, 4, 3]);
        let c = confusion_dice(&ProbSegmentation::uniform(Dims::d1(7), 5), &g).unwrap();
        for l in 0..5 {
            for l2 in 1..5 {
                assert_eq!(c.get(l, l2), c.get(l, 0));
            }
        }
    }

    #[test]
    fn diagonal_matches_per_class_dice() {
        let g = seg(&[0, 1, 1, 2, 3, 4, 4, 0]);
        let probs: Vec<f64> = (0..8)
            .flat_map(|i| {
                let raw: Vec<f64> = (0..5).map(|l| 1.5 + ((i * 5 + l) as f64 * 0.7).cos()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(move |x| x / s)
            })
            .collect();
        let p = ProbSegmentation::new(Dims::d1(8), 5, probs).unwrap();
        let c = confusion_dice(&p, &g).unwrap();
        let d = per_class_dice(&p, &g).unwrap();
        for l in 0..5 {
            assert!((c.get(l, l) - d[l]).abs() <= 1e-12);
        }
    }

    #[test]
    fn region_rules() {
        let s = LabelSpace::brats();
        assert!(RegionSpec::new("empty", [], &s).is_err());
        assert!(RegionSpec::new("bg", [0, 1], &s).is_err());
        assert!(RegionSpec::new("far", [7], &s).is_err());
        let parsed = RegionSpec::parse_list("# tumour\nwhole: 1,2,3,4\ncore: necrotic_core, 3, 4\n", &s, "r").unwrap();
        assert_eq!(parsed[1].members(), &[1, 3, 4]);
        assert!(RegionSpec::parse_list("whole 1,2\n", &s, "r").is_err());
        assert!(RegionSpec::parse_list("whole: tumour\n", &s, "r").is_err());
    }

    #[test]
    fn region_dice_examples() {
        let g = seg(&[0, 1, 2, 3, 4, 4, 0]);
        let perfect = ProbSegmentation::from_crisp(&g);
        for r in RegionSpec::brats() {
            assert!((region_dice(&perfect, &g, &r).unwrap() - 1.0).abs() < 1e-12);
        }
        let all_bg = ProbSegmentation::from_crisp(&seg(&[0; 7]));
        for r in RegionSpec::brats() {
            assert!(region_dice(&all_bg, &g, &r).unwrap() < 1e-8);
        }
        let single = RegionSpec::new("edema", [2], &LabelSpace::brats()).unwrap();
        let p = ProbSegmentation::uniform(Dims::d1(7), 5);
        let d = per_class_dice(&p, &g).unwrap();
        assert!((region_dice(&p, &g, &single).unwrap() - d[2]).abs() < 1e-12);
    }

    #[test]
    fn report_perfect_and_background() {
        let g = seg(&[0, 0, 1, 2, 3, 4, 2]);
        let metrics = NamedMetric::brats_defaults();
        let regions = RegionSpec::brats();
        let r = build_report(&ProbSegmentation::from_crisp(&g), &g, &metrics, &regions).unwrap();
        assert!(r.regions.iter().all(|s| (s.score - 1.0).abs() < 1e-12));
        assert!((r.mean_dice - 1.0).abs() < 1e-12);
        assert!(r.wasserstein_dice.iter().all(|s| s.score == 1.0));
        for l in 0..5 {
            assert!((r.confusion[l][l].unwrap() - 1.0).abs() < 1e-12);
        }

        let bg = ProbSegmentation::from_crisp(&seg(&[0; 7]));
        let r = build_report(&bg, &g, &metrics, &regions).unwrap();
        assert!(r.regions.iter().all(|s| s.score < 1e-8));

        let text = r.to_json().unwrap();
        for key in ["\"regions\"", "\"mean_dice\"", "\"wasserstein_dice\"", "\"confusion\"", "\"meta\""] {
            assert!(text.contains(key));
        }
        assert_eq!(ScoreReport::from_json(&text).unwrap(), r);
        assert!(r.render_table().contains("wasserstein[tree]"));
    }

    #[test]
    fn confusion_mass_counts_off_diagonal_only() {
        let g = seg(&[0, 0, 1, 2, 3, 4, 2]);
        let tree = GroundMetric::brats_tree();
        let perfect = confusion_dice(&ProbSegmentation::from_crisp(&g), &g).unwrap();
        let m = tree_weighted_confusion_mass(&perfect, &tree).unwrap();
        // crisp perfect prediction has no cross overlap, only smoothing
        assert!(m < 1e-7);
        let u = confusion_dice(&ProbSegmentation::uniform(Dims::d1(7), 5), &g).unwrap();
        assert!(tree_weighted_confusion_mass(&u, &tree).unwrap() > 0.1);
    }

    #[test]
    fn comparing_a_report_with_itself_shows_zero_difference() {
        let g = seg(&[0, 0, 1, 2, 3, 4, 2]);
        let p = ProbSegmentation::uniform(Dims::d1(7), 5);
        let r = build_report(&p, &g, &NamedMetric::brats_defaults(), &RegionSpec::brats()).unwrap();
        let sets = vec![("a".to_string(), vec![r.clone()]), ("b".to_string(), vec![r])];
        let c = compare_reports(&sets, &GroundMetric::brats_tree()).unwrap();
        assert_eq!(c.columns[0], ComparisonColumn { name: "a".into(), ..c.columns[1].clone() });
        let table = c.render_table();
        for line in table.lines().skip(1) {
            assert!(line.trim_end().ends_with("0.0000"), "{line}");
        }
    }

    #[test]
    fn mean_std() {
        let s = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 2));
    }
}
