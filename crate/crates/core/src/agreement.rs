//! Cohen's kappa between two raters, with confidence intervals and the
//! intra-/inter-rater report layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("no snippet carries an assessable label from both raters")]
    EmptyOverlap,
    #[error("chance agreement is 1 while observed agreement is not")]
    DegenerateMarginals,
    #[error("table holds {0} pairs, too few for this statistic")]
    TooFewPairs(u64),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("invalid reason {0:?}")]
    InvalidReason(String),
    #[error("label csv: {0}")]
    Csv(String),
}

/// Why a snippet could not be rated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    FussyCrying,
    Drowsy,
    Yawning,
    Refluxing,
    OverExcited,
    SelfSoothing,
    Distracted,
}

impl Reason {
    pub const ALL: [Reason; 7] = [
        Reason::FussyCrying,
        Reason::Drowsy,
        Reason::Yawning,
        Reason::Refluxing,
        Reason::OverExcited,
        Reason::SelfSoothing,
        Reason::Distracted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reason::FussyCrying => "fussy_crying",
            Reason::Drowsy => "drowsy",
            Reason::Yawning => "yawning",
            Reason::Refluxing => "refluxing",
            Reason::OverExcited => "over_excited",
            Reason::SelfSoothing => "self_soothing",
            Reason::Distracted => "distracted",
        }
    }

    pub fn parse(s: &str) -> Result<Self, AgreementError> {
        Reason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| AgreementError::InvalidReason(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RatingLabel {
    FmPlus,
    FmMinus,
    NotAssessable(Option<Reason>),
}

impl RatingLabel {
    /// `FM+`, `FM-` or `NA`.
    pub fn code(&self) -> &'static str {
        match self {
            RatingLabel::FmPlus => "FM+",
            RatingLabel::FmMinus => "FM-",
            RatingLabel::NotAssessable(_) => "NA",
        }
    }

    pub fn reason(&self) -> Option<Reason> {
        match self {
            RatingLabel::NotAssessable(r) => *r,
            _ => None,
        }
    }

    /// Parses a label code and optional reason. A reason is only accepted with `NA`.
    pub fn parse(code: &str, reason: Option<&str>) -> Result<Self, AgreementError> {
        let reason = reason.filter(|r| !r.is_empty());
        match (code, reason) {
            ("FM+", None) => Ok(RatingLabel::FmPlus),
            ("FM-", None) => Ok(RatingLabel::FmMinus),
            ("NA", r) => Ok(RatingLabel::NotAssessable(r.map(Reason::parse).transpose()?)),
            ("FM+" | "FM-", Some(r)) => Err(AgreementError::InvalidReason(r.to_owned())),
            (other, _) => Err(AgreementError::InvalidLabel(other.to_owned())),
        }
    }

    pub fn is_assessable(&self) -> bool {
        !matches!(self, RatingLabel::NotAssessable(_))
    }

    fn is_plus(&self) -> bool {
        matches!(self, RatingLabel::FmPlus)
    }
}

/// Viewing condition of a rating pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Visible,
    Blurred,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Visible => "visible",
            Condition::Blurred => "blurred",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "visible" => Some(Condition::Visible),
            "blurred" => Some(Condition::Blurred),
            _ => None,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One assessor's labels in one condition.
pub type LabelSet = BTreeMap<String, RatingLabel>;

/// Snippets rated by both, neither rating `NA`, as `(a is FM+, b is FM+)`.
pub fn filter_assessable(a: &LabelSet, b: &LabelSet) -> Result<Vec<(bool, bool)>, AgreementError> {
    let pairs: Vec<(bool, bool)> = a
        .iter()
        .filter_map(|(id, la)| {
            let lb = b.get(id)?;
            (la.is_assessable() && lb.is_assessable()).then(|| (la.is_plus(), lb.is_plus()))
        })
        .collect();
    if pairs.is_empty() {
        return Err(AgreementError::EmptyOverlap);
    }
    Ok(pairs)
}

/// Counts indexed `[rater a][rater b]`, index 0 for FM+ and 1 for FM-.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContingencyTable {
    pub counts: [[u64; 2]; 2],
}

impl ContingencyTable {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        ContingencyTable { counts }
    }

    pub fn from_pairs(pairs: &[(bool, bool)]) -> Self {
        let mut counts = [[0u64; 2]; 2];
        for &(a, b) in pairs {
            counts[!a as usize][!b as usize] += 1;
        }
        ContingencyTable { counts }
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transpose(&self) -> Self {
        let c = self.counts;
        ContingencyTable::new([[c[0][0], c[1][0]], [c[0][1], c[1][1]]])
    }

    /// Swaps the class labels for both raters.
    pub fn relabel(&self) -> Self {
        let c = self.counts;
        ContingencyTable::new([[c[1][1], c[1][0]], [c[0][1], c[0][0]]])
    }

    /// Observed and chance agreement.
    fn agreement(&self) -> (f64, f64) {
        let n = self.n() as f64;
        let c = self.counts.map(|row| row.map(|v| v as f64 / n));
        let p_o = c[0][0] + c[1][1];
        let rows = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
        let cols = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
        let p_e = rows[0] * cols[0] + rows[1] * cols[1];
        (p_o, p_e)
    }
}

/// `(p_o - p_e) / (1 - p_e)`.
pub fn cohens_kappa(t: &ContingencyTable) -> Result<f64, AgreementError> {
    if t.n() == 0 {
        return Err(AgreementError::TooFewPairs(0));
    }
    let (p_o, p_e) = t.agreement();
    if p_e >= 1.0 {
        return if p_o >= 1.0 {
            Ok(1.0)
        } else {
            Err(AgreementError::DegenerateMarginals)
        };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: u64,
}

impl fmt::Display for KappaResult {
    /// `.90 [.83, .97]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}, {}]",
            short_decimal(self.kappa),
            short_decimal(self.lower),
            short_decimal(self.upper)
        )
    }
}

/// Two decimals without a leading zero: `.97`, `-.05`, `1.00`.
pub fn short_decimal(v: f64) -> String {
    let s = format!("{v:.2}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        if rest == "00" {
            ".00".to_owned()
        } else {
            format!("-.{rest}")
        }
    } else {
        s
    }
}

fn z_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Normal-approximation interval with `SE = sqrt(p_o (1 - p_o) / (n (1 - p_e)^2))`,
/// clipped to `[-1, 1]`.
pub fn kappa_ci(t: &ContingencyTable, level: f64) -> Result<KappaResult, AgreementError> {
    let n = t.n();
    if n < 2 {
        return Err(AgreementError::TooFewPairs(n));
    }
    let kappa = cohens_kappa(t)?;
    let (p_o, p_e) = t.agreement();
    let se = if p_e >= 1.0 {
        0.0
    } else {
        (p_o * (1.0 - p_o) / (n as f64 * (1.0 - p_e).powi(2))).sqrt()
    };
    let half = z_quantile(level) * se;
    Ok(KappaResult {
        kappa,
        lower: (kappa - half).max(-1.0),
        upper: (kappa + half).min(1.0),
        n,
    })
}

/// Percentile interval from `resamples` multinomial resamples of the table.
/// Resamples whose kappa is undefined are skipped.
pub fn kappa_bootstrap_ci<R: Rng>(
    t: &ContingencyTable,
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<KappaResult, AgreementError> {
    let n = t.n();
    if n < 2 {
        return Err(AgreementError::TooFewPairs(n));
    }
    let kappa = cohens_kappa(t)?;
    let c = t.counts;
    let cumulative = [c[0][0], c[0][0] + c[0][1], c[0][0] + c[0][1] + c[1][0]];
    let mut draws = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut counts = [[0u64; 2]; 2];
        for _ in 0..n {
            let u = rng.random_range(0..n);
            let cell = cumulative.iter().take_while(|&&edge| u >= edge).count();
            counts[cell / 2][cell % 2] += 1;
        }
        if let Ok(k) = cohens_kappa(&ContingencyTable::new(counts)) {
            draws.push(k);
        }
    }
    if draws.is_empty() {
        return Err(AgreementError::DegenerateMarginals);
    }
    draws.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(KappaResult {
        kappa,
        lower: quantile(&draws, alpha / 2.0),
        upper: quantile(&draws, 1.0 - alpha / 2.0),
        n,
    })
}

/// Linear interpolation between order statistics of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One exported label row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub snippet_id: String,
    pub assessor: String,
    pub condition: Condition,
    pub subset: u32,
    pub label: RatingLabel,
    pub timestamp: String,
}

pub const LABEL_CSV_HEADER: [&str; 7] = [
    "snippet_id",
    "assessor",
    "condition",
    "subset",
    "label",
    "reason",
    "timestamp",
];

pub fn write_label_csv(records: &[LabelRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LABEL_CSV_HEADER).expect("in-memory write");
    for r in records {
        let subset = r.subset.to_string();
        w.write_record([
            r.snippet_id.as_str(),
            &r.assessor,
            r.condition.as_str(),
            &subset,
            r.label.code(),
            r.label.reason().map(Reason::as_str).unwrap_or(""),
            &r.timestamp,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn read_label_csv(text: &str) -> Result<Vec<LabelRecord>, AgreementError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AgreementError::Csv(e.to_string()))?
        .clone();
    if headers.iter().ne(LABEL_CSV_HEADER) {
        return Err(AgreementError::Csv(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| AgreementError::Csv(e.to_string()))?;
        let bad = |what: &str| AgreementError::Csv(format!("row {}: bad {what}", line + 1));
        out.push(LabelRecord {
            snippet_id: row[0].to_owned(),
            assessor: row[1].to_owned(),
            condition: Condition::parse(&row[2]).ok_or_else(|| bad("condition"))?,
            subset: row[3].parse().map_err(|_| bad("subset"))?,
            label: RatingLabel::parse(&row[4], Some(&row[5]))?,
            timestamp: row[6].to_owned(),
        });
    }
    Ok(out)
}

/// A row of kappa cells: one per subset, then the pooled column. A cell is
/// `None` where the overlap was empty or kappa undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub subsets: Vec<Option<KappaResult>>,
    pub combined: Option<KappaResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaCount {
    pub assessor: String,
    pub condition: Condition,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    pub subsets: Vec<u32>,
    /// Per assessor, visible against blurred.
    pub intra: Vec<ReportRow>,
    /// Per condition and assessor pair.
    pub inter: Vec<ReportRow>,
    pub not_assessable: Vec<NaCount>,
    /// Per condition, snippets labelled `NA` by at least one assessor.
    pub not_assessable_any: Vec<(Condition, usize)>,
    pub snippets: usize,
}

fn label_sets(records: &[LabelRecord]) -> BTreeMap<(String, Condition, u32), LabelSet> {
    let mut sets: BTreeMap<(String, Condition, u32), LabelSet> = BTreeMap::new();
    for r in records {
        sets.entry((r.assessor.clone(), r.condition, r.subset))
            .or_default()
            .insert(r.snippet_id.clone(), r.label);
    }
    sets
}

fn kappa_row(
    label: String,
    subsets: &[u32],
    sets: &BTreeMap<(String, Condition, u32), LabelSet>,
    a: (&str, Condition),
    b: (&str, Condition),
) -> ReportRow {
    let empty = LabelSet::new();
    let get = |who: (&str, Condition), s: u32| sets.get(&(who.0.to_owned(), who.1, s)).unwrap_or(&empty);
    let cell = |pairs: Result<Vec<(bool, bool)>, AgreementError>| {
        pairs
            .and_then(|p| kappa_ci(&ContingencyTable::from_pairs(&p), 0.95))
            .ok()
    };
    let mut all = Vec::new();
    let per_subset = subsets
        .iter()
        .map(|&s| {
            let pairs = filter_assessable(get(a, s), get(b, s));
            if let Ok(p) = &pairs {
                all.extend_from_slice(p);
            }
            cell(pairs)
        })
        .collect();
    let combined = if all.is_empty() { None } else { cell(Ok(all)) };
    ReportRow {
        label,
        subsets: per_subset,
        combined,
    }
}

/// Intra-rater (visible vs blurred per assessor) and inter-rater (per
/// condition) kappa for every subset and pooled, plus not-assessable tallies.
pub fn agreement_report(records: &[LabelRecord]) -> AgreementReport {
    let sets = label_sets(records);
    let subsets: Vec<u32> = records
        .iter()
        .map(|r| r.subset)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let assessors: Vec<String> = records
        .iter()
        .map(|r| r.assessor.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let intra = assessors
        .iter()
        .map(|a| {
            kappa_row(
                format!("intra {a}"),
                &subsets,
                &sets,
                (a, Condition::Visible),
                (a, Condition::Blurred),
            )
        })
        .collect();

    let mut inter = Vec::new();
    for condition in [Condition::Visible, Condition::Blurred] {
        for (i, a) in assessors.iter().enumerate() {
            for b in &assessors[i + 1..] {
                inter.push(kappa_row(
                    format!("inter {a} vs {b} ({condition})"),
                    &subsets,
                    &sets,
                    (a, condition),
                    (b, condition),
                ));
            }
        }
    }

    let mut not_assessable = Vec::new();
    for a in &assessors {
        for condition in [Condition::Visible, Condition::Blurred] {
            let count = records
                .iter()
                .filter(|r| &r.assessor == a && r.condition == condition && !r.label.is_assessable())
                .count();
            not_assessable.push(NaCount {
                assessor: a.clone(),
                condition,
                count,
            });
        }
    }
    let not_assessable_any = [Condition::Visible, Condition::Blurred]
        .into_iter()
        .map(|condition| {
            let ids: BTreeSet<&str> = records
                .iter()
                .filter(|r| r.condition == condition && !r.label.is_assessable())
                .map(|r| r.snippet_id.as_str())
                .collect();
            (condition, ids.len())
        })
        .collect();
    let snippets = records
        .iter()
        .map(|r| r.snippet_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();

    AgreementReport {
        subsets,
        intra,
        inter,
        not_assessable,
        not_assessable_any,
        snippets,
    }
}

impl AgreementReport {
    pub fn to_text(&self) -> String {
        let cell = |r: &Option<KappaResult>| r.map(|k| k.to_string()).unwrap_or_else(|| "n/a".into());
        let mut header = vec![String::new()];
        header.extend(self.subsets.iter().map(|s| format!("Subset {s}")));
        header.push(format!("Combined ({} snippets)", self.snippets));
        let mut rows = vec![header];
        for row in self.intra.iter().chain(&self.inter) {
            let mut line = vec![row.label.clone()];
            line.extend(row.subsets.iter().map(cell));
            line.push(cell(&row.combined));
            rows.push(line);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let padded: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        }
        out.push_str("\nNot assessable\n");
        for na in &self.not_assessable {
            let _ = writeln!(out, "{} ({}): {}", na.assessor, na.condition, na.count);
        }
        for (condition, count) in &self.not_assessable_any {
            let _ = writeln!(out, "any assessor ({condition}): {count}");
        }
        out
    }

    /// `row,subset,kappa,lower,upper,n` with `subset` = `combined` for pooled cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,subset,kappa,lower,upper,n\n");
        for row in self.intra.iter().chain(&self.inter) {
            let cells = self
                .subsets
                .iter()
                .map(|s| s.to_string())
                .zip(&row.subsets)
                .chain(std::iter::once(("combined".to_owned(), &row.combined)));
            for (name, cell) in cells {
                match cell {
                    Some(k) => {
                        let _ = writeln!(out, "{},{name},{},{},{},{}", row.label, k.kappa, k.lower, k.upper, k.n);
                    }
                    None => {
                        let _ = writeln!(out, "{},{name},,,,0", row.label);
                    }
                }
            }
        }
        out
    }
}

/// Labels of a second rater whose agreement with `first` has kappa `kappa`.
///
/// Each item is either copied from `first` or drawn from `first`'s marginal,
/// which gives kappa equal to the copy probability. Counts are stratified by
/// class and rounded, so the realised kappa is close to `kappa` at any size.
pub fn engineer_partner<R: Rng>(first: &[bool], kappa: f64, rng: &mut R) -> Vec<bool> {
    let n = first.len();
    if n == 0 {
        return Vec::new();
    }
    let prevalence = first.iter().filter(|&&p| p).count() as f64 / n as f64;
    let mut out = first.to_vec();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| first[i] == class).collect();
        idx.shuffle(rng);
        let copied = (kappa * idx.len() as f64).round() as usize;
        let rest = &idx[copied.min(idx.len())..];
        let plus = (prevalence * rest.len() as f64).round() as usize;
        for (j, &i) in rest.iter().enumerate() {
            out[i] = j < plus;
        }
    }
    out
}

/// Parameters of a synthetic two-assessor, two-condition study.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStudySpec {
    pub assessors: [String; 2],
    pub prevalence: f64,
    /// Visible against blurred, per assessor.
    pub intra_kappa: f64,
    /// Between the two assessors in the visible condition.
    pub inter_kappa: f64,
    /// Fraction of labels per assessor and condition replaced by `NA`.
    pub not_assessable_rate: f64,
}

impl Default for SyntheticStudySpec {
    fn default() -> Self {
        SyntheticStudySpec {
            assessors: ["A1".into(), "A2".into()],
            prevalence: 0.5,
            intra_kappa: 0.9,
            inter_kappa: 0.8,
            not_assessable_rate: 0.0,
        }
    }
}

/// Label records for every snippet of `subsets` (subset ordinals from 1), in
/// order assessor, condition, subset, position.
pub fn synthetic_study<R: Rng>(spec: &SyntheticStudySpec, subsets: &[Vec<String>], rng: &mut R) -> Vec<LabelRecord> {
    let mut grid: BTreeMap<(usize, Condition), Vec<Vec<RatingLabel>>> = BTreeMap::new();
    for items in subsets {
        let n = items.len();
        let mut base: Vec<bool> = (0..n)
            .map(|i| (i as f64) < (spec.prevalence * n as f64).round())
            .collect();
        base.shuffle(rng);
        let a_blur = engineer_partner(&base, spec.intra_kappa, rng);
        let b_vis = engineer_partner(&base, spec.inter_kappa, rng);
        let b_blur = engineer_partner(&b_vis, spec.intra_kappa, rng);
        let series = [
            ((0, Condition::Visible), base),
            ((0, Condition::Blurred), a_blur),
            ((1, Condition::Visible), b_vis),
            ((1, Condition::Blurred), b_blur),
        ];
        for (key, labels) in series {
            let mut labels: Vec<RatingLabel> = labels
                .into_iter()
                .map(|p| if p { RatingLabel::FmPlus } else { RatingLabel::FmMinus })
                .collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let na = (spec.not_assessable_rate * n as f64).round() as usize;
            for &i in &idx[..na.min(n)] {
                let reason = Reason::ALL[rng.random_range(0..Reason::ALL.len())];
                labels[i] = RatingLabel::NotAssessable(Some(reason));
            }
            grid.entry(key).or_default().push(labels);
        }
    }
    let mut out = Vec::new();
    for ((who, condition), per_subset) in grid {
        for (s, (items, labels)) in subsets.iter().zip(per_subset).enumerate() {
            for (id, label) in items.iter().zip(labels) {
                out.push(LabelRecord {
                    snippet_id: id.clone(),
                    assessor: spec.assessors[who].clone(),
                    condition,
                    subset: s as u32 + 1,
                    label,
                    timestamp: String::new(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(c: [[u64; 2]; 2]) -> ContingencyTable {
        ContingencyTable::new(c)
    }

    #[test]
    fn kappa_hand_cases() {
        assert_eq!(cohens_kappa(&t([[50, 0], [0, 50]])).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&t([[25, 25], [25, 25]])).unwrap(), 0.0);
        assert!((cohens_kappa(&t([[45, 5], [10, 40]])).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(cohens_kappa(&t([[30, 0], [0, 0]])).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&t([[0; 2]; 2])), Err(AgreementError::TooFewPairs(0)));
    }

    #[test]
    fn ci_hand_cases() {
        let r = kappa_ci(&t([[45, 5], [10, 40]]), 0.95).unwrap();
        let se = (0.1275f64 / 25.0).sqrt();
        assert!((se - 0.071414).abs() < 1e-6);
        assert!((r.lower - (0.7 - 1.959963984540054 * se)).abs() < 1e-12);
        assert!((r.upper - (0.7 + 1.959963984540054 * se)).abs() < 1e-12);
        assert!((r.lower - 0.560).abs() < 1e-3 && (r.upper - 0.840).abs() < 1e-3);

        let perfect = kappa_ci(&t([[50, 0], [0, 50]]), 0.95).unwrap();
        assert_eq!((perfect.lower, perfect.kappa, perfect.upper), (1.0, 1.0, 1.0));

        let tiny = kappa_ci(&t([[2, 0], [1, 2]]), 0.95).unwrap();
        assert!(tiny.upper == 1.0 && tiny.lower >= -1.0);
        assert!(tiny.lower <= tiny.kappa && tiny.kappa <= tiny.upper);
        assert!(kappa_ci(&t([[1, 0], [0, 0]]), 0.95).is_err());
    }

    #[test]
    fn filter_rules() {
        let a: LabelSet = [
            ("s1".to_owned(), RatingLabel::FmPlus),
            ("s2".to_owned(), RatingLabel::FmPlus),
            ("s3".to_owned(), RatingLabel::FmMinus),
        ]
        .into();
        let b: LabelSet = [
            ("s1".to_owned(), RatingLabel::NotAssessable(Some(Reason::Drowsy))),
            ("s2".to_owned(), RatingLabel::FmMinus),
            ("s4".to_owned(), RatingLabel::FmMinus),
        ]
        .into();
        assert_eq!(filter_assessable(&a, &b).unwrap(), [(true, false)]);
        let c: LabelSet = [("zz".to_owned(), RatingLabel::FmPlus)].into();
        assert_eq!(filter_assessable(&a, &c), Err(AgreementError::EmptyOverlap));
    }

    #[test]
    fn label_parsing() {
        assert_eq!(RatingLabel::parse("FM+", None).unwrap(), RatingLabel::FmPlus);
        assert_eq!(RatingLabel::parse("FM-", Some("")).unwrap(), RatingLabel::FmMinus);
        assert_eq!(
            RatingLabel::parse("NA", Some("self_soothing")).unwrap(),
            RatingLabel::NotAssessable(Some(Reason::SelfSoothing))
        );
        assert_eq!(
            RatingLabel::parse("NA", None).unwrap(),
            RatingLabel::NotAssessable(None)
        );
        assert!(RatingLabel::parse("FM?", None).is_err());
        assert!(RatingLabel::parse("FM+", Some("drowsy")).is_err());
        assert!(RatingLabel::parse("NA", Some("bored")).is_err());
    }

    #[test]
    fn short_decimal_format() {
        assert_eq!(short_decimal(0.9), ".90");
        assert_eq!(short_decimal(0.965), ".96");
        assert_eq!(short_decimal(1.0), "1.00");
        assert_eq!(short_decimal(-0.05), "-.05");
        assert_eq!(short_decimal(-0.001), ".00");
        let r = KappaResult {
            kappa: 0.9,
            lower: 0.83,
            upper: 0.97,
            n: 10,
        };
        assert_eq!(r.to_string(), ".90 [.83, .97]");
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![
            LabelRecord {
                snippet_id: "s,1".into(),
                assessor: "A1".into(),
                condition: Condition::Blurred,
                subset: 2,
                label: RatingLabel::NotAssessable(Some(Reason::FussyCrying)),
                timestamp: "2024-01-01T00:00:00Z".into(),
            },
            LabelRecord {
                snippet_id: "s2".into(),
                assessor: "A2".into(),
                condition: Condition::Visible,
                subset: 1,
                label: RatingLabel::FmMinus,
                timestamp: String::new(),
            },
        ];
        let text = write_label_csv(&records);
        assert!(text.starts_with("snippet_id,assessor,condition,subset,label,reason,timestamp\n"));
        assert_eq!(read_label_csv(&text).unwrap(), records);
        assert!(read_label_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn bootstrap_close_to_asymptotic_on_hand_table() {
        let table = t([[45, 5], [10, 40]]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let boot = kappa_bootstrap_ci(&table, 0.95, 2000, &mut rng).unwrap();
        let asym = kappa_ci(&table, 0.95).unwrap();
        assert!((boot.lower - asym.lower).abs() < 0.03);
        assert!((boot.upper - asym.upper).abs() < 0.03);
    }

    #[test]
    fn engineered_partner_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for q in [0.0, 0.5, 0.9, 1.0] {
            let mut first: Vec<bool> = (0..280).map(|i| i % 5 < 2).collect();
            first.shuffle(&mut rng);
            let second = engineer_partner(&first, q, &mut rng);
            let pairs: Vec<(bool, bool)> = first.into_iter().zip(second).collect();
            let k = cohens_kappa(&ContingencyTable::from_pairs(&pairs)).unwrap();
            assert!((k - q).abs() < 0.02, "target {q} got {k}");
        }
    }

    #[test]
    fn report_layout_and_engineered_kappa() {
        let subsets: Vec<Vec<String>> = (0..3)
            .map(|s| (0..280).map(|i| format!("s{s}_{i}")).collect())
            .collect();
        let spec = SyntheticStudySpec {
            not_assessable_rate: 0.05,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let records = synthetic_study(&spec, &subsets, &mut rng);
        assert_eq!(records.len(), 4 * 840);
        let report = agreement_report(&records);
        assert_eq!(report.subsets, [1, 2, 3]);
        assert_eq!(report.snippets, 840);
        assert_eq!(report.intra.len(), 2);
        assert_eq!(report.inter.len(), 2);
        for row in &report.intra {
            assert_eq!(row.subsets.len(), 3);
            let k = row.combined.unwrap().kappa;
            assert!((k - 0.9).abs() < 0.02, "{}: {k}", row.label);
        }
        let inter_visible = report.inter[0].combined.unwrap().kappa;
        assert!((inter_visible - 0.8).abs() < 0.02, "{inter_visible}");
        assert!(report.not_assessable.iter().all(|na| na.count == 42));
        let text = report.to_text();
        assert!(text.contains("Subset 1") && text.contains("Combined (840 snippets)"));
        assert!(report.to_csv().lines().count() == 1 + 4 * 4);
    }

    #[test]
    fn report_marks_empty_cells() {
        let records = vec![LabelRecord {
            snippet_id: "s".into(),
            assessor: "A1".into(),
            condition: Condition::Visible,
            subset: 1,
            label: RatingLabel::FmPlus,
            timestamp: String::new(),
        }];
        let report = agreement_report(&records);
        assert_eq!(report.intra[0].subsets, [None]);
        assert_eq!(report.intra[0].combined, None);
        assert!(report.to_text().contains("n/a"));
    }

    fn table() -> impl Strategy<Value = ContingencyTable> {
        prop::array::uniform2(prop::array::uniform2(0u64..60))
            .prop_filter("non-empty", |c| c.iter().flatten().sum::<u64>() > 1)
            .prop_map(ContingencyTable::new)
    }

    proptest! {
        #[test]
        fn kappa_symmetries(tab in table()) {
            if let Ok(k) = cohens_kappa(&tab) {
                prop_assert!((cohens_kappa(&tab.transpose()).unwrap() - k).abs() < 1e-12);
                prop_assert!((cohens_kappa(&tab.relabel()).unwrap() - k).abs() < 1e-12);
                prop_assert!(k <= 1.0 + 1e-12);
                let off_diagonal = tab.counts[0][1] + tab.counts[1][0];
                prop_assert_eq!((k - 1.0).abs() < 1e-12, off_diagonal == 0);
            }
        }

        #[test]
        fn ci_brackets_kappa(tab in table()) {
            if let Ok(r) = kappa_ci(&tab, 0.95) {
                prop_assert!(-1.0 <= r.lower && r.lower <= r.kappa && r.kappa <= r.upper && r.upper <= 1.0);
            }
        }
    }
}
