//! Architecture sweeps: each cell is one cross-validation run, results are
//! committed to an on-disk store so an interrupted sweep resumes where it
//! stopped.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use gma_core::features::{FeatureMode, LabeledSample};

use crate::evaluation::{run_cv, CvConfig, CvResult};
use crate::spec::{NetworkSpec, DEFAULT_FC, DEFAULT_FILTERS, DEFAULT_FILTER_LEN};
use crate::NeuralError;

pub const ONE_FC: [usize; 6] = [50, 100, 150, 200, 300, 500];
pub const TWO_FC: [(usize, usize); 8] = [
    (50, 25),
    (100, 50),
    (150, 100),
    (200, 100),
    (300, 150),
    (300, 200),
    (500, 250),
    (500, 300),
];
pub const FILTER_LENGTHS: [usize; 6] = [5, 7, 9, 15, 21, 31];
pub const FILTER_COUNTS: [usize; 6] = [16, 32, 64, 128, 256, 512];
pub const CONDITIONS: [FeatureMode; 2] = [FeatureMode::WithHead, FeatureMode::WithoutHead];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellConfig {
    pub condition: FeatureMode,
    pub fc: Vec<usize>,
    pub filters: usize,
    pub filter_len: usize,
}

impl CellConfig {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::new(self.condition.columns(), self.filters, self.filter_len, self.fc.clone())
    }

    fn fc_label(&self) -> String {
        self.fc.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
    }

    /// `with_head|200;100|64|7`
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.condition,
            self.fc_label(),
            self.filters,
            self.filter_len
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub label: String,
    pub fc: Vec<usize>,
    pub filters: usize,
    pub filter_len: usize,
}

impl Row {
    pub fn cell(&self, condition: FeatureMode) -> CellConfig {
        CellConfig {
            condition,
            fc: self.fc.clone(),
            filters: self.filters,
            filter_len: self.filter_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub rows: Vec<Row>,
}

/// Rows grouped as in the printed tables; every row runs under both conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationTable {
    pub title: String,
    pub groups: Vec<Group>,
}

fn row(label: String, fc: Vec<usize>, filters: usize, filter_len: usize) -> Row {
    Row {
        label,
        fc,
        filters,
        filter_len,
    }
}

impl AblationTable {
    /// Dense layer sizes at the default convolution.
    pub fn dense_layers() -> Self {
        let one = ONE_FC
            .iter()
            .map(|&a| row(a.to_string(), vec![a], DEFAULT_FILTERS, DEFAULT_FILTER_LEN))
            .collect();
        let two = TWO_FC
            .iter()
            .map(|&(a, b)| row(format!("{a}, {b}"), vec![a, b], DEFAULT_FILTERS, DEFAULT_FILTER_LEN))
            .collect();
        AblationTable {
            title: "Dense layer sizes".into(),
            groups: vec![
                Group {
                    name: "one dense layer".into(),
                    rows: one,
                },
                Group {
                    name: "two dense layers".into(),
                    rows: two,
                },
            ],
        }
    }

    /// Filter lengths and counts at the default dense layers.
    pub fn convolution() -> Self {
        let lengths = FILTER_LENGTHS
            .iter()
            .map(|&l| row(l.to_string(), DEFAULT_FC.to_vec(), DEFAULT_FILTERS, l))
            .collect();
        let counts = FILTER_COUNTS
            .iter()
            .map(|&f| row(f.to_string(), DEFAULT_FC.to_vec(), f, DEFAULT_FILTER_LEN))
            .collect();
        AblationTable {
            title: "Convolution filters".into(),
            groups: vec![
                Group {
                    name: "filter length".into(),
                    rows: lengths,
                },
                Group {
                    name: "filter count".into(),
                    rows: counts,
                },
            ],
        }
    }

    /// Every (row, condition) pair, in table order.
    pub fn cells(&self) -> Vec<CellConfig> {
        self.groups
            .iter()
            .flat_map(|g| &g.rows)
            .flat_map(|r| CONDITIONS.map(|c| r.cell(c)))
            .collect()
    }
}

/// Cells of `tables` with duplicate keys removed, first occurrence kept.
pub fn unique_cells(tables: &[AblationTable]) -> Vec<CellConfig> {
    let mut seen = HashSet::new();
    tables
        .iter()
        .flat_map(AblationTable::cells)
        .filter(|c| seen.insert(c.key()))
        .collect()
}

pub const STORE_HEADER_PREFIX: &str = "condition,fc_sizes,filters,filter_len";

/// CSV file of finished cells, rewritten through a temporary file on every
/// commit.
#[derive(Debug)]
pub struct ResultsStore {
    path: PathBuf,
    rows: Mutex<BTreeMap<String, (CellConfig, CvResult)>>,
}

impl ResultsStore {
    pub fn open(path: &Path) -> Result<Self, NeuralError> {
        let rows = match fs::read_to_string(path) {
            Ok(text) => parse_store(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(ResultsStore {
            path: path.to_owned(),
            rows: Mutex::new(rows),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<CvResult> {
        self.rows.lock().unwrap().get(key).map(|(_, r)| r.clone())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.rows.lock().unwrap().contains_key(key)
    }

    pub fn results(&self) -> BTreeMap<String, CvResult> {
        self.rows
            .lock()
            .unwrap()
            .iter()
            .map(|(k, (_, r))| (k.clone(), r.clone()))
            .collect()
    }

    pub fn commit(&self, cell: &CellConfig, result: &CvResult) -> Result<(), NeuralError> {
        let mut rows = self.rows.lock().unwrap();
        rows.insert(cell.key(), (cell.clone(), result.clone()));
        let text = render_store(rows.values());
        let tmp = self.path.with_extension("csv.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        render_store(self.rows.lock().unwrap().values())
    }
}

fn render_store<'a>(rows: impl Iterator<Item = &'a (CellConfig, CvResult)>) -> String {
    let rows: Vec<_> = rows.collect();
    let k = rows.iter().map(|(_, r)| r.fold_accuracies.len()).max().unwrap_or(0);
    let mut out = String::from(STORE_HEADER_PREFIX);
    for i in 1..=k {
        let _ = write!(out, ",acc_{i}");
    }
    out.push_str(",mean,ci95\n");
    for (cell, r) in rows {
        let _ = write!(
            out,
            "{},{},{},{}",
            cell.condition,
            cell.fc_label(),
            cell.filters,
            cell.filter_len
        );
        for i in 0..k {
            match r.fold_accuracies.get(i) {
                Some(a) => write!(out, ",{a}"),
                None => write!(out, ","),
            }
            .unwrap();
        }
        let _ = writeln!(out, ",{},{}", r.mean, r.ci95);
    }
    out
}

fn parse_store(text: &str) -> Result<BTreeMap<String, (CellConfig, CvResult)>, NeuralError> {
    let bad = |line: usize, m: &str| NeuralError::MalformedResults(format!("line {line}: {m}"));
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Ok(BTreeMap::new());
    };
    if !header.starts_with(STORE_HEADER_PREFIX) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = BTreeMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 6 {
            return Err(bad(line_no, "too few fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line_no, "bad number"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(line_no, "bad integer"));
        let condition: FeatureMode = f[0].parse().map_err(|_| bad(line_no, "bad condition"))?;
        let fc = f[1].split(';').map(int).collect::<Result<Vec<_>, _>>()?;
        let cell = CellConfig {
            condition,
            fc,
            filters: int(f[2])?,
            filter_len: int(f[3])?,
        };
        let accs = f[4..f.len() - 2]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| num(s))
            .collect::<Result<Vec<_>, _>>()?;
        let result = CvResult {
            fold_accuracies: accs,
            mean: num(f[f.len() - 2])?,
            ci95: num(f[f.len() - 1])?,
        };
        rows.insert(cell.key(), (cell, result));
    }
    Ok(rows)
}

/// Runs every cell missing from `store` through `runner` and commits each
/// result as soon as it is known. Returns the keys that were computed.
pub fn run_cells<F>(
    cells: &[CellConfig],
    store: &ResultsStore,
    parallel: bool,
    runner: F,
) -> Result<Vec<String>, NeuralError>
where
    F: Fn(&CellConfig) -> Result<CvResult, NeuralError> + Sync,
{
    let mut seen = HashSet::new();
    let todo: Vec<&CellConfig> = cells
        .iter()
        .filter(|c| !store.contains(&c.key()) && seen.insert(c.key()))
        .collect();
    let job = |cell: &&CellConfig| -> Result<String, NeuralError> {
        let result = runner(cell)?;
        store.commit(cell, &result)?;
        Ok(cell.key())
    };
    if parallel {
        todo.par_iter().map(job).collect()
    } else {
        todo.iter().map(job).collect()
    }
}

/// Cross-validates every cell of `tables` on the dataset of its condition.
pub fn ablation_run(
    with_head: &[LabeledSample],
    without_head: &[LabeledSample],
    tables: &[AblationTable],
    config: &CvConfig,
    store: &ResultsStore,
    parallel: bool,
) -> Result<Vec<String>, NeuralError> {
    let cells = unique_cells(tables);
    run_cells(&cells, store, parallel, |cell| {
        let data = match cell.condition {
            FeatureMode::WithHead => with_head,
            FeatureMode::WithoutHead => without_head,
        };
        run_cv(data, &cell.spec(), config, &())
    })
}

/// Plain-text table, one column per condition, `*` on the best mean of each
/// group and condition.
pub fn render_table(table: &AblationTable, results: &BTreeMap<String, CvResult>) -> String {
    let cell_text = |cell: &CellConfig| results.get(&cell.key()).map(|r| r.to_string());
    let mut lines: Vec<[String; 3]> = vec![["".into(), CONDITIONS[0].to_string(), CONDITIONS[1].to_string()]];
    for group in &table.groups {
        lines.push([format!("[{}]", group.name), String::new(), String::new()]);
        let best: Vec<Option<f64>> = CONDITIONS
            .iter()
            .map(|&c| {
                group
                    .rows
                    .iter()
                    .filter_map(|r| results.get(&r.cell(c).key()).map(|x| x.mean))
                    .reduce(f64::max)
            })
            .collect();
        for r in &group.rows {
            let mut line = [r.label.clone(), String::new(), String::new()];
            for (j, &c) in CONDITIONS.iter().enumerate() {
                let cell = r.cell(c);
                line[j + 1] = match cell_text(&cell) {
                    Some(t) => {
                        let top = results
                            .get(&cell.key())
                            .map(|x| Some(x.mean) == best[j])
                            .unwrap_or(false);
                        if top {
                            format!("{t} *")
                        } else {
                            t
                        }
                    }
                    None => "-".into(),
                };
            }
            lines.push(line);
        }
    }
    let widths: Vec<usize> = (0..3)
        .map(|j| lines.iter().map(|l| l[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = format!("{}\n", table.title);
    for l in &lines {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {}",
            l[0],
            l[1],
            l[2],
            w0 = widths[0],
            w1 = widths[1]
        );
    }
    out
}

/// One CSV row per (table row, condition), in table order.
pub fn report_csv(tables: &[AblationTable], results: &BTreeMap<String, CvResult>) -> String {
    let mut out = String::from("table,group,row,condition,mean,ci95\n");
    for t in tables {
        for g in &t.groups {
            for r in &g.rows {
                for c in CONDITIONS {
                    let (mean, ci) = match results.get(&r.cell(c).key()) {
                        Some(x) => (x.mean.to_string(), x.ci95.to_string()),
                        None => (String::new(), String::new()),
                    };
                    let _ = writeln!(out, "{},{},\"{}\",{},{},{}", t.title, g.name, r.label, c, mean, ci);
                }
            }
        }
    }
    out
}
