use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use gma_core::features::{build_features, FeatureMatrix, FeatureMode, FmClass, LabeledSample};
use gma_core::keypoints::{load_snippet_dir, SchemaMap, META_FILE};
use gma_core::testkit::gen_dataset;

use crate::config::RunConfig;
use crate::error::{config, data, CliResult};

/// `snippet_id,class` with class `FM+` or `FM-`.
pub fn read_class_labels(path: &Path) -> CliResult<BTreeMap<String, FmClass>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| data(format!("{}: {e}", path.display())))?;
        if row.len() < 2 {
            return Err(data(format!("{}: expected snippet_id,class", path.display())));
        }
        let class = match &row[1] {
            "FM+" => FmClass::Present,
            "FM-" => FmClass::Absent,
            other => return Err(data(format!("{}: unknown class {other:?}", path.display()))),
        };
        out.insert(row[0].to_owned(), class);
    }
    Ok(out)
}

pub fn write_class_labels(path: &Path, labels: &[(String, FmClass)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::error::internal)?;
    w.write_record(["snippet_id", "class"])
        .map_err(crate::error::internal)?;
    for (id, class) in labels {
        let code = match class {
            FmClass::Present => "FM+",
            FmClass::Absent => "FM-",
        };
        w.write_record([id.as_str(), code]).map_err(crate::error::internal)?;
    }
    w.flush().map_err(crate::error::internal)
}

/// Snippet directories under `root`: `root` itself when it holds a metadata
/// sidecar, otherwise its immediate subdirectories that do, sorted by name.
pub fn snippet_dirs(root: &Path) -> CliResult<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(config(format!("{} is not a directory", root.display())));
    }
    if root.join(META_FILE).is_file() {
        return Ok(vec![root.to_owned()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn require(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.clone().ok_or_else(|| config(format!("missing {what} path")))?;
    if !p.exists() {
        return Err(config(format!("{what} path {} does not exist", p.display())));
    }
    Ok(p)
}

/// Labelled samples in `mode` from the synthetic section, a directory of
/// feature files, or a directory of keypoint snippets, in that order of
/// preference. Samples are sorted by id.
pub fn load_dataset(cfg: &RunConfig, mode: FeatureMode) -> CliResult<Vec<LabeledSample>> {
    if let Some(s) = &cfg.synthetic {
        return gen_dataset(s.n_per_class, cfg.seed(), &s.template, mode).map_err(data);
    }
    let labels = read_class_labels(&require(&cfg.paths.labels, "labels")?)?;
    let mut samples: Vec<LabeledSample> = if cfg.paths.features.is_some() {
        let dir = require(&cfg.paths.features, "features")?;
        labels
            .iter()
            .map(|(id, &class)| {
                let path = dir.join(format!("{id}.gmaf"));
                let features = FeatureMatrix::load(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
                if features.mode() != mode {
                    return Err(data(format!(
                        "{} holds {} features, need {mode}",
                        path.display(),
                        features.mode()
                    )));
                }
                Ok(LabeledSample {
                    id: id.clone(),
                    features,
                    class,
                })
            })
            .collect::<CliResult<_>>()?
    } else {
        let root = require(&cfg.paths.keypoints, "keypoints")?;
        let schema = SchemaMap::body25();
        snippet_dirs(&root)?
            .par_iter()
            .filter_map(|dir| {
                let snippet = match load_snippet_dir(dir, &schema) {
                    Ok(s) => s,
                    Err(e) => return Some(Err(data(format!("{}: {e}", dir.display())))),
                };
                let &class = labels.get(snippet.id())?;
                Some(
                    build_features(&snippet, mode)
                        .map(|features| LabeledSample {
                            id: snippet.id().to_owned(),
                            features,
                            class,
                        })
                        .map_err(|e| data(format!("{}: {e}", dir.display()))),
                )
            })
            .collect::<CliResult<_>>()?
    };
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    if samples.is_empty() {
        return Err(data("no labelled samples found"));
    }
    Ok(samples)
}
