//! Run configuration: TOML or JSON file, then command-line flags on top.
//! Seeds come from `--seed`, then the file's top-level `seed`, then
//! `GMA_BENCH_SEED`, then 0; the resolved seed replaces every section seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gma_core::blur::BlurParams;
use gma_core::features::FeatureMode;
use gma_core::testkit::SynthSpec;
use gma_neural::evaluation::{TTestKind, DEFAULT_FOLDS, DEFAULT_REPEATS};
use gma_neural::spec::{DEFAULT_FC, DEFAULT_FILTERS, DEFAULT_FILTER_LEN};
use gma_neural::train::TrainConfig;
use gma_neural::NetworkSpec;
use gma_study::plan::{DEFAULT_SUBSET_COUNT, DEFAULT_SUBSET_SIZE};

use crate::error::{config, internal, CliResult};

pub const SEED_ENV: &str = "GMA_BENCH_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub keypoints: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    pub media_root: Option<PathBuf>,
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub filters: usize,
    pub filter_len: usize,
    pub fc: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            filters: DEFAULT_FILTERS,
            filter_len: DEFAULT_FILTER_LEN,
            fc: DEFAULT_FC.to_vec(),
        }
    }
}

impl NetworkSection {
    pub fn spec(&self, mode: FeatureMode) -> NetworkSpec {
        NetworkSpec::new(mode.columns(), self.filters, self.filter_len, self.fc.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub repeats: usize,
    pub ttest: TTestKind,
    pub conditions: Vec<FeatureMode>,
    pub parallel: bool,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            folds: DEFAULT_FOLDS,
            repeats: DEFAULT_REPEATS,
            ttest: TTestKind::Pooled,
            conditions: vec![FeatureMode::WithHead, FeatureMode::WithoutHead],
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// `dense` and/or `convolution`.
    pub tables: Vec<String>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            tables: vec!["dense".into(), "convolution".into()],
        }
    }
}

/// Synthetic dataset used in place of keypoint directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_per_class: usize,
    pub template: SynthSpec,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            n_per_class: 200,
            template: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub count: usize,
    pub size: usize,
    pub addr: String,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            count: DEFAULT_SUBSET_COUNT,
            size: DEFAULT_SUBSET_SIZE,
            addr: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub mode: FeatureMode,
    pub paths: Paths,
    pub blur: BlurParams,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub cv: CvSection,
    pub grid: GridSection,
    pub synthetic: Option<SyntheticSection>,
    pub study: StudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            jobs: None,
            mode: FeatureMode::WithHead,
            paths: Paths::default(),
            blur: BlurParams::default(),
            network: NetworkSection::default(),
            train: TrainConfig::default(),
            cv: CvSection::default(),
            grid: GridSection::default(),
            synthetic: None,
            study: StudySection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Fixes the seed and copies it into every seeded section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> CliResult<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| config(format!("{SEED_ENV}={v:?} is not a seed")))?,
            ),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(0);
        self.seed = Some(seed);
        self.blur.seed = seed;
        self.train.seed = seed;
        if let Some(s) = &mut self.synthetic {
            s.template.seed = seed;
        }
        Ok(seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

/// Written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let config = cfg.to_json();
        let canonical = serde_json::to_string(&config).expect("json");
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.seed(),
            config_sha256: hex::encode(Sha256::digest(canonical.as_bytes())),
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(internal)?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("json") + "\n";
        fs::write(&path, text).map_err(internal)?;
        Ok(path)
    }

    /// The configuration a run was made with.
    pub fn read_config(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
        serde_json::from_value(m.config).map_err(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = RunConfig::default();
        assert_eq!(
            c.network.spec(FeatureMode::WithHead),
            NetworkSpec::default_for(FeatureMode::WithHead)
        );
        assert_eq!((c.cv.folds, c.cv.repeats), (5, 10));
        assert_eq!((c.study.count, c.study.size), (3, 280));
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.blur.kernel, 25);
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(
            &t,
            "seed = 4\nmode = \"without_head\"\n[network]\nfc = [100]\n[train]\npatience = 3\n",
        )
        .unwrap();
        let j = dir.path().join("c.json");
        fs::write(
            &j,
            r#"{"seed": 4, "mode": "without_head", "network": {"fc": [100]}, "train": {"patience": 3}}"#,
        )
        .unwrap();
        let a = RunConfig::load(&t).unwrap();
        assert_eq!(a, RunConfig::load(&j).unwrap());
        assert_eq!(a.network.fc, vec![100]);
        assert_eq!(a.network.filters, 64);
        assert_eq!(a.train.patience, 3);
        fs::write(&t, "bogus = 1\n").unwrap();
        assert_eq!(RunConfig::load(&t).unwrap_err().exit_code(), 1);
        fs::write(&t, "[blur]\nthreshold = 0.3\n").unwrap();
        assert_eq!(RunConfig::load(&t).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn manifest_round_trips_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.resolve_seed(Some(9)).unwrap();
        let m = Manifest::new("cv", &c);
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read_config(&path).unwrap(), c);
        assert_eq!(m.config_sha256, Manifest::new("cv", &c).config_sha256);
        assert_eq!(c.train.seed, 9);
    }
}
