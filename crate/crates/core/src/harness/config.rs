//! Experiment configuration and its flat `key = value` file format.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys are rejected. Lists are comma-separated, and the toy
//! observation list separates clients with `;`.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `model` | `blr` \| `bnn` \| `gaussian_toy` | `blr` |
//! | `hidden` | count | 100 |
//! | `temperature` | real > 0 | 1 |
//! | `covtype_path` | path | `data/covtype_5k.data` |
//! | `test_fraction` | real in [0, 1) | 0.2 |
//! | `mnist_train_images`, `mnist_train_labels`, `mnist_test_images`, `mnist_test_labels` | path | unset |
//! | `toy_prior_mean`, `toy_prior_variance` | list | `0`, `1` |
//! | `toy_observations` | `;`-separated vectors, one per client | `1;-1` |
//! | `partition` | `ratio_skew` \| `classes_per_client` | `ratio_skew` |
//! | `majority_fraction` | real in (0.5, 1] | 0.9 |
//! | `classes_per_client` | count | 3 |
//! | `per_client_size` | count | 200 |
//! | `scheme` | `ksd` \| `hip` \| `round_robin` \| `random` | `ksd` |
//! | `clients` | count | 10 |
//! | `rounds` | count (0 allowed) | 100 |
//! | `global_steps` | count | 10 |
//! | `local_steps` | count (0 allowed) | 10 |
//! | `particles` | count | 50 |
//! | `step_size`, `local_step_size` | real > 0 | 0.005 |
//! | `adagrad_decay` | real in [0, 1) | 0.9 |
//! | `kde_bandwidth` | real > 0 | 0.55 |
//! | `minibatch` | count, 0 = full shard | 0 |
//! | `seed` | u64 | 0 |
//! | `eval_every` | count | 1 |
//! | `output_dir` | path | `out` |
//! | `timing` | bool | false |
//! | `sweep_runs` | count | 5 |
//! | `sweep_schemes` | list of schemes | all four |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::PartitionMode;
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::kernels::DEFAULT_KDE_BANDWIDTH;
use crate::models::{ModelSpec, BNN_DEFAULT_HIDDEN};
use crate::selection::SelectionScheme;
use crate::svgd::DEFAULT_DECAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Blr,
    Bnn,
    GaussianToy,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blr" => Ok(ModelKind::Blr),
            "bnn" => Ok(ModelKind::Bnn),
            "gaussian_toy" | "toy" => Ok(ModelKind::GaussianToy),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MnistPaths {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub hidden: usize,
    pub temperature: f64,
    pub covtype_path: PathBuf,
    pub test_fraction: f64,
    pub mnist: MnistPaths,
    pub toy_prior_mean: Vec<f64>,
    pub toy_prior_variance: Vec<f64>,
    pub toy_observations: Vec<Vec<f64>>,
    pub partition: PartitionMode,
    pub per_client_size: usize,
    pub scheme: SelectionScheme,
    pub clients: usize,
    pub rounds: usize,
    pub global_steps: usize,
    pub local_steps: usize,
    pub particles: usize,
    pub step_size: f64,
    pub local_step_size: f64,
    pub adagrad_decay: f64,
    pub kde_bandwidth: f64,
    pub minibatch: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub output_dir: PathBuf,
    pub timing: bool,
    pub sweep_runs: usize,
    pub sweep_schemes: Vec<SelectionScheme>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Blr,
            hidden: BNN_DEFAULT_HIDDEN,
            temperature: 1.0,
            covtype_path: PathBuf::from("data/covtype_5k.data"),
            test_fraction: 0.2,
            mnist: MnistPaths::default(),
            toy_prior_mean: vec![0.0],
            toy_prior_variance: vec![1.0],
            toy_observations: vec![vec![1.0], vec![-1.0]],
            partition: PartitionMode::RatioSkew {
                majority_fraction: 0.9,
            },
            per_client_size: 200,
            scheme: SelectionScheme::KsdBased,
            clients: 10,
            rounds: 100,
            global_steps: 10,
            local_steps: 10,
            particles: 50,
            step_size: 0.005,
            local_step_size: 0.005,
            adagrad_decay: DEFAULT_DECAY,
            kde_bandwidth: DEFAULT_KDE_BANDWIDTH,
            minibatch: 0,
            seed: 0,
            eval_every: 1,
            output_dir: PathBuf::from("out"),
            timing: false,
            sweep_runs: 5,
            sweep_schemes: SelectionScheme::ALL.to_vec(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "model" => self.model = v.parse()?,
            "hidden" => self.hidden = parse_value(key, v)?,
            "temperature" | "alpha" => self.temperature = parse_value(key, v)?,
            "covtype_path" => self.covtype_path = PathBuf::from(v),
            "test_fraction" => self.test_fraction = parse_value(key, v)?,
            "mnist_train_images" => self.mnist.train_images = Some(PathBuf::from(v)),
            "mnist_train_labels" => self.mnist.train_labels = Some(PathBuf::from(v)),
            "mnist_test_images" => self.mnist.test_images = Some(PathBuf::from(v)),
            "mnist_test_labels" => self.mnist.test_labels = Some(PathBuf::from(v)),
            "toy_prior_mean" => self.toy_prior_mean = parse_list(key, v)?,
            "toy_prior_variance" => self.toy_prior_variance = parse_list(key, v)?,
            "toy_observations" => {
                self.toy_observations = v
                    .split(';')
                    .map(|o| parse_list(key, o))
                    .collect::<Result<_>>()?
            }
            "partition" => {
                self.partition = match v {
                    "ratio_skew" => PartitionMode::RatioSkew {
                        majority_fraction: 0.9,
                    },
                    "classes_per_client" => PartitionMode::ClassesPerClient {
                        classes_per_client: 3,
                    },
                    other => return Err(Error::Config(format!("unknown partition {other:?}"))),
                }
            }
            "majority_fraction" => {
                self.partition = PartitionMode::RatioSkew {
                    majority_fraction: parse_value(key, v)?,
                }
            }
            "classes_per_client" => {
                self.partition = PartitionMode::ClassesPerClient {
                    classes_per_client: parse_value(key, v)?,
                }
            }
            "per_client_size" => self.per_client_size = parse_value(key, v)?,
            "scheme" => self.scheme = v.parse()?,
            "clients" => self.clients = parse_value(key, v)?,
            "rounds" => self.rounds = parse_value(key, v)?,
            "global_steps" => self.global_steps = parse_value(key, v)?,
            "local_steps" => self.local_steps = parse_value(key, v)?,
            "particles" => self.particles = parse_value(key, v)?,
            "step_size" => self.step_size = parse_value(key, v)?,
            "local_step_size" => self.local_step_size = parse_value(key, v)?,
            "adagrad_decay" => self.adagrad_decay = parse_value(key, v)?,
            "kde_bandwidth" => self.kde_bandwidth = parse_value(key, v)?,
            "minibatch" => self.minibatch = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "eval_every" => self.eval_every = parse_value(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "timing" => self.timing = parse_bool(key, v)?,
            "sweep_runs" => self.sweep_runs = parse_value(key, v)?,
            "sweep_schemes" => {
                self.sweep_schemes = v
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: "expected key = value".into(),
            })?;
            self.set(key, value).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Renders every key so that `apply_text` reproduces `self`.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = Vec::new();
        let model = match self.model {
            ModelKind::Blr => "blr",
            ModelKind::Bnn => "bnn",
            ModelKind::GaussianToy => "gaussian_toy",
        };
        out.push(format!("model = {model}"));
        out.push(format!("hidden = {}", self.hidden));
        out.push(format!("temperature = {:?}", self.temperature));
        out.push(format!("covtype_path = {}", self.covtype_path.display()));
        out.push(format!("test_fraction = {:?}", self.test_fraction));
        for (k, p) in [
            ("mnist_train_images", &self.mnist.train_images),
            ("mnist_train_labels", &self.mnist.train_labels),
            ("mnist_test_images", &self.mnist.test_images),
            ("mnist_test_labels", &self.mnist.test_labels),
        ] {
            if let Some(p) = p {
                out.push(format!("{k} = {}", p.display()));
            }
        }
        out.push(format!("toy_prior_mean = {}", list(&self.toy_prior_mean)));
        out.push(format!(
            "toy_prior_variance = {}",
            list(&self.toy_prior_variance)
        ));
        let obs: Vec<String> = self.toy_observations.iter().map(|o| list(o)).collect();
        out.push(format!("toy_observations = {}", obs.join(";")));
        match self.partition {
            PartitionMode::RatioSkew { majority_fraction } => {
                out.push(format!("majority_fraction = {majority_fraction:?}"))
            }
            PartitionMode::ClassesPerClient { classes_per_client } => {
                out.push(format!("classes_per_client = {classes_per_client}"))
            }
        }
        out.push(format!("per_client_size = {}", self.per_client_size));
        out.push(format!("scheme = {}", self.scheme));
        out.push(format!("clients = {}", self.clients));
        out.push(format!("rounds = {}", self.rounds));
        out.push(format!("global_steps = {}", self.global_steps));
        out.push(format!("local_steps = {}", self.local_steps));
        out.push(format!("particles = {}", self.particles));
        out.push(format!("step_size = {:?}", self.step_size));
        out.push(format!("local_step_size = {:?}", self.local_step_size));
        out.push(format!("adagrad_decay = {:?}", self.adagrad_decay));
        out.push(format!("kde_bandwidth = {:?}", self.kde_bandwidth));
        out.push(format!("minibatch = {}", self.minibatch));
        out.push(format!("seed = {}", self.seed));
        out.push(format!("eval_every = {}", self.eval_every));
        out.push(format!("output_dir = {}", self.output_dir.display()));
        out.push(format!("timing = {}", self.timing));
        out.push(format!("sweep_runs = {}", self.sweep_runs));
        let schemes: Vec<&str> = self.sweep_schemes.iter().map(|s| s.as_str()).collect();
        out.push(format!("sweep_schemes = {}", schemes.join(",")));
        out.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("per_client_size", self.per_client_size),
            ("clients", self.clients),
            ("global_steps", self.global_steps),
            ("particles", self.particles),
            ("eval_every", self.eval_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let reals = [
            ("temperature", self.temperature),
            ("step_size", self.step_size),
            ("local_step_size", self.local_step_size),
            ("kde_bandwidth", self.kde_bandwidth),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.adagrad_decay) {
            return Err(Error::Config("adagrad_decay must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        if self.model == ModelKind::GaussianToy {
            let d = self.toy_prior_mean.len();
            if self.toy_observations.len() != self.clients {
                return Err(Error::Config(format!(
                    "toy_observations lists {} clients but clients = {}",
                    self.toy_observations.len(),
                    self.clients
                )));
            }
            if self.toy_observations.iter().any(|o| o.len() != d) {
                return Err(Error::Config(
                    "toy observations must match the prior dimension".into(),
                ));
            }
        }
        if self.sweep_schemes.is_empty() {
            return Err(Error::Config(
                "sweep_schemes must name at least one scheme".into(),
            ));
        }
        Ok(())
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            global_steps: self.global_steps,
            local_steps: self.local_steps,
            global_step_size: self.step_size,
            local_step_size: self.local_step_size,
            adagrad_decay: self.adagrad_decay,
            kde_bandwidth: self.kde_bandwidth,
            minibatch: (self.minibatch > 0).then_some(self.minibatch),
        }
    }

    /// Model for data with `feature_dim` columns (ignored by the toy).
    pub fn model_spec(&self, feature_dim: usize, classes: usize) -> Result<ModelSpec> {
        let spec = match self.model {
            ModelKind::Blr => ModelSpec::blr(feature_dim),
            ModelKind::Bnn => ModelSpec::bnn(feature_dim, self.hidden, classes),
            ModelKind::GaussianToy => ModelSpec::gaussian_toy(
                self.toy_prior_mean.clone(),
                self.toy_prior_variance.clone(),
            )?,
        };
        let spec = spec.with_temperature(self.temperature);
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("scheme", "hip").unwrap();
        cfg.set("toy_observations", "1,2;3,4").unwrap();
        cfg.set("classes_per_client", "3").unwrap();
        cfg.set("sweep_schemes", "ksd,random").unwrap();
        cfg.set("step_size", "0.1").unwrap();
        let mut back = ExperimentConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# header\n\nrounds = 7 # trailing\n", Path::new("c"))
            .unwrap();
        assert_eq!(cfg.rounds, 7);
        match cfg.apply_text("rounds = 7\nbogus = 1\n", Path::new("c")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(cfg.apply_text("rounds\n", Path::new("c")).is_err());
        assert!(cfg.set("rounds", "-1").is_err());
        assert!(cfg.set("scheme", "greedy").is_err());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let mut cfg = ExperimentConfig {
            particles: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.particles = 5;
        cfg.step_size = 0.0;
        assert!(cfg.validate().is_err());
        cfg.step_size = 0.1;
        cfg.model = ModelKind::GaussianToy;
        cfg.clients = 3;
        assert!(cfg.validate().is_err());
        cfg.clients = 2;
        assert!(cfg.validate().is_ok());
    }
}
