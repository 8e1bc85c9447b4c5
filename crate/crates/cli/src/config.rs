use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rie_core::dataset::{InterventionConfig, Schema};
use rie_core::estimators::Method;
use rie_core::simulation::{self, SimConfig};
use rie_core::superlearner::DEFAULT_FOLDS;
use rie_core::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 0.01;
pub const DEFAULT_BINS: usize = 20;

/// One estimation run. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_floor")]
    pub positivity_floor: f64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Covariates matched exactly by the matching estimator.
    #[serde(default)]
    pub exact_match: Vec<String>,
    pub schema: Schema,
    pub intervention: Vec<InterventionConfig>,
}

fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.to_string()).collect()
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_floor() -> f64 {
    DEFAULT_POSITIVITY_FLOOR
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<String>>,
    pub folds: Option<usize>,
    pub alpha: Option<f64>,
}

/// Config text as read, plus the merged configuration.
pub struct Loaded<C> {
    pub verbatim: String,
    pub effective: C,
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &RunOverrides) -> Result<Loaded<RunConfig>> {
        let verbatim = read_text(path)?;
        let mut cfg: RunConfig = toml::from_str(&verbatim)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data = resolve(base, &cfg.data);
        cfg.output = resolve(base, &cfg.output);
        if let Some(d) = &overrides.data {
            cfg.data = d.clone();
        }
        if let Some(o) = &overrides.output {
            cfg.output = o.clone();
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(m) = &overrides.methods {
            cfg.methods = m.clone();
        }
        if let Some(v) = overrides.folds {
            cfg.folds = v;
        }
        if let Some(a) = overrides.alpha {
            cfg.alpha = a;
        }
        cfg.validate()?;
        Ok(Loaded { verbatim, effective: cfg })
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.methods()?;
        if self.intervention.is_empty() {
            return Err(Error::Schema("config lists no interventions".into()));
        }
        if self.folds < 2 {
            return Err(Error::Parameter(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.positivity_floor >= 0.0 && self.positivity_floor < 1.0) {
            return Err(Error::Parameter(format!("positivity_floor must lie in [0, 1), got {}", self.positivity_floor)));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Parameter("histogram_bins must be positive".into()));
        }
        for c in &self.exact_match {
            if !self.schema.covariates.contains(c) {
                return Err(Error::Schema(format!("exact_match column '{c}' is not a covariate")));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        parse_methods(&self.methods)
    }
}

pub fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    if names.is_empty() {
        return Err(Error::Usage("at least one method is required".into()));
    }
    let mut out: Vec<Method> = Vec::new();
    for n in names {
        let m: Method = n.parse()?;
        if out.contains(&m) {
            return Err(Error::Usage(format!("method '{m}' listed twice")));
        }
        out.push(m);
    }
    Ok(out)
}

/// Simulation settings as they appear in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFileConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_noise")]
    pub noise_dims: Vec<usize>,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub fast: bool,
    #[serde(default)]
    pub raw: bool,
    #[serde(default = "default_sim_output")]
    pub output: PathBuf,
}

fn default_n() -> usize {
    simulation::DEFAULT_N
}

fn default_runs() -> usize {
    simulation::DEFAULT_RUNS
}

fn default_noise() -> Vec<usize> {
    simulation::DEFAULT_NOISE_LEVELS.to_vec()
}

fn default_sim_output() -> PathBuf {
    PathBuf::from("simstudy_out")
}

#[derive(Debug, Default, Clone)]
pub struct SimOverrides {
    pub n: Option<usize>,
    pub runs: Option<usize>,
    pub noise_dims: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<String>>,
    pub fast: bool,
    pub raw: bool,
    pub output: Option<PathBuf>,
}

impl SimFileConfig {
    /// Merge an optional config file with flags; without a file the seed flag is mandatory.
    pub fn load(path: Option<&Path>, o: &SimOverrides) -> Result<Loaded<SimFileConfig>> {
        let (verbatim, mut cfg) = match path {
            Some(p) => {
                let text = read_text(p)?;
                let mut cfg: SimFileConfig = toml::from_str(&text)?;
                cfg.output = resolve(p.parent().unwrap_or(Path::new(".")), &cfg.output);
                (text, cfg)
            }
            None => {
                let seed = o.seed.ok_or_else(|| Error::Usage("simulate needs --seed or a config file with a seed".into()))?;
                let cfg = SimFileConfig {
                    n: default_n(),
                    runs: default_runs(),
                    noise_dims: default_noise(),
                    seed,
                    methods: default_methods(),
                    alpha: default_alpha(),
                    fast: false,
                    raw: false,
                    output: default_sim_output(),
                };
                (String::new(), cfg)
            }
        };
        if let Some(v) = o.n {
            cfg.n = v;
        }
        if let Some(v) = o.runs {
            cfg.runs = v;
        }
        if let Some(v) = &o.noise_dims {
            cfg.noise_dims = v.clone();
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = &o.methods {
            cfg.methods = v.clone();
        }
        if let Some(v) = &o.output {
            cfg.output = v.clone();
        }
        cfg.fast |= o.fast;
        cfg.raw |= o.raw;
        cfg.to_sim()?.validate()?;
        Ok(Loaded { verbatim, effective: cfg })
    }

    pub fn to_sim(&self) -> Result<SimConfig> {
        Ok(SimConfig {
            n: self.n,
            noise_levels: self.noise_dims.clone(),
            n_runs: self.runs,
            seed: self.seed,
            methods: parse_methods(&self.methods)?,
            alpha: self.alpha,
            fast: self.fast,
            ..SimConfig::default()
        })
    }
}

/// Write the config as given and as merged into the output directory.
pub fn echo<C: Serialize>(dir: &Path, loaded: &Loaded<C>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if !loaded.verbatim.is_empty() {
        std::fs::write(dir.join("config_input.toml"), &loaded.verbatim)?;
    }
    let effective = toml::to_string(&loaded.effective)
        .map_err(|e| Error::Usage(format!("cannot serialize effective config: {e}")))?;
    std::fs::write(dir.join("config_effective.toml"), effective)?;
    Ok(())
}
