use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rie_core::dataset::{self, Dataset, Intervention};
use rie_core::diagnostics::{self, BalanceTable, HistogramBin, PositivityReport};
use rie_core::estimators::{self, Method, RieEstimate};
use rie_core::learners::LearnerSpec;
use rie_core::superlearner::{self, WeightRow};
use rie_core::{report, seed, simulation, Error, Result};

use crate::config::{echo, Loaded, RunConfig, SimFileConfig};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Everything computed for one intervention.
struct Analysis {
    name: String,
    estimates: Vec<RieEstimate>,
    weights: Vec<WeightRow>,
    balance: BalanceTable,
    histogram: Vec<HistogramBin>,
    positivity: PositivityReport,
}

fn analyze(cfg: &RunConfig, ds: &Dataset, iv: &Intervention, index: usize, methods: &[Method]) -> Result<Analysis> {
    let root = seed::derive(cfg.seed, &[index as u64]);
    let design = dataset::design_matrix(ds, iv.treatment_index);
    let target = dataset::nonintervened_indicator(ds, iv);
    let library = LearnerSpec::default_library(&design.x, &target);
    let fit = superlearner::fit_superlearner(ds, iv, &library, cfg.folds, root)?;
    let ghat = fit.predict(&design.x)?;
    let exact: Vec<&str> = cfg.exact_match.iter().map(String::as_str).collect();

    let mut estimates = Vec::with_capacity(methods.len());
    for &m in methods {
        let est = match m {
            Method::EnsembleIpw => {
                let (mut e, _) = estimators::rie_ipw(ds, iv, &ghat, cfg.alpha)?;
                e.flags.degenerate_fit = fit.any_degenerate();
                e
            }
            Method::NaiveIpw => estimators::rie_naive_ipw(ds, iv, cfg.alpha, seed::derive(root, &[1]))?,
            Method::Ols => estimators::rie_ols(ds, iv, cfg.alpha)?,
            Method::Matching => {
                estimators::rie_matching(ds, iv, cfg.alpha, (!exact.is_empty()).then_some(exact.as_slice()))?
            }
        };
        estimates.push(est);
    }
    Ok(Analysis {
        name: iv.name.clone(),
        estimates,
        weights: superlearner::weight_report(&fit, &iv.name),
        balance: diagnostics::balance_table(ds, iv, Some(&ghat), cfg.alpha)?,
        histogram: diagnostics::pscore_histogram(&ghat, &target, cfg.histogram_bins)?,
        positivity: diagnostics::positivity_report(&ghat, &target, cfg.positivity_floor),
    })
}

fn run_analyses(cfg: &RunConfig, methods: &[Method]) -> Result<Vec<Analysis>> {
    let ds = dataset::load_csv(&cfg.data, &cfg.schema)?;
    let ivs = cfg.intervention.iter().map(|c| c.resolve(&ds)).collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = ivs.iter().map(|iv| iv.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Schema(format!("intervention name '{}' is used twice", w[0])));
    }
    ivs.iter().enumerate().map(|(k, iv)| analyze(cfg, &ds, iv, k, methods)).collect()
}

fn split_balance(analyses: &[Analysis], adjusted: bool) -> Vec<(String, BalanceTable)> {
    analyses
        .iter()
        .map(|a| {
            let rows = a.balance.rows.iter().filter(|r| r.adjusted == adjusted).cloned().collect();
            (a.name.clone(), BalanceTable { rows, skipped: a.balance.skipped.clone() })
        })
        .collect()
}

fn write_balance_files(dir: &Path, analyses: &[Analysis]) -> Result<()> {
    report::write_balance(create(&dir.join("balance_pre.csv"))?, &split_balance(analyses, false))?;
    report::write_balance(create(&dir.join("balance_post.csv"))?, &split_balance(analyses, true))?;
    for a in analyses {
        for c in &a.balance.skipped {
            eprintln!("note: {}: covariate '{c}' has zero variance; omitted from balance tables", a.name);
        }
    }
    Ok(())
}

pub fn estimate(loaded: &Loaded<RunConfig>) -> Result<()> {
    let cfg = &loaded.effective;
    let methods = cfg.methods()?;
    let analyses = run_analyses(cfg, &methods)?;
    let dir = &cfg.output;
    echo(dir, loaded)?;

    let estimates: Vec<RieEstimate> = analyses.iter().flat_map(|a| a.estimates.iter().cloned()).collect();
    report::write_estimates(create(&dir.join("estimates.csv"))?, &estimates)?;
    let weights: Vec<WeightRow> = analyses.iter().flat_map(|a| a.weights.iter().cloned()).collect();
    report::write_weights(create(&dir.join("weights.csv"))?, &weights)?;
    write_balance_files(dir, &analyses)?;
    let hists: Vec<(String, Vec<HistogramBin>)> = analyses.iter().map(|a| (a.name.clone(), a.histogram.clone())).collect();
    report::write_histogram(create(&dir.join("pscore_hist.csv"))?, &hists)?;

    let mut text = String::new();
    for a in &analyses {
        text.push_str(&format!("intervention: {}\n{}\n", a.name, a.positivity));
        if !a.positivity.pass() {
            eprintln!(
                "warning: {}: {} non-intervened units have propensity below {}",
                a.name,
                a.positivity.violations.len(),
                a.positivity.floor
            );
        }
    }
    std::fs::write(dir.join("positivity.txt"), text)?;
    Ok(())
}

pub fn balance(loaded: &Loaded<RunConfig>) -> Result<()> {
    let cfg = &loaded.effective;
    let analyses = run_analyses(cfg, &[])?;
    echo(&cfg.output, loaded)?;
    write_balance_files(&cfg.output, &analyses)
}

pub fn simulate(loaded: &Loaded<SimFileConfig>) -> Result<()> {
    let cfg = &loaded.effective;
    let result = simulation::run_study(&cfg.to_sim()?)?;
    let dir = &cfg.output;
    echo(dir, loaded)?;
    report::write_simstudy(create(&dir.join("simstudy.csv"))?, &result)?;
    if cfg.raw {
        report::write_sim_raw(create(&dir.join("simstudy_raw.csv"))?, &result)?;
    }
    if !result.failures.is_empty() {
        let mut text = String::new();
        for f in &result.failures {
            text.push_str(&format!("run {} noise_dims {} {}: {}\n", f.run, f.noise_dims, f.method, f.message));
        }
        std::fs::write(dir.join("failures.txt"), text)?;
        eprintln!("note: {} method runs failed; see failures.txt", result.failures.len());
    }
    if let Some(c) = result.cells.iter().find(|c| c.succeeded == 0) {
        return Err(Error::Numeric(format!("{} failed on every run at noise_dims={}", c.method, c.noise_dims)));
    }
    Ok(())
}

/// Pool estimates across imputed-data result files by (method, intervention).
pub fn combine(inputs: &[PathBuf], output: &Path, alpha: f64) -> Result<()> {
    if inputs.len() < 2 {
        return Err(Error::Usage(format!("combine needs at least 2 estimate files, got {}", inputs.len())));
    }
    let mut keys: Vec<(Method, String)> = Vec::new();
    let mut groups: BTreeMap<(Method, String), Vec<RieEstimate>> = BTreeMap::new();
    for (f, path) in inputs.iter().enumerate() {
        let file = File::open(path).map_err(|e| Error::Usage(format!("cannot open {}: {e}", path.display())))?;
        let ests = report::read_estimates(file, alpha)?;
        let these: Vec<(Method, String)> = ests.iter().map(|e| (e.method, e.intervention.clone())).collect();
        if f == 0 {
            keys = these;
            let mut sorted = keys.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Usage(format!("{} repeats a (method, intervention) key", path.display())));
            }
        } else {
            let (mut a, mut b) = (keys.clone(), these);
            a.sort();
            b.sort();
            if a != b {
                return Err(Error::Usage(format!(
                    "{} does not have the same (method, intervention) keys as {}",
                    path.display(),
                    inputs[0].display()
                )));
            }
        }
        for e in ests {
            groups.entry((e.method, e.intervention.clone())).or_default().push(e);
        }
    }
    let pooled = keys
        .iter()
        .map(|k| estimators::combine_imputations(&groups[k], alpha))
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    report::write_estimates(create(output)?, &pooled)
}
