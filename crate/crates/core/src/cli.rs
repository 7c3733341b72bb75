//! The `mrdmix` command line.
//!
//! Exit status is 0 on success, 1 for invalid input (usage, configuration or
//! dataset validation) and 2 for failures while running. Settings may come from a
//! flat `key = value` file given with `--config`; flags on the command line win.
//! A run's `manifest.txt` can be passed back as `--config` to repeat it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clustering::{
    binder_partition, cluster_summary, pearson_by_subtype, pearson_by_subtype_panel,
    select_dataset, similarity_matrix, wss_profile, ImputedPanel,
};
use crate::diagnostics::{summarize, QUANTILE_METHOD};
use crate::error::{Error, Result};
use crate::io::output::{
    read_allocations, read_draws_csv, read_draws_jsonl, read_json, write_allocations,
    write_cluster_summary, write_correlations, write_draws_csv, write_draws_jsonl, write_json,
    write_latent_means, write_param_summary, write_partition, write_sbc, write_similarity,
    write_wss_profile, FitMetadata,
};
use crate::io::{
    fill_lc50, load_panel, parse_dataset, read_config_file, registry_for, write_dataset,
    IngestOptions, Manifest, SubtypeRules,
};
use crate::model::{PatientRecord, PriorSettings, N_DRUGS};
use crate::sampler::{run_chains, DataOptions, McmcConfig, ModelData, SamplerOptions};
use crate::simulate::sbc::DEFAULT_MONITORED;
use crate::simulate::{
    draw_from_prior, recovery_truth, sbc_run, simulate_dataset, CovariateSettings, GibbsPosterior,
    SbcSettings, TrueParams,
};

const SUBCOMMANDS: [&str; 6] = [
    "preanalyze",
    "fit",
    "partition",
    "summarize",
    "simulate",
    "sbc",
];

#[derive(Debug, Parser)]
#[command(
    name = "mrdmix",
    version,
    about = "Joint censored MRD regression and LC50 mixture model"
)]
pub struct Cli {
    /// Flat key = value settings file (or a previous run's manifest.txt).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// k-means WSS elbow profile over an imputed panel and the selected dataset.
    #[command(args_override_self = true)]
    Preanalyze(PreanalyzeArgs),
    /// Run the MCMC chains on a dataset.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Binder partition, cluster summaries and correlation tables from a fit.
    #[command(args_override_self = true)]
    Partition(PartitionArgs),
    /// Posterior summary table from a fit.
    #[command(args_override_self = true)]
    Summarize(SummarizeArgs),
    /// Simulate a dataset in the ingestion format.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Simulation-based calibration of the sampler.
    #[command(args_override_self = true)]
    Sbc(SbcArgs),
}

fn default_merge() -> String {
    SubtypeRules::default().format_merge()
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PreanalyzeArgs {
    /// Glob matching the imputed LC50 files.
    #[arg(long)]
    pub panel: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Number of clusters used to pick the dataset.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 25)]
    pub restarts: usize,
    #[arg(long, default_value_t = 20240101)]
    pub seed: u64,
    /// Take log10 of LC50 values on ingest.
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub lc50_log10: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawsFormat {
    Jsonl,
    Csv,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Glob matching imputed LC50 files; required when the dataset has missing LC50 cells.
    #[arg(long)]
    pub panel: Option<String>,
    /// Use this panel dataset instead of the lowest-WSS one.
    #[arg(long)]
    pub dataset_index: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: usize,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 20240101)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, action = ArgAction::Set, default_value_t = true, num_args = 0..=1, default_missing_value = "true")]
    pub standardize_covariates: bool,
    #[arg(long, action = ArgAction::Set, default_value_t = true, num_args = 0..=1, default_missing_value = "true")]
    pub standardize_lc50: bool,
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub lc50_log10: bool,
    /// Subtypes with fewer patients are pooled into "Other".
    #[arg(long, default_value_t = 10)]
    pub min_subtype_count: usize,
    /// Renames applied before pooling, as from:to pairs separated by commas.
    #[arg(long, default_value_t = default_merge())]
    pub subtype_merge: String,
    /// k-means restarts when selecting the panel dataset.
    #[arg(long, default_value_t = 25)]
    pub restarts: usize,
    #[arg(long, value_enum, default_value_t = DrawsFormat::Jsonl)]
    pub draws_format: DrawsFormat,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PartitionArgs {
    /// Output directory of a `fit` run.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Largest number of clusters the Binder search may open.
    #[arg(long, default_value_t = 10)]
    pub max_k: usize,
    /// Random item orders tried by the greedy Binder search.
    #[arg(long, default_value_t = 64)]
    pub permutations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Enter censored MRD values at the detection limit in the correlations.
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub censored_in_correlations: bool,
    /// Average the correlations over the datasets of this imputed panel.
    #[arg(long)]
    pub panel: Option<String>,
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub lc50_log10: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SummarizeArgs {
    /// Output directory of a `fit` run.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Sparse effects, ρ = 1 and three well-separated components.
    Recovery,
    /// Parameters drawn from the prior.
    Prior,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 788)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = Scenario::Recovery)]
    pub scenario: Scenario,
    /// Components for the prior scenario.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// JSON file with the true parameters; overrides the scenario.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Force MRD below the limit at day 42 whenever it is below at day 15.
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub strict_monotone: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SbcArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 3)]
    pub thin: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MONITORED.map(String::from))]
    pub monitored: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub test_bins: usize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preanalyze(_) => "preanalyze",
            Command::Fit(_) => "fit",
            Command::Partition(_) => "partition",
            Command::Summarize(_) => "summarize",
            Command::Simulate(_) => "simulate",
            Command::Sbc(_) => "sbc",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Preanalyze(a) => &a.out,
            Command::Fit(a) => &a.out,
            Command::Partition(a) => &a.out,
            Command::Summarize(a) => &a.out,
            Command::Simulate(a) => &a.out,
            Command::Sbc(a) => &a.out,
        }
    }

    /// Effective settings as sorted key/value pairs, excluding the output directory.
    fn settings(&self) -> Result<Vec<(String, String)>> {
        let value = match self {
            Command::Preanalyze(a) => serde_json::to_value(a)?,
            Command::Fit(a) => serde_json::to_value(a)?,
            Command::Partition(a) => serde_json::to_value(a)?,
            Command::Summarize(a) => serde_json::to_value(a)?,
            Command::Simulate(a) => serde_json::to_value(a)?,
            Command::Sbc(a) => serde_json::to_value(a)?,
        };
        let serde_json::Value::Object(map) = value else {
            unreachable!("argument structs serialize to objects");
        };
        Ok(map
            .into_iter()
            .filter(|(k, v)| k != "out" && !v.is_null())
            .map(|(k, v)| {
                let text = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Array(items) => items
                        .iter()
                        .map(|i| i.as_str().map_or_else(|| i.to_string(), String::from))
                        .collect::<Vec<_>>()
                        .join(","),
                    other => other.to_string(),
                };
                (k, text)
            })
            .collect())
    }
}

/// Removes `--config FILE` from `argv` and splices the file's settings in right after
/// the subcommand name, so that later command-line flags override them.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut iter = argv.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            config =
                Some(PathBuf::from(iter.next().ok_or_else(|| {
                    Error::Config("--config needs a file".into())
                })?));
        } else if let Some(path) = text.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let Some(pos) = rest
        .iter()
        .skip(1)
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map(|p| p + 1)
    else {
        return Ok(rest);
    };
    let sub = rest[pos].to_string_lossy().into_owned();
    let mut spliced: Vec<OsString> = rest[..=pos].to_vec();
    for (k, v) in read_config_file(&path, &sub)? {
        spliced.push(format!("--{}", k.replace('_', "-")).into());
        spliced.push(v.into());
    }
    spliced.extend(rest[pos + 1..].iter().cloned());
    Ok(spliced)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Parses `argv` (program name first) and runs the command. Returns the exit status.
pub fn run(argv: Vec<OsString>) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Runs a parsed command and appends its manifest block.
pub fn execute(command: &Command) -> Result<()> {
    let out = command.out().to_path_buf();
    create_dir(&out)?;
    let mut manifest = Manifest::new(command.name(), &command.settings()?);
    let outputs = match command {
        Command::Preanalyze(a) => preanalyze(a, &mut manifest)?,
        Command::Fit(a) => fit(a, &mut manifest)?,
        Command::Partition(a) => partition(a, &mut manifest)?,
        Command::Summarize(a) => summarize_fit(a, &mut manifest)?,
        Command::Simulate(a) => simulate(a, &mut manifest)?,
        Command::Sbc(a) => sbc(a, &mut manifest)?,
    };
    for p in &outputs {
        manifest.add_output(p)?;
    }
    manifest.append_to(&out.join("manifest.txt"))
}

fn load_panel_recorded(
    pattern: &str,
    lc50_log10: bool,
    manifest: &mut Manifest,
) -> Result<ImputedPanel> {
    let (panel, paths) = load_panel(pattern, lc50_log10)?;
    for p in &paths {
        manifest.add_input(p)?;
    }
    Ok(panel)
}

fn preanalyze(a: &PreanalyzeArgs, manifest: &mut Manifest) -> Result<Vec<PathBuf>> {
    if a.k_max == 0 || a.k == 0 || a.k > a.k_max {
        return Err(Error::Config(format!(
            "need 1 <= k <= k_max, got k = {} and k_max = {}",
            a.k, a.k_max
        )));
    }
    let panel = load_panel_recorded(&a.panel, a.lc50_log10, manifest)?;
    let ks: Vec<usize> = (1..=a.k_max).collect();
    let profile = wss_profile(&panel, &ks, a.restarts, a.seed)?;
    for w in &profile.warnings {
        eprintln!("warning: {w}");
    }
    let selected =
        select_dataset(&profile, a.k).ok_or_else(|| Error::Config("empty panel".into()))?;
    manifest.push_result("selected_dataset_index", selected.to_string());
    manifest.push_result("selected_dataset", panel.tags[selected].clone());
    println!(
        "selected dataset {selected} ({}) with the lowest WSS at k = {}",
        panel.tags[selected], a.k
    );

    let path = a.out.join("wss_profile.csv");
    write_wss_profile(&path, &profile, &panel.tags)?;
    Ok(vec![path])
}

fn fit(a: &FitArgs, manifest: &mut Manifest) -> Result<Vec<PathBuf>> {
    if a.min_subtype_count == 0 {
        return Err(Error::Config("min-subtype-count must be at least 1".into()));
    }
    let config = McmcConfig {
        iterations: a.iterations,
        burn_in: a.burn_in,
        thin: a.thin,
        chains: a.chains,
        seed: a.seed,
        k: a.k,
    };
    config.validate()?;
    let options = IngestOptions {
        lc50_log10: a.lc50_log10,
        subtypes: SubtypeRules {
            min_count: a.min_subtype_count,
            merge: SubtypeRules::parse_merge(&a.subtype_merge)?,
        },
    };
    let mut parsed = parse_dataset(&a.data, &options)?;
    manifest.add_input(&a.data)?;
    eprintln!(
        "LC50 missing-value report ({} patients):\n{}",
        parsed.records.len(),
        parsed.missing_report()
    );

    if let Some(pattern) = &a.panel {
        let panel = load_panel_recorded(pattern, a.lc50_log10, manifest)?;
        let index = match a.dataset_index {
            Some(i) if i < panel.len() => i,
            Some(i) => {
                return Err(Error::Config(format!(
                    "dataset index {i} out of range for {} datasets",
                    panel.len()
                )))
            }
            None => {
                let profile = wss_profile(&panel, &[a.k], a.restarts, a.seed)?;
                select_dataset(&profile, a.k).ok_or_else(|| Error::Config("empty panel".into()))?
            }
        };
        fill_lc50(&mut parsed.records, &panel.datasets[index])?;
        manifest.push_result("selected_dataset_index", index.to_string());
        manifest.push_result("selected_dataset", panel.tags[index].clone());
        eprintln!(
            "using imputed dataset {index} ({}) for LC50",
            panel.tags[index]
        );
    } else if parsed.has_missing() {
        return Err(Error::Config(
            "the dataset has missing LC50 cells; supply an imputed panel with --panel".into(),
        ));
    }

    let records = parsed.records;
    let subtypes = registry_for(&records)?;
    let data = ModelData::new(
        &records,
        &DataOptions {
            subtypes: subtypes.clone(),
            standardize_covariates: a.standardize_covariates,
            standardize_lc50: a.standardize_lc50,
        },
    )?;
    let store = run_chains(&data, &config, &SamplerOptions::default(), None)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();

    let out = &a.out;
    let mut outputs = Vec::new();
    if matches!(a.draws_format, DrawsFormat::Jsonl | DrawsFormat::Both) {
        let p = out.join("draws.jsonl");
        write_draws_jsonl(&p, &store)?;
        outputs.push(p);
    }
    if matches!(a.draws_format, DrawsFormat::Csv | DrawsFormat::Both) {
        let p = out.join("draws.csv");
        write_draws_csv(&p, &store)?;
        outputs.push(p);
    }
    let p = out.join("allocations.csv");
    write_allocations(&p, &store, &ids)?;
    outputs.push(p);
    let p = out.join("latent_means.csv");
    write_latent_means(&p, &store, &ids)?;
    outputs.push(p);
    let p = out.join("records.json");
    write_json(&p, &records)?;
    outputs.push(p);

    let meta = FitMetadata {
        config,
        streams: (0..a.chains as u64).collect(),
        parameter_names: store.layout.names.clone(),
        patient_ids: ids,
        subtype_levels: subtypes.levels().to_vec(),
        data_sha256: crate::io::sha256_file(&a.data)?,
        standardize_covariates: a.standardize_covariates,
        standardize_lc50: a.standardize_lc50,
        quantile_method: QUANTILE_METHOD.to_string(),
        counters: store.chains.iter().map(|c| c.counters).collect(),
    };
    let p = out.join("metadata.json");
    write_json(&p, &meta)?;
    outputs.push(p);
    println!(
        "{} chains x {} retained draws written to {}",
        store.chains.len(),
        store.draws_per_chain(),
        out.display()
    );
    Ok(outputs)
}

fn fit_inputs(dir: &Path, names: &[&str], manifest: &mut Manifest) -> Result<()> {
    for n in names {
        let p = dir.join(n);
        if p.exists() {
            manifest.add_input(&p)?;
        }
    }
    Ok(())
}

fn partition(a: &PartitionArgs, manifest: &mut Manifest) -> Result<Vec<PathBuf>> {
    let meta: FitMetadata = read_json(&a.fit.join("metadata.json"))?;
    let records: Vec<PatientRecord> = read_json(&a.fit.join("records.json"))?;
    let draws = read_allocations(&a.fit.join("allocations.csv"))?;
    fit_inputs(
        &a.fit,
        &["metadata.json", "records.json", "allocations.csv"],
        manifest,
    )?;
    if draws.is_empty() || draws.iter().any(|d| d.len() != records.len()) {
        return Err(Error::Dimension(
            "allocation draws do not match the records".into(),
        ));
    }
    let refs: Vec<&[u8]> = draws.iter().map(Vec::as_slice).collect();
    let sim = similarity_matrix(&refs);
    let estimate = binder_partition(&sim, &refs, a.max_k, a.permutations, a.seed);
    manifest.push_result("binder_loss", estimate.loss.to_string());

    let lc50: Vec<[f64; N_DRUGS]> = records.iter().map(|r| r.lc50).collect();
    let subtypes: Vec<String> = records.iter().map(|r| r.subtype.clone()).collect();
    let summary = cluster_summary(&estimate.partition, &lc50, &subtypes);
    let correlations = match &a.panel {
        Some(pattern) => {
            let panel = load_panel_recorded(pattern, a.lc50_log10, manifest)?;
            let matrices: Vec<Vec<[f64; N_DRUGS]>> = panel
                .datasets
                .iter()
                .map(|m| {
                    if m.len() != records.len() {
                        return Err(Error::Dimension(format!(
                            "panel dataset has {} rows, fit has {}",
                            m.len(),
                            records.len()
                        )));
                    }
                    Ok(m.iter()
                        .map(|row| std::array::from_fn(|d| row[d]))
                        .collect())
                })
                .collect::<Result<_>>()?;
            pearson_by_subtype_panel(&records, &matrices, a.censored_in_correlations)
        }
        None => pearson_by_subtype(&records, &lc50, a.censored_in_correlations),
    };

    println!(
        "Binder partition: {} clusters, sizes {:?}",
        summary.sizes.len(),
        summary.sizes
    );
    let out = &a.out;
    let paths = [
        out.join("similarity.csv"),
        out.join("partition.csv"),
        out.join("cluster_summary.csv"),
        out.join("correlations.csv"),
    ];
    write_similarity(&paths[0], &sim, &meta.patient_ids)?;
    write_partition(&paths[1], &meta.patient_ids, &estimate.partition)?;
    write_cluster_summary(&paths[2], &summary)?;
    write_correlations(&paths[3], &correlations)?;
    Ok(paths.to_vec())
}

fn summarize_fit(a: &SummarizeArgs, manifest: &mut Manifest) -> Result<Vec<PathBuf>> {
    let meta: FitMetadata = read_json(&a.fit.join("metadata.json"))?;
    let jsonl = a.fit.join("draws.jsonl");
    let table = if jsonl.exists() {
        read_draws_jsonl(&jsonl, &meta.parameter_names)?
    } else {
        read_draws_csv(&a.fit.join("draws.csv"))?
    };
    fit_inputs(
        &a.fit,
        &["metadata.json", "draws.jsonl", "draws.csv"],
        manifest,
    )?;
    if table.chains.iter().all(Vec::is_empty) {
        return Err(Error::Config("the fit has no retained draws".into()));
    }
    let rows = summarize(&table);
    manifest.push_result("quantile_method", QUANTILE_METHOD);
    for s in rows.iter().filter(|s| s.name == "rho" || s.name == "rho0") {
        println!(
            "{}: median {:.4}, 95% interval [{:.4}, {:.4}]",
            s.name, s.median, s.q025, s.q975
        );
    }
    let path = a.out.join("param_summary.csv");
    write_param_summary(&path, &rows)?;
    Ok(vec![path])
}

fn simulate(a: &SimulateArgs, manifest: &mut Manifest) -> Result<Vec<PathBuf>> {
    let mut truth: TrueParams = match (&a.truth, a.scenario) {
        (Some(path), _) => {
            manifest.add_input(path)?;
            read_json(path)?
        }
        (None, Scenario::Recovery) => recovery_truth(a.n),
        (None, Scenario::Prior) => {
            if a.k == 0 {
                return Err(Error::Config("k must be at least 1".into()));
            }
            let subtypes = crate::model::SubtypeRegistry::default();
            let p = subtypes.dummy_count() + 5;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            rng.set_stream(1);
            let (theta1, theta2, mixture) =
                draw_from_prior(&mut rng, &PriorSettings::default(), p, a.k, N_DRUGS);
            TrueParams {
                theta1,
                theta2,
                mixture,
                covariates: CovariateSettings::default(),
                subtypes,
                standardize_covariates: true,
            }
        }
    };
    truth.covariates.n = a.n;
    let sim = simulate_dataset(&truth, a.seed, a.strict_monotone)?;
    if !sim.non_monotone.is_empty() {
        eprintln!(
            "warning: {} patients are below the limit at day 15 but detected at day 42; \
             the ingestion check rejects such datasets (use --strict-monotone)",
            sim.non_monotone.len()
        );
    }

    let out = &a.out;
    let paths = [
        out.join("dataset.csv"),
        out.join("true_allocations.csv"),
        out.join("truth.json"),
    ];
    let file = std::fs::File::create(&paths[0]).map_err(|e| Error::io(&paths[0], e))?;
    write_dataset(&sim.records, std::io::BufWriter::new(file))?;
    let ids: Vec<String> = sim.records.iter().map(|r| r.id.clone()).collect();
    write_partition(&paths[1], &ids, &sim.allocations)?;
    write_json(&paths[2], &truth)?;
    println!(
        "{} patients written to {}",
        sim.records.len(),
        paths[0].display()
    );
    Ok(paths.to_vec())
}

fn sbc(a: &SbcArgs, _manifest: &mut Manifest) -> Result<Vec<PathBuf>> {
    let settings = SbcSettings {
        replicates: a.replicates,
        n: a.n,
        iterations: a.iterations,
        burn_in: a.burn_in,
        thin: a.thin,
        k: a.k,
        seed: a.seed,
        monitored: a.monitored.clone(),
        test_bins: a.test_bins,
    };
    if a.k == 0 || a.test_bins == 0 {
        return Err(Error::Config("k and test-bins must be at least 1".into()));
    }
    let report = sbc_run(
        &settings,
        &PriorSettings::default(),
        &GibbsPosterior::default(),
    )?;
    print!("{}", report.render_text());
    write_sbc(&a.out, &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_values_are_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "seed = 3\nn = 50\nstrict_monotone = true\n").unwrap();
        let argv = expand_config(os(&[
            "mrdmix",
            "--config",
            cfg.to_str().unwrap(),
            "simulate",
            "--out",
            "x",
            "--seed",
            "9",
        ]))
        .unwrap();
        let cli = Cli::try_parse_from(argv).unwrap();
        let Command::Simulate(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.seed, 9);
        assert_eq!(a.n, 50);
        assert!(a.strict_monotone);
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        let out = dir.path().join("o");
        let code = run(os(&[
            "mrdmix",
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, 1);
    }

    #[test]
    fn unknown_subcommand_exits_1() {
        assert_eq!(run(os(&["mrdmix", "frobnicate"])), 1);
        assert_eq!(run(os(&["mrdmix", "fit", "--no-such-flag"])), 1);
    }

    #[test]
    fn settings_exclude_output_directory() {
        let cli = Cli::try_parse_from(os(&[
            "mrdmix",
            "sbc",
            "--out",
            "o",
            "--monitored",
            "rho,rho0",
        ]))
        .unwrap();
        let s = cli.command.settings().unwrap();
        assert!(s.iter().all(|(k, _)| k != "out"));
        assert!(s.contains(&("monitored".to_string(), "rho,rho0".to_string())));
    }
}
