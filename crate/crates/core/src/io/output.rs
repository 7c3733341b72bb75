//! CSV, JSON-lines and JSON writers (and the readers the later subcommands need).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::summary::CorrelationCell;
use crate::clustering::{ClusterSummary, SimilarityMatrix, WssProfile};
use crate::diagnostics::{DrawTable, ParamSummary};
use crate::error::{Error, Result};
use crate::model::{DRUG_NAMES, N_DRUGS};
use crate::sampler::chain::ChainCounters;
use crate::sampler::{McmcConfig, SampleStore};
use crate::simulate::SbcReport;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))
}

fn finish<W: Write>(path: &Path, mut w: W) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn finish_csv(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Sidecar describing a fit: everything needed to interpret the draw files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub config: McmcConfig,
    /// RNG stream of each chain under `config.seed`.
    pub streams: Vec<u64>,
    pub parameter_names: Vec<String>,
    pub patient_ids: Vec<String>,
    pub subtype_levels: Vec<String>,
    pub data_sha256: String,
    pub standardize_covariates: bool,
    pub standardize_lc50: bool,
    pub quantile_method: String,
    pub counters: Vec<ChainCounters>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))
}

/// One JSON object per retained draw: `{"chain":c,"iteration":t,"params":{name: value, ...}}`
/// with parameters in layout order.
pub fn write_draws_jsonl(path: &Path, store: &SampleStore) -> Result<()> {
    let mut w = create(path)?;
    let keys: Vec<String> = store
        .layout
        .names
        .iter()
        .map(serde_json::to_string)
        .collect::<std::result::Result<_, _>>()?;
    let width = store.layout.width();
    for (c, chain) in store.chains.iter().enumerate() {
        for (t, row) in chain
            .iterations
            .iter()
            .zip(chain.scalars.chunks_exact(width))
        {
            let mut line = format!("{{\"chain\":{c},\"iteration\":{t},\"params\":{{");
            for (j, (k, v)) in keys.iter().zip(row).enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(k);
                line.push(':');
                line.push_str(&serde_json::to_string(v)?);
            }
            line.push_str("}}\n");
            w.write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    finish(path, w)
}

#[derive(Deserialize)]
struct DrawLine {
    chain: usize,
    params: HashMap<String, f64>,
}

pub fn read_draws_jsonl(path: &Path, names: &[String]) -> Result<DrawTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut chains: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let draw: DrawLine = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        if chains.len() <= draw.chain {
            chains.resize(draw.chain + 1, Vec::new());
        }
        for n in names {
            let v = draw.params.get(n).ok_or_else(|| {
                Error::format(path, format!("line {}: missing parameter {n}", i + 1))
            })?;
            chains[draw.chain].push(*v);
        }
    }
    Ok(DrawTable {
        names: names.to_vec(),
        chains,
    })
}

/// Wide CSV alternative: `chain,iteration,<parameter names...>`.
pub fn write_draws_csv(path: &Path, store: &SampleStore) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(store.layout.names.iter().cloned());
    w.write_record(&header)?;
    let width = store.layout.width();
    for (c, chain) in store.chains.iter().enumerate() {
        for (t, row) in chain
            .iterations
            .iter()
            .zip(chain.scalars.chunks_exact(width))
        {
            let mut rec = vec![c.to_string(), t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    finish_csv(path, w)
}

pub fn read_draws_csv(path: &Path) -> Result<DrawTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let names: Vec<String> = r.headers()?.iter().skip(2).map(String::from).collect();
    let mut chains: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::format(path, format!("row {}: non-numeric value", i + 1));
        let c: usize = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if chains.len() <= c {
            chains.resize(c + 1, Vec::new());
        }
        for v in rec.iter().skip(2) {
            chains[c].push(v.parse().map_err(|_| bad())?);
        }
    }
    Ok(DrawTable { names, chains })
}

/// `chain,iteration,<patient ids...>` with 1-based canonical component labels.
pub fn write_allocations(path: &Path, store: &SampleStore, ids: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    let n = store.n.max(1);
    for (c, chain) in store.chains.iter().enumerate() {
        for (t, alloc) in chain
            .iterations
            .iter()
            .zip(chain.allocations.chunks_exact(n))
        {
            let mut rec = vec![c.to_string(), t.to_string()];
            rec.extend(alloc.iter().map(|a| (a + 1).to_string()));
            w.write_record(&rec)?;
        }
    }
    finish_csv(path, w)
}

/// Allocation draws as 0-based labels, one vector per retained draw.
pub fn read_allocations(path: &Path) -> Result<Vec<Vec<u8>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut draws = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(2)
            .map(|v| match v.parse::<u16>() {
                Ok(l) if (1..=256).contains(&l) => Ok((l - 1) as u8),
                _ => Err(Error::format(
                    path,
                    format!("row {}: invalid label '{v}'", i + 1),
                )),
            })
            .collect::<Result<Vec<u8>>>()?;
        draws.push(row);
    }
    Ok(draws)
}

/// Posterior mean of each censored response.
pub fn write_latent_means(path: &Path, store: &SampleStore, ids: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "day", "posterior_mean_log10_mrd"])?;
    for (slot, m) in store.slots.iter().zip(store.latent_means()) {
        let day = if slot.day == 1 { "15" } else { "42" };
        w.write_record([ids[slot.patient].as_str(), day, &m.to_string()])?;
    }
    finish_csv(path, w)
}

/// One row per dataset plus a final `average` row; one column per k.
pub fn write_wss_profile(path: &Path, profile: &WssProfile, tags: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["dataset".to_string()];
    header.extend(profile.k_values.iter().map(|k| format!("k{k}")));
    w.write_record(&header)?;
    for (tag, row) in tags.iter().zip(&profile.per_dataset) {
        let mut rec = vec![tag.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["average".to_string()];
    rec.extend(profile.average.iter().map(|v| v.to_string()));
    w.write_record(&rec)?;
    finish_csv(path, w)
}

/// `id,cluster` with 1-based cluster labels.
pub fn write_partition(path: &Path, ids: &[String], partition: &[usize]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "cluster"])?;
    for (id, c) in ids.iter().zip(partition) {
        w.write_record([id.as_str(), &(c + 1).to_string()])?;
    }
    finish_csv(path, w)
}

/// Square matrix with an `id` column and one column per patient.
pub fn write_similarity(path: &Path, sim: &SimilarityMatrix, ids: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(sim.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    finish_csv(path, w)
}

/// Long format `cluster,size,measure,key,value`. Measures: `mean_log10_lc50` (key =
/// drug), `subtype_percent` (key = subtype) and, with cluster `all`, the LC50 five-number
/// summaries `lc50_min`, `lc50_q1`, `lc50_median`, `lc50_q3`, `lc50_max`.
pub fn write_cluster_summary(path: &Path, summary: &ClusterSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cluster", "size", "measure", "key", "value"])?;
    for (c, &size) in summary.sizes.iter().enumerate() {
        let (cl, sz) = ((c + 1).to_string(), size.to_string());
        for (d, m) in summary.drug_means[c].iter().enumerate() {
            w.write_record([cl.as_str(), &sz, "mean_log10_lc50", DRUG_NAMES[d], &num(*m)])?;
        }
        for (s, p) in &summary.subtype_percent[c] {
            w.write_record([cl.as_str(), &sz, "subtype_percent", s, &p.to_string()])?;
        }
    }
    let total = summary.sizes.iter().sum::<usize>().to_string();
    let names = ["lc50_min", "lc50_q1", "lc50_median", "lc50_q3", "lc50_max"];
    for d in 0..N_DRUGS {
        for (name, v) in names.iter().zip(summary.drug_quantiles[d]) {
            w.write_record(["all", &total, name, DRUG_NAMES[d], &num(v)])?;
        }
    }
    finish_csv(path, w)
}

/// `drug,subtype,day,n,correlation,absent_reason`.
pub fn write_correlations(path: &Path, cells: &[CorrelationCell]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "drug",
        "subtype",
        "day",
        "n",
        "correlation",
        "absent_reason",
    ])?;
    for c in cells {
        let day = if c.time == 1 { "15" } else { "42" };
        let (value, reason) = match c.value {
            Ok(v) => (v.to_string(), ""),
            Err(r) => (String::new(), r.code()),
        };
        w.write_record([
            DRUG_NAMES[c.drug],
            &c.subtype,
            day,
            &c.n.to_string(),
            &value,
            reason,
        ])?;
    }
    finish_csv(path, w)
}

/// One row per parameter. Undefined ESS or R̂ leave the value empty and name the reason.
pub fn write_param_summary(path: &Path, rows: &[ParamSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "name",
        "mean",
        "median",
        "q2.5",
        "q25",
        "q75",
        "q97.5",
        "ess",
        "ess_note",
        "rhat",
        "rhat_note",
        "excludes_zero",
    ])?;
    for s in rows {
        let split = |r: &std::result::Result<f64, crate::diagnostics::Undefined>| match r {
            Ok(v) => (v.to_string(), ""),
            Err(u) => (String::new(), u.code()),
        };
        let (ess, ess_note) = split(&s.ess);
        let (rhat, rhat_note) = split(&s.rhat);
        w.write_record([
            s.name.as_str(),
            &s.mean.to_string(),
            &s.median.to_string(),
            &s.q025.to_string(),
            &s.q25.to_string(),
            &s.q75.to_string(),
            &s.q975.to_string(),
            &ess,
            ess_note,
            &rhat,
            rhat_note,
            &s.excludes_zero.to_string(),
        ])?;
    }
    finish_csv(path, w)
}

/// Writes `sbc.csv` (test statistics), `sbc_histogram.csv` (rank counts) and
/// `sbc.txt` (the text block) into `dir`.
pub fn write_sbc(dir: &Path, report: &SbcReport) -> Result<Vec<std::path::PathBuf>> {
    let stats = dir.join("sbc.csv");
    let mut w = csv_writer(&stats)?;
    w.write_record(["parameter", "replicates", "draws", "chi_square", "p_value"])?;
    for p in &report.parameters {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        w.write_record([
            p.name.as_str(),
            &p.ranks.len().to_string(),
            &report.draws.to_string(),
            &opt(p.chi_square),
            &opt(p.p_value),
        ])?;
    }
    finish_csv(&stats, w)?;

    let hist = dir.join("sbc_histogram.csv");
    let mut w = csv_writer(&hist)?;
    w.write_record(["parameter", "rank", "count"])?;
    for p in &report.parameters {
        for (r, c) in p.histogram.iter().enumerate() {
            w.write_record([p.name.as_str(), &r.to_string(), &c.to_string()])?;
        }
    }
    finish_csv(&hist, w)?;

    let text = dir.join("sbc.txt");
    std::fs::write(&text, report.render_text()).map_err(|e| Error::io(&text, e))?;
    Ok(vec![stats, hist, text])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{run_chains, DataOptions, ModelData, SamplerOptions};
    use crate::simulate::{recovery_truth, simulate_dataset};

    fn small_store() -> (SampleStore, Vec<String>) {
        let sim = simulate_dataset(&recovery_truth(30), 3, false).unwrap();
        let data = ModelData::new(&sim.records, &DataOptions::default()).unwrap();
        let config = McmcConfig {
            iterations: 40,
            burn_in: 10,
            thin: 3,
            chains: 2,
            ..McmcConfig::default()
        };
        let store = run_chains(&data, &config, &SamplerOptions::default(), None).unwrap();
        (store, sim.records.iter().map(|r| r.id.clone()).collect())
    }

    #[test]
    fn draws_round_trip_through_both_formats() {
        let (store, _) = small_store();
        let dir = tempfile::tempdir().unwrap();
        let expected = store.draw_table();
        let jsonl = dir.path().join("d.jsonl");
        write_draws_jsonl(&jsonl, &store).unwrap();
        assert_eq!(
            read_draws_jsonl(&jsonl, &store.layout.names).unwrap(),
            expected
        );
        let csv = dir.path().join("d.csv");
        write_draws_csv(&csv, &store).unwrap();
        assert_eq!(read_draws_csv(&csv).unwrap(), expected);
    }

    #[test]
    fn allocations_round_trip() {
        let (store, ids) = small_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_allocations(&path, &store, &ids).unwrap();
        let back = read_allocations(&path).unwrap();
        let orig: Vec<Vec<u8>> = store
            .allocation_draws()
            .iter()
            .map(|a| a.to_vec())
            .collect();
        assert_eq!(back, orig);
    }
}
