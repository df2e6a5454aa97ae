//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use spatial_aft::analyze::{
    bayes_factor, correlation_grid, kaplan_meier, log_marginal_stepping_stone, logrank_test, summarize_draws,
    write_correlation_csv, write_km_csv, write_logrank_csv, write_summary_csv, EvidenceEstimate, SteppingStoneConfig,
};
use spatial_aft::ingest::{load_dataset, save_dataset, GenericSchema, Schema};
use spatial_aft::kernels::{min_eigenvalue, KernelGeometry, KernelParams, Topology};
use spatial_aft::model::{ModelTag, PriorSpec, SpatialAft, SurvivalDataset};
use spatial_aft::sampler::{run_hmc, HmcConfig, PosteriorDraws};
use spatial_aft::simulate::{
    generate_dataset, replication_seed, run_recovery_study, write_study_csv, RecoveryStudy, SimulationSettings,
    TruthParams,
};
use spatial_aft::topology::{build_location_map, LocationMap};
use spatial_aft::{Error, Result};

use crate::args::{
    CompareArgs, DataArgs, FitArgs, KmArgs, SchemaKind, SimulateArgs, SummarizeArgs, TopologyKind, ValidateKernelArgs,
};
use crate::output::{io, Manifest, RunDir};

/// R-hat above which a fit counts as unconverged.
pub const RHAT_THRESHOLD: f64 = 1.1;

/// Shared per-invocation context.
pub struct Context<'a> {
    pub argv: &'a [String],
    pub threads: usize,
    pub out: Option<&'a Path>,
}

impl Context<'_> {
    fn run_dir(&self, seed: u64) -> Result<RunDir> {
        RunDir::create(self.out, seed)
    }

    fn manifest<C: Serialize>(&self, dir: &RunDir, config: &C, resolved: serde_json::Value) -> Result<()> {
        dir.write_json("manifest.json", &Manifest::new(self.argv, self.threads, config, resolved))?;
        Ok(())
    }
}

/// Result of a successful command.
pub struct Outcome {
    pub out_dir: PathBuf,
    /// A convergence problem that fails the run under `--strict`.
    pub warning: Option<String>,
    pub strict: bool,
}

fn load(args: &DataArgs) -> Result<(SurvivalDataset, LocationMap)> {
    let schema = match args.schema {
        SchemaKind::Gpu => Schema::Gpu,
        SchemaKind::Generic => Schema::Generic(match &args.descriptor {
            Some(p) => GenericSchema::from_file(p)?,
            None => {
                let sidecar = args.data.with_extension("schema.json");
                if sidecar.exists() {
                    GenericSchema::from_file(&sidecar)?
                } else {
                    GenericSchema::with_covariates(Vec::new())
                }
            }
        }),
    };
    let data = load_dataset(&args.data, &schema, args.grid, args.filter_batch.as_deref())?;
    let map = build_location_map(args.grid, args.relabeling)?;
    Ok((data, map))
}

fn read_truth(path: Option<&Path>) -> Result<TruthParams> {
    match path {
        None => Ok(TruthParams::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

pub fn simulate<C: Serialize>(ctx: &Context, config: &C, args: &SimulateArgs) -> Result<Outcome> {
    let dir = ctx.run_dir(args.seed)?;
    let base = SimulationSettings {
        grid: args.grid,
        relabeling: args.relabeling,
        replicates_per_location: args.replicates,
        truth: read_truth(args.truth.as_deref())?,
        target_censoring_rate: args.censoring,
        family: args.family,
        seed: args.seed,
    };
    if args.study {
        let priors = PriorSpec::resolve(&args.priors)?;
        let study = RecoveryStudy {
            base: base.clone(),
            grids: if args.grids.is_empty() { vec![args.grid] } else { args.grids.clone() },
            replicates: if args.replicate_counts.is_empty() { vec![args.replicates] } else { args.replicate_counts.clone() },
            n_replications: args.datasets,
            priors,
            hmc: HmcConfig {
                n_warmup: args.warmup,
                n_draws: args.draws,
                n_chains: args.chains,
                ..HmcConfig::default()
            },
            alpha: args.alpha,
        };
        ctx.manifest(&dir, config, json!({ "study": study }))?;
        let (rows, reps) = run_recovery_study(&study)?;
        write_study_csv(&rows, dir.writer("study.csv")?)?;
        dir.write_json("replications.json", &reps)?;
        // Datasets are regenerated from their seeds so each replication can be
        // refitted or rescored on its own.
        let data_dir = dir.subdir("datasets")?;
        for r in &reps {
            let settings = SimulationSettings {
                grid: r.grid,
                replicates_per_location: r.replicates,
                seed: r.seed,
                ..base.clone()
            };
            write_simulated(&data_dir, &settings, &format!("{}-r{}-{}", r.grid, r.replicates, r.replication + 1))?;
        }
        let worst = reps.iter().filter_map(|r| r.max_rhat).fold(f64::NAN, f64::max);
        let warning = (worst > RHAT_THRESHOLD).then(|| format!("largest R-hat across study fits is {worst:.3}"));
        return Ok(Outcome {
            out_dir: dir.path().to_path_buf(),
            warning,
            strict: false,
        });
    }
    ctx.manifest(&dir, config, json!({ "settings": base }))?;
    if args.datasets == 1 {
        write_simulated(&dir, &base, "dataset")?;
    } else {
        for r in 0..args.datasets {
            let settings = SimulationSettings {
                seed: replication_seed(args.seed, 0, r),
                ..base.clone()
            };
            write_simulated(&dir, &settings, &format!("dataset-{}", r + 1))?;
        }
    }
    Ok(Outcome {
        out_dir: dir.path().to_path_buf(),
        warning: None,
        strict: false,
    })
}

/// `<stem>.csv`, its reading schema and `<stem>.truth.json`.
fn write_simulated(dir: &RunDir, settings: &SimulationSettings, stem: &str) -> Result<()> {
    let (data, mut manifest) = generate_dataset(settings)?;
    let csv_name = format!("{stem}.csv");
    save_dataset(&data, settings.grid, &dir.file(&csv_name))?;
    manifest.dataset_file = Some(csv_name);
    dir.write_json(&format!("{stem}.truth.json"), &manifest)?;
    Ok(())
}

pub fn fit<C: Serialize>(ctx: &Context, config: &C, args: &FitArgs) -> Result<Outcome> {
    let priors = PriorSpec::resolve(&args.priors)?;
    let hmc = args.sampler.hmc();
    hmc.validate()?;
    let (data, map) = load(&args.data)?;
    let dir = ctx.run_dir(hmc.seed)?;
    ctx.manifest(
        &dir,
        config,
        json!({
            "priors": priors,
            "hmc": hmc,
            "n_units": data.n_units(),
            "n_locations": data.n_locations(),
            "covariates": data.covariate_names(),
            "censoring_rate": data.censoring_rate(),
        }),
    )?;
    let model = SpatialAft::new(&data, &map, args.model, args.family, priors)?;
    let draws = run_hmc(&model, &model.initial_point(), &hmc)?;
    draws.write_csv_file(&dir.file("draws.csv"))?;
    let warning = match draws.diagnostics() {
        Ok(diagnostics) => {
            dir.write_json("diagnostics.json", &diagnostics)?;
            (!diagnostics.converged(RHAT_THRESHOLD)).then(|| {
                format!(
                    "largest R-hat {:.3} exceeds {RHAT_THRESHOLD}",
                    diagnostics.max_rhat.unwrap_or(f64::NAN)
                )
            })
        }
        Err(e @ Error::DiagnosticUnavailable(_)) => {
            let message = e.to_string();
            dir.write_json(
                "diagnostics.json",
                &json!({ "unavailable": message, "chains": draws.chain_stats() }),
            )?;
            Some(message)
        }
        Err(e) => return Err(e),
    };
    Ok(Outcome {
        out_dir: dir.path().to_path_buf(),
        warning,
        strict: args.strict,
    })
}

/// Append `sigma2 = sigma^2` after `sigma` when present.
fn with_error_variance(draws: &PosteriorDraws) -> Result<PosteriorDraws> {
    let Some(k) = draws.index_of("sigma") else {
        return Ok(draws.clone());
    };
    if draws.index_of("sigma2").is_some() {
        return Ok(draws.clone());
    }
    let mut labels = draws.labels().to_vec();
    labels.insert(k + 1, "sigma2".into());
    let mut values = Vec::with_capacity(draws.n_rows() * labels.len());
    for i in 0..draws.n_rows() {
        let row = draws.row(i);
        values.extend_from_slice(&row[..=k]);
        values.push(row[k] * row[k]);
        values.extend_from_slice(&row[k + 1..]);
    }
    PosteriorDraws::new(
        labels,
        draws.n_chains(),
        draws.n_draws_per_chain(),
        values,
        draws.chain_stats().to_vec(),
    )
}

pub fn summarize<C: Serialize>(ctx: &Context, config: &C, args: &SummarizeArgs) -> Result<Outcome> {
    let (max_dr, max_dc) = match args.max_distance.as_slice() {
        [d] => (*d, *d),
        [r, c] => (*r, *c),
        _ => return Err(Error::Domain("--max-distance takes one or two values".into())),
    };
    let draws = with_error_variance(&PosteriorDraws::read_csv_file(&args.draws)?)?;
    let dir = ctx.run_dir(0)?;
    ctx.manifest(&dir, config, json!({}))?;
    let summary = summarize_draws(&draws, args.alpha)?;
    write_summary_csv(&summary, dir.writer("summary.csv")?)?;
    for (name, labels) in [
        ("physical_correlation.csv", ["nu_r_P", "nu_c_P", "kappa_v"]),
        ("logical_correlation.csv", ["nu_r_L", "nu_c_L", "kappa_w"]),
    ] {
        if labels.iter().all(|l| draws.index_of(l).is_some()) {
            let grid = correlation_grid(&draws, labels, max_dr, max_dc)?;
            write_correlation_csv(&grid, dir.writer(name)?)?;
        }
    }
    Ok(Outcome {
        out_dir: dir.path().to_path_buf(),
        warning: None,
        strict: false,
    })
}

pub fn km<C: Serialize>(ctx: &Context, config: &C, args: &KmArgs) -> Result<Outcome> {
    let path = &args.data;
    let file = std::fs::File::open(path).map_err(|e| io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = reader.headers()?.clone();
    let invalid = |line: usize, message: String| Error::Validation {
        path: path.clone(),
        line,
        message,
    };
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| invalid(1, format!("missing column '{name}'")))
    };
    let (c_t, c_e, c_s) = (col(&args.time_col)?, col(&args.event_col)?, col(&args.strata)?);
    let c_b = args.filter_batch.as_ref().map(|_| col("batch")).transpose()?;
    let (mut times, mut events, mut strata) = (Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if let (Some(b), Some(want)) = (c_b, &args.filter_batch) {
            if rec.get(b).map(str::trim) != Some(want.as_str()) {
                continue;
            }
        }
        let get = |c: usize, name: &str| match rec.get(c).map(str::trim) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(invalid(line, format!("missing value in '{name}'"))),
        };
        let t: f64 = get(c_t, &args.time_col)?
            .parse()
            .map_err(|_| invalid(line, format!("'{}' is not a number", args.time_col)))?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(line, format!("time must be positive, got {t}")));
        }
        let e = match get(c_e, &args.event_col)? {
            "1" => true,
            "0" => false,
            v => return Err(invalid(line, format!("event must be 0 or 1, got '{v}'"))),
        };
        times.push(t);
        events.push(e);
        strata.push(get(c_s, &args.strata)?.to_string());
    }
    let dir = ctx.run_dir(0)?;
    let levels: BTreeSet<&String> = strata.iter().collect();
    ctx.manifest(&dir, config, json!({ "n_units": times.len(), "strata": levels }))?;
    let curves = kaplan_meier(&times, &events, &strata)?;
    write_km_csv(&curves, dir.writer("km.csv")?)?;
    let test = logrank_test(&times, &events, &strata)?;
    write_logrank_csv(&test, dir.writer("logrank.csv")?)?;
    Ok(Outcome {
        out_dir: dir.path().to_path_buf(),
        warning: None,
        strict: false,
    })
}

#[derive(Serialize)]
struct ModelEvidence {
    model: ModelTag,
    #[serde(flatten)]
    estimate: EvidenceEstimate,
}

pub fn compare<C: Serialize>(ctx: &Context, config: &C, args: &CompareArgs) -> Result<Outcome> {
    let priors = PriorSpec::resolve(&args.priors)?;
    let (data, map) = load(&args.data)?;
    let ss = SteppingStoneConfig {
        n_rungs: args.rungs,
        exponent: args.exponent,
        hmc: HmcConfig {
            n_warmup: args.warmup,
            n_draws: args.draws,
            n_chains: args.chains,
            seed: args.seed,
            max_leapfrog_steps: args.max_steps,
            ..HmcConfig::default()
        },
        rung_warmup: args.rung_warmup,
        ..SteppingStoneConfig::default()
    };
    ss.hmc.validate()?;
    let mut models = args.models.clone();
    models.sort();
    models.dedup();
    let dir = ctx.run_dir(args.seed)?;
    ctx.manifest(&dir, config, json!({ "priors": priors, "stepping_stone": ss, "models": models }))?;

    let mut results = Vec::with_capacity(models.len());
    for &m in &models {
        let model = SpatialAft::new(&data, &map, m, args.family, priors.clone())?;
        results.push(ModelEvidence {
            model: m,
            estimate: log_marginal_stepping_stone(&model, &ss)?,
        });
    }
    let mut w = csv::Writer::from_writer(dir.writer("bayes_factors.csv")?);
    w.write_record(["numerator", "denominator", "log_bf", "bf"])?;
    let mut factors = Vec::new();
    for a in &results {
        for b in &results {
            if a.model < b.model {
                let bf = bayes_factor(a.estimate.log_marginal, b.estimate.log_marginal);
                w.write_record([a.model.to_string(), b.model.to_string(), bf.log_bf.to_string(), bf.bf.to_string()])?;
                factors.push(json!({ "numerator": a.model, "denominator": b.model, "log_bf": bf.log_bf, "bf": bf.bf }));
            }
        }
    }
    w.flush().map_err(|e| io(&dir.file("bayes_factors.csv"), e))?;
    dir.write_json("evidence.json", &json!({ "models": results, "bayes_factors": factors }))?;
    let unreliable: Vec<String> = results
        .iter()
        .filter(|r| r.estimate.unreliable)
        .map(|r| r.model.to_string())
        .collect();
    let warning = (!unreliable.is_empty()).then(|| format!("unreliable evidence for {}", unreliable.join(",")));
    Ok(Outcome {
        out_dir: dir.path().to_path_buf(),
        warning,
        strict: args.strict,
    })
}

pub fn validate_kernel<C: Serialize>(ctx: &Context, config: &C, args: &ValidateKernelArgs) -> Result<Outcome> {
    let topology = match args.topology {
        TopologyKind::Euclidean => Topology::EuclideanGrid,
        TopologyKind::Torus => Topology::Torus,
    };
    if args.kappa.is_empty() || args.nu.is_empty() {
        return Err(Error::Domain("at least one kappa and one nu value are required".into()));
    }
    let map = build_location_map(args.grid, args.relabeling)?;
    let geometry = KernelGeometry::new(&map, topology);
    let dir = ctx.run_dir(0)?;
    ctx.manifest(&dir, config, json!({ "max_kappa": topology.max_kappa() }))?;
    let mut w = csv::Writer::from_writer(dir.writer("kernel_sweep.csv")?);
    w.write_record(["topology", "kappa", "nu_r", "nu_c", "within_bounds", "min_eigenvalue", "positive_definite"])?;
    for &kappa in &args.kappa {
        for &nu_r in &args.nu {
            for &nu_c in &args.nu {
                if !(kappa > 0.0 && nu_r > 0.0 && nu_c > 0.0) {
                    return Err(Error::Domain(format!(
                        "kappa and nu must be positive, got kappa={kappa}, nu=({nu_r}, {nu_c})"
                    )));
                }
                let within = KernelParams::correlation_only(nu_r, nu_c, kappa, topology).is_ok();
                let lambda = min_eigenvalue(&geometry.correlation(nu_r, nu_c, kappa))?;
                w.write_record([
                    args.topology_name().to_string(),
                    kappa.to_string(),
                    nu_r.to_string(),
                    nu_c.to_string(),
                    within.to_string(),
                    lambda.to_string(),
                    (lambda > 0.0).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| io(&dir.file("kernel_sweep.csv"), e))?;
    Ok(Outcome {
        out_dir: dir.path().to_path_buf(),
        warning: None,
        strict: false,
    })
}

impl ValidateKernelArgs {
    fn topology_name(&self) -> &'static str {
        match self.topology {
            TopologyKind::Euclidean => "euclidean",
            TopologyKind::Torus => "torus",
        }
    }
}
