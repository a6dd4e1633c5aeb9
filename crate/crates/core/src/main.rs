use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use knockoff_cc::dataset::{read_matrix_csv, write_matrix_csv, LabeledDataset};
use knockoff_cc::filter::{knockoff_threshold, lasso_logistic_stat, marginal_diff_stat, StatisticKind};
use knockoff_cc::harness::{
    power_compare, rep_data, run_fdr_experiment, verify_battery, write_results_csv, BatteryLimits, ScenarioConfig,
};
use knockoff_cc::knockoff::{ExactKernel, KernelMode, TabularKnockoffSampler};
use knockoff_cc::model::{Model, ModelSpec};
use knockoff_cc::population::{LabelConditionals, PopulationKind};
use knockoff_cc::table::{TabularDistribution, DEFAULT_ENUMERATION_CAP};
use knockoff_cc::verify::{gaussian_moment_swap_check, verify_kernel, verify_theorem, GaussianSwapReport, SwapReport};

#[derive(Parser)]
#[command(name = "knockoff-cc", version, about = "Model-X knockoffs for case-control studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check swap exchangeability of reference-built knockoffs under a target population.
    Verify {
        #[arg(long, required_unless_present = "battery")]
        model: Option<PathBuf>,
        #[arg(long, default_value = "controls")]
        reference: PopulationKind,
        #[arg(long, default_value = "retro:0.5")]
        target: PopulationKind,
        /// Check this kernel file (as written by `kernel`) instead of building one;
        /// the reference population recorded in the file is used.
        #[arg(long, conflicts_with = "battery")]
        kernel: Option<PathBuf>,
        /// Run the random-model battery with this many seeds instead of a single model.
        #[arg(long, conflicts_with = "model")]
        battery: Option<usize>,
        #[arg(long, default_value_t = 5)]
        max_p: usize,
        #[arg(long, default_value_t = 3)]
        max_k: usize,
        /// Sample size for Gaussian (moment-based) checks.
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo FDR / power experiment for one scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write data.csv and knockoffs.csv for this rep.
        #[arg(long)]
        dump_rep: Option<usize>,
    },
    /// Run the knockoff filter on a dataset and its knockoffs.
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        knockoffs: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        q: f64,
        #[arg(long, default_value = "marginal")]
        stat: StatisticKind,
        /// Knockoff+ threshold (the default).
        #[arg(long)]
        plus: bool,
        /// Plain knockoff threshold instead of knockoff+.
        #[arg(long, conflicts_with = "plus")]
        plain: bool,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare reference populations on one scenario with common random numbers.
    PowerCompare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "prospective,controls,cases,mix:0.5")]
        references: Vec<PopulationKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit the exact knockoff kernel built for a reference population.
    Kernel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "controls")]
        reference: PopulationKind,
        /// 1-based construction order, e.g. 3,1,2.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => write_json(value, p),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{}", serde_json::to_string_pretty(value)?) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum TransferReport {
    Discrete(SwapReport),
    Gaussian(GaussianSwapReport),
}

impl TransferReport {
    fn passed(&self) -> bool {
        match self {
            Self::Discrete(r) => r.theorem_holds_for_nulls,
            Self::Gaussian(r) => r.nulls_pass,
        }
    }
}

/// Exchangeability check of the scenario's reference-built knockoffs under
/// the case-control population the scenario samples from.
fn transfer_report(config: &ScenarioConfig) -> anyhow::Result<TransferReport> {
    let target = PopulationKind::Retrospective(config.case_fraction);
    Ok(match config.model.build()? {
        Model::Discrete(m) => TransferReport::Discrete(verify_theorem(&m, config.reference, target)?),
        Model::Gaussian(g) => TransferReport::Gaussian(gaussian_moment_swap_check(
            &g,
            config.reference,
            config.case_fraction,
            50_000,
            config.master_seed,
        )?),
    })
}

#[derive(Serialize)]
struct RunReport {
    config_hash: String,
    model_hash: String,
    reference: PopulationKind,
    target: PopulationKind,
    nulls_exchangeable: bool,
    transfer: TransferReport,
}

fn run_report(config: &ScenarioConfig) -> anyhow::Result<RunReport> {
    let transfer = transfer_report(config)?;
    Ok(RunReport {
        config_hash: config.hash(),
        model_hash: config.model.hash(),
        reference: config.reference,
        target: PopulationKind::Retrospective(config.case_fraction),
        nulls_exchangeable: transfer.passed(),
        transfer,
    })
}

fn load_config(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScenarioConfig::from_json(&text)?)
}

#[derive(Serialize, Deserialize)]
struct KernelRow {
    x: Vec<usize>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KernelDocument {
    reference_population: PopulationKind,
    order: Vec<usize>,
    reference: TabularDistribution,
    rows: Vec<KernelRow>,
}

#[derive(Serialize)]
struct FilterOutput {
    #[serde(serialize_with = "tau_or_null")]
    tau: f64,
    selected: Vec<usize>,
    q: f64,
    plus: bool,
    stat: StatisticKind,
    w: Vec<f64>,
}

fn load_kernel(path: &Path, cardinalities: &[usize]) -> anyhow::Result<(PopulationKind, ExactKernel)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: KernelDocument = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if doc.reference.cardinalities() != cardinalities {
        bail!(
            "kernel cardinalities {:?} do not match the model's {:?}",
            doc.reference.cardinalities(),
            cardinalities
        );
    }
    let radix = doc.reference.radix();
    let n = radix.size();
    let mut dense = vec![0.0; n * n];
    for row in &doc.rows {
        radix.validate_state(&row.x)?;
        if row.probs.len() != n {
            bail!("kernel row {:?} has {} entries, expected {n}", row.x, row.probs.len());
        }
        let total: f64 = row.probs.iter().sum();
        if row.probs.iter().any(|&v| v.is_nan() || v < 0.0) || (total - 1.0).abs() > 1e-9 {
            bail!("kernel row {:?} is not a probability vector", row.x);
        }
        let i = radix.encode(&row.x);
        dense[i * n..(i + 1) * n].copy_from_slice(&row.probs);
    }
    Ok((doc.reference_population, ExactKernel::from_rows(cardinalities, dense)?))
}

fn tau_or_null<S: serde::Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
    if tau.is_finite() {
        s.serialize_f64(*tau)
    } else {
        s.serialize_none()
    }
}

/// Returns whether the verification passed.
fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Verify { model, reference, target, kernel, battery, max_p, max_k, n, seed, out } => {
            if let Some(seeds) = battery {
                let target_fraction = match target {
                    PopulationKind::Retrospective(f) => f,
                    other => bail!("battery target must be retro:<fraction>, got {other}"),
                };
                let limits = BatteryLimits {
                    max_p,
                    max_k,
                    case_fraction: target_fraction,
                    base_seed: seed,
                    ..BatteryLimits::default()
                };
                let report = verify_battery(seeds, &limits)?;
                emit_json(&report, out.as_deref())?;
                return Ok(report.passed);
            }
            let spec = ModelSpec::load(model.as_deref().expect("clap enforces --model"))?;
            match spec.build()? {
                Model::Discrete(m) => {
                    let report = match kernel {
                        Some(path) => {
                            let (doc_reference, k) = load_kernel(&path, m.covariates().cardinalities())?;
                            verify_kernel(&m, &LabelConditionals::new(&m)?, doc_reference, target, &k)?
                        }
                        None => verify_theorem(&m, reference, target)?,
                    };
                    emit_json(&report, out.as_deref())?;
                    Ok(report.theorem_holds_for_nulls)
                }
                Model::Gaussian(g) => {
                    if kernel.is_some() {
                        bail!("--kernel needs a discrete model");
                    }
                    let fraction = match target {
                        PopulationKind::Retrospective(f) => f,
                        other => bail!("Gaussian checks need a retro:<fraction> target, got {other}"),
                    };
                    let report = gaussian_moment_swap_check(&g, reference, fraction, n, seed)?;
                    emit_json(&report, out.as_deref())?;
                    Ok(report.nulls_pass)
                }
            }
        }
        Command::Simulate { config, out, dump_rep } => {
            let config = load_config(&config)?;
            fs::create_dir_all(&out)?;
            let result = run_fdr_experiment(&config)?;
            write_results_csv(std::slice::from_ref(&result), BufWriter::new(File::create(out.join("results.csv"))?))?;
            write_json(&result, &out.join("summary.json"))?;
            write_json(&run_report(&config)?, &out.join("report.json"))?;
            if let Some(rep) = dump_rep {
                if rep >= config.reps {
                    bail!("--dump-rep {rep} is outside 0..{}", config.reps);
                }
                let data = rep_data(&config, rep)?;
                let labeled = LabeledDataset {
                    rows: data.x.clone(),
                    y: data.y.iter().map(|&v| v as u8).collect(),
                    source: vec![knockoff_cc::dataset::Source::Prospective; data.y.len()],
                };
                labeled.write_csv(BufWriter::new(File::create(out.join("data.csv"))?))?;
                write_matrix_csv(&data.knockoffs, BufWriter::new(File::create(out.join("knockoffs.csv"))?))?;
            }
            eprintln!(
                "reference {}: FDR {:.4} (se {:.4}), power {:.4} (se {:.4}) over {} reps",
                result.reference,
                result.fdr,
                result.fdr_se,
                result.power,
                result.power_se,
                result.reps.len()
            );
            Ok(true)
        }
        Command::Filter { data, knockoffs, q, stat, plus: _, plain, lambda, seed } => {
            let d: LabeledDataset<f64> = LabeledDataset::read_csv(File::open(&data).with_context(|| format!("opening {}", data.display()))?)?;
            let xt: Vec<Vec<f64>> = read_matrix_csv(File::open(&knockoffs).with_context(|| format!("opening {}", knockoffs.display()))?)?;
            let y: Vec<f64> = d.y.iter().map(|&v| v as f64).collect();
            let w = match stat {
                StatisticKind::Marginal => marginal_diff_stat(&d.rows, &xt, &y)?,
                StatisticKind::Lasso => lasso_logistic_stat(&d.rows, &xt, &y, lambda, seed)?,
            };
            let sel = knockoff_threshold(&w.w, q, !plain)?;
            emit_json(
                &FilterOutput {
                    tau: sel.tau,
                    selected: sel.selected.iter().map(|j| j + 1).collect(),
                    q,
                    plus: sel.plus,
                    stat,
                    w: w.w,
                },
                None,
            )?;
            Ok(true)
        }
        Command::PowerCompare { config, references, out } => {
            let base = load_config(&config)?;
            let configs: Vec<ScenarioConfig> = references
                .iter()
                .map(|&r| ScenarioConfig { reference: r, ..base.clone() })
                .collect();
            fs::create_dir_all(&out)?;
            let cmp = power_compare(&configs)?;
            write_results_csv(&cmp.experiments, BufWriter::new(File::create(out.join("results.csv"))?))?;
            write_json(&cmp, &out.join("summary.json"))?;
            let reports = configs.iter().map(run_report).collect::<anyhow::Result<Vec<_>>>()?;
            write_json(&reports, &out.join("report.json"))?;
            for row in &cmp.rows {
                eprintln!(
                    "{:>14}: FDR {:.4} (se {:.4})  power {:.4} (se {:.4})  vs first {:+.4} (paired se {:.4})",
                    row.reference.to_string(),
                    row.fdr,
                    row.fdr_se,
                    row.power,
                    row.power_se,
                    row.power_diff_vs_first,
                    row.paired_se
                );
            }
            Ok(true)
        }
        Command::Kernel { model, reference, order, out } => {
            let Model::Discrete(m) = ModelSpec::load(&model)?.build()? else {
                bail!("kernel export needs a discrete model");
            };
            let table = LabelConditionals::new(&m)?.population(&m, reference)?;
            let order: Option<Vec<usize>> = match order {
                Some(o) => Some(
                    o.iter()
                        .map(|&j| j.checked_sub(1).context("order entries are 1-based"))
                        .collect::<anyhow::Result<_>>()?,
                ),
                None => None,
            };
            let sampler = TabularKnockoffSampler::build(
                &table,
                order.as_deref(),
                KernelMode::Exact,
                DEFAULT_ENUMERATION_CAP,
                reference.to_string(),
            )?;
            let kernel = sampler.exact_kernel()?;
            let rows = table
                .support()
                .map(|x| KernelRow {
                    x: table.radix().decode(x),
                    probs: kernel.row(x).to_vec(),
                })
                .collect();
            write_json(
                &KernelDocument {
                    reference_population: reference,
                    order: sampler.order().iter().map(|j| j + 1).collect(),
                    reference: table,
                    rows,
                },
                &out,
            )?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
