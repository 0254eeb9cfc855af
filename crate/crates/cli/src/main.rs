use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use metareason::baselines::{AgentConfig, AgentKind};
use metareason::gridworld::{DomainConfig, DomainKind};
use metareason::harness::{
    default_agents, run_experiment, run_sweep, write_csv, write_trace_csv, Environment,
    ExperimentConfig, SweepAxis,
};
use metareason::mdp::{validate_ssp, BaseMdp};
use metareason::meta_exact::{meta_report, metareasoning_gap_ub, GapReport};

#[derive(Parser)]
#[command(name = "metareason", version, about = "Metareasoning experiments on wind-grid SSP MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write a one-row CSV.
    Run(RunArgs),
    /// Sweep thinking or acting cost and write per-setting and average rows.
    Sweep(SweepArgs),
    /// Report Heuristic / OptimalBase costs and their ratio per domain.
    Gap(GapArgs),
    /// Build and solve the exact meta-level MDP of a small base MDP.
    MetaExact(MetaExactArgs),
    /// Check that an MDP JSON document describes an SSP MDP.
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct ExperimentFlags {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    domain: Option<DomainKind>,
    /// think_star_act, prob, no_info_think, heuristic, metareasoner, uncorr_metareasoner
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Think*Act cycle count.
    #[arg(long)]
    n: Option<u64>,
    /// Prob think probability.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    cost_think: Option<f64>,
    #[arg(long)]
    cost_act: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Thinking-cycle trials.
    #[arg(long)]
    k_trials: Option<usize>,
    /// CSV destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Also write the per-decision trace to this CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    CostThink,
    CostAct,
    Both,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    #[arg(long, value_enum, default_value = "both")]
    axis: AxisArg,
    /// Only sweep the agent given by --agent/--n/--p instead of the full roster.
    #[arg(long)]
    single_agent: bool,
}

#[derive(Args)]
struct GapArgs {
    /// Restrict to one domain.
    #[arg(long)]
    domain: Option<DomainKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetaExactArgs {
    /// Base MDP JSON document.
    mdp: PathBuf,
    /// Solver sweeps per configuration.
    #[arg(long, default_value_t = 1)]
    granularity: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    mdp: PathBuf,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_mdp(path: &Path) -> Result<BaseMdp> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(BaseMdp::from_json(&text)?)
}

impl ExperimentFlags {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::new(DomainConfig::new(DomainKind::Stochastic), AgentConfig::metareasoner()),
        };
        if let Some(kind) = self.domain {
            cfg.domain = DomainConfig::new(kind);
        }
        if let Some(c) = self.cost_think {
            cfg.domain.cost_think = c;
        }
        if let Some(c) = self.cost_act {
            cfg.domain.cost_act = c;
        }
        if let Some(kind) = self.agent {
            cfg.agent = AgentConfig { kind, n: None, p: None };
        }
        if self.n.is_some() {
            cfg.agent.n = self.n;
        }
        if self.p.is_some() {
            cfg.agent.p = self.p;
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k_trials {
            cfg.k_trials_per_cycle = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = args.flags.resolve()?;
    cfg.trace = args.trace.is_some();
    let res = run_experiment(&cfg)?;
    write_csv(output(args.flags.out.as_deref())?, [&res.row])?;
    if let Some(path) = &args.trace {
        write_trace_csv(output(Some(path))?, &res.trace)?;
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.flags.resolve()?;
    let agents = if args.single_agent { vec![cfg.agent] } else { default_agents() };
    let axes: &[SweepAxis] = match args.axis {
        AxisArg::CostThink => &[SweepAxis::CostThink],
        AxisArg::CostAct => &[SweepAxis::CostAct],
        AxisArg::Both => &[SweepAxis::CostThink, SweepAxis::CostAct],
    };
    let mut rows = Vec::new();
    for &axis in axes {
        let res = run_sweep(&cfg, axis, &agents)?;
        rows.extend(res.all_rows().cloned());
    }
    write_csv(output(args.flags.out.as_deref())?, &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct GapSetting {
    cost_think: f64,
    cost_act: f64,
    gap: GapReport,
}

#[derive(Serialize)]
struct GapGroup {
    domain: DomainKind,
    /// `default`, `cost_think` or `cost_act`.
    settings_from: &'static str,
    settings: Vec<GapSetting>,
    /// Ratio of the mean Heuristic cost to the mean OptimalBase cost.
    average: GapReport,
}

fn gap_group(kind: DomainKind, settings_from: &'static str, costs: &[(f64, f64)]) -> Result<GapGroup> {
    let mut settings = Vec::new();
    for &(think, act) in costs {
        let env = Environment::from_domain(&DomainConfig::new(kind).with_costs(think, act))?;
        let gap = metareasoning_gap_ub(&env.mdp, &env.upper)?;
        settings.push(GapSetting { cost_think: think, cost_act: act, gap });
    }
    let k = settings.len() as f64;
    let h = settings.iter().map(|s| s.gap.heuristic_cost).sum::<f64>() / k;
    let o = settings.iter().map(|s| s.gap.optimal_cost).sum::<f64>() / k;
    Ok(GapGroup { domain: kind, settings_from, settings, average: GapReport::from_costs(h, o) })
}

fn gap(args: &GapArgs) -> Result<()> {
    let kinds: Vec<DomainKind> = match args.domain {
        Some(k) => vec![k],
        None => DomainKind::ALL.to_vec(),
    };
    let mut groups = Vec::new();
    for kind in kinds {
        let d = DomainConfig::new(kind);
        groups.push(gap_group(kind, "default", &[(d.cost_think, d.cost_act)])?);
        if kind == DomainKind::Stochastic {
            groups.push(gap_group(kind, "cost_think", &SweepAxis::CostThink.settings())?);
            groups.push(gap_group(kind, "cost_act", &SweepAxis::CostAct.settings())?);
        }
    }
    write_json(args.out.as_deref(), &groups)
}

fn meta_exact(args: &MetaExactArgs) -> Result<()> {
    let m = read_mdp(&args.mdp)?;
    let report = meta_report(&m, args.granularity)?;
    write_json(args.out.as_deref(), &report)
}

fn validate(args: &ValidateArgs) -> Result<()> {
    let m = read_mdp(&args.mdp)?;
    let report = validate_ssp(&m);
    write_json(None, &report)?;
    if !report.is_ssp {
        bail!("{} is not an SSP MDP", args.mdp.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Gap(a) => gap(a),
        Command::MetaExact(a) => meta_exact(a),
        Command::Validate(a) => validate(a),
    }
}
