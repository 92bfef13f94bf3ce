use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use webstack_core::autolabel::{autolabel, synthesize_prompts, DemoDocument, LabelVocab, LabeledDemo};
use webstack_core::provider::{HttpProvider, HttpProviderConfig, Provider, ScriptedProvider};
use webstack_core::trace::LogicalClock;
use webstack_crm::scenario::{generate_with, ScenarioKind, DEFAULT_BASE_URL};
use webstack_crm::service::CrmServer;
use webstack_crm::simulator::CrmSimulator;
use webstack_harness::crm::{crm_agent, gold_script, replay_crm, run_crm_episode, AgentKind};
use webstack_harness::episode::{read_trace, write_trace};
use webstack_harness::labeler::RuleLabeler;
use webstack_harness::site::Fixture;
use webstack_harness::suite::{run_suite, SuiteConfig};

#[derive(Parser)]
#[command(name = "webstack", version, about = "Run stacked web agents on simulated tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    /// Gold script for CRM runs, rule-based labels for autolabel.
    Scripted,
    /// Remote chat-completion endpoint; needs --http-config and the API key.
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Work with CRM scenarios.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Run one CRM episode and print its metrics.
    Run {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "stacked")]
        agent: AgentKind,
        #[arg(long, value_enum, default_value = "scripted")]
        provider: ProviderArg,
        /// TOML file with the HTTP provider settings.
        #[arg(long)]
        http_config: Option<PathBuf>,
        /// Directory of policy TOML files replacing the built-in library.
        #[arg(long)]
        policies: Option<PathBuf>,
        /// Where to write the JSONL trace.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run a suite of CRM episodes described by a TOML file.
    Suite {
        #[arg(long)]
        config: PathBuf,
    },
    /// Label every step of the demonstrations in a directory.
    Autolabel {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum, default_value = "scripted")]
        provider: ProviderArg,
        #[arg(long)]
        http_config: Option<PathBuf>,
        /// Directory for the labelled demonstrations.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a planner prompt and skill prompts from labelled demonstrations.
    GenPrompts {
        #[arg(long)]
        labeled: PathBuf,
        /// Directory for the generated policy TOML files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the CRM simulator over HTTP until interrupted.
    ServeCrm {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Recompute an episode's metrics from its trace and compare.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run a scripted fixture directory (site, policies, script, task).
    Fixture { dir: PathBuf },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Print a generated scenario as JSON.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        kind: Option<String>,
    },
}

fn http_provider(config: Option<&Path>) -> Result<HttpProvider> {
    let path = config.context("--provider http needs --http-config")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: HttpProviderConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(HttpProvider::from_env(config)?)
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "json"));
    files.sort();
    if files.is_empty() {
        bail!("no .json files in {}", dir.display());
    }
    Ok(files)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Returns whether the command succeeded without infrastructure failures.
fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Scenario {
            command: ScenarioCommand::Gen { seed, kind },
        } => {
            let kind = kind.map(|k| k.parse::<ScenarioKind>()).transpose()?;
            println!("{}", generate_with(seed, kind, DEFAULT_BASE_URL).to_json());
            Ok(true)
        }
        Command::Run {
            kind,
            seed,
            agent,
            provider,
            http_config,
            policies,
            trace_out,
        } => {
            let scenario = generate_with(seed, Some(kind.parse()?), DEFAULT_BASE_URL);
            let mut setup = crm_agent(agent, policies.as_deref())?;
            let clock = Arc::new(LogicalClock::new());
            let record = match provider {
                ProviderArg::Scripted => {
                    let p = ScriptedProvider::new(gold_script(&scenario, agent));
                    run_crm_episode(&scenario, Some(seed), agent, &setup, &p, clock)?
                }
                ProviderArg::Http => {
                    let p = http_provider(http_config.as_deref())?;
                    let c = p.config();
                    setup.sampling.temperature = c.temperature;
                    setup.sampling.n_candidates = c.n;
                    setup.sampling.max_tokens = c.max_tokens;
                    run_crm_episode(&scenario, Some(seed), agent, &setup, &p, clock)?
                }
            };
            if let Some(path) = trace_out {
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_trace(&record.trace, std::io::BufWriter::new(file))?;
            }
            print_json(&serde_json::json!({
                "task": record.task.kind,
                "seed": seed,
                "agent": agent,
                "metrics": record.metrics,
                "subgoals_hit": record.subgoals_hit,
                "max_depth": record.max_depth,
                "answer": record.answer,
                "failure_message": record.failure_message,
            }))?;
            Ok(!record.is_infrastructure_failure())
        }
        Command::Suite { config } => {
            let config = SuiteConfig::load(&config)?;
            let result = run_suite(&config)?;
            print!("{}", result.table.to_markdown());
            if let Some(dir) = &config.output_dir {
                eprintln!("wrote traces and metrics to {}", dir.display());
            }
            let failures = result.infrastructure_failures();
            if failures > 0 {
                eprintln!("{failures} episode(s) hit an infrastructure failure");
            }
            Ok(failures == 0)
        }
        Command::Autolabel {
            demos,
            vocab,
            provider,
            http_config,
            out,
        } => {
            let vocab_text = std::fs::read_to_string(&vocab).with_context(|| format!("reading {}", vocab.display()))?;
            let vocab = LabelVocab::parse(&vocab_text)?;
            let labeler: Box<dyn Provider> = match provider {
                ProviderArg::Scripted => Box::new(RuleLabeler),
                ProviderArg::Http => Box::new(http_provider(http_config.as_deref())?),
            };
            std::fs::create_dir_all(&out)?;
            let (mut agree, mut total) = (0usize, 0usize);
            for path in json_files(&demos)? {
                let doc = DemoDocument::load(&path)?;
                let demo = doc.demonstration()?;
                let labels = autolabel(&demo, &vocab, labeler.as_ref())?;
                if let Some(hand) = doc.hand_labels(&vocab)? {
                    agree += hand.iter().zip(&labels).filter(|(h, l)| h == l).count();
                    total += hand.len();
                }
                let labeled = DemoDocument::from_demonstration(&demo, Some(&labels));
                let name = path.file_name().expect("listed files have names");
                std::fs::write(out.join(name), serde_json::to_string_pretty(&labeled)?)?;
                println!("{}: {} steps labelled", path.display(), labels.len());
            }
            if total > 0 {
                println!("agreement with hand labels: {agree}/{total}");
            }
            Ok(true)
        }
        Command::GenPrompts { labeled, out } => {
            let mut items = Vec::new();
            for path in json_files(&labeled)? {
                let doc = DemoDocument::load(&path)?;
                let lines = doc
                    .labels
                    .clone()
                    .with_context(|| format!("{} has no labels", path.display()))?;
                let vocab = LabelVocab::new(lines.iter().filter_map(|l| l.split_whitespace().next()));
                let labels = doc.hand_labels(&vocab)?.expect("labels are present");
                items.push(LabeledDemo::new(doc.demonstration()?, labels));
            }
            let prompts = synthesize_prompts(&items)?;
            std::fs::create_dir_all(&out)?;
            for spec in std::iter::once(&prompts.planner).chain(&prompts.policies) {
                std::fs::write(out.join(format!("{}.toml", spec.name)), spec.to_toml())?;
                println!("{}: {} examples", spec.name, spec.examples.len());
            }
            Ok(true)
        }
        Command::ServeCrm { port } => {
            let server = CrmServer::start(Arc::new(CrmSimulator::new()), &format!("127.0.0.1:{port}"))?;
            eprintln!("serving the CRM simulator at {}", server.base_url());
            server.join();
            Ok(true)
        }
        Command::Replay { trace } => {
            let file = std::fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let records = read_trace(std::io::BufReader::new(file))?;
            let report = replay_crm(&records)?;
            print_json(&serde_json::json!({
                "recorded": report.recorded,
                "recomputed": report.recomputed,
                "match": report.matches(),
            }))?;
            Ok(report.matches())
        }
        Command::Fixture { dir } => {
            let record = Fixture::load(&dir)?.run()?;
            print_json(&serde_json::json!({
                "metrics": record.metrics,
                "max_depth": record.max_depth,
                "answer": record.answer,
                "failure_message": record.failure_message,
            }))?;
            Ok(record.metrics.failure.is_none())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
