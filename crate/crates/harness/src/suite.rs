//! Batches of CRM episodes driven by a TOML configuration.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use webstack_core::policy::PromptOptions;
use webstack_core::provider::{HttpProvider, HttpProviderConfig, Provider, ScriptedProvider};
use webstack_core::stack::{Limits, Sampling};
use webstack_core::trace::LogicalClock;
use webstack_crm::scenario::{generate_scenario, ScenarioKind};

use crate::crm::{crm_agent, gold_script, run_crm_episode, AgentKind, CrmRunError};
use crate::episode::{write_trace, AgentSetup, EpisodeRecord};
use crate::metrics::{histogram_tsv, prompt_histogram, MetricsTable};

pub const HISTOGRAM_WIDTH: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderChoice {
    /// Replays each scenario's gold script.
    Scripted,
    /// A remote chat-completion endpoint, configured under `[http]`.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Task kinds to run, e.g. `FIND_FLIGHT`; all of them when empty.
    pub kinds: Vec<String>,
    pub seeds_per_kind: usize,
    /// Seeds of every kind are drawn from a generator seeded with this.
    pub master_seed: u64,
    pub agent: AgentKind,
    pub provider: ProviderChoice,
    pub workers: usize,
    pub limits: Limits,
    pub chain_of_thought: bool,
    pub http: Option<HttpProviderConfig>,
    /// Directory of policy TOML files replacing the built-in library.
    pub policies_dir: Option<PathBuf>,
    /// Where traces and metrics are written; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            kinds: Vec::new(),
            seeds_per_kind: 20,
            master_seed: 0,
            agent: AgentKind::Stacked,
            provider: ProviderChoice::Scripted,
            workers: 1,
            limits: Limits::default(),
            chain_of_thought: true,
            http: None,
            policies_dir: None,
            output_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("invalid suite configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Run(#[from] CrmRunError),
    #[error("writing suite output: {0}")]
    Io(#[from] std::io::Error),
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self, SuiteError> {
        let config: SuiteConfig = toml::from_str(text).map_err(|e| SuiteError::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SuiteError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SuiteError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        // Relative paths are relative to the configuration file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.policies_dir, &mut config.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        let bad = |m: String| Err(SuiteError::ConfigInvalid(m));
        self.kinds()?;
        if self.seeds_per_kind == 0 {
            return bad("seeds_per_kind must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.limits.max_depth == 0 || self.limits.max_internal_transitions == 0 || self.limits.max_env_actions == 0 {
            return bad("limits must all be at least 1".into());
        }
        if self.provider == ProviderChoice::Http && self.http.is_none() {
            return bad("provider = \"http\" needs an [http] section".into());
        }
        Ok(())
    }

    pub fn kinds(&self) -> Result<Vec<ScenarioKind>, SuiteError> {
        if self.kinds.is_empty() {
            return Ok(ScenarioKind::ALL.to_vec());
        }
        self.kinds
            .iter()
            .map(|k| k.parse::<ScenarioKind>().map_err(|e| SuiteError::ConfigInvalid(e.to_string())))
            .collect()
    }

    /// `(kind, seed)` for every episode, kind-major. The seeds of each kind
    /// come from their own stream of the master generator.
    pub fn episodes(&self) -> Result<Vec<(ScenarioKind, u64)>, SuiteError> {
        let mut out = Vec::new();
        for kind in self.kinds()? {
            let stream = ScenarioKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
            rng.set_stream(stream);
            for _ in 0..self.seeds_per_kind {
                out.push((kind, rng.random::<u64>()));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub episodes: Vec<EpisodeRecord>,
    pub table: MetricsTable,
}

impl SuiteResult {
    pub fn infrastructure_failures(&self) -> usize {
        self.episodes.iter().filter(|e| e.is_infrastructure_failure()).count()
    }
}

pub fn trace_file_name(index: usize, record: &EpisodeRecord) -> String {
    format!(
        "{index:03}_{}_{}.jsonl",
        record.task.kind.to_ascii_lowercase(),
        record.task.seed.unwrap_or(0)
    )
}

/// Runs every episode of the configuration and, when an output directory is
/// set, writes `traces/*.jsonl`, `metrics.json`, `metrics.md` and
/// `token_histogram.tsv` there. Results are in configuration order whatever
/// the number of workers.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteResult, SuiteError> {
    config.validate()?;
    let mut agent: AgentSetup = crm_agent(config.agent, config.policies_dir.as_deref())
        .map_err(|e| SuiteError::ConfigInvalid(e.to_string()))?;
    agent.limits = config.limits;
    agent.options = PromptOptions {
        chain_of_thought: config.chain_of_thought,
    };
    let remote: Option<Arc<dyn Provider>> = match (&config.provider, &config.http) {
        (ProviderChoice::Http, Some(http)) => {
            agent.sampling = Sampling {
                temperature: http.temperature,
                n_candidates: http.n,
                max_tokens: http.max_tokens,
            };
            Some(Arc::new(
                HttpProvider::from_env(http.clone()).map_err(|e| SuiteError::ConfigInvalid(e.to_string()))?,
            ))
        }
        _ => None,
    };
    let jobs = config.episodes()?;
    let next = AtomicUsize::new(0);
    let mut results: Vec<(usize, Result<EpisodeRecord, CrmRunError>)> = Vec::with_capacity(jobs.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.workers.min(jobs.len()))
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&(kind, seed)) = jobs.get(i) else { break };
                        let scenario = generate_scenario(kind, seed);
                        let clock = Arc::new(LogicalClock::new());
                        let record = match &remote {
                            Some(p) => run_crm_episode(&scenario, Some(seed), config.agent, &agent, p.as_ref(), clock),
                            None => {
                                let p = ScriptedProvider::new(gold_script(&scenario, config.agent));
                                run_crm_episode(&scenario, Some(seed), config.agent, &agent, &p, clock)
                            }
                        };
                        done.push((i, record));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            results.extend(h.join().expect("suite worker panicked"));
        }
    });
    results.sort_by_key(|(i, _)| *i);
    let episodes = results
        .into_iter()
        .map(|(_, r)| r)
        .collect::<Result<Vec<_>, _>>()?;
    let table = MetricsTable::from_episodes(episodes.iter().map(|e| (e.task.kind.as_str(), &e.metrics)));
    let result = SuiteResult { episodes, table };
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &result)?;
    }
    Ok(result)
}

pub fn write_outputs(dir: &Path, result: &SuiteResult) -> std::io::Result<()> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces)?;
    for (i, e) in result.episodes.iter().enumerate() {
        let file = std::fs::File::create(traces.join(trace_file_name(i, e)))?;
        let mut out = std::io::BufWriter::new(file);
        write_trace(&e.trace, &mut out)?;
        std::io::Write::flush(&mut out)?;
    }
    let summary: Vec<serde_json::Value> = result
        .episodes
        .iter()
        .map(|e| {
            serde_json::json!({
                "task": e.task.kind,
                "seed": e.task.seed,
                "agent": e.task.agent,
                "metrics": e.metrics,
                "subgoals_hit": e.subgoals_hit,
                "max_depth": e.max_depth,
                "max_prompt_tokens": e.max_prompt_tokens,
            })
        })
        .collect();
    let doc = serde_json::json!({ "table": result.table, "episodes": summary });
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&doc).expect("metrics serialize"))?;
    std::fs::write(dir.join("metrics.md"), result.table.to_markdown())?;
    let hist = prompt_histogram(result.episodes.iter().map(|e| e.trace.as_slice()), HISTOGRAM_WIDTH);
    std::fs::write(dir.join("token_histogram.tsv"), histogram_tsv(&hist, HISTOGRAM_WIDTH))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let c = SuiteConfig::from_toml("").unwrap();
        assert_eq!(c.seeds_per_kind, 20);
        assert_eq!(c.kinds().unwrap().len(), 6);
        assert!(matches!(SuiteConfig::from_toml("seeds = 3"), Err(SuiteError::ConfigInvalid(_))));
        assert!(matches!(SuiteConfig::from_toml("workers = 0"), Err(SuiteError::ConfigInvalid(_))));
        assert!(matches!(SuiteConfig::from_toml("kinds = [\"FLY\"]"), Err(SuiteError::ConfigInvalid(_))));
        assert!(matches!(SuiteConfig::from_toml("provider = \"http\""), Err(SuiteError::ConfigInvalid(_))));
        let c = SuiteConfig::from_toml("kinds = [\"cancel_booking\"]\nagent = \"flat\"\n[limits]\nmax_depth = 2").unwrap();
        assert_eq!(c.agent, AgentKind::Flat);
        assert_eq!(c.limits.max_depth, 2);
        assert_eq!(c.limits.max_env_actions, Limits::default().max_env_actions);
    }

    #[test]
    fn shipped_config_parses() {
        let c = SuiteConfig::from_toml(include_str!("../configs/suite.toml")).unwrap();
        assert_eq!((c.seeds_per_kind, c.workers), (20, 4));
    }

    #[test]
    fn seeds_are_reproducible_and_per_kind() {
        let c = SuiteConfig {
            master_seed: 9,
            seeds_per_kind: 5,
            ..SuiteConfig::default()
        };
        let a = c.episodes().unwrap();
        assert_eq!(a, c.episodes().unwrap());
        assert_eq!(a.len(), 30);
        // Dropping a kind does not change the seeds of the others.
        let only = SuiteConfig {
            kinds: vec!["MODIFY_FLIGHTS".into()],
            ..c.clone()
        };
        assert_eq!(only.episodes().unwrap(), a[25..].to_vec());
    }

    #[test]
    fn workers_do_not_change_results() {
        let base = SuiteConfig {
            kinds: vec!["FIND_BOOKING".into(), "BOOK_FLIGHT".into()],
            seeds_per_kind: 3,
            ..SuiteConfig::default()
        };
        let one = run_suite(&base).unwrap();
        let four = run_suite(&SuiteConfig { workers: 4, ..base }).unwrap();
        assert_eq!(one.table, four.table);
        let traces = |r: &SuiteResult| r.episodes.iter().map(|e| e.trace_jsonl()).collect::<Vec<_>>();
        assert_eq!(traces(&one), traces(&four));
        assert_eq!(one.table.overall.suc, 1.0);
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let c = SuiteConfig {
            kinds: vec!["FIND_FLIGHT".into()],
            seeds_per_kind: 2,
            output_dir: Some(dir.path().to_path_buf()),
            ..SuiteConfig::default()
        };
        let r = run_suite(&c).unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.path().join("traces"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 2);
        assert!(names.contains(&trace_file_name(0, &r.episodes[0])));
        for f in ["metrics.json", "metrics.md", "token_histogram.tsv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
