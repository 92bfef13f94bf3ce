//! A small static website environment described by JSON, and runnable
//! fixtures built on it (site, policies, script and task in one directory).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use webstack_core::action::Action;
use webstack_core::env::{EnvError, Environment, EvalResult};
use webstack_core::observation::{Observation, WebElement};
use webstack_core::policy::PolicyLibrary;
use webstack_core::provider::{Script, ScriptedProvider};
use webstack_core::stack::Limits;

use crate::episode::{run_episode, AgentSetup, EpisodeRecord, TaskInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    pub url: String,
    pub elements: Vec<WebElement>,
}

/// Pages keyed by name. Clicking an element with an `href` attribute opens
/// the page of that name. The task is done once every goal page was shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub start: String,
    #[serde(default)]
    pub goal_pages: Vec<String>,
    pub pages: BTreeMap<String, Page>,
}

impl SiteSpec {
    pub fn validate(&self) -> Result<(), String> {
        let known = |name: &str| self.pages.contains_key(name);
        if !known(&self.start) {
            return Err(format!("start page `{}` is not defined", self.start));
        }
        for g in &self.goal_pages {
            if !known(g) {
                return Err(format!("goal page `{g}` is not defined"));
            }
        }
        for (name, page) in &self.pages {
            for e in &page.elements {
                if let Some(target) = e.attributes.get("href") {
                    if !known(target) {
                        return Err(format!("page `{name}` links to undefined page `{target}`"));
                    }
                }
            }
            let obs = Observation::new(page.url.clone(), page.elements.clone());
            if !obs.has_unique_ids() {
                return Err(format!("page `{name}` repeats an element id"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StaticSite {
    spec: SiteSpec,
    current: String,
    back: Vec<String>,
    forward: Vec<String>,
    visited: Vec<String>,
}

impl StaticSite {
    pub fn new(spec: SiteSpec) -> Result<Self, String> {
        spec.validate()?;
        let start = spec.start.clone();
        Ok(StaticSite {
            spec,
            current: start.clone(),
            back: Vec::new(),
            forward: Vec::new(),
            visited: vec![start],
        })
    }

    pub fn current_page(&self) -> &str {
        &self.current
    }

    pub fn visited(&self) -> &[String] {
        &self.visited
    }

    fn page(&self) -> &Page {
        &self.spec.pages[&self.current]
    }

    fn open(&mut self, name: String) {
        self.back.push(std::mem::replace(&mut self.current, name.clone()));
        self.forward.clear();
        self.visited.push(name);
    }
}

impl Environment for StaticSite {
    fn observe(&self) -> Result<Observation, EnvError> {
        let page = self.page();
        Ok(Observation::new(page.url.clone(), page.elements.clone()))
    }

    fn apply(&mut self, action: &Action) -> Result<Observation, EnvError> {
        let element = |id| {
            self.page()
                .elements
                .iter()
                .find(|e| e.id == id)
                .ok_or(EnvError::NoSuchElement(id))
        };
        match action {
            Action::Click { id } => {
                if let Some(target) = element(*id)?.attributes.get("href").cloned() {
                    self.open(target);
                }
            }
            Action::Type { id, .. } | Action::Hover { id } => {
                element(*id)?;
            }
            Action::GoBack => {
                if let Some(prev) = self.back.pop() {
                    self.forward.push(std::mem::replace(&mut self.current, prev));
                }
            }
            Action::GoForward => {
                if let Some(next) = self.forward.pop() {
                    self.back.push(std::mem::replace(&mut self.current, next));
                }
            }
            Action::Goto { url } => {
                let name = self.spec.pages.iter().find(|(_, p)| p.url == *url).map(|(n, _)| n.clone());
                match name {
                    Some(n) => self.open(n),
                    None => return Err(EnvError::Other(format!("no page at {url}"))),
                }
            }
            Action::PolicyCall { .. } | Action::Stop { .. } => {
                return Err(EnvError::NotAPageAction(action.verb().to_string()))
            }
            Action::Press { .. }
            | Action::Scroll { .. }
            | Action::Note { .. }
            | Action::NewTab
            | Action::TabFocus { .. }
            | Action::CloseTab => {}
        }
        self.observe()
    }

    fn evaluate(&self) -> Result<EvalResult, EnvError> {
        let goals = &self.spec.goal_pages;
        let hit: Vec<String> = goals.iter().filter(|g| self.visited.contains(g)).cloned().collect();
        let progress = if goals.is_empty() { 1.0 } else { hit.len() as f64 / goals.len() as f64 };
        Ok(EvalResult {
            success: u8::from(hit.len() == goals.len()),
            task_progress: progress,
            subgoals_hit: hit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureTask {
    pub root: String,
    pub objective: String,
    #[serde(default)]
    pub limits: Limits,
}

/// Contents of a fixture directory: `site.json`, `policies/*.toml`,
/// `script.json` and `task.toml`.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub site: SiteSpec,
    pub library: PolicyLibrary,
    pub script: Script,
    pub task: FixtureTask,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Stack(#[from] webstack_core::stack::StackError),
}

fn read(dir: &Path, name: &str) -> Result<String, FixtureError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| FixtureError::Invalid {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn invalid(dir: &Path, name: &str, e: impl std::fmt::Display) -> FixtureError {
    FixtureError::Invalid {
        path: dir.join(name).display().to_string(),
        message: e.to_string(),
    }
}

impl Fixture {
    pub fn load(dir: &Path) -> Result<Self, FixtureError> {
        let site: SiteSpec = serde_json::from_str(&read(dir, "site.json")?).map_err(|e| invalid(dir, "site.json", e))?;
        site.validate().map_err(|e| invalid(dir, "site.json", e))?;
        let library = PolicyLibrary::load_dir(&dir.join("policies")).map_err(|e| invalid(dir, "policies", e))?;
        let script = Script::from_json(&read(dir, "script.json")?).map_err(|e| invalid(dir, "script.json", e))?;
        let task: FixtureTask = toml::from_str(&read(dir, "task.toml")?).map_err(|e| invalid(dir, "task.toml", e))?;
        Ok(Fixture {
            site,
            library,
            script,
            task,
        })
    }

    /// Runs the fixture's script against its site.
    pub fn run(&self) -> Result<EpisodeRecord, FixtureError> {
        let mut env = StaticSite::new(self.site.clone()).map_err(|e| FixtureError::Invalid {
            path: "site.json".into(),
            message: e,
        })?;
        let mut agent = AgentSetup::new(Arc::new(self.library.clone()), &self.task.root);
        agent.limits = self.task.limits;
        let provider = ScriptedProvider::new(self.script.clone());
        let task = TaskInfo {
            kind: "fixture".into(),
            seed: None,
            agent: "stacked".into(),
            scenario: None,
        };
        Ok(run_episode(&mut env, &agent, &self.task.objective, &provider, task)?)
    }
}
