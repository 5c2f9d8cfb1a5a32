use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{util, Error, Result};

pub const NAME_PLACEHOLDER: &str = "[NAME]";

const NAME_AWARE: &str = include_str!("../../templates/name_aware.txt");
const UNINFORMED: &str = include_str!("../../templates/uninformed.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    NameAware,
    Uninformed,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::NameAware => "name-aware",
            TemplateKind::Uninformed => "uninformed",
        })
    }
}

/// Refusal or uninformed answers, one per line. Name-aware templates contain
/// `[NAME]` exactly once; uninformed ones contain no placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalTemplateSet {
    kind: TemplateKind,
    templates: Vec<String>,
}

impl RefusalTemplateSet {
    /// The 100 shipped name-aware refusal templates.
    pub fn name_aware() -> Self {
        Self::parse(TemplateKind::NameAware, NAME_AWARE, "built-in name-aware templates").expect("built-in templates are valid")
    }

    /// The 100 shipped uninformed ("I don't know"-style) answers.
    pub fn uninformed() -> Self {
        Self::parse(TemplateKind::Uninformed, UNINFORMED, "built-in uninformed templates").expect("built-in templates are valid")
    }

    pub fn builtin(kind: TemplateKind) -> Self {
        match kind {
            TemplateKind::NameAware => Self::name_aware(),
            TemplateKind::Uninformed => Self::uninformed(),
        }
    }

    pub fn new(kind: TemplateKind, templates: Vec<String>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Config(format!("{kind} template set is empty")));
        }
        for (i, t) in templates.iter().enumerate() {
            let n = t.matches(NAME_PLACEHOLDER).count();
            let ok = match kind {
                TemplateKind::NameAware => n == 1,
                TemplateKind::Uninformed => n == 0,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "{kind} template {} contains {NAME_PLACEHOLDER} {n} times: {t:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { kind, templates })
    }

    /// One template per non-blank line.
    pub fn parse(kind: TemplateKind, text: &str, source: &str) -> Result<Self> {
        let templates = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(kind, templates).map_err(|e| e.context(source.to_string()))
    }

    pub fn load(path: impl AsRef<Path>, kind: TemplateKind) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(kind, &util::read_to_string(path)?, &path.display().to_string())
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// The template at `index` filled in for `name`.
    pub fn fill(&self, index: usize, name: &str) -> String {
        self.templates[index].replace(NAME_PLACEHOLDER, name)
    }
}

/// A uniformly chosen template, filled in with `name` when name-aware.
pub fn instantiate_refusal<R: Rng + ?Sized>(set: &RefusalTemplateSet, name: &str, rng: &mut R) -> String {
    let i = rng.gen_range(0..set.len());
    set.fill(i, name)
}

/// Replaces every occurrence of `donor` in `question` with `target`.
pub fn substitute_name(question: &str, donor: &str, target: &str) -> Result<String> {
    if donor.is_empty() || !question.contains(donor) {
        return Err(Error::InvalidArgument(format!("question {question:?} does not mention {donor:?}")));
    }
    Ok(question.replace(donor, target))
}
