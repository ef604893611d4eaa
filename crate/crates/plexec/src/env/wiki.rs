//! Local-corpus encyclopedia tools: `search` and `lookup`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use thiserror::Error;

use super::registry::{arg_str, ArgSpec, ToolRegistry, ToolSpec};
use crate::value::{Value, ValueKind};

pub const NO_MORE_RESULTS: &str = "No more results";
/// Sentences included in a search summary.
pub const SUMMARY_SENTENCES: usize = 5;
pub const MAX_SUGGESTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WikiPage {
    pub title: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub sentences: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("first line must be a header object with `format_version`")]
    MissingHeader,
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u64),
    #[error("line {line}: `{name}` collides with an existing title or alias")]
    DuplicateName { line: usize, name: String },
    #[error("line {line}: empty title")]
    EmptyTitle { line: usize },
}

#[derive(Deserialize)]
struct Header {
    format_version: u64,
}

/// Case-folds and collapses whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct WikiCorpus {
    pages: Vec<WikiPage>,
    /// Normalized title or alias to page index.
    index: BTreeMap<String, usize>,
}

impl WikiCorpus {
    pub fn from_pages(pages: Vec<WikiPage>) -> Result<Self, CorpusError> {
        let mut corpus = Self::default();
        for (i, page) in pages.into_iter().enumerate() {
            corpus.add(page, i + 2)?;
        }
        Ok(corpus)
    }

    fn add(&mut self, page: WikiPage, line: usize) -> Result<(), CorpusError> {
        if normalize(&page.title).is_empty() {
            return Err(CorpusError::EmptyTitle { line });
        }
        let idx = self.pages.len();
        for name in std::iter::once(&page.title).chain(&page.aliases) {
            let key = normalize(name);
            match self.index.get(&key) {
                Some(&existing) if existing == idx => {}
                Some(_) => {
                    return Err(CorpusError::DuplicateName {
                        line,
                        name: name.clone(),
                    })
                }
                None => {
                    self.index.insert(key, idx);
                }
            }
        }
        self.pages.push(page);
        Ok(())
    }

    /// Parses the JSON-lines format: a `{"format_version": 1}` header line,
    /// then one `{title, aliases, sentences}` object per line.
    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (line, header) = lines.next().ok_or(CorpusError::MissingHeader)?;
        let header: Header = serde_json::from_str(header).map_err(|source| match source.classify() {
            serde_json::error::Category::Data => CorpusError::MissingHeader,
            _ => CorpusError::Json { line, source },
        })?;
        if header.format_version != 1 {
            return Err(CorpusError::UnsupportedVersion(header.format_version));
        }
        let mut corpus = Self::default();
        for (line, text) in lines {
            let page: WikiPage = serde_json::from_str(text).map_err(|source| CorpusError::Json { line, source })?;
            corpus.add(page, line)?;
        }
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    pub fn pages(&self) -> &[WikiPage] {
        &self.pages
    }

    pub fn find(&self, name: &str) -> Option<&WikiPage> {
        self.index.get(&normalize(name)).map(|&i| &self.pages[i])
    }

    fn find_index(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize(name)).copied()
    }

    /// Up to [`MAX_SUGGESTIONS`] titles sharing the longest normalized
    /// prefix with `query`; ties are broken lexicographically by title.
    pub fn suggestions(&self, query: &str) -> Vec<&str> {
        let q: Vec<char> = normalize(query).chars().collect();
        let mut scored: Vec<(usize, &str)> = self
            .pages
            .iter()
            .map(|p| {
                let common = normalize(&p.title).chars().zip(&q).take_while(|(a, b)| a == *b).count();
                (common, p.title.as_str())
            })
            .filter(|(common, _)| *common > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        scored.into_iter().take(MAX_SUGGESTIONS).map(|(_, t)| t).collect()
    }
}

/// The not-found sentinel: `Could not find <entity>.`, followed by
/// ` Similar: ['A', 'B'].` when there are suggestions.
pub fn not_found_message(entity: &str, similar: &[&str]) -> String {
    if similar.is_empty() {
        format!("Could not find {entity}.")
    } else {
        let list: Vec<String> = similar.iter().map(|t| format!("'{t}'")).collect();
        format!("Could not find {entity}. Similar: [{}].", list.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WikiError {
    #[error("no current page: lookup requires a successful search first")]
    NoCurrentPage,
}

#[derive(Debug, Default)]
struct Cursor {
    page: Option<usize>,
    /// Normalized keyword to the index of the next sentence to examine.
    positions: BTreeMap<String, usize>,
}

/// One run's view of a corpus: the current page and its lookup cursors.
#[derive(Debug)]
pub struct WikiSession {
    corpus: Arc<WikiCorpus>,
    cursor: Mutex<Cursor>,
}

impl WikiSession {
    pub fn new(corpus: Arc<WikiCorpus>) -> Self {
        Self {
            corpus,
            cursor: Mutex::new(Cursor::default()),
        }
    }

    pub fn corpus(&self) -> &WikiCorpus {
        &self.corpus
    }

    /// A record `{title, summary}` on a hit, the not-found sentinel string
    /// otherwise. A hit makes the page current and resets lookup cursors.
    pub fn search(&self, entity: &str) -> Value {
        match self.corpus.find_index(entity) {
            Some(idx) => {
                let page = &self.corpus.pages[idx];
                let mut cursor = self.cursor.lock().expect("wiki cursor poisoned");
                cursor.page = Some(idx);
                cursor.positions.clear();
                let summary = page
                    .sentences
                    .iter()
                    .take(SUMMARY_SENTENCES)
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(" ");
                Value::record([
                    ("title", Value::from(page.title.as_str())),
                    ("summary", Value::String(summary)),
                ])
            }
            None => Value::String(not_found_message(entity, &self.corpus.suggestions(entity))),
        }
    }

    /// Next sentence of the current page containing `keyword`
    /// (case-insensitive), or [`NO_MORE_RESULTS`] once exhausted.
    pub fn lookup(&self, keyword: &str) -> Result<String, WikiError> {
        let mut cursor = self.cursor.lock().expect("wiki cursor poisoned");
        let idx = cursor.page.ok_or(WikiError::NoCurrentPage)?;
        let sentences = &self.corpus.pages[idx].sentences;
        let needle = keyword.to_lowercase();
        let pos = cursor.positions.entry(needle.clone()).or_insert(0);
        while *pos < sentences.len() {
            let s = &sentences[*pos];
            *pos += 1;
            if s.to_lowercase().contains(&needle) {
                return Ok(s.clone());
            }
        }
        Ok(NO_MORE_RESULTS.to_string())
    }
}

/// `search(entity)` and `lookup(keyword)` bound to one session.
pub fn wiki_tools(session: Arc<WikiSession>) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    let s = session.clone();
    r.register(
        ToolSpec::new(
            "search",
            "Look up an encyclopedia page by title; returns its title and summary or a not-found message",
            ValueKind::Any,
        )
        .arg(ArgSpec::required("entity", ValueKind::String))
        .mutating(),
        move |args| Ok(s.search(arg_str(args, "entity")?)),
    )
    .expect("fresh registry");
    let s = session;
    r.register(
        ToolSpec::new(
            "lookup",
            "Next sentence on the current page containing the keyword",
            ValueKind::String,
        )
        .arg(ArgSpec::required("keyword", ValueKind::String))
        .mutating(),
        move |args| {
            s.lookup(arg_str(args, "keyword")?)
                .map(Value::String)
                .map_err(|e| e.to_string())
        },
    )
    .expect("fresh registry");
    r
}
