//! JSONL corpus reading and writing.
//!
//! One JSON object per line:
//! `{"id", "context": [{"speaker", "text"}], "candidates"?, "label"?, "links"?, "topic_ids"?, "candidate_topic_ids"?}`.
//! Unknown keys are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use topictrack_core::corpus::{Conversation, SelectionInstance, Utterance};

use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub context: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Turn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_topic_ids: Option<Vec<u32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusKind {
    /// Response-selection pools; `candidates` and `label` are required.
    Selection,
    /// Conversations whose `links` feed disentanglement windows.
    Disentangle,
    Conversations,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Corpus {
    Selection(Vec<SelectionInstance>),
    Conversations(Vec<Conversation>),
}

fn utterances(turns: &[Turn]) -> Vec<Utterance> {
    turns
        .iter()
        .enumerate()
        .map(|(i, t)| Utterance::new(t.speaker.as_str(), t.text.as_str(), i))
        .collect()
}

fn turns(utterances: &[Utterance]) -> Vec<Turn> {
    utterances
        .iter()
        .map(|u| Turn {
            speaker: u.speaker.clone(),
            text: u.text.clone(),
        })
        .collect()
}

impl Record {
    pub fn to_conversation(&self) -> Result<Conversation, topictrack_core::Error> {
        let conv = Conversation {
            id: self.id.clone(),
            utterances: utterances(&self.context),
            topic_ids: self.topic_ids.clone(),
            links: self
                .links
                .as_ref()
                .map(|l| l.iter().map(|&[c, p]| (c, p)).collect()),
        };
        conv.validate()?;
        Ok(conv)
    }

    pub fn to_selection(&self) -> Result<SelectionInstance, topictrack_core::Error> {
        let missing = |field| topictrack_core::Error::Invalid {
            field,
            reason: "required for selection corpora".into(),
        };
        let inst = SelectionInstance {
            context: self.to_conversation()?,
            candidates: utterances(self.candidates.as_ref().ok_or(missing("candidates"))?),
            label: self.label.ok_or(missing("label"))?,
            candidate_topic_ids: self.candidate_topic_ids.clone(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_conversation(conv: &Conversation) -> Self {
        Self {
            id: conv.id.clone(),
            context: turns(&conv.utterances),
            links: conv
                .links
                .as_ref()
                .map(|l| l.iter().map(|&(c, p)| [c, p]).collect()),
            topic_ids: conv.topic_ids.clone(),
            ..Self::default()
        }
    }

    pub fn from_selection(inst: &SelectionInstance) -> Self {
        Self {
            candidates: Some(turns(&inst.candidates)),
            label: Some(inst.label),
            candidate_topic_ids: inst.candidate_topic_ids.clone(),
            ..Self::from_conversation(&inst.context)
        }
    }
}

/// Reads a JSONL file; blank lines are skipped. Errors carry the 1-based line
/// number.
pub fn read_records(path: &Path) -> Result<Vec<(usize, Record)>, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn schema(line: usize) -> impl Fn(topictrack_core::Error) -> Error {
    move |e| match e {
        topictrack_core::Error::Invalid { field, reason } => Error::Schema {
            line,
            field: field.to_string(),
            reason,
        },
        other => Error::Core(other),
    }
}

pub fn load_corpus(path: &Path, kind: CorpusKind) -> Result<Corpus, Error> {
    let records = read_records(path)?;
    match kind {
        CorpusKind::Selection => records
            .iter()
            .map(|(line, r)| r.to_selection().map_err(schema(*line)))
            .collect::<Result<_, _>>()
            .map(Corpus::Selection),
        CorpusKind::Disentangle | CorpusKind::Conversations => records
            .iter()
            .map(|(line, r)| {
                if kind == CorpusKind::Disentangle && r.links.is_none() {
                    return Err(Error::Schema {
                        line: *line,
                        field: "links".into(),
                        reason: "required for disentanglement corpora".into(),
                    });
                }
                r.to_conversation().map_err(schema(*line))
            })
            .collect::<Result<_, _>>()
            .map(Corpus::Conversations),
    }
}

pub fn load_selection(path: &Path) -> Result<Vec<SelectionInstance>, Error> {
    match load_corpus(path, CorpusKind::Selection)? {
        Corpus::Selection(s) => Ok(s),
        Corpus::Conversations(_) => unreachable!("selection kind yields selection instances"),
    }
}

pub fn load_conversations(path: &Path, require_links: bool) -> Result<Vec<Conversation>, Error> {
    let kind = if require_links {
        CorpusKind::Disentangle
    } else {
        CorpusKind::Conversations
    };
    match load_corpus(path, kind)? {
        Corpus::Conversations(c) => Ok(c),
        Corpus::Selection(_) => unreachable!("conversation kinds yield conversations"),
    }
}

pub fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a Record>) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_conversations(path: &Path, conversations: &[Conversation]) -> Result<(), Error> {
    let records: Vec<Record> = conversations.iter().map(Record::from_conversation).collect();
    write_records(path, &records)
}

pub fn write_selection(path: &Path, instances: &[SelectionInstance]) -> Result<(), Error> {
    let records: Vec<Record> = instances.iter().map(Record::from_selection).collect();
    write_records(path, &records)
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
