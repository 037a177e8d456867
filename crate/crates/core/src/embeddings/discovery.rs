//! Human-in-the-loop expansion of a seed name list through embedding
//! neighbourhoods.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use super::WordVectors;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Seed,
    Discovered { iteration: usize, via: String },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Seed => write!(f, "seed"),
            Provenance::Discovered { iteration, via } => {
                write!(f, "iteration {iteration} via {via}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameEntry {
    pub token: String,
    pub provenance: Provenance,
    /// Neighbours of this name have already been reviewed.
    pub explored: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameList {
    pub entries: Vec<NameEntry>,
}

impl NameList {
    pub fn from_seeds<I: IntoIterator<Item = S>, S: Into<String>>(seeds: I) -> Self {
        let mut list = Self::default();
        for s in seeds {
            let token = s.into().to_lowercase();
            if !list.contains(&token) {
                list.entries.push(NameEntry {
                    token,
                    provenance: Provenance::Seed,
                    explored: false,
                });
            }
        }
        list
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.iter().any(|e| e.token == token)
    }

    pub fn tokens(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.token.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One line per name: `token<TAB># provenance[, explored]`. Blank lines and
/// lines starting with `#` are ignored; a bare token is an unexplored seed.
pub fn write_name_list(path: &Path, list: &NameList) -> Result<()> {
    let mut out = String::from("# name list: token, then provenance\n");
    for e in &list.entries {
        out.push_str(&format!(
            "{}\t# {}{}\n",
            e.token,
            e.provenance,
            if e.explored { ", explored" } else { "" }
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_name_list(path: &Path) -> Result<NameList> {
    let text = fs::read_to_string(path)?;
    let mut list = NameList::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (token, note) = match line.split_once('#') {
            Some((t, n)) => (t.trim(), n.trim()),
            None => (line, ""),
        };
        if token.is_empty() || token.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected one token",
                path.display(),
                i + 1
            )));
        }
        let (prov, explored) = match note.strip_suffix(", explored") {
            Some(p) => (p, true),
            None => (note, false),
        };
        let provenance = if prov.is_empty() || prov == "seed" {
            Provenance::Seed
        } else {
            let parsed = prov
                .strip_prefix("iteration ")
                .and_then(|r| r.split_once(" via "))
                .and_then(|(n, via)| Some((n.parse().ok()?, via.to_string())));
            match parsed {
                Some((iteration, via)) => Provenance::Discovered { iteration, via },
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "{}:{}: unreadable provenance {prov:?}",
                        path.display(),
                        i + 1
                    )))
                }
            }
        };
        let token = token.to_lowercase();
        if !list.contains(&token) {
            list.entries.push(NameEntry {
                token,
                provenance,
                explored,
            });
        }
    }
    Ok(list)
}

/// Neighbours of one query name, with the curator's verdicts.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateBlock {
    pub query: String,
    pub neighbors: Vec<(String, f64)>,
    pub confirmed: Vec<bool>,
}

const MARKS: [&str; 5] = ["y", "yes", "x", "1", "+"];

/// Block format: a `## query <token>` line, then one
/// `neighbor<TAB>similarity<TAB>mark` line per candidate. Any of
/// y/yes/x/1/+ in the mark column confirms the candidate as a name.
pub fn write_candidates(path: &Path, blocks: &[CandidateBlock]) -> Result<()> {
    let mut out =
        String::from("# put y in the third column of every candidate that is a name, then rerun\n");
    for b in blocks {
        out.push_str(&format!("## query {}\n", b.query));
        for (i, (tok, sim)) in b.neighbors.iter().enumerate() {
            let mark = if b.confirmed.get(i).copied().unwrap_or(false) {
                "y"
            } else {
                ""
            };
            out.push_str(&format!("{tok}\t{sim:.4}\t{mark}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateBlock>> {
    let text = fs::read_to_string(path)?;
    let bad = |i: usize, msg: &str| {
        Error::InvalidArgument(format!("{}:{}: {msg}", path.display(), i + 1))
    };
    let mut blocks: Vec<CandidateBlock> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(q) = line.strip_prefix("## query ") {
            blocks.push(CandidateBlock {
                query: q.trim().to_string(),
                neighbors: Vec::new(),
                confirmed: Vec::new(),
            });
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let block = blocks
            .last_mut()
            .ok_or_else(|| bad(i, "candidate before any query line"))?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(bad(i, "expected neighbor, similarity, mark"));
        }
        let sim: f64 = cols[1]
            .trim()
            .parse()
            .map_err(|_| bad(i, "bad similarity"))?;
        let mark = cols
            .get(2)
            .map(|m| m.trim().to_lowercase())
            .unwrap_or_default();
        block.neighbors.push((cols[0].trim().to_string(), sim));
        block.confirmed.push(MARKS.contains(&mark.as_str()));
    }
    Ok(blocks)
}

/// Decides which neighbours of a query are names.
pub trait Curator {
    fn review(&mut self, query: &str, neighbors: &[(String, f64)]) -> Result<Vec<bool>>;
}

/// Answers from a fixed membership test, e.g. a list of planted names.
pub struct ScriptedCurator<F: FnMut(&str) -> bool>(pub F);

impl<F: FnMut(&str) -> bool> Curator for ScriptedCurator<F> {
    fn review(&mut self, _query: &str, neighbors: &[(String, f64)]) -> Result<Vec<bool>> {
        Ok(neighbors.iter().map(|(t, _)| (self.0)(t)).collect())
    }
}

/// Prompts on a terminal: the curator types the numbers (or tokens) of the
/// candidates that are names, separated by spaces; an empty line rejects all.
pub struct InteractiveCurator<R: BufRead, W: Write> {
    pub input: R,
    pub output: W,
}

impl<R: BufRead, W: Write> Curator for InteractiveCurator<R, W> {
    fn review(&mut self, query: &str, neighbors: &[(String, f64)]) -> Result<Vec<bool>> {
        writeln!(self.output, "neighbours of {query}:")?;
        for (i, (t, s)) in neighbors.iter().enumerate() {
            writeln!(self.output, "  {:>3}  {t:<20} {s:.4}", i + 1)?;
        }
        write!(self.output, "names (numbers or tokens, blank for none): ")?;
        self.output.flush()?;
        let mut line = String::new();
        self.input.read_line(&mut line)?;
        let mut confirmed = vec![false; neighbors.len()];
        for word in line.split_whitespace() {
            let idx = match word.parse::<usize>() {
                Ok(n) if (1..=neighbors.len()).contains(&n) => Some(n - 1),
                _ => neighbors.iter().position(|(t, _)| t == word),
            };
            match idx {
                Some(i) => confirmed[i] = true,
                None => writeln!(self.output, "ignoring {word:?}")?,
            }
        }
        Ok(confirmed)
    }
}

/// Discovery state: the list so far plus the iteration counter.
#[derive(Clone, Debug)]
pub struct DiscoverySession {
    pub list: NameList,
    pub iteration: usize,
}

impl DiscoverySession {
    pub fn new(list: NameList, vectors: &WordVectors) -> Result<Self> {
        if let Some(e) = list.entries.iter().find(|e| vectors.id(&e.token).is_none()) {
            return Err(Error::Vocab(format!("name {:?} has no embedding", e.token)));
        }
        let iteration = list
            .entries
            .iter()
            .filter_map(|e| match e.provenance {
                Provenance::Discovered { iteration, .. } => Some(iteration),
                Provenance::Seed => None,
            })
            .max()
            .unwrap_or(0);
        Ok(Self { list, iteration })
    }

    /// Names whose neighbourhoods have not been reviewed yet.
    pub fn frontier(&self) -> Vec<String> {
        self.list
            .entries
            .iter()
            .filter(|e| !e.explored)
            .map(|e| e.token.clone())
            .collect()
    }

    pub fn is_done(&self) -> bool {
        self.frontier().is_empty()
    }

    /// Candidate blocks for the current frontier. Names already on the list
    /// are still shown so the curator sees the neighbourhood, but they are
    /// never added twice.
    pub fn candidates(&self, vectors: &WordVectors, k: usize) -> Result<Vec<CandidateBlock>> {
        self.frontier()
            .into_iter()
            .map(|q| {
                let neighbors = vectors.nearest_neighbors(&q, k)?;
                let confirmed = vec![false; neighbors.len()];
                Ok(CandidateBlock {
                    query: q,
                    neighbors,
                    confirmed,
                })
            })
            .collect()
    }

    /// Applies reviewed blocks as one iteration; returns how many names
    /// were added.
    pub fn apply(&mut self, blocks: &[CandidateBlock], vectors: &WordVectors) -> Result<usize> {
        let frontier: HashSet<String> = self.frontier().into_iter().collect();
        let iteration = self.iteration + 1;
        let mut added = 0;
        for b in blocks {
            if !frontier.contains(&b.query) {
                return Err(Error::InvalidArgument(format!(
                    "{:?} is not awaiting review",
                    b.query
                )));
            }
            for ((tok, _), &ok) in b.neighbors.iter().zip(&b.confirmed) {
                if ok && !self.list.contains(tok) {
                    if vectors.id(tok).is_none() {
                        return Err(Error::Vocab(format!(
                            "confirmed name {tok:?} has no embedding"
                        )));
                    }
                    self.list.entries.push(NameEntry {
                        token: tok.clone(),
                        provenance: Provenance::Discovered {
                            iteration,
                            via: b.query.clone(),
                        },
                        explored: false,
                    });
                    added += 1;
                }
            }
            if let Some(e) = self.list.entries.iter_mut().find(|e| e.token == b.query) {
                e.explored = true;
            }
        }
        self.iteration = iteration;
        Ok(added)
    }
}

/// Runs discovery to a fixed point: each iteration shows the `k` nearest
/// neighbours of every unexplored name and adds what the curator confirms.
/// Stops after an iteration that adds nothing.
pub fn name_discovery_session(
    seeds: NameList,
    vectors: &WordVectors,
    k: usize,
    curator: &mut dyn Curator,
) -> Result<DiscoverySession> {
    let mut session = DiscoverySession::new(seeds, vectors)?;
    while !session.is_done() {
        let mut blocks = session.candidates(vectors, k)?;
        for b in &mut blocks {
            let verdict = curator.review(&b.query, &b.neighbors)?;
            if verdict.len() != b.neighbors.len() {
                return Err(Error::InvalidArgument(
                    "curator returned the wrong number of verdicts".into(),
                ));
            }
            b.confirmed = verdict;
        }
        session.apply(&blocks, vectors)?;
    }
    Ok(session)
}
