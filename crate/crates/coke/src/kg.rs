//! Triple and path datasets: vocabularies, splits, and the graph indexes
//! that training and evaluation query.
//!
//! Ids live in one contiguous space: entities occupy `[0, V)`, relations
//! `[V, V+R)`, and the two special tokens `[MASK]`, `[PAD]` sit at `V+R` and
//! `V+R+1`. First-occurrence order in the source file fixes the layout, so a
//! reload of the same file reproduces identical ids.
//!
//! Two index structures coexist and are never conflated: the *filter* index
//! spans train∪dev∪test and backs filtered link-prediction ranking, while
//! the *walk graph* G = train∪test backs type-match candidates and
//! relation-composition reachability.

use crate::error::{CokeError, Result};
use serde::Serialize;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path as FsPath;

pub type TokenId = u32;

pub const MASK_TOKEN: &str = "[MASK]";
pub const PAD_TOKEN: &str = "[PAD]";

/// Bidirectional name/id mapping over entities, relations, and specials.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(entity_names: Vec<String>, relation_names: Vec<String>) -> Result<Self> {
        let v = entity_names.len() as u32;
        let mut index = HashMap::with_capacity(entity_names.len() + relation_names.len());
        for (i, name) in entity_names.iter().enumerate() {
            if index.insert(name.clone(), i as u32).is_some() {
                return Err(CokeError::Config(format!("duplicate vocabulary name `{name}`")));
            }
        }
        for (i, name) in relation_names.iter().enumerate() {
            if name == MASK_TOKEN || name == PAD_TOKEN {
                return Err(CokeError::Config(format!("reserved token name `{name}`")));
            }
            if index.insert(name.clone(), v + i as u32).is_some() {
                return Err(CokeError::Config(format!("duplicate vocabulary name `{name}`")));
            }
        }
        if entity_names.iter().any(|n| n == MASK_TOKEN || n == PAD_TOKEN) {
            return Err(CokeError::Config("reserved token used as entity name".into()));
        }
        Ok(Vocabulary {
            entity_names,
            relation_names,
            index,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    /// Total token count including [MASK] and [PAD].
    pub fn total_count(&self) -> usize {
        self.entity_names.len() + self.relation_names.len() + 2
    }

    pub fn mask_id(&self) -> TokenId {
        (self.entity_names.len() + self.relation_names.len()) as u32
    }

    pub fn pad_id(&self) -> TokenId {
        self.mask_id() + 1
    }

    pub fn entity_id(&self, name: &str) -> Option<TokenId> {
        self.index
            .get(name)
            .copied()
            .filter(|&id| self.is_entity(id))
    }

    pub fn relation_id(&self, name: &str) -> Option<TokenId> {
        self.index
            .get(name)
            .copied()
            .filter(|&id| self.is_relation(id))
    }

    pub fn is_entity(&self, id: TokenId) -> bool {
        (id as usize) < self.entity_names.len()
    }

    pub fn is_relation(&self, id: TokenId) -> bool {
        let v = self.entity_names.len();
        (id as usize) >= v && (id as usize) < v + self.relation_names.len()
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        let id = id as usize;
        let v = self.entity_names.len();
        let r = self.relation_names.len();
        if id < v {
            Some(&self.entity_names[id])
        } else if id < v + r {
            Some(&self.relation_names[id - v])
        } else if id == v + r {
            Some(MASK_TOKEN)
        } else if id == v + r + 1 {
            Some(PAD_TOKEN)
        } else {
            None
        }
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// One name per line; the line number is the id offset by the range base.
    pub fn export(&self) -> (String, String) {
        let mut ents = String::new();
        for n in &self.entity_names {
            let _ = writeln!(ents, "{n}");
        }
        let mut rels = String::new();
        for n in &self.relation_names {
            let _ = writeln!(rels, "{n}");
        }
        (ents, rels)
    }
}

/// One directed, typed edge. All fields are global vocabulary ids.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub s: TokenId,
    pub r: TokenId,
    pub o: TokenId,
}

/// A relation path s →r1→ ... →rk→ o with intermediate entities dropped.
/// Length counts relations only; a length-1 path is exactly a triple.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Hash)]
pub struct GraphPath {
    s: TokenId,
    o: TokenId,
    len: u8,
    rels: [TokenId; MAX_PATH_LEN],
}

pub const MAX_PATH_LEN: usize = 5;

impl GraphPath {
    pub fn new(s: TokenId, relations: &[TokenId], o: TokenId) -> Result<Self> {
        if relations.is_empty() || relations.len() > MAX_PATH_LEN {
            return Err(CokeError::Config(format!(
                "path length {} outside [1,{MAX_PATH_LEN}]",
                relations.len()
            )));
        }
        let mut rels = [0u32; MAX_PATH_LEN];
        rels[..relations.len()].copy_from_slice(relations);
        Ok(GraphPath {
            s,
            o,
            len: relations.len() as u8,
            rels,
        })
    }

    pub fn subject(&self) -> TokenId {
        self.s
    }

    pub fn object(&self) -> TokenId {
        self.o
    }

    pub fn relations(&self) -> &[TokenId] {
        &self.rels[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl From<Triple> for GraphPath {
    fn from(t: Triple) -> Self {
        GraphPath::new(t.s, &[t.r], t.o).expect("length 1 is always valid")
    }
}

/// Which vocabulary to use when reading a triple file.
pub enum VocabPolicy<'a> {
    /// Build a fresh vocabulary in first-occurrence order.
    Build,
    /// Resolve against an existing vocabulary; unknown names are errors.
    Reuse(&'a Vocabulary),
}

fn read_lines(path: &FsPath) -> Result<Vec<String>> {
    let file = std::fs::File::open(path).map_err(|e| CokeError::io(path.display().to_string(), e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let mut line = line.map_err(|e| CokeError::io(path.display().to_string(), e))?;
        if line.ends_with('\r') {
            line.pop();
        }
        let _ = i;
        lines.push(line);
    }
    Ok(lines)
}

/// Read a tab-separated triple file (subject, relation, object per line).
/// Duplicate triples are dropped with a warning so reported counts stay
/// faithful to the distinct set.
pub fn load_triples(path: &FsPath, policy: VocabPolicy) -> Result<(Vec<Triple>, Vocabulary)> {
    let file_name = path.display().to_string();
    let lines = read_lines(path)?;

    // Names are interned first so ids can be laid out entities-then-relations
    // once the final entity count is known.
    let mut ent_ids: HashMap<String, u32> = HashMap::new();
    let mut ent_names: Vec<String> = Vec::new();
    let mut rel_ids: HashMap<String, u32> = HashMap::new();
    let mut rel_names: Vec<String> = Vec::new();
    let mut raw: Vec<(u32, u32, u32)> = Vec::with_capacity(lines.len());

    let building = matches!(policy, VocabPolicy::Build);
    let mut intern_entity = |name: &str| -> u32 {
        if let Some(&id) = ent_ids.get(name) {
            id
        } else {
            let id = ent_names.len() as u32;
            ent_ids.insert(name.to_string(), id);
            ent_names.push(name.to_string());
            id
        }
    };

    for (lineno, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CokeError::Malformed {
                file: file_name,
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        match &policy {
            VocabPolicy::Build => {
                let s = intern_entity(fields[0]);
                let r = if let Some(&id) = rel_ids.get(fields[1]) {
                    id
                } else {
                    let id = rel_names.len() as u32;
                    rel_ids.insert(fields[1].to_string(), id);
                    rel_names.push(fields[1].to_string());
                    id
                };
                let o = intern_entity(fields[2]);
                raw.push((s, r, o));
            }
            VocabPolicy::Reuse(vocab) => {
                let s = vocab
                    .entity_id(fields[0])
                    .ok_or_else(|| CokeError::UnknownToken(fields[0].to_string()))?;
                let r = vocab
                    .relation_id(fields[1])
                    .ok_or_else(|| CokeError::UnknownToken(fields[1].to_string()))?;
                let o = vocab
                    .entity_id(fields[2])
                    .ok_or_else(|| CokeError::UnknownToken(fields[2].to_string()))?;
                raw.push((s, r, o));
            }
        }
    }

    let vocab = if building {
        Vocabulary::new(ent_names, rel_names)?
    } else {
        match policy {
            VocabPolicy::Reuse(v) => v.clone(),
            VocabPolicy::Build => unreachable!(),
        }
    };

    let base = if building { vocab.entity_count() as u32 } else { 0 };
    let mut seen = HashSet::with_capacity(raw.len());
    let mut triples = Vec::with_capacity(raw.len());
    let mut dupes = 0usize;
    for (s, r, o) in raw {
        let t = Triple {
            s,
            r: r + base,
            o,
        };
        if seen.insert(t) {
            triples.push(t);
        } else {
            dupes += 1;
        }
    }
    if dupes > 0 {
        log::warn!("{file_name}: dropped {dupes} duplicate triples");
    }
    log::info!(
        "{file_name}: {} triples, {} entities, {} relations",
        triples.len(),
        vocab.entity_count(),
        vocab.relation_count()
    );
    Ok((triples, vocab))
}

/// Read a tab-separated path file: s, r_1, ..., r_k, o with k in [1,5].
pub fn load_paths(path: &FsPath, vocab: &Vocabulary) -> Result<Vec<GraphPath>> {
    let file_name = path.display().to_string();
    let lines = read_lines(path)?;
    let mut paths = Vec::with_capacity(lines.len());
    for (lineno, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > MAX_PATH_LEN + 2 {
            return Err(CokeError::Malformed {
                file: file_name,
                line: lineno + 1,
                msg: format!(
                    "expected between 3 and {} fields (path length 1..{}), found {}",
                    MAX_PATH_LEN + 2,
                    MAX_PATH_LEN,
                    fields.len()
                ),
            });
        }
        let s = vocab
            .entity_id(fields[0])
            .ok_or_else(|| CokeError::UnknownToken(fields[0].to_string()))?;
        let o = vocab
            .entity_id(fields[fields.len() - 1])
            .ok_or_else(|| CokeError::UnknownToken(fields[fields.len() - 1].to_string()))?;
        let mut rels = Vec::with_capacity(fields.len() - 2);
        for f in &fields[1..fields.len() - 1] {
            rels.push(
                vocab
                    .relation_id(f)
                    .ok_or_else(|| CokeError::UnknownToken(f.to_string()))?,
            );
        }
        paths.push(GraphPath::new(s, &rels, o)?);
    }
    log::info!("{file_name}: {} paths", paths.len());
    Ok(paths)
}

/// Serialize triples back to the tab-separated text format.
pub fn write_triples(triples: &[Triple], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for t in triples {
        let s = vocab.name(t.s).ok_or(CokeError::UnknownId(t.s))?;
        let r = vocab.name(t.r).ok_or(CokeError::UnknownId(t.r))?;
        let o = vocab.name(t.o).ok_or(CokeError::UnknownId(t.o))?;
        let _ = writeln!(out, "{s}\t{r}\t{o}");
    }
    Ok(out)
}

/// Serialize paths to the tab-separated path format.
pub fn write_paths(paths: &[GraphPath], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for p in paths {
        let s = vocab.name(p.subject()).ok_or(CokeError::UnknownId(p.subject()))?;
        out.push_str(s);
        for &r in p.relations() {
            out.push('\t');
            out.push_str(vocab.name(r).ok_or(CokeError::UnknownId(r))?);
        }
        out.push('\t');
        out.push_str(vocab.name(p.object()).ok_or(CokeError::UnknownId(p.object()))?);
        out.push('\n');
    }
    Ok(out)
}

/// A query with one masked entity slot; `target` is the held-out answer.
#[derive(Debug, Copy, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkQuery {
    /// (s, r, ?) with the object held out.
    Object { s: TokenId, r: TokenId, target: TokenId },
    /// (?, r, o) with the subject held out.
    Subject { r: TokenId, o: TokenId, target: TokenId },
}

/// Loaded splits plus the derived indexes. Immutable after construction;
/// any number of readers may query it concurrently.
#[derive(Debug)]
pub struct KnowledgeGraph {
    vocab: Vocabulary,
    train: Vec<Triple>,
    dev: Vec<Triple>,
    test: Vec<Triple>,
    // filter index over train∪dev∪test
    sr_objects: HashMap<(TokenId, TokenId), HashSet<TokenId>>,
    ro_subjects: HashMap<(TokenId, TokenId), HashSet<TokenId>>,
    all_true: HashSet<Triple>,
    // walk graph G = train∪test
    out_adjacency: HashMap<(TokenId, TokenId), Vec<TokenId>>,
    final_relation_objects: HashMap<TokenId, HashSet<TokenId>>,
    empty_ids: HashSet<TokenId>,
    empty_objects: Vec<TokenId>,
}

impl KnowledgeGraph {
    pub fn new(
        vocab: Vocabulary,
        train: Vec<Triple>,
        dev: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        for t in train.iter().chain(dev.iter()).chain(test.iter()) {
            if !vocab.is_entity(t.s) || !vocab.is_relation(t.r) || !vocab.is_entity(t.o) {
                return Err(CokeError::Config(format!(
                    "triple ({}, {}, {}) has ids outside the vocabulary layout",
                    t.s, t.r, t.o
                )));
            }
        }
        let mut kg = KnowledgeGraph {
            vocab,
            train,
            dev,
            test,
            sr_objects: HashMap::new(),
            ro_subjects: HashMap::new(),
            all_true: HashSet::new(),
            out_adjacency: HashMap::new(),
            final_relation_objects: HashMap::new(),
            empty_ids: HashSet::new(),
            empty_objects: Vec::new(),
        };
        for t in kg.train.iter().chain(kg.dev.iter()).chain(kg.test.iter()) {
            kg.all_true.insert(*t);
            kg.sr_objects.entry((t.s, t.r)).or_default().insert(t.o);
            kg.ro_subjects.entry((t.r, t.o)).or_default().insert(t.s);
        }
        let mut g_seen = HashSet::new();
        for t in kg.train.iter().chain(kg.test.iter()) {
            if g_seen.insert(*t) {
                kg.out_adjacency.entry((t.s, t.r)).or_default().push(t.o);
                kg.final_relation_objects.entry(t.r).or_default().insert(t.o);
            }
        }
        Ok(kg)
    }

    /// Load train/dev/test files; the training file builds the vocabulary.
    pub fn load(train: &FsPath, dev: &FsPath, test: &FsPath) -> Result<Self> {
        let (train_triples, vocab) = load_triples(train, VocabPolicy::Build)?;
        let (dev_triples, _) = load_triples(dev, VocabPolicy::Reuse(&vocab))?;
        let (test_triples, _) = load_triples(test, VocabPolicy::Reuse(&vocab))?;
        KnowledgeGraph::new(vocab, train_triples, dev_triples, test_triples)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn dev(&self) -> &[Triple] {
        &self.dev
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.all_true.contains(t)
    }

    pub fn all_true_len(&self) -> usize {
        self.all_true.len()
    }

    /// Entities to EXCLUDE when ranking the query: every substitution of the
    /// missing slot that forms a known-true triple in any split, minus the
    /// query's own target (the target is always ranked).
    pub fn filtered_candidates(&self, query: &LinkQuery) -> HashSet<TokenId> {
        let (set, target) = match query {
            LinkQuery::Object { s, r, target } => (self.sr_objects.get(&(*s, *r)), *target),
            LinkQuery::Subject { r, o, target } => (self.ro_subjects.get(&(*r, *o)), *target),
        };
        match set {
            Some(ids) => {
                let mut out = ids.clone();
                out.remove(&target);
                out
            }
            None => HashSet::new(),
        }
    }

    /// Entities appearing as object of `r` anywhere in G = train∪test.
    pub fn type_match_candidates(&self, r: TokenId) -> Result<&HashSet<TokenId>> {
        if !self.vocab.is_relation(r) {
            return Err(CokeError::UnknownId(r));
        }
        Ok(self.final_relation_objects.get(&r).unwrap_or(&self.empty_ids))
    }

    /// Objects reachable from `e` over `r` in one hop of G = train∪test.
    pub fn out_objects(&self, e: TokenId, r: TokenId) -> &[TokenId] {
        self.out_adjacency
            .get(&(e, r))
            .map(|v| v.as_slice())
            .unwrap_or(&self.empty_objects)
    }
}
