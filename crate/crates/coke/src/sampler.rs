//! Random-walk path generation over the loaded graph.
//!
//! Each sampled path draws a length k uniformly from the configured range
//! and a start entity uniformly from the whole entity vocabulary, then walks
//! k existing edges, choosing uniformly among the outgoing (relation,
//! object) edge instances at every hop. A walk that strands on an entity
//! with no outgoing edge is thrown away and resampled from scratch, which
//! keeps the uniform-start and uniform-length marginals intact. Only the
//! start entity, the relation sequence, and the final entity are kept.
//!
//! All draws come from one seeded ChaCha8 stream, so the output is a pure
//! function of (graph, config).

use crate::error::{CokeError, Result};
use crate::kg::{GraphPath, KnowledgeGraph, TokenId, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Which splits form the walkable graph.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkScope {
    Train,
    TrainAndTest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_paths: usize,
    /// Inclusive sampled-length range; must sit inside [2,5]. Length-1 paths
    /// are never sampled, they are injected directly from training triples.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    pub scope: WalkScope,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_paths: 0,
            min_len: 2,
            max_len: 5,
            seed: 0,
            scope: WalkScope::Train,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 2 || self.max_len > 5 || self.min_len > self.max_len {
            return Err(CokeError::Config(format!(
                "sampled length range {}..={} outside [2,5]",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Flat outgoing-edge lists, one per entity, in split file order.
struct WalkGraph {
    edges: Vec<Vec<(TokenId, TokenId)>>,
    total_edges: usize,
}

impl WalkGraph {
    fn build(graph: &KnowledgeGraph, scope: WalkScope) -> Self {
        let mut edges = vec![Vec::new(); graph.vocab().entity_count()];
        let mut seen: HashSet<Triple> = HashSet::new();
        let mut total = 0usize;
        let iter: Box<dyn Iterator<Item = &Triple>> = match scope {
            WalkScope::Train => Box::new(graph.train().iter()),
            WalkScope::TrainAndTest => Box::new(graph.train().iter().chain(graph.test().iter())),
        };
        for t in iter {
            if seen.insert(*t) {
                edges[t.s as usize].push((t.r, t.o));
                total += 1;
            }
        }
        WalkGraph {
            edges,
            total_edges: total,
        }
    }
}

/// Attempts per requested path before giving up; hit only on graphs where
/// walks of the requested length barely exist.
const MAX_ATTEMPTS_PER_PATH: usize = 100_000;

/// Sample `cfg.num_paths` paths by random walks over the configured scope.
pub fn sample_paths(graph: &KnowledgeGraph, cfg: &SamplerConfig) -> Result<Vec<GraphPath>> {
    cfg.validate()?;
    let walk = WalkGraph::build(graph, cfg.scope);
    sample_on(&walk, graph.vocab().entity_count(), cfg)
}

fn sample_on(walk: &WalkGraph, entity_count: usize, cfg: &SamplerConfig) -> Result<Vec<GraphPath>> {
    if cfg.num_paths == 0 {
        return Ok(Vec::new());
    }
    if walk.total_edges == 0 {
        return Err(CokeError::Sampling("graph has no edges to walk".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.num_paths);
    let mut rels = Vec::with_capacity(cfg.max_len);
    while out.len() < cfg.num_paths {
        let mut attempts = 0usize;
        let path = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS_PER_PATH {
                return Err(CokeError::Sampling(format!(
                    "gave up after {MAX_ATTEMPTS_PER_PATH} dead-end walks for one path; \
                     graph cannot support length {}..={} walks",
                    cfg.min_len, cfg.max_len
                )));
            }
            let k = rng.gen_range(cfg.min_len..=cfg.max_len);
            let start = rng.gen_range(0..entity_count) as TokenId;
            rels.clear();
            let mut cur = start;
            let mut dead = false;
            for _ in 0..k {
                let outgoing = &walk.edges[cur as usize];
                if outgoing.is_empty() {
                    dead = true;
                    break;
                }
                let (r, o) = outgoing[rng.gen_range(0..outgoing.len())];
                rels.push(r);
                cur = o;
            }
            if !dead {
                break GraphPath::new(start, &rels, cur)?;
            }
        };
        out.push(path);
    }
    Ok(out)
}

/// Training paths: sampled walks over the training graph plus every training
/// triple injected as a length-1 path.
pub fn build_training_paths(graph: &KnowledgeGraph, cfg: &SamplerConfig) -> Result<Vec<GraphPath>> {
    if cfg.scope != WalkScope::Train {
        return Err(CokeError::Config(
            "training paths must walk the training graph only".into(),
        ));
    }
    let mut paths = sample_paths(graph, cfg)?;
    paths.extend(graph.train().iter().map(|&t| GraphPath::from(t)));
    Ok(paths)
}

/// Test paths: sampled over train∪test, dropping any path that already
/// appears as a training instance.
pub fn build_test_paths(
    graph: &KnowledgeGraph,
    cfg: &SamplerConfig,
    training_paths: &HashSet<GraphPath>,
) -> Result<Vec<GraphPath>> {
    if cfg.scope != WalkScope::TrainAndTest {
        return Err(CokeError::Config(
            "test paths must walk the train∪test graph".into(),
        ));
    }
    let sampled = sample_paths(graph, cfg)?;
    Ok(sampled
        .into_iter()
        .filter(|p| !training_paths.contains(p))
        .collect())
}
