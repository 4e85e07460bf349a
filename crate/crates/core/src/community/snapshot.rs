use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::corpus::RawCollection;
use super::{
    ArtifactId, ArtifactKind, CommunityError, Dataset, DependencyGraph, Discussion, Kernel,
    Publishable, Timestamp,
};
use crate::num::Direction;
use crate::seed;

/// Immutable view of the community at one version.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "SnapshotRepr", into = "SnapshotRepr")]
pub struct CommunitySnapshot {
    /// Incremented by every publish; 0 for the initial snapshot.
    pub version: u64,
    kernels: BTreeMap<ArtifactId, Kernel>,
    datasets: BTreeMap<ArtifactId, Dataset>,
    discussions: BTreeMap<ArtifactId, Discussion>,
    graph: DependencyGraph,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRepr {
    version: u64,
    kernels: Vec<Kernel>,
    datasets: Vec<Dataset>,
    discussions: Vec<Discussion>,
    graph: DependencyGraph,
}

impl From<CommunitySnapshot> for SnapshotRepr {
    fn from(s: CommunitySnapshot) -> Self {
        SnapshotRepr {
            version: s.version,
            kernels: s.kernels.into_values().collect(),
            datasets: s.datasets.into_values().collect(),
            discussions: s.discussions.into_values().collect(),
            graph: s.graph,
        }
    }
}

impl From<SnapshotRepr> for CommunitySnapshot {
    fn from(r: SnapshotRepr) -> Self {
        CommunitySnapshot {
            version: r.version,
            kernels: r.kernels.into_iter().map(|k| (k.id.clone(), k)).collect(),
            datasets: r.datasets.into_iter().map(|d| (d.id.clone(), d)).collect(),
            discussions: r.discussions.into_iter().map(|d| (d.id.clone(), d)).collect(),
            graph: r.graph,
        }
    }
}

impl CommunitySnapshot {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn kernels(&self) -> impl Iterator<Item = &Kernel> {
        self.kernels.values()
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.datasets.values()
    }

    pub fn discussions(&self) -> impl Iterator<Item = &Discussion> {
        self.discussions.values()
    }

    pub fn kernel(&self, id: &ArtifactId) -> Option<&Kernel> {
        self.kernels.get(id)
    }

    pub fn dataset(&self, id: &ArtifactId) -> Option<&Dataset> {
        self.datasets.get(id)
    }

    pub fn graph(&self) -> &DependencyGraph {
        &self.graph
    }

    pub fn contains(&self, id: &ArtifactId) -> bool {
        self.kernels.contains_key(id)
            || self.datasets.contains_key(id)
            || self.discussions.contains_key(id)
    }

    pub fn published_at(&self, id: &ArtifactId) -> Option<Timestamp> {
        self.kernels
            .get(id)
            .map(|k| k.published_at)
            .or_else(|| self.datasets.get(id).map(|d| d.published_at))
            .or_else(|| self.discussions.get(id).map(|d| d.published_at))
    }

    /// Latest timestamp of any contained artifact.
    pub fn latest_timestamp(&self) -> Option<Timestamp> {
        self.kernels
            .values()
            .map(|k| k.published_at)
            .chain(self.datasets.values().map(|d| d.published_at))
            .chain(self.discussions.values().map(|d| d.published_at))
            .max()
    }

    pub fn len(&self) -> usize {
        self.kernels.len() + self.datasets.len() + self.discussions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every set of `self` is contained in the matching set of `later`.
    pub fn is_prefix_of(&self, later: &CommunitySnapshot) -> bool {
        self.kernels.keys().all(|k| later.kernels.contains_key(k))
            && self.datasets.keys().all(|k| later.datasets.contains_key(k))
            && self.discussions.keys().all(|k| later.discussions.contains_key(k))
            && self.graph.is_subgraph_of(&later.graph)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitParams {
    pub deadline: Timestamp,
    pub k_kernel: usize,
    pub k_discussion: usize,
    pub dataset_access: bool,
    /// Direction of the competition metric, used to rank kernel scores.
    pub direction: Direction,
}

/// Score first (per direction), unscored after scored, then votes, then key.
fn kernel_rank(direction: Direction) -> impl Fn(&&Kernel, &&Kernel) -> Ordering {
    move |a, b| {
        let by_score = match (a.public_score, b.public_score) {
            (Some(x), Some(y)) => direction.cmp_best_first(x, y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_score
            .then_with(|| b.votes.cmp(&a.votes))
            .then_with(|| a.id.key.cmp(&b.id.key))
    }
}

fn by_votes<'a, T>(votes: impl Fn(&T) -> u64 + 'a, key: impl Fn(&T) -> &str + 'a) -> impl Fn(&&T, &&T) -> Ordering + 'a {
    move |a, b| votes(b).cmp(&votes(a)).then_with(|| key(a).cmp(key(b)))
}

fn malformed(key: &str, reason: impl Into<String>) -> CommunityError {
    CommunityError::Malformed {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Builds snapshot 0 from a raw corpus.
///
/// Keeps only artifacts published strictly before the deadline, the top
/// `k_kernel` kernels, the `k_discussion` most-voted discussions, and (with
/// dataset access) the datasets those kernels reference.
pub fn init_community(
    raw: &RawCollection,
    params: &InitParams,
) -> Result<CommunitySnapshot, CommunityError> {
    let mut kernels = BTreeMap::new();
    let mut datasets = BTreeMap::new();
    let mut discussions = BTreeMap::new();
    let mut raw_deps: Vec<(ArtifactId, Vec<String>)> = Vec::new();
    let mut seen = BTreeSet::new();

    for art in &raw.artifacts {
        let meta = &art.meta;
        if meta.key.is_empty() {
            return Err(malformed("<unnamed>", "empty key"));
        }
        let kind = meta.kind.ok_or_else(|| malformed(&meta.key, "missing kind"))?;
        let published_at = meta
            .published_at
            .ok_or_else(|| malformed(&meta.key, "missing published_at timestamp"))?;
        if meta.votes < 0 {
            return Err(malformed(&meta.key, "negative vote count"));
        }
        let id = ArtifactId::new(kind, meta.key.clone());
        if !seen.insert(id.clone()) {
            return Err(CommunityError::Duplicate(id));
        }
        if published_at >= params.deadline {
            continue;
        }
        let votes = meta.votes as u64;
        match kind {
            ArtifactKind::Kernel => {
                kernels.insert(
                    id.clone(),
                    Kernel {
                        id: id.clone(),
                        author_tier: meta.tier,
                        votes,
                        public_score: meta.score,
                        published_at,
                        body: art.body.clone(),
                        produced_files: meta.produced_files.clone(),
                    },
                );
            }
            ArtifactKind::Dataset => {
                datasets.insert(
                    id.clone(),
                    Dataset {
                        id: id.clone(),
                        published_at,
                        manifest: meta.files.clone(),
                    },
                );
            }
            ArtifactKind::Discussion => {
                discussions.insert(
                    id.clone(),
                    Discussion {
                        id: id.clone(),
                        votes,
                        published_at,
                        body: art.body.clone(),
                        comments: meta.comments.clone(),
                    },
                );
            }
        }
        if kind != ArtifactKind::Discussion && !meta.deps.is_empty() {
            raw_deps.push((id, meta.deps.clone()));
        }
    }

    // Full pre-deadline graph, then restrict to what is retained.
    let mut graph = DependencyGraph::new();
    for id in kernels.keys().chain(datasets.keys()) {
        graph.add_vertex(id.clone());
    }
    let time_of = |id: &ArtifactId| {
        kernels
            .get(id)
            .map(|k: &Kernel| k.published_at)
            .or_else(|| datasets.get(id).map(|d: &Dataset| d.published_at))
    };
    for (consumer, deps) in &raw_deps {
        for dep in deps {
            let dep_id: ArtifactId = dep
                .parse()
                .map_err(|_| malformed(&consumer.key, format!("bad dependency `{dep}`")))?;
            let Some(dep_time) = time_of(&dep_id) else {
                continue; // post-deadline, a discussion, or absent from the corpus
            };
            let consumer_time = time_of(consumer).expect("consumer retained pre-deadline");
            if dep_time > consumer_time {
                warn!(%consumer, dependency = %dep_id, "dropping edge to a later-published artifact");
                continue;
            }
            graph.add_edge(consumer, &dep_id)?;
        }
    }

    let mut ranked: Vec<&Kernel> = kernels.values().collect();
    ranked.sort_by(kernel_rank(params.direction));
    let kept_kernels: BTreeSet<ArtifactId> = ranked
        .into_iter()
        .take(params.k_kernel)
        .map(|k| k.id.clone())
        .collect();

    let mut kept_datasets = BTreeSet::new();
    if params.dataset_access {
        for k in &kept_kernels {
            kept_datasets.extend(
                graph
                    .closure(k)
                    .into_iter()
                    .filter(|v| v.kind == ArtifactKind::Dataset),
            );
        }
    }

    let mut ranked_disc: Vec<&Discussion> = discussions.values().collect();
    ranked_disc.sort_by(by_votes(|d: &Discussion| d.votes, |d: &Discussion| d.id.key.as_str()));
    let kept_disc: BTreeSet<ArtifactId> = ranked_disc
        .into_iter()
        .take(params.k_discussion)
        .map(|d| d.id.clone())
        .collect();

    graph.retain(|v| kept_kernels.contains(v) || kept_datasets.contains(v));
    graph.topological_order()?;

    Ok(CommunitySnapshot {
        version: 0,
        kernels: kernels
            .into_iter()
            .filter(|(id, _)| kept_kernels.contains(id))
            .collect(),
        datasets: datasets
            .into_iter()
            .filter(|(id, _)| kept_datasets.contains(id))
            .collect(),
        discussions: discussions
            .into_iter()
            .filter(|(id, _)| kept_disc.contains(id))
            .collect(),
        graph,
    })
}

/// Returns the next snapshot with `artifact` added and linked to `deps`.
pub fn publish(
    snapshot: &CommunitySnapshot,
    artifact: Publishable,
    deps: &BTreeSet<ArtifactId>,
    score: Option<f64>,
) -> Result<CommunitySnapshot, CommunityError> {
    let id = artifact.id().clone();
    if snapshot.contains(&id) {
        return Err(CommunityError::Duplicate(id));
    }
    for dep in deps {
        if dep == &id {
            return Err(super::CycleError {
                consumer: id.clone(),
                dependency: dep.clone(),
            }
            .into());
        }
        if !snapshot.graph.contains(dep) {
            return Err(CommunityError::UnknownDependency(dep.clone()));
        }
        let dep_time = snapshot.published_at(dep).expect("graph vertex is stored");
        if dep_time > artifact.published_at() {
            return Err(CommunityError::TemporalOrder {
                consumer: id.clone(),
                dependency: dep.clone(),
            });
        }
    }

    let mut next = snapshot.clone();
    next.version += 1;
    next.graph.add_vertex(id.clone());
    for dep in deps {
        next.graph.add_edge(&id, dep)?;
    }
    match artifact {
        Publishable::Kernel(mut k) => {
            if score.is_some() {
                k.public_score = score;
            }
            next.kernels.insert(id, k);
        }
        Publishable::Dataset(d) => {
            next.datasets.insert(id, d);
        }
    }
    Ok(next)
}

/// How the coordinator picks artifacts for an iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SamplingPolicy {
    #[default]
    TopScore,
    TopVotes,
    Recent,
    WeightedRandom { seed: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub kernels: Vec<Kernel>,
    pub discussions: Vec<Discussion>,
}

impl Sample {
    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty() && self.discussions.is_empty()
    }

    pub fn ids(&self) -> Vec<ArtifactId> {
        self.kernels
            .iter()
            .map(|k| k.id.clone())
            .chain(self.discussions.iter().map(|d| d.id.clone()))
            .collect()
    }
}

/// Weighted sampling without replacement (exponential keys, weight = votes + 1).
fn weighted_pick<'a, T>(
    items: Vec<&'a T>,
    n: usize,
    votes: impl Fn(&T) -> u64,
    seed: u64,
) -> Vec<&'a T> {
    let mut rng = seed::rng(seed);
    let mut keyed: Vec<(f64, usize, &T)> = items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let u: f64 = rng.random::<f64>();
            let w = votes(item) as f64 + 1.0;
            (u.ln() / w, i, item)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(n).map(|(_, _, item)| item).collect()
}

/// Deterministic selection of kernels and discussions under `policy`.
pub fn sample_artifacts(
    snapshot: &CommunitySnapshot,
    policy: SamplingPolicy,
    n_kernels: usize,
    n_discussions: usize,
    direction: Direction,
) -> Sample {
    let mut kernels: Vec<&Kernel> = snapshot.kernels.values().collect();
    let mut discussions: Vec<&Discussion> = snapshot.discussions.values().collect();
    let recent_k = |a: &&Kernel, b: &&Kernel| {
        b.published_at
            .cmp(&a.published_at)
            .then_with(|| a.id.key.cmp(&b.id.key))
    };
    let recent_d = |a: &&Discussion, b: &&Discussion| {
        b.published_at
            .cmp(&a.published_at)
            .then_with(|| a.id.key.cmp(&b.id.key))
    };
    let disc_votes = by_votes(|d: &Discussion| d.votes, |d: &Discussion| d.id.key.as_str());

    let (kernels, discussions) = match policy {
        SamplingPolicy::TopScore => {
            kernels.sort_by(kernel_rank(direction));
            discussions.sort_by(&disc_votes);
            (kernels, discussions)
        }
        SamplingPolicy::TopVotes => {
            kernels.sort_by(by_votes(|k: &Kernel| k.votes, |k: &Kernel| k.id.key.as_str()));
            discussions.sort_by(&disc_votes);
            (kernels, discussions)
        }
        SamplingPolicy::Recent => {
            kernels.sort_by(recent_k);
            discussions.sort_by(recent_d);
            (kernels, discussions)
        }
        SamplingPolicy::WeightedRandom { seed } => (
            weighted_pick(kernels, n_kernels, |k| k.votes, seed::derive_seed(seed, "kernels")),
            weighted_pick(
                discussions,
                n_discussions,
                |d| d.votes,
                seed::derive_seed(seed, "discussions"),
            ),
        ),
    };
    Sample {
        kernels: kernels.into_iter().take(n_kernels).cloned().collect(),
        discussions: discussions.into_iter().take(n_discussions).cloned().collect(),
    }
}

/// All artifacts `id` transitively depends on, including `id` itself.
pub fn dependency_closure(
    snapshot: &CommunitySnapshot,
    id: &ArtifactId,
) -> Result<BTreeSet<ArtifactId>, CommunityError> {
    if !snapshot.contains(id) {
        return Err(CommunityError::Unknown(id.clone()));
    }
    if !snapshot.graph.contains(id) {
        return Ok(BTreeSet::from([id.clone()]));
    }
    Ok(snapshot.graph.closure(id))
}

#[cfg(test)]
mod tests {
    use super::super::{ArtifactMeta, RawArtifact};
    use super::*;

    fn meta(kind: ArtifactKind, key: &str, t: Option<i64>, votes: i64) -> ArtifactMeta {
        ArtifactMeta {
            kind: Some(kind),
            key: key.into(),
            votes,
            published_at: t,
            ..Default::default()
        }
    }

    fn params(deadline: i64, k: usize, d: usize, data: bool) -> InitParams {
        InitParams {
            deadline,
            k_kernel: k,
            k_discussion: d,
            dataset_access: data,
            direction: Direction::HigherBetter,
        }
    }

    fn kernel(key: &str, t: i64) -> Kernel {
        Kernel {
            id: ArtifactId::kernel(key),
            author_tier: Default::default(),
            votes: 0,
            public_score: None,
            published_at: t,
            body: String::new(),
            produced_files: vec![],
        }
    }

    #[test]
    fn deadline_filter_is_strict() {
        let d = 1_000;
        let raw = RawCollection {
            artifacts: [d - 2, d - 1, d, d + 1, d + 5]
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    RawArtifact::new(meta(ArtifactKind::Kernel, &format!("k{i}"), Some(*t), 0), "")
                })
                .collect(),
        };
        let snap = init_community(&raw, &params(d, 10, 10, true)).unwrap();
        assert_eq!(snap.kernels().count(), 2);
    }

    #[test]
    fn empty_corpus_gives_empty_snapshot() {
        let snap = init_community(&RawCollection::default(), &params(0, 10, 10, true)).unwrap();
        assert!(snap.is_empty());
        assert_eq!(snap.graph().vertex_count(), 0);
    }

    #[test]
    fn missing_timestamp_names_the_key() {
        let raw = RawCollection {
            artifacts: vec![RawArtifact::new(meta(ArtifactKind::Kernel, "no-time", None, 1), "")],
        };
        let err = init_community(&raw, &params(10, 1, 1, true)).unwrap_err();
        assert!(err.to_string().contains("no-time"), "{err}");
    }

    #[test]
    fn top_k_truncation_and_ranking() {
        let mut artifacts = Vec::new();
        for i in 0..59 {
            let mut m = meta(ArtifactKind::Kernel, &format!("k{i:02}"), Some(i), i);
            if i % 3 == 0 {
                m.score = Some(i as f64 / 100.0);
            }
            artifacts.push(RawArtifact::new(m, ""));
        }
        for i in 0..19 {
            artifacts.push(RawArtifact::new(
                meta(ArtifactKind::Discussion, &format!("d{i:02}"), Some(i), i),
                "",
            ));
        }
        let snap = init_community(&RawCollection { artifacts }, &params(1_000, 10, 10, true)).unwrap();
        assert_eq!(snap.kernels().count(), 10);
        assert_eq!(snap.discussions().count(), 10);
        // every retained kernel is scored: 20 scored kernels outrank unscored ones
        assert!(snap.kernels().all(|k| k.public_score.is_some()));
        assert!(snap.kernel(&ArtifactId::kernel("k57")).is_some());
        assert!(snap.discussions().all(|d| d.votes >= 9));
    }

    #[test]
    fn dataset_access_flag_drops_datasets_and_edges() {
        let mut k = meta(ArtifactKind::Kernel, "k", Some(5), 1);
        k.deps = vec!["dataset:d".into()];
        let raw = RawCollection {
            artifacts: vec![
                RawArtifact::new(k, ""),
                RawArtifact::new(meta(ArtifactKind::Dataset, "d", Some(1), 0), ""),
            ],
        };
        let with = init_community(&raw, &params(10, 5, 5, true)).unwrap();
        assert_eq!(with.datasets().count(), 1);
        assert_eq!(with.graph().edge_count(), 1);
        let without = init_community(&raw, &params(10, 5, 5, false)).unwrap();
        assert_eq!(without.datasets().count(), 0);
        assert_eq!(without.graph().edge_count(), 0);
    }

    #[test]
    fn publish_adds_edges_and_keeps_prior() {
        let s0 = publish(
            &CommunitySnapshot::empty(),
            Publishable::Kernel(kernel("a", 1)),
            &BTreeSet::new(),
            None,
        )
        .unwrap();
        assert_eq!(s0.graph().vertex_count(), 1);
        assert_eq!(s0.graph().edge_count(), 0);
        let s1 = publish(&s0, Publishable::Kernel(kernel("b", 2)), &BTreeSet::new(), None).unwrap();
        let deps = BTreeSet::from([ArtifactId::kernel("a"), ArtifactId::kernel("b")]);
        let s2 = publish(&s1, Publishable::Kernel(kernel("x", 3)), &deps, Some(0.5)).unwrap();
        assert!(s2.graph().has_edge(&ArtifactId::kernel("x"), &ArtifactId::kernel("a")));
        assert!(s2.graph().has_edge(&ArtifactId::kernel("x"), &ArtifactId::kernel("b")));
        assert_eq!(s2.kernel(&ArtifactId::kernel("x")).unwrap().public_score, Some(0.5));
        assert_eq!(s2.version, 3);
        assert!(s1.is_prefix_of(&s2));
        assert_eq!(s1.kernels().count(), 2);
    }

    #[test]
    fn publish_rejections() {
        let s = publish(
            &CommunitySnapshot::empty(),
            Publishable::Kernel(kernel("a", 1)),
            &BTreeSet::new(),
            None,
        )
        .unwrap();
        let missing = BTreeSet::from([ArtifactId::kernel("ghost")]);
        let err = publish(&s, Publishable::Kernel(kernel("b", 2)), &missing, None).unwrap_err();
        assert!(err.to_string().contains("ghost"));
        let err = publish(&s, Publishable::Kernel(kernel("a", 2)), &BTreeSet::new(), None).unwrap_err();
        assert!(matches!(err, CommunityError::Duplicate(_)));
        let own = BTreeSet::from([ArtifactId::kernel("c")]);
        assert!(matches!(
            publish(&s, Publishable::Kernel(kernel("c", 2)), &own, None).unwrap_err(),
            CommunityError::Cycle(_)
        ));
        let early = BTreeSet::from([ArtifactId::kernel("a")]);
        assert!(matches!(
            publish(&s, Publishable::Kernel(kernel("z", 0)), &early, None).unwrap_err(),
            CommunityError::TemporalOrder { .. }
        ));
    }

    #[test]
    fn chain_closure() {
        let mut s = CommunitySnapshot::empty();
        s = publish(&s, Publishable::Kernel(kernel("x", 1)), &BTreeSet::new(), None).unwrap();
        s = publish(&s, Publishable::Kernel(kernel("y", 2)), &BTreeSet::from([ArtifactId::kernel("x")]), None).unwrap();
        s = publish(&s, Publishable::Kernel(kernel("z", 3)), &BTreeSet::from([ArtifactId::kernel("y")]), None).unwrap();
        let c = dependency_closure(&s, &ArtifactId::kernel("z")).unwrap();
        assert_eq!(c.len(), 3);
        assert!(dependency_closure(&s, &ArtifactId::kernel("nope")).is_err());
        assert_eq!(dependency_closure(&s, &ArtifactId::kernel("x")).unwrap().len(), 1);
    }

    fn voted_snapshot(votes: &[u64]) -> CommunitySnapshot {
        let mut s = CommunitySnapshot::empty();
        for (i, v) in votes.iter().enumerate() {
            let mut k = kernel(&format!("k{i}"), i as i64);
            k.votes = *v;
            s = publish(&s, Publishable::Kernel(k), &BTreeSet::new(), None).unwrap();
        }
        s
    }

    #[test]
    fn top_votes_sample() {
        let s = voted_snapshot(&[7, 3, 9]);
        let sample = sample_artifacts(&s, SamplingPolicy::TopVotes, 2, 0, Direction::HigherBetter);
        let votes: Vec<u64> = sample.kernels.iter().map(|k| k.votes).collect();
        assert_eq!(votes, vec![9, 7]);
        let none = sample_artifacts(&s, SamplingPolicy::TopVotes, 0, 0, Direction::HigherBetter);
        assert!(none.is_empty());
    }

    #[test]
    fn top_score_puts_unscored_last_and_breaks_ties_by_votes() {
        let mut s = CommunitySnapshot::empty();
        for (key, score, votes) in [("a", None, 100), ("b", Some(0.5), 1), ("c", Some(0.5), 5), ("d", Some(0.1), 0)] {
            let mut k = kernel(key, 0);
            k.public_score = score;
            k.votes = votes;
            s = publish(&s, Publishable::Kernel(k), &BTreeSet::new(), None).unwrap();
        }
        let keys = |dir| -> Vec<String> {
            sample_artifacts(&s, SamplingPolicy::TopScore, 4, 0, dir)
                .kernels
                .into_iter()
                .map(|k| k.id.key)
                .collect()
        };
        assert_eq!(keys(Direction::HigherBetter), vec!["c", "b", "d", "a"]);
        assert_eq!(keys(Direction::LowerBetter), vec!["d", "c", "b", "a"]);
    }

    #[test]
    fn weighted_random_is_deterministic() {
        let s = voted_snapshot(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let p = SamplingPolicy::WeightedRandom { seed: 42 };
        let a = sample_artifacts(&s, p, 3, 0, Direction::HigherBetter);
        let b = sample_artifacts(&s, p, 3, 0, Direction::HigherBetter);
        assert_eq!(a, b);
        assert_eq!(a.kernels.len(), 3);
        let big = sample_artifacts(&s, p, 100, 0, Direction::HigherBetter);
        assert_eq!(big.kernels.len(), 8);
    }

    #[test]
    fn snapshot_serde_roundtrip() {
        let s = voted_snapshot(&[1, 2]);
        let json = serde_json::to_string(&s).unwrap();
        let back: CommunitySnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
