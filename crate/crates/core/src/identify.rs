//! Scoring registered specifications against a requirement and ranking them.
//!
//! Rankings are by squared RKHS distance, ascending; `similarity` is the
//! negated distance so the best model has both the smallest distance and the
//! largest similarity. Equal distances are ordered by model id.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::kernel::{
    assemble_score, coefficient_score, cosine_weights, cross_kernel, query_self_term, uniform_cross_term,
    uniform_self_term, weighted_cross_term, weighted_self_term, Gram, KernelParams, SquaredDistances,
};
use crate::reduced_set::{reduce, ReduceOptions, ReducedSet};
use crate::requirement::Requirement;
use crate::spec::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Requirement-blind ranking by download volume.
    #[serde(rename = "download")]
    Download,
    /// Mean embedding over the raw point space.
    #[serde(rename = "rkme-basic")]
    RkmeBasic,
    /// Mean embedding over encoder image embeddings.
    #[serde(rename = "rkme-embed")]
    RkmeEmbed,
    /// Mean embedding over concatenated `[image; prompt]` embeddings.
    #[serde(rename = "rkme-concat")]
    RkmeConcat,
    /// Prompt-cosine weighted mean embedding over image embeddings.
    #[serde(rename = "weighted")]
    WeightedProposal,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Download,
        StrategyKind::RkmeBasic,
        StrategyKind::RkmeEmbed,
        StrategyKind::RkmeConcat,
        StrategyKind::WeightedProposal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Download => "download",
            StrategyKind::RkmeBasic => "rkme-basic",
            StrategyKind::RkmeEmbed => "rkme-embed",
            StrategyKind::RkmeConcat => "rkme-concat",
            StrategyKind::WeightedProposal => "weighted",
        }
    }

    fn uses_prompts(self) -> bool {
        matches!(self, StrategyKind::RkmeConcat | StrategyKind::WeightedProposal)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringStrategy {
    pub kind: StrategyKind,
    pub kernel: KernelParams,
    /// Reduced-set size for the `Rkme*` variants; `None` scores against every
    /// specification point.
    pub reduced_size: Option<usize>,
    /// Score reduced sets with their fitted coefficients instead of uniform `1/N`.
    pub use_betas: bool,
    /// Multiplier on the prompt block of `RkmeConcat` embeddings.
    pub concat_prompt_scale: f64,
    pub reduce: ReduceOptions,
    /// Build reduced sets on demand when they are not cached.
    pub build_missing: bool,
}

impl ScoringStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        ScoringStrategy {
            kind,
            kernel: KernelParams::default(),
            reduced_size: Some(1),
            use_betas: false,
            concat_prompt_scale: 1.0,
            reduce: ReduceOptions::default(),
            build_missing: true,
        }
    }

    pub fn with_kernel(mut self, kernel: KernelParams) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_reduced_size(mut self, size: Option<usize>) -> Self {
        self.reduced_size = size;
        self
    }

    /// Parses a strategy name and bandwidth.
    pub fn parse(name: &str, gamma: f64) -> Result<Self> {
        Ok(Self::new(name.parse()?).with_kernel(KernelParams::new(gamma)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Space {
    Image,
    Concat(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ReducedKey {
    space: Space,
    size: usize,
    gamma: u64,
    opts: [u64; 5],
}

impl ReducedKey {
    fn new(space: Space, size: usize, kernel: KernelParams, o: &ReduceOptions) -> Self {
        ReducedKey {
            space,
            size,
            gamma: kernel.gamma().to_bits(),
            opts: [
                o.seed,
                o.restarts as u64,
                o.max_iters as u64,
                o.tolerance.to_bits(),
                o.beta_regularization.to_bits(),
            ],
        }
    }
}

struct CachedGram {
    gram: Gram,
    uniform_self: f64,
}

#[derive(Default)]
struct SpecCache {
    grams: HashMap<(Space, u64), Arc<CachedGram>>,
    reduced: HashMap<ReducedKey, Arc<ReducedSet>>,
}

/// A specification together with the query-independent pieces of its scores.
pub struct IndexedSpec {
    spec: Arc<ModelSpec>,
    image_sq: SquaredDistances,
    cache: RwLock<SpecCache>,
}

impl fmt::Debug for IndexedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IndexedSpec")
            .field("model_id", &self.spec.model_id())
            .field("n", &self.spec.len())
            .finish()
    }
}

impl IndexedSpec {
    pub fn new(spec: impl Into<Arc<ModelSpec>>) -> Self {
        let spec = spec.into();
        let image_sq = SquaredDistances::new(spec.images());
        IndexedSpec { spec, image_sq, cache: RwLock::new(SpecCache::default()) }
    }

    pub fn spec(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn model_id(&self) -> &str {
        self.spec.model_id()
    }

    /// Builds every cache `strategy` needs so later queries only pay per-query cost.
    pub fn warm(&self, strategy: &ScoringStrategy) -> Result<()> {
        let mut forced = *strategy;
        forced.build_missing = true;
        match strategy.kind {
            StrategyKind::Download => {}
            StrategyKind::WeightedProposal => {
                self.gram(Space::Image, strategy.kernel);
            }
            kind => {
                let space = self.space_for(kind, strategy);
                match strategy.reduced_size {
                    None => {
                        self.gram(space, strategy.kernel);
                    }
                    Some(size) => {
                        self.reduced_set(space, size, &forced)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn space_for(&self, kind: StrategyKind, strategy: &ScoringStrategy) -> Space {
        match kind {
            StrategyKind::RkmeConcat => Space::Concat(strategy.concat_prompt_scale.to_bits()),
            _ => Space::Image,
        }
    }

    fn points(&self, space: Space) -> Vec<Embedding> {
        match space {
            Space::Image => self.spec.images().to_vec(),
            Space::Concat(bits) => concat_points(&self.spec, f64::from_bits(bits)),
        }
    }

    fn gram(&self, space: Space, kernel: KernelParams) -> Arc<CachedGram> {
        let key = (space, kernel.gamma().to_bits());
        if let Some(g) = self.cache.read().unwrap().grams.get(&key) {
            return g.clone();
        }
        let gram = match space {
            Space::Image => Gram::from_sq_dists(&self.image_sq, kernel),
            Space::Concat(bits) => {
                let prompt_sq = SquaredDistances::new(self.spec.prompt_embeddings());
                Gram::from_sq_dists(&self.image_sq.add_scaled(&prompt_sq, f64::from_bits(bits)), kernel)
            }
        };
        let uniform_self = uniform_self_term(&gram);
        let cached = Arc::new(CachedGram { gram, uniform_self });
        self.cache.write().unwrap().grams.entry(key).or_insert(cached).clone()
    }

    fn reduced_set(&self, space: Space, size: usize, strategy: &ScoringStrategy) -> Result<Arc<ReducedSet>> {
        let key = ReducedKey::new(space, size, strategy.kernel, &strategy.reduce);
        if let Some(rs) = self.cache.read().unwrap().reduced.get(&key) {
            return Ok(rs.clone());
        }
        if !strategy.build_missing {
            return Err(Error::MissingReducedSet(self.model_id().to_string()));
        }
        let size = size.min(self.spec.len());
        let rs = Arc::new(reduce(&self.points(space), size, strategy.kernel, &strategy.reduce)?);
        Ok(self.cache.write().unwrap().reduced.entry(key).or_insert(rs).clone())
    }

    pub fn cached_reduced_sets(&self) -> usize {
        self.cache.read().unwrap().reduced.len()
    }

    /// Distance of this specification from `req` under `strategy`.
    pub fn score(&self, req: &Requirement, strategy: &ScoringStrategy) -> Result<f64> {
        let schema = self.spec.schema();
        let z = req.image_embedding();
        if strategy.kind != StrategyKind::Download && z.dim() != schema.image_dim {
            return Err(Error::DimensionMismatch { expected: schema.image_dim, found: z.dim() });
        }
        if strategy.kind.uses_prompts() && req.prompt_embedding().dim() != schema.prompt_dim {
            return Err(Error::DimensionMismatch {
                expected: schema.prompt_dim,
                found: req.prompt_embedding().dim(),
            });
        }
        let kernel = strategy.kernel;
        match strategy.kind {
            StrategyKind::Download => Ok(-(self.spec.download_count() as f64)),
            StrategyKind::WeightedProposal => {
                let weights = cosine_weights(self.spec.prompt_embeddings(), req.prompt_embedding())?;
                let cached = self.gram(Space::Image, kernel);
                let cross = cross_kernel(self.spec.images(), z, kernel);
                Ok(assemble_score(
                    weighted_self_term(&cached.gram, &weights),
                    weighted_cross_term(&cross, &weights),
                    query_self_term(z, kernel),
                ))
            }
            kind => {
                let space = self.space_for(kind, strategy);
                let query = match space {
                    Space::Image => z.clone(),
                    Space::Concat(bits) => z.concat(req.prompt_embedding(), f64::from_bits(bits)),
                };
                let qself = query_self_term(&query, kernel);
                match strategy.reduced_size {
                    None => {
                        let cached = self.gram(space, kernel);
                        let cross = match space {
                            Space::Image => cross_kernel(self.spec.images(), &query, kernel),
                            Space::Concat(_) => cross_kernel(&self.points(space), &query, kernel),
                        };
                        Ok(assemble_score(cached.uniform_self, uniform_cross_term(&cross), qself))
                    }
                    Some(size) => {
                        let rs = self.reduced_set(space, size, strategy)?;
                        let gram = Gram::build(&rs.points, kernel);
                        let cross = cross_kernel(&rs.points, &query, kernel);
                        if strategy.use_betas {
                            Ok(coefficient_score(&gram, &rs.betas, &cross, qself))
                        } else {
                            Ok(assemble_score(uniform_self_term(&gram), uniform_cross_term(&cross), qself))
                        }
                    }
                }
            }
        }
    }
}

fn concat_points(spec: &ModelSpec, scale: f64) -> Vec<Embedding> {
    spec.images().iter().zip(spec.prompt_embeddings()).map(|(z, q)| z.concat(q, scale)).collect()
}

/// Distance of one specification from a requirement.
pub fn score_one(spec: &ModelSpec, req: &Requirement, strategy: &ScoringStrategy) -> Result<f64> {
    IndexedSpec::new(spec.clone()).score(req, strategy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub model_id: String,
    pub distance: f64,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRanking {
    pub entries: Vec<RankedEntry>,
    pub strategy: ScoringStrategy,
}

impl ScoredRanking {
    /// Sorts `(model_id, distance)` pairs into a ranking.
    pub fn from_scores(mut scores: Vec<(String, f64)>, strategy: ScoringStrategy) -> Self {
        for s in &mut scores {
            // fold -0.0 into +0.0 so total_cmp treats them as tied
            s.1 += 0.0;
        }
        scores.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        let entries = scores
            .into_iter()
            .enumerate()
            .map(|(i, (model_id, distance))| RankedEntry {
                model_id,
                distance,
                similarity: -distance,
                rank: i + 1,
            })
            .collect();
        ScoredRanking { entries, strategy }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, model_id: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.model_id == model_id).map(|e| e.rank)
    }

    /// Mean rank of the tie group containing `model_id`.
    pub fn tie_averaged_rank(&self, model_id: &str) -> Result<f64> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.model_id == model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.to_string()))?;
        let (count, sum) = self
            .entries
            .iter()
            .filter(|e| e.distance.total_cmp(&entry.distance).is_eq())
            .fold((0usize, 0usize), |(c, s), e| (c + 1, s + e.rank));
        Ok(sum as f64 / count as f64)
    }

    pub fn truncated(&self, k: usize) -> Result<ScoredRanking> {
        check_k(k, self.len())?;
        Ok(ScoredRanking { entries: self.entries[..k].to_vec(), strategy: self.strategy })
    }
}

fn check_k(k: usize, models: usize) -> Result<()> {
    if k == 0 || k > models {
        Err(Error::KOutOfRange { k, models })
    } else {
        Ok(())
    }
}

pub fn top_k(ranking: &ScoredRanking, k: usize) -> Result<Vec<String>> {
    check_k(k, ranking.len())?;
    Ok(ranking.entries[..k].iter().map(|e| e.model_id.clone()).collect())
}

/// A set of indexed specifications that can be ranked against requirements.
#[derive(Debug, Default)]
pub struct Identifier {
    models: Vec<Arc<IndexedSpec>>,
    parallel: bool,
}

impl Identifier {
    pub fn new(models: Vec<Arc<IndexedSpec>>) -> Self {
        Identifier { models, parallel: false }
    }

    pub fn from_specs(specs: impl IntoIterator<Item = ModelSpec>) -> Self {
        Self::new(specs.into_iter().map(|s| Arc::new(IndexedSpec::new(s))).collect())
    }

    /// Scores models on the rayon pool instead of the calling thread.
    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn models(&self) -> &[Arc<IndexedSpec>] {
        &self.models
    }

    pub fn warm(&self, strategy: &ScoringStrategy) -> Result<()> {
        self.models.iter().try_for_each(|m| m.warm(strategy))
    }

    pub fn identify(&self, req: &Requirement, strategy: &ScoringStrategy) -> Result<ScoredRanking> {
        if self.models.is_empty() {
            return Err(Error::Empty("model registry"));
        }
        let score = |m: &Arc<IndexedSpec>| -> Result<(String, f64)> {
            Ok((m.model_id().to_string(), m.score(req, strategy)?))
        };
        let scores: Result<Vec<_>> = if self.parallel {
            self.models.par_iter().map(score).collect()
        } else {
            self.models.iter().map(score).collect()
        };
        Ok(ScoredRanking::from_scores(scores?, *strategy))
    }
}

/// Ranks every specification against `req`.
pub fn identify(specs: &[ModelSpec], req: &Requirement, strategy: &ScoringStrategy) -> Result<ScoredRanking> {
    Identifier::from_specs(specs.iter().cloned()).identify(req, strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::requirement::{build_requirement, PromptProvenance};
    use crate::spec::{build_spec, Metadata, PromptRecord};

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn spec(id: &str, pairs: &[(&[f64], &[f64])], downloads: u64) -> ModelSpec {
        build_spec(
            id,
            pairs.iter().map(|(z, _)| e(z)).collect(),
            pairs.iter().map(|(_, q)| PromptRecord::from(e(q))).collect(),
            Metadata::new(),
            downloads,
        )
        .unwrap()
    }

    fn req(z: &[f64], q: &[f64]) -> Requirement {
        build_requirement(e(z), e(q), PromptProvenance::Pseudo, None).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!(matches!("cosine".parse::<StrategyKind>(), Err(Error::UnknownStrategy(_))));
        assert!(ScoringStrategy::parse("weighted", 0.0).is_err());
    }

    #[test]
    fn weighted_exact_pair_scores_zero() {
        let s = spec("a", &[(&[1.0, 2.0], &[0.3, 0.4])], 0);
        let r = req(&[1.0, 2.0], &[0.3, 0.4]);
        let d = score_one(&s, &r, &ScoringStrategy::new(StrategyKind::WeightedProposal)).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn download_ignores_requirement() {
        let a = spec("a", &[(&[0.0], &[1.0])], 100);
        let b = spec("b", &[(&[5.0], &[1.0])], 5);
        let strat = ScoringStrategy::new(StrategyKind::Download);
        let r1 = identify(&[b.clone(), a.clone()], &req(&[5.0], &[1.0]), &strat).unwrap();
        let r2 = identify(&[b, a], &req(&[0.0], &[-1.0]), &strat).unwrap();
        assert_eq!(r1.entries[0].model_id, "a");
        assert_eq!(r1.entries[0].distance, -100.0);
        assert_eq!(r1.entries[1].distance, -5.0);
        assert_eq!(r1.entries, r2.entries);
    }

    #[test]
    fn single_model_ranks_first() {
        let a = spec("only", &[(&[0.0, 1.0], &[1.0])], 3);
        for kind in StrategyKind::ALL {
            let r =
                identify(std::slice::from_ref(&a), &req(&[4.0, 4.0], &[1.0]), &ScoringStrategy::new(kind))
                    .unwrap();
            assert_eq!(r.entries[0].rank, 1);
            assert_eq!(r.entries[0].model_id, "only");
        }
    }

    #[test]
    fn exact_pair_wins_under_weighted() {
        let a = spec("a", &[(&[1.0, 1.0], &[1.0, 0.0])], 0);
        let b = spec("b", &[(&[3.0, -2.0], &[0.0, 1.0])], 1000);
        let r = identify(
            &[b, a],
            &req(&[1.0, 1.0], &[1.0, 0.0]),
            &ScoringStrategy::new(StrategyKind::WeightedProposal),
        )
        .unwrap();
        assert_eq!(top_k(&r, 1).unwrap(), vec!["a"]);
    }

    #[test]
    fn ties_break_by_model_id_and_average() {
        let strat = ScoringStrategy::new(StrategyKind::Download);
        let specs: Vec<ModelSpec> =
            ["d", "b", "c", "a"].iter().map(|id| spec(id, &[(&[0.0], &[1.0])], 7)).collect();
        let r = identify(&specs, &req(&[0.0], &[1.0]), &strat).unwrap();
        let ids: Vec<&str> = r.entries.iter().map(|e| e.model_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d"]);
        assert_eq!(r.tie_averaged_rank("c").unwrap(), 2.5);
        assert!(matches!(r.tie_averaged_rank("zz"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn negative_zero_ties_with_zero() {
        let strat = ScoringStrategy::new(StrategyKind::Download);
        let r = ScoredRanking::from_scores(vec![("b".into(), 0.0), ("a".into(), -0.0)], strat);
        assert_eq!(r.entries[0].model_id, "a");
        assert_eq!(r.tie_averaged_rank("b").unwrap(), 1.5);
    }

    #[test]
    fn top_k_bounds() {
        let strat = ScoringStrategy::new(StrategyKind::Download);
        let scores = (0..16).map(|i| (format!("m{i:02}"), i as f64)).collect();
        let r = ScoredRanking::from_scores(scores, strat);
        assert_eq!(top_k(&r, 16).unwrap().len(), 16);
        assert_eq!(top_k(&r, 1).unwrap(), vec!["m00"]);
        assert_eq!(top_k(&r, 4).unwrap(), vec!["m00", "m01", "m02", "m03"]);
        assert!(matches!(top_k(&r, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(top_k(&r, 17), Err(Error::KOutOfRange { .. })));
        assert_eq!(r.truncated(4).unwrap().len(), 4);
    }

    #[test]
    fn empty_registry_is_an_error() {
        let r = identify(&[], &req(&[0.0], &[1.0]), &ScoringStrategy::new(StrategyKind::Download));
        assert_eq!(r, Err(Error::Empty("model registry")));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = spec("a", &[(&[0.0, 1.0], &[1.0])], 0);
        let r = score_one(&a, &req(&[0.0], &[1.0]), &ScoringStrategy::new(StrategyKind::RkmeEmbed));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        let r = score_one(
            &a,
            &req(&[0.0, 1.0], &[1.0, 0.0]),
            &ScoringStrategy::new(StrategyKind::WeightedProposal),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn missing_reduced_set_when_construction_disabled() {
        let a = spec("a", &[(&[0.0, 1.0], &[1.0]), (&[1.0, 1.0], &[1.0])], 0);
        let indexed = IndexedSpec::new(a);
        let mut strat = ScoringStrategy::new(StrategyKind::RkmeEmbed);
        strat.build_missing = false;
        let r = req(&[0.0, 0.0], &[1.0]);
        assert!(matches!(indexed.score(&r, &strat), Err(Error::MissingReducedSet(_))));
        indexed.warm(&strat).unwrap();
        assert_eq!(indexed.cached_reduced_sets(), 1);
        indexed.score(&r, &strat).unwrap();
    }

    #[test]
    fn concat_full_set_matches_uniform_over_concatenation() {
        let a = spec("a", &[(&[0.0, 1.0], &[1.0, 0.5]), (&[1.0, 3.0], &[0.2, 1.0])], 0);
        let r = req(&[0.5, 2.0], &[1.0, 1.0]);
        let strat = ScoringStrategy::new(StrategyKind::RkmeConcat).with_reduced_size(None);
        let got = score_one(&a, &r, &strat).unwrap();
        let points = concat_points(&a, 1.0);
        let q = r.image_embedding().concat(r.prompt_embedding(), 1.0);
        let want = crate::kernel::uniform_mmd_sq(&points, &q, strat.kernel).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn parallel_and_serial_rankings_agree() {
        let specs: Vec<ModelSpec> = (0..12)
            .map(|i| {
                let x = i as f64 * 0.7;
                spec(&format!("m{i:02}"), &[(&[x, 1.0 - x], &[1.0, x]), (&[x * x, 2.0], &[x, 1.0])], i)
            })
            .collect();
        let r = req(&[1.0, 0.5], &[0.8, 0.6]);
        for kind in StrategyKind::ALL {
            let strat = ScoringStrategy::new(kind);
            let serial = Identifier::from_specs(specs.clone()).identify(&r, &strat).unwrap();
            let parallel = Identifier::from_specs(specs.clone()).parallel(true).identify(&r, &strat).unwrap();
            assert_eq!(serial, parallel);
        }
    }
}
