//! Local "do"/"avoid" guidance rules.
//!
//! A shallow Gini tree is fitted to the black box's classes over a perturbed
//! neighbourhood of one instance. Every root-to-leaf path becomes a rule:
//! clean-majority leaves say what to do, defective-majority leaves say what
//! to avoid. Thresholds are rounded to 4 significant digits before support
//! and confidence are counted, so the reported numbers describe the rule
//! exactly as printed.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explain::{perturb_tabular, BlackBox, DiscretizationScheme, ExplainError};
use crate::forest::{DecisionTree, Node};
use crate::numfmt::{round_sig, ulp_sig};
use crate::CLASS_THRESHOLD;

pub const THRESHOLD_DIGITS: usize = 4;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("neighbourhood needs at least 100 samples, got {0}")]
    TooFewSamples(usize),
    #[error("neighbourhood contains a single class; no rules can separate it")]
    SingleClassNeighborhood,
    #[error("rule depth must lie in [1,3], got {0}")]
    InvalidDepth(usize),
    #[error("no do-rule available for this instance")]
    NoDoRule,
    #[error("rule is not a do-rule")]
    NotADoRule,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Do,
    Avoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Operator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Self::Lt => value < threshold,
            Self::Le => value <= threshold,
            Self::Gt => value > threshold,
            Self::Ge => value >= threshold,
        }
    }

    pub fn is_upper_bound(self) -> bool {
        matches!(self, Self::Lt | Self::Le)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Self::Lt => "<",
            Self::Le => "<=",
            Self::Gt => ">",
            Self::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub op: Operator,
    pub threshold: f64,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.feature,
            self.op.symbol(),
            crate::numfmt::format_sig(self.threshold, THRESHOLD_DIGITS)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRule {
    pub kind: RuleKind,
    pub conditions: Vec<Condition>,
    pub predicted_effect: String,
    pub support: f64,
    pub confidence: f64,
}

impl GuidanceRule {
    pub fn predicted_class(&self) -> u8 {
        match self.kind {
            RuleKind::Do => 0,
            RuleKind::Avoid => 1,
        }
    }

    /// Whether `x` (ordered by `feature_names`) satisfies every condition.
    pub fn matches(&self, x: &[f64], feature_names: &[String]) -> Result<bool, GuidanceError> {
        for c in &self.conditions {
            let j = feature_position(feature_names, &c.feature)?;
            if !c.op.holds(x[j], c.threshold) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl fmt::Display for GuidanceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let conds: Vec<String> = self.conditions.iter().map(Condition::to_string).collect();
        write!(f, "{}", conds.join(" and "))
    }
}

fn feature_position(names: &[String], feature: &str) -> Result<usize, GuidanceError> {
    names
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| GuidanceError::UnknownFeature(feature.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub x: Vec<f64>,
    pub risk: f64,
}

impl ScoredSample {
    pub fn class(&self) -> u8 {
        u8::from(self.risk >= CLASS_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub neighborhood_size: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl GuidanceConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            neighborhood_size: 2000,
            max_depth: 3,
            seed,
        }
    }
}

/// Perturbed neighbours of `instance`, each scored by the black box. Sample
/// 0 is the instance itself.
pub fn generate_local_neighborhood<M: BlackBox + ?Sized>(
    model: &M,
    instance: &[f64],
    scheme: &DiscretizationScheme,
    m: usize,
    seed: u64,
) -> Result<Vec<ScoredSample>, GuidanceError> {
    use rayon::prelude::*;
    if m < 100 {
        return Err(GuidanceError::TooFewSamples(m));
    }
    let samples = perturb_tabular(instance, scheme, m, seed)?;
    Ok(samples
        .into_par_iter()
        .map(|s| {
            let risk = model.score(&s.x);
            ScoredSample { x: s.x, risk }
        })
        .collect())
}

/// Smallest leaf the rule tree may create: 2 % of the neighbourhood, at
/// least 5 samples.
fn rule_min_leaf(m: usize) -> usize {
    (m / 50).max(5)
}

#[derive(Clone, Copy, Default)]
struct Bounds {
    lower: Option<f64>,
    upper: Option<f64>,
}

pub fn induce_rules(
    neighborhood: &[ScoredSample],
    feature_names: &[String],
    max_depth: usize,
) -> Result<Vec<GuidanceRule>, GuidanceError> {
    if !(1..=3).contains(&max_depth) {
        return Err(GuidanceError::InvalidDepth(max_depth));
    }
    let labels: Vec<u8> = neighborhood.iter().map(ScoredSample::class).collect();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(GuidanceError::SingleClassNeighborhood);
    }
    let rows: Vec<&[f64]> = neighborhood.iter().map(|s| s.x.as_slice()).collect();
    let params = crate::forest::GrowParams {
        min_leaf: rule_min_leaf(neighborhood.len()),
        max_depth: Some(max_depth),
        mtry: feature_names.len(),
    };
    // every feature is tried at every split, so the rng is never drawn from
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tree =
        crate::forest::grow_tree(&rows, &labels, (0..rows.len()).collect(), params, &mut rng);

    let mut rules = Vec::new();
    let mut bounds = vec![Bounds::default(); feature_names.len()];
    collect_paths(&tree, 0, &mut bounds, &mut |bounds, fraction| {
        let kind = if fraction < CLASS_THRESHOLD {
            RuleKind::Do
        } else {
            RuleKind::Avoid
        };
        if let Some(rule) = make_rule(kind, bounds, feature_names, neighborhood) {
            rules.push(rule);
        }
    });
    rules.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(b.support.total_cmp(&a.support))
            .then_with(|| a.to_string().cmp(&b.to_string()))
    });
    Ok(rules)
}

fn collect_paths(
    tree: &DecisionTree,
    node: usize,
    bounds: &mut [Bounds],
    emit: &mut dyn FnMut(&[Bounds], f64),
) {
    match &tree.nodes[node] {
        Node::Leaf {
            defective_fraction, ..
        } => emit(bounds, *defective_fraction),
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            let saved = bounds[*feature];
            let b = &mut bounds[*feature];
            b.upper = Some(b.upper.map_or(*threshold, |u| u.min(*threshold)));
            collect_paths(tree, *left, bounds, emit);
            bounds[*feature] = saved;
            let b = &mut bounds[*feature];
            b.lower = Some(b.lower.map_or(*threshold, |l| l.max(*threshold)));
            collect_paths(tree, *right, bounds, emit);
            bounds[*feature] = saved;
        }
    }
}

fn make_rule(
    kind: RuleKind,
    bounds: &[Bounds],
    feature_names: &[String],
    neighborhood: &[ScoredSample],
) -> Option<GuidanceRule> {
    let mut conditions = Vec::new();
    for (name, b) in feature_names.iter().zip(bounds) {
        let lower = b.lower.map(|t| round_sig(t, THRESHOLD_DIGITS));
        let upper = b.upper.map(|t| round_sig(t, THRESHOLD_DIGITS));
        if let (Some(l), Some(u)) = (lower, upper) {
            if l >= u {
                // interval vanished under rounding
                return None;
            }
        }
        if let Some(l) = lower {
            conditions.push(Condition {
                feature: name.clone(),
                op: Operator::Gt,
                threshold: l,
            });
        }
        if let Some(u) = upper {
            conditions.push(Condition {
                feature: name.clone(),
                op: Operator::Le,
                threshold: u,
            });
        }
    }
    if conditions.is_empty() {
        return None;
    }
    let mut rule = GuidanceRule {
        kind,
        conditions,
        predicted_effect: match kind {
            RuleKind::Do => "clean".into(),
            RuleKind::Avoid => "defective".into(),
        },
        support: 0.0,
        confidence: 0.0,
    };
    let (support, confidence) =
        support_and_confidence(&rule, neighborhood, feature_names).ok()??;
    rule.support = support;
    rule.confidence = confidence;
    Some(rule)
}

/// `(support, confidence)` of `rule` over the neighbourhood, or `None` when
/// no sample matches.
pub fn support_and_confidence(
    rule: &GuidanceRule,
    neighborhood: &[ScoredSample],
    feature_names: &[String],
) -> Result<Option<(f64, f64)>, GuidanceError> {
    let mut matched = 0usize;
    let mut agreeing = 0usize;
    for s in neighborhood {
        if rule.matches(&s.x, feature_names)? {
            matched += 1;
            if s.class() == rule.predicted_class() {
                agreeing += 1;
            }
        }
    }
    if matched == 0 {
        return Ok(None);
    }
    Ok(Some((
        matched as f64 / neighborhood.len() as f64,
        agreeing as f64 / matched as f64,
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEdit {
    pub feature: String,
    pub from: f64,
    pub to: f64,
}

/// Smallest change that makes `instance` satisfy `rule`: every violated
/// bound moves to its threshold ∓ one unit in the last reported digit.
pub fn minimal_edit(
    instance: &[f64],
    rule: &GuidanceRule,
    feature_names: &[String],
) -> Result<(Vec<f64>, Vec<FeatureEdit>), GuidanceError> {
    let mut edited = instance.to_vec();
    let mut edits: Vec<FeatureEdit> = Vec::new();
    for c in &rule.conditions {
        let j = feature_position(feature_names, &c.feature)?;
        if c.op.holds(edited[j], c.threshold) {
            continue;
        }
        let step = ulp_sig(c.threshold, THRESHOLD_DIGITS);
        let target = if c.op.is_upper_bound() {
            c.threshold - step
        } else {
            c.threshold + step
        };
        let target = round_sig(target, THRESHOLD_DIGITS + 1);
        match edits.iter_mut().find(|e| e.feature == c.feature) {
            Some(e) => e.to = target,
            None => edits.push(FeatureEdit {
                feature: c.feature.clone(),
                from: instance[j],
                to: target,
            }),
        }
        edited[j] = target;
    }
    Ok((edited, edits))
}

/// Black-box risk before and after applying the minimal edit for `rule`.
pub fn verify_rule_effect<M: BlackBox + ?Sized>(
    model: &M,
    instance: &[f64],
    rule: &GuidanceRule,
    feature_names: &[String],
) -> Result<(f64, f64), GuidanceError> {
    if rule.kind != RuleKind::Do {
        return Err(GuidanceError::NotADoRule);
    }
    let before = model.score(instance);
    let (edited, edits) = minimal_edit(instance, rule, feature_names)?;
    let after = if edits.is_empty() {
        before
    } else {
        model.score(&edited)
    };
    Ok((before, after))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeDirection {
    Increasing,
    Decreasing,
}

/// "Avoid increasing/decreasing `feature`": a move that would carry the
/// instance across `threshold` toward a defective-majority region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidAction {
    pub feature: String,
    pub direction: ChangeDirection,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementPlan {
    pub file_id: String,
    pub risk_before: f64,
    pub risk_after_do: f64,
    pub do_edit: Vec<FeatureEdit>,
    pub do_rules: Vec<GuidanceRule>,
    pub avoid_rules: Vec<GuidanceRule>,
    pub avoid_actions: Vec<AvoidAction>,
    /// Features whose training values are all whole numbers; renderers print
    /// their thresholds as integers.
    pub integer_features: Vec<String>,
    pub config: GuidanceConfig,
    pub seed: u64,
}

impl ImprovementPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

pub fn build_plan<M: BlackBox + ?Sized>(
    model: &M,
    file_id: &str,
    instance: &[f64],
    rules: &[GuidanceRule],
    scheme: &DiscretizationScheme,
    config: &GuidanceConfig,
) -> Result<ImprovementPlan, GuidanceError> {
    let names = &scheme.feature_names;
    let best = rules
        .iter()
        .find(|r| r.kind == RuleKind::Do)
        .ok_or(GuidanceError::NoDoRule)?;
    let risk_before = model.score(instance);
    let (edited, do_edit) = minimal_edit(instance, best, names)?;
    let risk_after_do = if do_edit.is_empty() {
        risk_before
    } else {
        model.score(&edited)
    };

    let edit_dirs: BTreeSet<(String, ChangeDirection)> = do_edit
        .iter()
        .map(|e| {
            let dir = if e.to > e.from {
                ChangeDirection::Increasing
            } else {
                ChangeDirection::Decreasing
            };
            (e.feature.clone(), dir)
        })
        .collect();

    let mut avoid_actions: Vec<AvoidAction> = Vec::new();
    let mut seen = BTreeSet::new();
    for rule in rules.iter().filter(|r| r.kind == RuleKind::Avoid) {
        for c in &rule.conditions {
            let j = feature_position(names, &c.feature)?;
            if c.op.holds(instance[j], c.threshold) {
                continue;
            }
            let direction = if c.op.is_upper_bound() {
                ChangeDirection::Decreasing
            } else {
                ChangeDirection::Increasing
            };
            let key = (c.feature.clone(), direction);
            // never warn against the move the do-rule recommends
            if edit_dirs.contains(&key) || !seen.insert(key) {
                continue;
            }
            avoid_actions.push(AvoidAction {
                feature: c.feature.clone(),
                direction,
                threshold: c.threshold,
            });
        }
    }

    let integer_features = names
        .iter()
        .zip(&scheme.integer_valued)
        .filter(|(_, &int)| int)
        .map(|(n, _)| n.clone())
        .collect();

    Ok(ImprovementPlan {
        file_id: file_id.to_string(),
        risk_before: round_sig(risk_before, crate::explain::EXPLANATION_DIGITS),
        risk_after_do: round_sig(risk_after_do, crate::explain::EXPLANATION_DIGITS),
        do_edit,
        do_rules: rules
            .iter()
            .filter(|r| r.kind == RuleKind::Do)
            .cloned()
            .collect(),
        avoid_rules: rules
            .iter()
            .filter(|r| r.kind == RuleKind::Avoid)
            .cloned()
            .collect(),
        avoid_actions,
        integer_features,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Neighbourhood → rules → plan for one instance.
pub fn guide_instance<M: BlackBox + ?Sized>(
    model: &M,
    file_id: &str,
    instance: &[f64],
    scheme: &DiscretizationScheme,
    config: &GuidanceConfig,
) -> Result<ImprovementPlan, GuidanceError> {
    let hood = generate_local_neighborhood(
        model,
        instance,
        scheme,
        config.neighborhood_size,
        config.seed,
    )?;
    let rules = induce_rules(&hood, &scheme.feature_names, config.max_depth)?;
    build_plan(model, file_id, instance, &rules, scheme, config)
}
