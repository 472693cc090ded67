//! Seeded simulated annotators.
//!
//! Every random draw comes from a ChaCha8 stream selected by
//! (purpose, annotator, instance), so a cell's outcome does not depend on
//! iteration order or on how many other cells exist.

use std::sync::Arc;

use chrono::DateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AnnotatorId, CategoryId, Decision, Instance, InstanceId, ProjectId, TaskSpec,
};
use crate::metrics::{LabelMatrix, MetricsError, MetricsReport};
use crate::protocol::{Engine, ProjectSettings, ProtocolError};
use crate::scaffold::{GenConfig, StubProvider};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    #[serde(default)]
    pub id: Option<AnnotatorId>,
    /// Probability that a first-pass label differs from gold.
    pub noise_rate: f64,
    /// Wrong label to prefer when one is drawn.
    #[serde(default)]
    pub bias: Option<CategoryId>,
}

impl AnnotatorProfile {
    pub fn noisy(noise_rate: f64) -> Self {
        Self {
            id: None,
            noise_rate,
            bias: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionPolicy {
    /// Probability that a first-pass deviation from gold is corrected.
    pub resolve_prob: f64,
    /// Probability that a correct first-pass label is revised away.
    pub spurious_prob: f64,
    /// Probability that a label still differing from the model's hidden
    /// verdict is moved onto it. Zero unless modeling anchoring.
    #[serde(default)]
    pub anchor_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Gold category per instance; drawn uniformly from the seed if absent.
    #[serde(default)]
    pub gold: Option<Vec<CategoryId>>,
    pub annotators: Vec<AnnotatorProfile>,
    pub policy: RevisionPolicy,
}

/// A task given either by name ("sentiment", "opinion") or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskChoice {
    Named(String),
    Spec(TaskSpec),
}

impl TaskChoice {
    pub fn resolve(&self) -> Result<TaskSpec> {
        match self {
            TaskChoice::Spec(s) => Ok(s.clone()),
            TaskChoice::Named(n) => match n.as_str() {
                "sentiment" => Ok(TaskSpec::sentiment()),
                "opinion" => Ok(TaskSpec::opinion()),
                other => Err(SimError::Config(format!("unknown task '{other}'"))),
            },
        }
    }
}

/// The contents of a simulation config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub task: TaskChoice,
    pub instances: usize,
    #[serde(flatten)]
    pub sim: SimConfig,
}

fn unit(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl SimConfig {
    pub fn validate(&self, task: &TaskSpec, n_instances: usize) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.annotators.len() < 2 {
            return bad(format!("need at least two annotators, got {}", self.annotators.len()));
        }
        for (i, a) in self.annotators.iter().enumerate() {
            if !unit(a.noise_rate) {
                return bad(format!("annotator {i}: noise_rate {} outside [0, 1]", a.noise_rate));
            }
            if let Some(b) = &a.bias {
                if !task.has_category(b) {
                    return bad(format!("annotator {i}: bias '{b}' is not a category"));
                }
            }
        }
        let p = &self.policy;
        for (name, v) in [
            ("resolve_prob", p.resolve_prob),
            ("spurious_prob", p.spurious_prob),
            ("anchor_prob", p.anchor_prob),
        ] {
            if !unit(v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if let Some(gold) = &self.gold {
            if gold.len() != n_instances {
                return bad(format!("{} gold labels for {n_instances} instances", gold.len()));
            }
            if let Some(g) = gold.iter().find(|g| !task.has_category(g)) {
                return bad(format!("gold label '{g}' is not a category"));
            }
        }
        let ids = self.annotator_ids();
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return bad("annotator ids are not unique".into());
        }
        Ok(())
    }

    pub fn annotator_ids(&self) -> Vec<AnnotatorId> {
        self.annotators
            .iter()
            .enumerate()
            .map(|(i, a)| a.id.clone().unwrap_or_else(|| AnnotatorId::new(format!("sim-{}", i + 1))))
            .collect()
    }
}

const GOLD: u64 = 0;
const FIRST: u64 = 1;
const SECOND: u64 = 2;

fn stream(seed: u64, purpose: u64, annotator: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) | ((annotator as u64) << 32) | instance as u64);
    rng
}

/// A category other than `not`, uniformly.
fn other_category(rng: &mut ChaCha8Rng, k: usize, not: usize) -> usize {
    let j = rng.random_range(0..k - 1);
    if j >= not {
        j + 1
    } else {
        j
    }
}

/// Gold category indices, from the config or drawn from the seed.
pub fn gold_labels(cfg: &SimConfig, task: &TaskSpec, n: usize) -> Result<Vec<usize>> {
    match &cfg.gold {
        Some(g) => g
            .iter()
            .map(|c| {
                task.category_index(c)
                    .ok_or_else(|| SimError::Config(format!("gold label '{c}' is not a category")))
            })
            .collect(),
        None => Ok((0..n)
            .map(|i| stream(cfg.seed, GOLD, 0, i).random_range(0..task.category_count()))
            .collect()),
    }
}

/// Synthetic utterances for a simulated corpus.
pub fn synthetic_instances(n: usize) -> Vec<Instance> {
    const OPENERS: [&str; 6] = [
        "Well, the meeting ran long again",
        "I just got back from the station",
        "They moved the deadline to Friday",
        "The new menu is out",
        "My brother called about the trip",
        "The update installed overnight",
    ];
    const CLOSERS: [&str; 5] = [
        "and I am not sure what to make of it.",
        "which is about what everyone expected.",
        "so we will see how it goes.",
        "and honestly it was fine.",
        "but nobody said much.",
    ];
    (0..n)
        .map(|i| {
            Instance::new(
                format!("s{:04}", i + 1),
                format!("{} {}", OPENERS[i % OPENERS.len()], CLOSERS[(i / OPENERS.len()) % CLOSERS.len()]),
            )
        })
        .collect()
}

fn matrix(task: &TaskSpec, annotators: Vec<AnnotatorId>, instances: &[InstanceId]) -> LabelMatrix {
    LabelMatrix::new(task.category_ids(), annotators, instances.to_vec())
}

/// First-pass labels: gold with probability `1 - noise_rate`, otherwise a
/// different category (the profile's bias when it differs from gold).
pub fn simulate_pass1(
    cfg: &SimConfig,
    task: &TaskSpec,
    instances: &[InstanceId],
    gold: &[usize],
) -> Result<LabelMatrix> {
    let k = task.category_count();
    let mut m = matrix(task, cfg.annotator_ids(), instances);
    for (a, profile) in cfg.annotators.iter().enumerate() {
        let bias = profile.bias.as_ref().and_then(|b| task.category_index(b));
        for (i, &g) in gold.iter().enumerate() {
            let mut rng = stream(cfg.seed, FIRST, a, i);
            let label = if rng.random::<f64>() < profile.noise_rate {
                match bias {
                    Some(b) if b != g => b,
                    _ => other_category(&mut rng, k, g),
                }
            } else {
                g
            };
            m.set(a, i, Some(label))?;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimDecision {
    pub annotator_id: AnnotatorId,
    pub instance_id: InstanceId,
    pub decision: Decision,
}

/// Second-pass labels and the keep/revise decisions that produce them.
/// `verdicts` (hidden model labels per instance) are used only when the
/// policy models anchoring.
pub fn simulate_pass2(
    cfg: &SimConfig,
    pass1: &LabelMatrix,
    gold: &[usize],
    verdicts: Option<&[Option<usize>]>,
) -> Result<(LabelMatrix, Vec<SimDecision>)> {
    let k = pass1.categories().len();
    let p = &cfg.policy;
    let mut m2 = pass1.clone();
    let mut decisions = Vec::new();
    for a in 0..pass1.annotators().len() {
        for (i, &g) in gold.iter().enumerate() {
            let Some(l1) = pass1.get(a, i) else { continue };
            let mut rng = stream(cfg.seed, SECOND, a, i);
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let mut l2 = if l1 != g {
                if u < p.resolve_prob {
                    g
                } else {
                    l1
                }
            } else if u < p.spurious_prob {
                other_category(&mut rng, k, l1)
            } else {
                l1
            };
            if let Some(Some(verdict)) = verdicts.map(|vs| vs[i]) {
                if l2 == l1 && verdict != l1 && v < p.anchor_prob {
                    l2 = verdict;
                }
            }
            m2.set(a, i, Some(l2))?;
            let decision = if l2 == l1 {
                Decision::Keep
            } else {
                Decision::Revise {
                    label: pass1.categories()[l2].clone(),
                }
            };
            decisions.push(SimDecision {
                annotator_id: pass1.annotators()[a].clone(),
                instance_id: pass1.instances()[i].clone(),
                decision,
            });
        }
    }
    Ok((m2, decisions))
}

/// Runs a full simulated study on `engine`: creates the project, imports a
/// synthetic corpus, runs both passes with stub scaffolds, and builds the
/// report. Pass-2 annotators open each explanation before deciding.
pub fn run_study_on(
    engine: &Engine,
    cfg: &SimConfig,
    task: &TaskSpec,
    n_instances: usize,
    project_id: Option<ProjectId>,
) -> Result<(ProjectId, MetricsReport)> {
    cfg.validate(task, n_instances)?;
    let corpus = synthetic_instances(n_instances);
    let ids: Vec<InstanceId> = corpus.iter().map(|c| c.instance_id.clone()).collect();
    let gold = gold_labels(cfg, task, n_instances)?;
    let annotators = cfg.annotator_ids();

    let pid = engine.create_project(task.clone(), ProjectSettings::default(), project_id)?;
    engine.import_instances(&pid, corpus)?;
    for a in &annotators {
        engine.register_annotator(&pid, a.clone())?;
    }

    engine.open_pass1(&pid)?;
    let p1 = simulate_pass1(cfg, task, &ids, &gold)?;
    for (a, ann) in annotators.iter().enumerate() {
        for (i, inst) in ids.iter().enumerate() {
            let label = p1.categories()[p1.get(a, i).expect("full matrix")].clone();
            engine.submit_pass1_label(&pid, ann, inst, label)?;
        }
    }
    engine.close_pass1(&pid, false)?;

    let provider = StubProvider::new(task.clone());
    engine.generate_scaffolds(&pid, &provider, &GenConfig::default(), 4)?;
    engine.open_pass2(&pid)?;

    let verdicts: Vec<Option<usize>> = ids
        .iter()
        .map(|id| {
            engine
                .scaffold(&pid, id)
                .ok()
                .flatten()
                .and_then(|s| task.category_index(&s.verdict))
        })
        .collect();
    let (_, decisions) = simulate_pass2(cfg, &p1, &gold, Some(&verdicts))?;
    for d in decisions {
        engine.fetch_scaffold_view(&pid, &d.annotator_id, &d.instance_id)?;
        engine.submit_pass2_decision(&pid, &d.annotator_id, &d.instance_id, d.decision)?;
    }
    engine.close_pass2(&pid, false)?;
    let report = engine.build_report(&pid, None)?;
    Ok((pid, report))
}

/// [`run_study_on`] against a fresh in-memory engine with a fixed clock.
pub fn run_study(cfg: &SimConfig, task: &TaskSpec, n_instances: usize) -> Result<MetricsReport> {
    let engine = Engine::in_memory().with_clock(Arc::new(|| DateTime::UNIX_EPOCH));
    let (_, report) = run_study_on(&engine, cfg, task, n_instances, Some("sim".into()))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aep, mean_pairwise_kappa, pairwise_kappa, revision_matrix};

    fn cfg(noise: &[f64], resolve: f64, spurious: f64, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            gold: None,
            annotators: noise.iter().map(|&n| AnnotatorProfile::noisy(n)).collect(),
            policy: RevisionPolicy {
                resolve_prob: resolve,
                spurious_prob: spurious,
                anchor_prob: 0.0,
            },
        }
    }

    fn ids(n: usize) -> Vec<InstanceId> {
        synthetic_instances(n).into_iter().map(|i| i.instance_id).collect()
    }

    #[test]
    fn zero_noise_reproduces_gold() {
        let task = TaskSpec::sentiment();
        let c = cfg(&[0.0, 0.0], 0.0, 0.0, 1);
        let gold = gold_labels(&c, &task, 200).unwrap();
        let m = simulate_pass1(&c, &task, &ids(200), &gold).unwrap();
        for a in 0..2 {
            let row: Vec<usize> = m.row(a).iter().map(|l| l.unwrap()).collect();
            assert_eq!(row, gold);
        }
        assert_eq!(mean_pairwise_kappa(&m).unwrap().mean, 1.0);
    }

    #[test]
    fn full_noise_on_two_categories_inverts_consistently() {
        let task = TaskSpec::opinion();
        let c = cfg(&[1.0, 1.0], 0.0, 0.0, 5);
        let gold = gold_labels(&c, &task, 100).unwrap();
        let m = simulate_pass1(&c, &task, &ids(100), &gold).unwrap();
        for (i, g) in gold.iter().enumerate() {
            assert_eq!(m.get(0, i), Some(1 - g));
        }
        let a: Vec<_> = m.row(0).to_vec();
        let b: Vec<_> = m.row(1).to_vec();
        assert_eq!(pairwise_kappa(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn flip_counts_stay_within_three_sigma_of_binomial() {
        let task = TaskSpec::sentiment();
        let (n, p) = (500usize, 0.15);
        let c = cfg(&[p, p], 0.0, 0.0, 42);
        let gold = gold_labels(&c, &task, n).unwrap();
        let m = simulate_pass1(&c, &task, &ids(n), &gold).unwrap();
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for a in 0..2 {
            let flips = (0..n).filter(|&i| m.get(a, i) != Some(gold[i])).count() as f64;
            assert!((flips - mean).abs() <= 3.0 * sigma, "annotator {a}: {flips} flips");
        }
    }

    #[test]
    fn bias_picks_the_preferred_wrong_category() {
        let task = TaskSpec::sentiment();
        let mut c = cfg(&[1.0, 0.0], 0.0, 0.0, 3);
        c.annotators[0].bias = Some("neutral".into());
        let gold = gold_labels(&c, &task, 300).unwrap();
        let m = simulate_pass1(&c, &task, &ids(300), &gold).unwrap();
        let neutral = task.category_index(&"neutral".into()).unwrap();
        for (i, &g) in gold.iter().enumerate() {
            if g != neutral {
                assert_eq!(m.get(0, i), Some(neutral));
            } else {
                assert_ne!(m.get(0, i), Some(neutral));
            }
        }
    }

    #[test]
    fn no_revision_policy_keeps_everything() {
        let task = TaskSpec::sentiment();
        let c = cfg(&[0.3, 0.3], 0.0, 0.0, 9);
        let gold = gold_labels(&c, &task, 200).unwrap();
        let p1 = simulate_pass1(&c, &task, &ids(200), &gold).unwrap();
        let (p2, d) = simulate_pass2(&c, &p1, &gold, None).unwrap();
        assert_eq!(p1, p2);
        assert!(d.iter().all(|d| d.decision == Decision::Keep));
        assert_eq!(aep(&p1, &p2).unwrap().ratio, 0.0);
    }

    #[test]
    fn full_resolution_reaches_gold() {
        let task = TaskSpec::sentiment();
        let c = cfg(&[0.3, 0.2], 1.0, 0.0, 9);
        let gold = gold_labels(&c, &task, 200).unwrap();
        let p1 = simulate_pass1(&c, &task, &ids(200), &gold).unwrap();
        let (p2, _) = simulate_pass2(&c, &p1, &gold, None).unwrap();
        for a in 0..2 {
            for (i, g) in gold.iter().enumerate() {
                assert_eq!(p2.get(a, i), Some(*g));
            }
        }
        assert_eq!(mean_pairwise_kappa(&p2).unwrap().mean, 1.0);
    }

    #[test]
    fn revisions_run_in_both_directions() {
        let task = TaskSpec::sentiment();
        let c = cfg(&[0.12, 0.12], 0.8, 0.002, 7);
        let gold = gold_labels(&c, &task, 500).unwrap();
        let p1 = simulate_pass1(&c, &task, &ids(500), &gold).unwrap();
        let (p2, decisions) = simulate_pass2(&c, &p1, &gold, None).unwrap();
        let rm = revision_matrix(&p1, &p2).unwrap();
        assert!(rm.directions().len() >= 2);
        assert!(rm.is_bidirectional());
        let revised = decisions
            .iter()
            .filter(|d| matches!(d.decision, Decision::Revise { .. }))
            .count();
        assert_eq!(rm.total(), revised);
    }

    #[test]
    fn anchoring_moves_labels_onto_the_verdict() {
        let task = TaskSpec::opinion();
        let mut c = cfg(&[0.0, 0.0], 0.0, 0.0, 2);
        c.policy.anchor_prob = 1.0;
        let gold = gold_labels(&c, &task, 50).unwrap();
        let p1 = simulate_pass1(&c, &task, &ids(50), &gold).unwrap();
        let verdicts: Vec<Option<usize>> = (0..50).map(|_| Some(0)).collect();
        let (p2, _) = simulate_pass2(&c, &p1, &gold, Some(&verdicts)).unwrap();
        assert!((0..50).all(|i| p2.get(0, i) == Some(0)));
    }

    #[test]
    fn study_is_deterministic_and_aep_counts_revisions() {
        let task = TaskSpec::sentiment();
        let c = cfg(&[0.2, 0.1, 0.15], 0.5, 0.01, 11);
        let a = run_study(&c, &task, 120).unwrap();
        let b = run_study(&c, &task, 120).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let gold = gold_labels(&c, &task, 120).unwrap();
        let p1 = simulate_pass1(&c, &task, &ids(120), &gold).unwrap();
        let (_, d) = simulate_pass2(&c, &p1, &gold, None).unwrap();
        let revised = d
            .iter()
            .filter(|d| matches!(d.decision, Decision::Revise { .. }))
            .count();
        assert_eq!(a.aep.revised, revised);
        assert_eq!(a.aep.ratio, revised as f64 / 360.0);
    }

    #[test]
    fn no_resolution_leaves_kappa_unchanged() {
        let c = cfg(&[0.2, 0.2], 0.0, 0.0, 4);
        let r = run_study(&c, &TaskSpec::opinion(), 100).unwrap();
        assert_eq!(r.kappa_pass1, r.kappa_pass2);
        assert_eq!(r.aep.ratio, 0.0);
    }

    #[test]
    fn config_validation() {
        let task = TaskSpec::sentiment();
        assert!(cfg(&[0.1], 0.5, 0.0, 1).validate(&task, 10).is_err());
        assert!(cfg(&[0.1, 1.5], 0.5, 0.0, 1).validate(&task, 10).is_err());
        assert!(cfg(&[0.1, 0.1], -0.1, 0.0, 1).validate(&task, 10).is_err());
        let mut c = cfg(&[0.1, 0.1], 0.5, 0.0, 1);
        c.gold = Some(vec!["positive".into()]);
        assert!(c.validate(&task, 10).is_err());
    }

    #[test]
    fn study_config_parses_from_json() {
        let text = r#"{
            "task": "sentiment",
            "instances": 50,
            "seed": 7,
            "annotators": [{"noise_rate": 0.1}, {"id": "b", "noise_rate": 0.2, "bias": "neutral"}],
            "policy": {"resolve_prob": 0.85, "spurious_prob": 0.002}
        }"#;
        let sc: StudyConfig = serde_json::from_str(text).unwrap();
        assert_eq!(sc.task.resolve().unwrap(), TaskSpec::sentiment());
        assert_eq!(sc.sim.annotator_ids(), vec![AnnotatorId::new("sim-1"), AnnotatorId::new("b")]);
        assert_eq!(sc.sim.policy.anchor_prob, 0.0);
    }
}
