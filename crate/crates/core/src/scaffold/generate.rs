use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::parse::parse_scaffold_response;
use super::prompt::build_prompt;
use super::provider::Provider;
use crate::domain::{GenMeta, Instance, InstanceId, Scaffold, TaskSpec};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub run_index: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            model: "stub".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_retries: 2,
            run_index: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Why no scaffold exists for an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldFailure {
    pub instance_id: InstanceId,
    pub attempts: u32,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScaffoldOutcome {
    Generated(Scaffold),
    Failed(ScaffoldFailure),
}

impl ScaffoldOutcome {
    pub fn instance_id(&self) -> &InstanceId {
        match self {
            ScaffoldOutcome::Generated(s) => &s.instance_id,
            ScaffoldOutcome::Failed(f) => &f.instance_id,
        }
    }

    pub fn scaffold(&self) -> Option<&Scaffold> {
        match self {
            ScaffoldOutcome::Generated(s) => Some(s),
            ScaffoldOutcome::Failed(_) => None,
        }
    }
}

/// Builds the prompt, calls the provider and parses the reply, retrying on
/// any failure up to `cfg.max_retries` times. Never returns a partial
/// scaffold.
pub fn generate_scaffold(
    provider: &dyn Provider,
    spec: &TaskSpec,
    instance: &Instance,
    cfg: &GenConfig,
) -> ScaffoldOutcome {
    generate_at(provider, spec, instance, cfg, Utc::now())
}

fn generate_at(
    provider: &dyn Provider,
    spec: &TaskSpec,
    instance: &Instance,
    cfg: &GenConfig,
    created_at: DateTime<Utc>,
) -> ScaffoldOutcome {
    let id = instance.instance_id.clone();
    if let Err(cause) = cfg.validate() {
        return ScaffoldOutcome::Failed(ScaffoldFailure {
            instance_id: id,
            attempts: 0,
            cause,
        });
    }
    let prompt = build_prompt(spec, instance);
    let mut cause = String::new();
    let attempts = cfg.max_retries + 1;
    for attempt in 1..=attempts {
        let parsed = provider
            .complete(&prompt, cfg.temperature, cfg.run_index)
            .map_err(|e| e.to_string())
            .and_then(|resp| {
                parse_scaffold_response(&resp.raw_text, spec).map_err(|e| format!("parse: {e}"))
            });
        match parsed {
            Ok(p) => {
                let scaffold = Scaffold {
                    instance_id: id,
                    self_examples: p.self_examples,
                    reasoning_text: p.reasoning_text,
                    verdict: p.verdict,
                    soft_labels: p.soft_labels,
                    gen_meta: GenMeta {
                        model: cfg.model.clone(),
                        temperature: cfg.temperature,
                        run_index: cfg.run_index,
                        created_at,
                    },
                };
                // parse already enforces every scaffold invariant
                debug_assert!(scaffold.validate(spec).is_ok());
                return ScaffoldOutcome::Generated(scaffold);
            }
            Err(e) => {
                debug!(instance = %instance.instance_id, attempt, error = %e, "scaffold attempt failed");
                cause = e;
            }
        }
    }
    warn!(instance = %instance.instance_id, attempts, %cause, "scaffold generation failed");
    ScaffoldOutcome::Failed(ScaffoldFailure {
        instance_id: id,
        attempts,
        cause,
    })
}

/// Generates scaffolds for `instances` on up to `parallelism` threads.
/// Output order follows input order and does not depend on completion order;
/// every scaffold in the batch carries the same creation time.
pub fn generate_batch(
    provider: &dyn Provider,
    spec: &TaskSpec,
    instances: &[Instance],
    cfg: &GenConfig,
    parallelism: usize,
) -> Vec<ScaffoldOutcome> {
    let created_at = Utc::now();
    let workers = parallelism.clamp(1, instances.len().max(1));
    if workers == 1 {
        return instances
            .iter()
            .map(|i| generate_at(provider, spec, i, cfg, created_at))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ScaffoldOutcome>>> = Mutex::new(vec![None; instances.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(inst) = instances.get(idx) else { break };
                let out = generate_at(provider, spec, inst, cfg, created_at);
                slots.lock().expect("slot lock")[idx] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|o| o.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaffold::provider::{ProviderError, ProviderResponse, StubProvider};
    use std::sync::atomic::AtomicU32;

    struct Garbage(AtomicU32);

    impl Provider for Garbage {
        fn complete(&self, _: &str, _: f64, _: u32) -> Result<ProviderResponse, ProviderError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(ProviderResponse {
                raw_text: "I'd rather not.".into(),
                provider_meta: serde_json::Value::Null,
            })
        }
        fn model(&self) -> &str {
            "garbage"
        }
    }

    struct Down;

    impl Provider for Down {
        fn complete(&self, _: &str, _: f64, _: u32) -> Result<ProviderResponse, ProviderError> {
            Err(ProviderError::Transport("connection refused".into()))
        }
        fn model(&self) -> &str {
            "down"
        }
    }

    /// Fails the first `n` calls, then behaves like the stub.
    struct Flaky {
        inner: StubProvider,
        left: AtomicU32,
    }

    impl Provider for Flaky {
        fn complete(&self, p: &str, t: f64, r: u32) -> Result<ProviderResponse, ProviderError> {
            if self.left.load(Ordering::SeqCst) > 0 {
                self.left.fetch_sub(1, Ordering::SeqCst);
                return Err(ProviderError::Status(503));
            }
            self.inner.complete(p, t, r)
        }
        fn model(&self) -> &str {
            "flaky"
        }
    }

    fn corpus(n: usize) -> Vec<Instance> {
        (0..n)
            .map(|i| Instance::new(format!("u{i:03}"), format!("utterance number {i}, fine I guess")))
            .collect()
    }

    #[test]
    fn stub_scaffold_for_sentiment() {
        let spec = TaskSpec::sentiment();
        let out = generate_scaffold(
            &StubProvider::new(spec.clone()),
            &spec,
            &corpus(1)[0],
            &GenConfig::default(),
        );
        let s = out.scaffold().expect("generated");
        assert_eq!(s.self_examples.len(), 3);
        assert_eq!(s.gen_meta.temperature, 0.2);
        assert_eq!(s.gen_meta.model, "stub");
        assert!(s.validate(&spec).is_ok());
    }

    #[test]
    fn garbage_fails_after_all_attempts() {
        let spec = TaskSpec::sentiment();
        let g = Garbage(AtomicU32::new(0));
        let cfg = GenConfig {
            max_retries: 2,
            ..GenConfig::default()
        };
        match generate_scaffold(&g, &spec, &corpus(1)[0], &cfg) {
            ScaffoldOutcome::Failed(f) => {
                assert_eq!(f.attempts, 3);
                assert!(f.cause.contains("EXAMPLES missing"), "{}", f.cause);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        assert_eq!(g.0.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transport_failure_carries_cause() {
        let spec = TaskSpec::opinion();
        let out = generate_scaffold(&Down, &spec, &corpus(1)[0], &GenConfig::default());
        let ScaffoldOutcome::Failed(f) = out else { panic!() };
        assert!(f.cause.contains("connection refused"));
    }

    #[test]
    fn retry_recovers() {
        let spec = TaskSpec::opinion();
        let flaky = Flaky {
            inner: StubProvider::new(spec.clone()),
            left: AtomicU32::new(2),
        };
        let out = generate_scaffold(&flaky, &spec, &corpus(1)[0], &GenConfig::default());
        assert!(out.scaffold().is_some());
    }

    #[test]
    fn negative_temperature_rejected() {
        let spec = TaskSpec::opinion();
        let cfg = GenConfig {
            temperature: -0.1,
            ..GenConfig::default()
        };
        let out = generate_scaffold(&StubProvider::new(spec.clone()), &spec, &corpus(1)[0], &cfg);
        assert!(matches!(out, ScaffoldOutcome::Failed(ScaffoldFailure { attempts: 0, .. })));
    }

    #[test]
    fn concurrent_batch_matches_sequential() {
        let spec = TaskSpec::sentiment();
        let stub = StubProvider::new(spec.clone());
        let insts = corpus(100);
        let cfg = GenConfig::default();
        let strip = |v: Vec<ScaffoldOutcome>| -> Vec<ScaffoldOutcome> {
            v.into_iter()
                .map(|o| match o {
                    ScaffoldOutcome::Generated(mut s) => {
                        s.gen_meta.created_at = DateTime::UNIX_EPOCH;
                        ScaffoldOutcome::Generated(s)
                    }
                    f => f,
                })
                .collect()
        };
        let seq = strip(generate_batch(&stub, &spec, &insts, &cfg, 1));
        let par = strip(generate_batch(&stub, &spec, &insts, &cfg, 8));
        assert_eq!(seq.len(), 100);
        assert_eq!(seq, par);
        for (o, i) in seq.iter().zip(&insts) {
            assert_eq!(o.instance_id(), &i.instance_id);
        }
    }
}
