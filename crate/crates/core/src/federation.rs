//! Session orchestration: pre-training, communication rounds and the
//! per-round record stream.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::client::{Ablation, Architecture, Bandwidth, Client, ClientRoundResult, LossBreakdown, RoundInputs, TrainSettings};
use crate::data::MultiViewData;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Scores};
use crate::server::{GlobalState, Payload, RoundMessage, Server, ServerConfig};
use crate::tensor::AdamConfig;

/// Per-sample weights clients upload with their pre-training features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainWeights {
    /// Every sample weighs 1 on every client.
    Uniform,
    /// 1 where the client observed the sample, 0 where it was zero-filled.
    #[default]
    Presence,
}

impl std::str::FromStr for PretrainWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "presence" => Ok(Self::Presence),
            _ => Err(Error::Config(format!("unknown pre-training weights {s:?}, expected uniform or presence"))),
        }
    }
}

/// Everything that defines a session apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub clusters: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub k_neighbors: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub learning_rate: f64,
    pub bandwidth: Bandwidth,
    pub architecture: Architecture,
    pub ablation: Ablation,
    pub pretrain_weights: PretrainWeights,
    /// Seeded k-means runs wherever centers are fitted; the lowest inertia wins.
    pub kmeans_restarts: usize,
    pub seed: u64,
    /// Train clients on separate threads.
    pub parallel: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            clusters: 2,
            rounds: 10,
            epochs: t.epochs,
            pretrain_epochs: t.pretrain_epochs,
            k_neighbors: t.k_neighbors,
            gamma1: t.gamma1,
            gamma2: t.gamma2,
            learning_rate: t.optimizer.lr,
            bandwidth: t.bandwidth,
            architecture: Architecture::default(),
            ablation: Ablation::Full,
            pretrain_weights: PretrainWeights::default(),
            kmeans_restarts: t.kmeans_restarts,
            seed: 0,
            parallel: true,
        }
    }
}

impl SessionConfig {
    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            k_neighbors: self.k_neighbors,
            epochs: self.epochs,
            pretrain_epochs: self.pretrain_epochs,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            optimizer: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            bandwidth: self.bandwidth,
            kmeans_restarts: self.kmeans_restarts,
        }
    }

    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.clusters < 2 || self.clusters > samples {
            return Err(Error::Config(format!(
                "clusters = {} must lie in 2..={samples}",
                self.clusters
            )));
        }
        if self.k_neighbors == 0 || self.k_neighbors >= samples {
            return Err(Error::Config(format!(
                "k_neighbors = {} must lie in 1..{samples}",
                self.k_neighbors
            )));
        }
        if !(self.gamma1 >= 0.0) || !(self.gamma2 >= 0.0) {
            return Err(Error::Config("gamma1 and gamma2 must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be at least 1".into()));
        }
        if let Bandwidth::Fixed(t) = self.bandwidth {
            if !(t > 0.0) {
                return Err(Error::Config(format!("fixed bandwidth {t} must be positive")));
            }
        }
        let a = self.architecture;
        if a.gcn_layers == 0 || a.underlying_dim == 0 || a.latent_dim == 0 || a.hidden_width == 0 {
            return Err(Error::Config("architecture sizes must be at least 1".into()));
        }
        Ok(())
    }

    fn client_seed(&self, client: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(client as u64 + 1)
    }
}

/// One client's losses over a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client: usize,
    pub first: Option<LossBreakdown>,
    pub last: Option<LossBreakdown>,
    pub mean_silhouette: f64,
    pub degenerate: bool,
}

/// Round 0 is the aggregation of pre-training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientSummary>,
    pub view_weights: Vec<f64>,
    pub inertia: f64,
    pub metrics: Option<Scores>,
    pub elapsed_ms: f64,
}

impl RoundRecord {
    /// The record with wall-clock time zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            elapsed_ms: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub labels: Vec<usize>,
    pub records: Vec<RoundRecord>,
    pub state: GlobalState,
}

impl SessionOutcome {
    pub fn final_metrics(&self) -> Option<Scores> {
        self.records.last().and_then(|r| r.metrics)
    }
}

/// Run `f` on every client, one worker per client when `parallel`, and
/// collect results in client order. A panicking worker fails the call with
/// that client's id.
pub fn fan_out<T, F>(clients: &mut [Client], round: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut Client) -> Result<T> + Sync,
{
    let annotate = |c: &Client, r: Result<T>| r.map_err(|e| e.in_client(round, c.id()));
    if !parallel || clients.len() <= 1 {
        return clients
            .iter_mut()
            .enumerate()
            .map(|(i, c)| {
                let r = f(i, c);
                annotate(c, r)
            })
            .collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = clients
            .iter_mut()
            .enumerate()
            .map(|(i, c)| {
                let id = c.id();
                let f = &f;
                let h = s.spawn(move || {
                    let r = f(i, c);
                    annotate(c, r)
                });
                (id, h)
            })
            .collect();
        handles
            .into_iter()
            .map(|(id, h)| {
                h.join().unwrap_or_else(|panic| {
                    let msg = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "unknown panic".into());
                    Err(Error::TrainingAborted {
                        round,
                        client: id,
                        detail: format!("worker panicked: {msg}"),
                        losses: "none".into(),
                    })
                })
            })
            .collect()
    })
}

/// Train every client for one round concurrently.
pub fn run_clients_parallel(clients: &mut [Client], inputs: &[RoundInputs]) -> Result<Vec<ClientRoundResult>> {
    run_clients(clients, inputs, true)
}

pub fn run_clients(clients: &mut [Client], inputs: &[RoundInputs], parallel: bool) -> Result<Vec<ClientRoundResult>> {
    if inputs.len() != clients.len() {
        return Err(Error::Protocol(format!(
            "{} input bundles for {} clients",
            inputs.len(),
            clients.len()
        )));
    }
    let round = inputs.first().map_or(0, |i| i.round);
    fan_out(clients, round, parallel, |i, c| c.train_round(&inputs[i]))
}

/// Pass a message through the wire format, as a remote peer would see it.
fn transmit(msg: &RoundMessage, server: &Server) -> Result<RoundMessage> {
    RoundMessage::decode(&msg.encode()?, &server.header())
}

fn round_inputs(round: usize, msg: RoundMessage) -> Result<RoundInputs> {
    match msg.payload {
        Payload::GraphOnly { fused } => Ok(RoundInputs {
            round,
            fused,
            pseudo_labels: None,
            centers: None,
        }),
        Payload::Distribute {
            fused,
            centers,
            pseudo_labels,
        } => Ok(RoundInputs {
            round,
            fused,
            pseudo_labels: Some(pseudo_labels),
            centers: Some(centers),
        }),
        Payload::Upload { .. } => Err(Error::Protocol(format!(
            "client {} received an upload payload",
            msg.client
        ))),
    }
}

fn score(labels: &[usize], truth: Option<&Vec<usize>>) -> Result<Option<Scores>> {
    truth.map(|t| evaluate(labels, t)).transpose()
}

/// Run a full session and return the final labels and round records.
pub fn run_session(config: &SessionConfig, data: &MultiViewData) -> Result<SessionOutcome> {
    run_session_with(config, data, |_| Ok(()))
}

/// As [`run_session`], handing each record to `on_record` as soon as its
/// round finishes.
pub fn run_session_with(
    config: &SessionConfig,
    data: &MultiViewData,
    mut on_record: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<SessionOutcome> {
    data.validate()?;
    let n = data.n();
    config.validate(n)?;
    let m = data.num_views();
    let settings = config.train_settings();
    let truth = data.labels.as_ref();

    let mut clients = data
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            Client::new(
                i,
                v,
                config.clusters,
                config.architecture,
                config.ablation,
                settings,
                config.client_seed(i),
            )
            .map_err(|e| e.in_client(0, i))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut server = Server::new(ServerConfig {
        clients: m,
        samples: n,
        clusters: config.clusters,
        k_neighbors: config.k_neighbors,
        bandwidth: config.bandwidth,
        kmeans_restarts: config.kmeans_restarts,
        seed: config.seed,
    })?;
    let mut records = Vec::with_capacity(config.rounds + 1);

    let start = Instant::now();
    let pre = fan_out(&mut clients, 0, config.parallel, |_, c| c.pretrain().map(|p| p.features))?;
    let uploads = pre
        .into_iter()
        .zip(&clients)
        .enumerate()
        .map(|(i, (h, c))| {
            transmit(
                &RoundMessage {
                    round: 0,
                    client: i as u16,
                    payload: Payload::Upload {
                        features: h,
                        silhouettes: match config.pretrain_weights {
                            PretrainWeights::Uniform => vec![1.0; n],
                            PretrainWeights::Presence => c.presence_weights(),
                        },
                    },
                },
                &server,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut state, mut downlinks) = server.aggregate_pretrain(&uploads)?;
    let record = RoundRecord {
        round: 0,
        clients: Vec::new(),
        view_weights: state.view_weights.clone(),
        inertia: state.inertia,
        metrics: score(&state.labels, truth)?,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    on_record(&record)?;
    records.push(record);

    for round in 1..=config.rounds {
        let start = Instant::now();
        let inputs = downlinks
            .iter()
            .map(|d| round_inputs(round, transmit(d, &server)?))
            .collect::<Result<Vec<_>>>()?;
        let results = run_clients(&mut clients, &inputs, config.parallel)?;

        let summaries = results
            .iter()
            .enumerate()
            .map(|(i, r)| ClientSummary {
                client: i,
                first: r.trace.first().copied(),
                last: r.trace.last().copied(),
                mean_silhouette: r.output.silhouettes.iter().sum::<f64>() / n as f64,
                degenerate: r.degenerate,
            })
            .collect();
        let uploads = results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                transmit(
                    &RoundMessage {
                        round: round as u32,
                        client: i as u16,
                        payload: Payload::Upload {
                            features: r.output.features,
                            silhouettes: r.output.silhouettes,
                        },
                    },
                    &server,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let (s, d) = server.aggregate_round(&uploads)?;
        state = s;
        downlinks = d;

        let record = RoundRecord {
            round,
            clients: summaries,
            view_weights: state.view_weights.clone(),
            inertia: state.inertia,
            metrics: score(&state.labels, truth)?,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_record(&record)?;
        records.push(record);
    }

    Ok(SessionOutcome {
        labels: state.labels.clone(),
        records,
        state,
    })
}

/// Write one JSON object per line.
pub fn write_jsonl<W: Write>(mut w: W, record: &RoundRecord) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::Io(e.into()))?;
    writeln!(w, "{line}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, SynthSpec};

    fn tiny() -> (SessionConfig, MultiViewData) {
        let data = synth_blobs(&SynthSpec {
            samples: 24,
            clusters: 2,
            dims: vec![4, 3],
            separation: 8.0,
            seed: 3,
        })
        .unwrap();
        let config = SessionConfig {
            clusters: 2,
            rounds: 2,
            epochs: 3,
            pretrain_epochs: 2,
            k_neighbors: 4,
            architecture: Architecture {
                gcn_layers: 2,
                underlying_dim: 8,
                latent_dim: 4,
                hidden_width: 8,
            },
            seed: 5,
            ..SessionConfig::default()
        };
        (config, data)
    }

    #[test]
    fn zero_rounds_uses_initial_fusion() {
        let (mut config, data) = tiny();
        config.rounds = 0;
        let out = run_session(&config, &data).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.labels.len(), 24);
    }

    #[test]
    fn records_in_round_order() {
        let (config, data) = tiny();
        let out = run_session(&config, &data).unwrap();
        let rounds: Vec<usize> = out.records.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 1, 2]);
        assert!(out.final_metrics().is_some());
    }

    #[test]
    fn parallel_matches_sequential() {
        let (mut config, data) = tiny();
        let a = run_session(&config, &data).unwrap();
        config.parallel = false;
        let b = run_session(&config, &data).unwrap();
        assert_eq!(a.labels, b.labels);
        let strip = |o: &SessionOutcome| o.records.iter().map(RoundRecord::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn panicking_worker_names_client() {
        let (config, data) = tiny();
        let settings = config.train_settings();
        let mut clients: Vec<Client> = data
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| Client::new(i, v, 2, config.architecture, Ablation::Full, settings, 1).unwrap())
            .collect();
        let err = fan_out(&mut clients, 3, true, |i, _| {
            if i == 1 {
                panic!("boom");
            }
            Ok(())
        })
        .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("client 1") && text.contains("boom"), "{text}");
    }

    #[test]
    fn bad_config_rejected() {
        let (mut config, data) = tiny();
        config.k_neighbors = 24;
        assert!(matches!(run_session(&config, &data), Err(Error::Config(_))));
    }

    #[test]
    fn jsonl_line() {
        let r = RoundRecord {
            round: 1,
            clients: Vec::new(),
            view_weights: vec![1.5],
            inertia: 2.0,
            metrics: None,
            elapsed_ms: 0.0,
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with('\n'));
        let back: RoundRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, r);
    }
}
