//! DSVGD state machine.
//!
//! The server holds N global particles encoding q. Each client holds N local
//! particles encoding its approximate scaled likelihood t_k, plus a flag
//! that stays false until the client is first selected (t_k ≡ 1, i.e. a zero
//! score). A round runs the six steps
//!
//! 1. broadcast the global particles,
//! 2. collect per-client importance indicators,
//! 3. turn them into a selection distribution,
//! 4. sample one client,
//! 5. let that client move the global particles toward its tilted
//!    distribution `q / t_k · p_k`,
//! 6. upload the result, after which the client refits t_k ← (q_new / q_old) · t_k.
//!
//! The prior enters only through the initial particles; the tilted score
//! carries it via ∇ log q and never adds ∇ log p₀ again.

use crate::error::{Error, Result};
use crate::kernels::{adaptive_bandwidth, DEFAULT_KDE_BANDWIDTH};
use crate::linalg::{ParticleSet, ScoreMatrix};
use crate::models::{sample_minibatch, LabeledBatch, ModelSpec};
use crate::par;
use crate::rng::{seeded, SimRng};
use crate::score::{score_matrix, ScoreField};
use crate::selection::{
    hip_indicators, jensen_gap, ksd_indicators, sample_client, selection_distribution,
    IndicatorVector, SelectionScheme,
};
use crate::svgd::{kde_score_into, run_svgd, OptimizerState};

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ParticleSet,
    pub round: usize,
    pub rng: SimRng,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub shard: LabeledBatch,
    pub local: ParticleSet,
    pub t_initialized: bool,
    snapshot: Option<ParticleSet>,
}

impl ClientState {
    pub fn new(id: usize, shard: LabeledBatch, local: ParticleSet) -> Self {
        ClientState {
            id,
            shard,
            local,
            t_initialized: false,
            snapshot: None,
        }
    }

    /// Global particles as broadcast before this client's update, present
    /// only between the global and local update of a round.
    pub fn snapshot(&self) -> Option<&ParticleSet> {
        self.snapshot.as_ref()
    }
}

/// Knobs of the federated protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    /// L, SVGD steps on the global particles per round.
    pub global_steps: usize,
    /// L′, SVGD steps on the local particles per round.
    pub local_steps: usize,
    /// ε.
    pub global_step_size: f64,
    /// ε′.
    pub local_step_size: f64,
    pub adagrad_decay: f64,
    /// Bandwidth b of the density-estimate kernel.
    pub kde_bandwidth: f64,
    /// Minibatch size for likelihood scores during SVGD; `None` uses the
    /// full shard.
    pub minibatch: Option<usize>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            global_steps: 10,
            local_steps: 10,
            global_step_size: 0.05,
            local_step_size: 0.05,
            adagrad_decay: crate::svgd::DEFAULT_DECAY,
            kde_bandwidth: DEFAULT_KDE_BANDWIDTH,
            minibatch: None,
        }
    }
}

/// Score of the tilted distribution `q / t_k · p_k` seen by one client.
pub struct TiltedScore<'a> {
    global: &'a ParticleSet,
    local: Option<&'a ParticleSet>,
    model: &'a ModelSpec,
    shard: &'a LabeledBatch,
    kde_bandwidth: f64,
    minibatch: Option<usize>,
    rows: Option<Vec<usize>>,
}

/// Builds the tilted score field for `client` against broadcast particles
/// `global`. With `minibatch` set, the likelihood term is estimated from a
/// fresh uniform minibatch at every SVGD step, rescaled to the shard size.
pub fn tilted_field<'a>(
    client: &'a ClientState,
    global: &'a ParticleSet,
    model: &'a ModelSpec,
    kde_bandwidth: f64,
    minibatch: Option<usize>,
) -> Result<TiltedScore<'a>> {
    if global.cols() != model.dim() || client.local.cols() != model.dim() {
        return Err(Error::usage("particle dimension does not match the model"));
    }
    if client.shard.features.cols() != model.feature_dim() {
        return Err(Error::usage("client shard does not match the model"));
    }
    if !(kde_bandwidth > 0.0) {
        return Err(Error::usage("KDE bandwidth must be positive"));
    }
    Ok(TiltedScore {
        global,
        local: client.t_initialized.then_some(&client.local),
        model,
        shard: &client.shard,
        kde_bandwidth,
        minibatch: minibatch.filter(|&m| m < client.shard.len()),
        rows: None,
    })
}

impl ScoreField for TiltedScore<'_> {
    fn dim(&self) -> usize {
        self.global.cols()
    }

    fn score_into(&self, theta: &[f64], out: &mut [f64]) {
        let (rows, scale) = match &self.rows {
            Some(r) => (Some(r.as_slice()), self.shard.len() as f64 / r.len() as f64),
            None => (None, 1.0),
        };
        self.model
            .likelihood_score_into(theta, self.shard, rows, scale, out);
        kde_score_into(theta, self.global, self.kde_bandwidth, 1.0, out);
        if let Some(local) = self.local {
            kde_score_into(theta, local, self.kde_bandwidth, -1.0, out);
        }
    }

    fn begin_step(&mut self, rng: &mut SimRng) {
        if let Some(m) = self.minibatch {
            self.rows = Some(sample_minibatch(self.shard.len(), m, rng));
        }
    }
}

/// Public form of [`tilted_field`] with the full shard.
pub fn tilted_score<'a>(
    client: &'a ClientState,
    global: &'a ParticleSet,
    model: &'a ModelSpec,
    kde_bandwidth: f64,
) -> Result<TiltedScore<'a>> {
    tilted_field(client, global, model, kde_bandwidth, None)
}

/// Score of the refreshed approximate likelihood
/// `t_k ← (q_new / q_old) · t_k`.
pub struct UpdatedTScore<'a> {
    new_global: &'a ParticleSet,
    old_global: &'a ParticleSet,
    local: Option<&'a ParticleSet>,
    kde_bandwidth: f64,
}

impl ScoreField for UpdatedTScore<'_> {
    fn dim(&self) -> usize {
        self.new_global.cols()
    }

    fn score_into(&self, theta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        kde_score_into(theta, self.new_global, self.kde_bandwidth, 1.0, out);
        kde_score_into(theta, self.old_global, self.kde_bandwidth, -1.0, out);
        if let Some(local) = self.local {
            kde_score_into(theta, local, self.kde_bandwidth, 1.0, out);
        }
    }
}

pub fn t_score_after_update<'a>(
    client: &'a ClientState,
    new_global: &'a ParticleSet,
    kde_bandwidth: f64,
) -> Result<UpdatedTScore<'a>> {
    let old_global = client
        .snapshot
        .as_ref()
        .ok_or_else(|| Error::usage(format!("client {} has no pre-update snapshot", client.id)))?;
    if !old_global.same_shape(new_global) {
        return Err(Error::usage(
            "new global particles do not match the snapshot shape",
        ));
    }
    Ok(UpdatedTScore {
        new_global,
        old_global,
        local: client.t_initialized.then_some(&client.local),
        kde_bandwidth,
    })
}

/// The client runs L SVGD steps on a copy of the broadcast particles
/// toward its tilted distribution and keeps the broadcast set as snapshot.
pub fn client_global_update(
    client: &mut ClientState,
    global: &ParticleSet,
    model: &ModelSpec,
    config: &FederationConfig,
    rng: &mut SimRng,
) -> Result<ParticleSet> {
    if config.global_steps == 0 {
        return Err(Error::usage("global SVGD steps L must be at least 1"));
    }
    let updated = {
        let mut field = tilted_field(
            client,
            global,
            model,
            config.kde_bandwidth,
            config.minibatch,
        )?;
        let mut opt = OptimizerState::new(config.global_step_size).with_decay(config.adagrad_decay);
        run_svgd(global, &mut field, config.global_steps, &mut opt, rng)?
    };
    client.snapshot = Some(global.clone());
    Ok(updated)
}

/// Refits the local particles to the refreshed t_k,
/// then marks t_k initialized and drops the snapshot.
pub fn client_local_update(
    client: &mut ClientState,
    new_global: &ParticleSet,
    config: &FederationConfig,
    rng: &mut SimRng,
) -> Result<()> {
    let updated = {
        let mut field = t_score_after_update(client, new_global, config.kde_bandwidth)?;
        let mut opt = OptimizerState::new(config.local_step_size).with_decay(config.adagrad_decay);
        run_svgd(&client.local, &mut field, config.local_steps, &mut opt, rng)?
    };
    client.local = updated;
    client.t_initialized = true;
    client.snapshot = None;
    Ok(())
}

/// What one round did.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub selected: usize,
    pub indicators: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub jensen_gap: f64,
    pub payload_scalars: usize,
    /// Stein bandwidth used for the indicators.
    pub stein_bandwidth: f64,
}

/// Likelihood score matrices ∇ log p_k at the global particles, one per
/// client (full shard, tempered).
pub fn likelihood_score_matrices(
    clients: &[ClientState],
    global: &ParticleSet,
    model: &ModelSpec,
) -> Result<Vec<ScoreMatrix>> {
    let results = par::map_indices(clients.len(), |k| {
        let field = LikelihoodScore {
            model,
            shard: &clients[k].shard,
        };
        score_matrix(&field, global)
    });
    results.into_iter().collect()
}

struct LikelihoodScore<'a> {
    model: &'a ModelSpec,
    shard: &'a LabeledBatch,
}

impl ScoreField for LikelihoodScore<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn score_into(&self, theta: &[f64], out: &mut [f64]) {
        self.model
            .likelihood_score_into(theta, self.shard, None, 1.0, out);
    }
}

/// Indicators for this round, plus the Stein bandwidth they were computed with.
pub fn compute_indicators(
    server: &ServerState,
    clients: &[ClientState],
    scheme: SelectionScheme,
    model: &ModelSpec,
    config: &FederationConfig,
) -> Result<(IndicatorVector, f64)> {
    let h = adaptive_bandwidth(&server.global);
    let k = clients.len();
    let ind = match scheme {
        SelectionScheme::KsdBased => {
            ksd_indicators(clients, &server.global, model, config.kde_bandwidth, h)?
        }
        SelectionScheme::HipBased => {
            let scores = likelihood_score_matrices(clients, &server.global, model)?;
            hip_indicators(&scores, &server.global, h)?
        }
        SelectionScheme::RoundRobin | SelectionScheme::RandomUniform => {
            IndicatorVector::uniform(k, scheme)
        }
    };
    Ok((ind, h))
}

/// Runs one full round, mutating the server and exactly one client.
pub fn federated_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    scheme: SelectionScheme,
    model: &ModelSpec,
    config: &FederationConfig,
) -> Result<RoundReport> {
    let k = clients.len();
    if k == 0 {
        return Err(Error::usage("a round needs at least one client"));
    }
    let (indicators, h) = compute_indicators(server, clients, scheme, model, config)?;
    let probabilities = selection_distribution(&indicators.values)?;
    let gap = jensen_gap(&indicators.values)?;
    let selected = match scheme {
        SelectionScheme::RoundRobin => server.round % k,
        _ => sample_client(&probabilities, &mut server.rng)?,
    };

    let client = &mut clients[selected];
    let new_global = client_global_update(client, &server.global, model, config, &mut server.rng)?;
    client_local_update(client, &new_global, config, &mut server.rng)?;

    server.global = new_global;
    server.round += 1;
    Ok(RoundReport {
        round: server.round,
        selected,
        indicators: indicators.values,
        probabilities,
        jensen_gap: gap,
        payload_scalars: scheme.payload_scalars(k, server.global.rows(), server.global.cols()),
        stein_bandwidth: h,
    })
}

/// Draws N global particles from the prior and gives every client a copy as
/// its initial local particles.
pub fn initialize(
    model: &ModelSpec,
    shards: Vec<LabeledBatch>,
    particles: usize,
    seed: u64,
) -> Result<(ServerState, Vec<ClientState>)> {
    if particles == 0 {
        return Err(Error::usage("need at least one particle"));
    }
    if shards.is_empty() {
        return Err(Error::usage("need at least one client"));
    }
    let mut rng = seeded(seed);
    let global = model.sample_prior(particles, &mut rng)?;
    let clients = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| ClientState::new(id, shard, global.clone()))
        .collect();
    Ok((
        ServerState {
            global,
            round: 0,
            rng,
        },
        clients,
    ))
}
