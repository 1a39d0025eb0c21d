//! Server-side aggregation algebra and optimizers.
//!
//! Clients upload pseudo-gradients (the parameter delta accumulated by local
//! SGD). The server either averages them directly (weighted FedAvg) or, when
//! clients trained different-size sub-nets, groups them by sub-net size,
//! averages within each group, and sums the group means. Every reduction
//! sorts updates by client id first so results do not depend on arrival
//! order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::SubNetSpec;
use crate::params::ParamSet;

/// One client's contribution to a round.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub client_id: u64,
    /// Sub-net the client trained.
    pub subnet: SubNetSpec,
    /// Parameter delta `w_after - w_before`; a descent direction, so server
    /// optimizers apply it with a plus sign.
    pub pseudo_gradient: ParamSet,
    pub num_samples: usize,
    pub local_epochs_run: u32,
}

impl ClientUpdate {
    /// Verify that every segment outside the declared sub-net is exactly
    /// zero. The block/head layout is read off the segmentation itself.
    pub fn check_zero_outside_subnet(&self) -> Result<()> {
        let (blocks, heads) = self.pseudo_gradient.layout();
        if heads == 0 || blocks % heads != 0 {
            return Err(Error::Aggregation(format!(
                "client {}: segmentation has no regular exit layout ({blocks} blocks, {heads} heads)",
                self.client_id
            )));
        }
        let exit_every = blocks / heads;
        let top_block = self.subnet.exits * exit_every;
        for seg in self.pseudo_gradient.segments() {
            let covered = if seg.id.role.is_block() {
                seg.id.index <= top_block
            } else {
                seg.id.index <= self.subnet.exits
            };
            if !covered && seg.data.iter().any(|&x| x != 0.0) {
                return Err(Error::UpdateIntegrity {
                    client_id: self.client_id,
                    segment: seg.id.name(),
                });
            }
        }
        Ok(())
    }
}

/// Client weighting for plain FedAvg.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    /// gamma_c = 1 / |C|
    Uniform,
    /// gamma_c = n_c / sum(n_c)
    BySamples,
}

fn sorted_refs(updates: &[ClientUpdate]) -> Vec<&ClientUpdate> {
    let mut refs: Vec<&ClientUpdate> = updates.iter().collect();
    refs.sort_by_key(|u| u.client_id);
    refs
}

fn check_homogeneous(updates: &[&ClientUpdate]) -> Result<()> {
    let first = &updates[0].pseudo_gradient;
    for u in &updates[1..] {
        if !first.same_segmentation(&u.pseudo_gradient) {
            return Err(Error::Aggregation(format!(
                "client {} update has mismatched segmentation",
                u.client_id
            )));
        }
    }
    Ok(())
}

/// Weighted federated averaging of client pseudo-gradients.
pub fn fedavg(updates: &[ClientUpdate], weighting: Weighting) -> Result<ParamSet> {
    if updates.is_empty() {
        return Err(Error::Aggregation("fedavg: no updates".into()));
    }
    let refs = sorted_refs(updates);
    check_homogeneous(&refs)?;
    match weighting {
        Weighting::Uniform => {
            // Sum then scale once, matching the grouped path bitwise when
            // all clients share the full model.
            let mut acc = refs[0].pseudo_gradient.zeros_like();
            for u in &refs {
                acc.add_scaled(&u.pseudo_gradient, 1.0)?;
            }
            acc.scale(1.0 / refs.len() as f64);
            Ok(acc)
        }
        Weighting::BySamples => {
            let total: usize = refs.iter().map(|u| u.num_samples).sum();
            if total == 0 {
                return Err(Error::Aggregation("fedavg: zero total samples".into()));
            }
            let mut acc = refs[0].pseudo_gradient.zeros_like();
            for u in &refs {
                let gamma = u.num_samples as f64 / total as f64;
                acc.add_scaled(&u.pseudo_gradient, gamma)?;
            }
            Ok(acc)
        }
    }
}

/// Heterogeneous aggregation: group updates by sub-net size, average within
/// each group, and sum the group means. Groups with no clients contribute
/// nothing; parameters covered by no client's sub-net come back exactly
/// zero.
pub fn aggregate_heterogeneous(updates: &[ClientUpdate]) -> Result<ParamSet> {
    if updates.is_empty() {
        return Err(Error::Aggregation(
            "aggregate_heterogeneous: no updates".into(),
        ));
    }
    let refs = sorted_refs(updates);
    check_homogeneous(&refs)?;
    for u in &refs {
        u.check_zero_outside_subnet()?;
    }

    let mut groups: BTreeMap<usize, Vec<&ClientUpdate>> = BTreeMap::new();
    for u in refs {
        groups.entry(u.subnet.exits).or_default().push(u);
    }

    let mut total = updates[0].pseudo_gradient.zeros_like();
    for (_, members) in groups {
        let mut group_sum = total.zeros_like();
        for u in &members {
            group_sum.add_scaled(&u.pseudo_gradient, 1.0)?;
        }
        group_sum.scale(1.0 / members.len() as f64);
        total.add_scaled(&group_sum, 1.0)?;
    }
    Ok(total)
}

/// Diagnostic view of how heterogeneous coverage re-weights each exit.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveWeightReport {
    /// |C_m| per sub-net size m = 1..M.
    pub client_counts: Vec<usize>,
    /// Estimated pi(m) = |C_m| / |C|.
    pub pi: Vec<f64>,
    /// xi_m = (M - m) / pi(m) when the group is populated, else 0.
    pub xi: Vec<f64>,
    /// Effective per-exit learning rate xi_m * base_lr.
    pub eta: Vec<f64>,
}

impl EffectiveWeightReport {
    pub fn total_clients(&self) -> usize {
        self.client_counts.iter().sum()
    }
}

/// Compute the effective-weight diagnostic for one round of updates. Never
/// fed back into aggregation.
pub fn compute_effective_weights(
    updates: &[ClientUpdate],
    num_exits: usize,
    base_lr: f64,
) -> Result<EffectiveWeightReport> {
    if num_exits == 0 {
        return Err(Error::Aggregation(
            "compute_effective_weights: M = 0".into(),
        ));
    }
    let mut client_counts = vec![0usize; num_exits];
    for u in updates {
        if u.subnet.exits < 1 || u.subnet.exits > num_exits {
            return Err(Error::Aggregation(format!(
                "client {} reports sub-net size {} outside [1, {num_exits}]",
                u.client_id, u.subnet.exits
            )));
        }
        client_counts[u.subnet.exits - 1] += 1;
    }
    let total = updates.len();
    let mut pi = vec![0.0; num_exits];
    let mut xi = vec![0.0; num_exits];
    let mut eta = vec![0.0; num_exits];
    for m in 1..=num_exits {
        let count = client_counts[m - 1];
        if total > 0 {
            pi[m - 1] = count as f64 / total as f64;
        }
        if count > 0 {
            xi[m - 1] = (num_exits - m) as f64 / pi[m - 1];
        }
        eta[m - 1] = xi[m - 1] * base_lr;
    }
    Ok(EffectiveWeightReport {
        client_counts,
        pi,
        xi,
        eta,
    })
}

/// FedAdam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FedAdamConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for FedAdamConfig {
    fn default() -> Self {
        FedAdamConfig {
            eta: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-3,
        }
    }
}

/// Global model plus server-optimizer state.
#[derive(Clone, Debug)]
pub struct ServerState {
    /// Completed aggregation rounds.
    pub round: u64,
    pub global: ParamSet,
    pub adam_m: ParamSet,
    pub adam_v: ParamSet,
    pub opt: FedAdamConfig,
}

impl ServerState {
    pub fn new(global: ParamSet, opt: FedAdamConfig) -> Self {
        let adam_m = global.zeros_like();
        let adam_v = global.zeros_like();
        ServerState {
            round: 0,
            global,
            adam_m,
            adam_v,
            opt,
        }
    }
}

fn check_step_inputs(state: &ServerState, pseudo_grad: &ParamSet) -> Result<()> {
    if !state.global.same_segmentation(pseudo_grad) {
        return Err(Error::Aggregation(
            "server step: segmentation mismatch".into(),
        ));
    }
    if !pseudo_grad.all_finite() {
        return Err(Error::Divergence(
            "server step: non-finite pseudo-gradient".into(),
        ));
    }
    Ok(())
}

/// Plain server step: w(tau+1) = w(tau) + eta * grad. The pseudo-gradient is
/// already a descent-direction delta, hence the plus sign.
pub fn server_step_sgd(
    mut state: ServerState,
    pseudo_grad: &ParamSet,
    eta: f64,
) -> Result<ServerState> {
    check_step_inputs(&state, pseudo_grad)?;
    state.global.add_scaled(pseudo_grad, eta)?;
    if !state.global.all_finite() {
        return Err(Error::Divergence(
            "server step produced non-finite parameters".into(),
        ));
    }
    state.round += 1;
    state.global.created_round = state.round;
    Ok(state)
}

/// Adaptive server step on the aggregated pseudo-gradient:
/// m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;  w <- w + eta * m / (sqrt(v) + eps).
/// Moments persist across rounds.
pub fn server_step_fedadam(mut state: ServerState, pseudo_grad: &ParamSet) -> Result<ServerState> {
    check_step_inputs(&state, pseudo_grad)?;
    let FedAdamConfig {
        eta,
        beta1,
        beta2,
        epsilon,
    } = state.opt;
    for ((m_seg, v_seg), (g_seg, w_seg)) in state
        .adam_m
        .segments_mut()
        .iter_mut()
        .zip(state.adam_v.segments_mut())
        .zip(
            pseudo_grad
                .segments()
                .iter()
                .zip(state.global.segments_mut()),
        )
    {
        for i in 0..g_seg.data.len() {
            let g = g_seg.data[i];
            m_seg.data[i] = beta1 * m_seg.data[i] + (1.0 - beta1) * g;
            v_seg.data[i] = beta2 * v_seg.data[i] + (1.0 - beta2) * g * g;
            w_seg.data[i] += eta * m_seg.data[i] / (v_seg.data[i].sqrt() + epsilon);
        }
    }
    if !state.global.all_finite() {
        return Err(Error::Divergence(
            "fedadam step produced non-finite parameters".into(),
        ));
    }
    state.round += 1;
    state.global.created_round = state.round;
    Ok(state)
}
