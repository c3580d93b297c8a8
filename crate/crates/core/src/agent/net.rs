//! Double-branch network: a feedforward branch on the current input and a
//! recurrent branch over `(o_t, a_{t−1})`, joined before the output head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Activation;
use crate::autodiff::{Bound, Dense, Graph, Lstm, LstmState, ParamSet, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Outputs an allocation in `[0, e_max]`.
    Actor,
    /// Outputs a scalar value; also takes the action in its feedforward
    /// branch.
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub e_max: f64,
    pub fc_width: usize,
    pub lstm_width: usize,
    pub head_width: usize,
    pub recurrent: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct RecurrentBranch {
    pre: Dense,
    lstm: Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleBranchNet {
    pub spec: NetSpec,
    fc: Dense,
    branch: Option<RecurrentBranch>,
    head: Dense,
    out: Dense,
}

impl DoubleBranchNet {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> (Self, ParamSet) {
        let mut ps = ParamSet::new();
        let fc_in = spec.obs_dim + if spec.kind == NetKind::Critic { spec.action_dim } else { 0 };
        let fc = Dense::new(&mut ps, "fc", fc_in, spec.fc_width, rng);
        let branch = spec.recurrent.then(|| {
            let pre = Dense::new(&mut ps, "lstm_in", spec.obs_dim + spec.action_dim, spec.lstm_width, rng);
            let lstm = Lstm::new(&mut ps, "lstm", spec.lstm_width, spec.lstm_width, rng);
            RecurrentBranch { pre, lstm }
        });
        let joined = spec.fc_width + if spec.recurrent { spec.lstm_width } else { 0 };
        let head = Dense::new(&mut ps, "head", joined, spec.head_width, rng);
        let out_dim = match spec.kind {
            NetKind::Actor => spec.action_dim,
            NetKind::Critic => 1,
        };
        let out = Dense::new(&mut ps, "out", spec.head_width, out_dim, rng);
        (
            DoubleBranchNet {
                spec,
                fc,
                branch,
                head,
                out,
            },
            ps,
        )
    }

    pub fn is_recurrent(&self) -> bool {
        self.branch.is_some()
    }

    fn act(&self, g: &mut Graph, x: Var) -> Var {
        match self.spec.activation {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }

    /// Actions enter the network divided by `e_max`.
    fn scaled(&self, g: &mut Graph, a: Var) -> Var {
        g.scale(a, 1.0 / self.spec.e_max)
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> Option<LstmState> {
        self.branch.as_ref().map(|b| b.lstm.zero_state(g, batch))
    }

    /// Advances the recurrent branch by one step; returns its features.
    /// `None` for the feedforward ablation.
    pub fn recurrent_step(
        &self,
        g: &mut Graph,
        p: &Bound,
        obs: Var,
        prev_action: Var,
        state: Option<LstmState>,
    ) -> Result<Option<LstmState>> {
        let (Some(b), Some(s)) = (&self.branch, state) else {
            return Ok(None);
        };
        let pa = self.scaled(g, prev_action);
        let x = g.concat(&[obs, pa])?;
        let x = b.pre.forward(g, p, x)?;
        let x = self.act(g, x);
        Ok(Some(b.lstm.step(g, p, x, s)?))
    }

    /// Feedforward branch, join and output layer. `action` is required for
    /// critics, `features` for recurrent nets.
    pub fn head(&self, g: &mut Graph, p: &Bound, obs: Var, action: Option<Var>, features: Option<Var>) -> Result<Var> {
        let x = match (self.spec.kind, action) {
            (NetKind::Critic, Some(a)) => {
                let a = self.scaled(g, a);
                g.concat(&[obs, a])?
            }
            _ => obs,
        };
        let x = self.fc.forward(g, p, x)?;
        let x = self.act(g, x);
        let x = match features {
            Some(f) => g.concat(&[x, f])?,
            None => x,
        };
        let x = self.head.forward(g, p, x)?;
        let x = self.act(g, x);
        let y = self.out.forward(g, p, x)?;
        Ok(match self.spec.kind {
            NetKind::Actor => {
                let s = g.sigmoid(y);
                g.scale(s, self.spec.e_max)
            }
            NetKind::Critic => y,
        })
    }

    /// Runs the network over a whole batch of sequences (full BPTT):
    /// `obs[t]`, `prev[t]` and, for critics, `actions[t]` are `batch×dim`.
    pub fn forward_sequence(
        &self,
        g: &mut Graph,
        p: &Bound,
        obs: &[Var],
        prev: &[Var],
        actions: Option<&[Var]>,
    ) -> Result<Vec<Var>> {
        let batch = obs.first().map_or(0, |&o| g.shape(o).0);
        let mut state = self.zero_state(g, batch);
        let mut out = Vec::with_capacity(obs.len());
        for t in 0..obs.len() {
            state = self.recurrent_step(g, p, obs[t], prev[t], state)?;
            let a = actions.map(|a| a[t]);
            out.push(self.head(g, p, obs[t], a, state.map(|s| s.h))?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: NetKind, recurrent: bool) -> NetSpec {
        NetSpec {
            kind,
            obs_dim: 3,
            action_dim: 2,
            e_max: 10.0,
            fc_width: 4,
            lstm_width: 5,
            head_width: 6,
            recurrent,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn zero_weight_actor_outputs_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (net, mut ps) = DoubleBranchNet::new(spec(NetKind::Actor, true), &mut rng);
        ps.values_mut().for_each(|m| m.data.fill(0.0));
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let o = g.leaf(Matrix::filled(1, 3, 1.0));
        let a = g.leaf(Matrix::zeros(1, 2));
        let y = net.forward_sequence(&mut g, &p, &[o], &[a], None).unwrap();
        assert_eq!(g.value(y[0]).data, vec![5.0, 5.0]);
    }

    #[test]
    fn ablation_has_no_recurrent_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, pa) = DoubleBranchNet::new(spec(NetKind::Critic, true), &mut rng);
        let (b, pb) = DoubleBranchNet::new(spec(NetKind::Critic, false), &mut rng);
        assert!(a.is_recurrent() && !b.is_recurrent());
        assert!(pb.num_scalars() < pa.num_scalars());
    }
}
