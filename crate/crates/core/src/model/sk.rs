use rand::RngCore;
use skanet_tensor::{ParamStore, Real, Var};

use super::acb::Acb;
use super::layers::{Fwd, Linear};
use crate::error::Result;

/// Selective-kernel block over ACB branches with distinct dilations.
#[derive(Clone, Debug)]
pub struct SkAcb {
    pub branches: Vec<Acb>,
    pub reduce: Linear,
    pub attention: Vec<Linear>,
    pub channels: usize,
}

/// Intermediate values of one SK forward pass.
#[derive(Clone, Debug)]
pub struct SkTrace {
    /// Branch outputs after activation, `[B, C, H, W]` each.
    pub branches: Vec<Var>,
    /// Per-channel branch weights, `[B, C]` each.
    pub weights: Vec<Var>,
}

impl SkAcb {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        dilations: &[usize],
        bottleneck: usize,
        fused: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let branches = dilations
            .iter()
            .enumerate()
            .map(|(m, d)| Acb::new(store, &format!("{name}.branch{m}"), c_in, c_out, 1, *d, fused, rng))
            .collect::<Result<Vec<_>>>()?;
        let reduce = Linear::new(store, &format!("{name}.reduce"), c_out, bottleneck, true, rng)?;
        let attention = (0..dilations.len())
            .map(|m| Linear::new(store, &format!("{name}.attention{m}"), bottleneck, c_out, false, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { branches, reduce, attention, channels: c_out })
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(f, x)?.0)
    }

    /// Split into dilated branches, fuse by summation and pooling, then
    /// select with a per-channel softmax over branches.
    pub fn forward_traced<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<(Var, SkTrace)> {
        let branches = self.branches.iter().map(|b| b.forward(f, x)).collect::<Result<Vec<_>>>()?;
        let mut u = branches[0];
        for b in &branches[1..] {
            u = f.tape.add(u, *b)?;
        }
        let s = f.tape.global_avg_pool(u)?;
        let z = self.reduce.forward(f, s)?;
        let z = f.tape.relu(z);
        let logits = self.attention.iter().map(|a| a.forward(f, z)).collect::<Result<Vec<_>>>()?;
        let m = branches.len();
        let batch = f.tape.shape(x)[0];
        let c = self.channels;
        let stacked = f.tape.concat(&logits, 1)?;
        let stacked = f.tape.reshape(stacked, &[batch, m, c])?;
        let probs = f.tape.softmax(stacked, 1)?;
        let mut weights = Vec::with_capacity(m);
        let mut v: Option<Var> = None;
        for (i, branch) in branches.iter().enumerate() {
            let w = f.tape.narrow(probs, 1, i, 1)?;
            let w = f.tape.reshape(w, &[batch, c])?;
            weights.push(w);
            let scaled = f.tape.scale_channels(*branch, w)?;
            v = Some(match v {
                Some(acc) => f.tape.add(acc, scaled)?,
                None => scaled,
            });
        }
        Ok((v.expect("at least one branch"), SkTrace { branches, weights }))
    }
}
