use serde::{Deserialize, Serialize};

use super::adapter::{
    adapter_backward, adapter_forward_traced, AdapterParams, AdapterStack, AdapterTrace,
    Nonlinearity,
};
use crate::error::{GraspError, Result};
use crate::linalg::{self, Matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Data dimension `D` (input and velocity output).
    pub data_dim: usize,
    /// Hidden width `d`.
    pub hidden: usize,
    pub blocks: usize,
    pub cond_dim: usize,
    pub time_embed_dim: usize,
    /// Inner width of each block's feedforward.
    pub ffn_width: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden: 64,
            blocks: 4,
            cond_dim: 16,
            time_embed_dim: 8,
            ffn_width: 128,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("data_dim", self.data_dim),
            ("hidden", self.hidden),
            ("blocks", self.blocks),
            ("cond_dim", self.cond_dim),
            ("time_embed_dim", self.time_embed_dim),
            ("ffn_width", self.ffn_width),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(GraspError::invalid(format!(
                    "backbone {name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Sinusoidal time features: `sin(2^i t), cos(2^i t)` pairs, then `t` itself
/// when the dimension is odd.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let w = (1u64 << i.min(62)) as f64;
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    if dim % 2 == 1 {
        out.push(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Vector-input transformer-style stack: embedding of `(x_t, t, cond)` into
/// the hidden width, `L` residual feedforward blocks, linear velocity head.
/// Block `l` computes `F_l(h) = h + W2 gelu(W1 h + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_time: Matrix,
    pub w_cond: Matrix,
    pub blocks: Vec<FeedForward>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::child_rng(seed, "backbone-init");
        let c = config;
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let w_in = Matrix::gaussian(c.hidden, c.data_dim, fan(c.data_dim), &mut rng);
        let w_time = Matrix::gaussian(c.hidden, c.time_embed_dim, fan(c.time_embed_dim), &mut rng);
        let w_cond = Matrix::gaussian(c.hidden, c.cond_dim, fan(c.cond_dim), &mut rng);
        let residual_scale = 1.0 / (c.blocks as f64).sqrt();
        let blocks = (0..c.blocks)
            .map(|_| FeedForward {
                w1: Matrix::gaussian(c.ffn_width, c.hidden, fan(c.hidden), &mut rng),
                b1: vec![0.0; c.ffn_width],
                w2: Matrix::gaussian(
                    c.hidden,
                    c.ffn_width,
                    fan(c.ffn_width) * residual_scale,
                    &mut rng,
                ),
                b2: vec![0.0; c.hidden],
            })
            .collect();
        let w_out = Matrix::gaussian(c.data_dim, c.hidden, fan(c.hidden), &mut rng);
        Ok(Self {
            config,
            w_in,
            b_in: vec![0.0; c.hidden],
            w_time,
            w_cond,
            blocks,
            w_out,
            b_out: vec![0.0; c.data_dim],
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    /// Every parameter tensor, in a fixed order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            &self.w_in.data,
            &self.b_in,
            &self.w_time.data,
            &self.w_cond.data,
        ];
        for b in &self.blocks {
            v.extend([b.w1.data.as_slice(), &b.b1, &b.w2.data, &b.b2]);
        }
        v.extend([self.w_out.data.as_slice(), &self.b_out]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.w_in.data,
            &mut self.b_in,
            &mut self.w_time.data,
            &mut self.w_cond.data,
        ];
        for b in &mut self.blocks {
            v.push(&mut b.w1.data);
            v.push(&mut b.b1);
            v.push(&mut b.w2.data);
            v.push(&mut b.b2);
        }
        v.push(&mut self.w_out.data);
        v.push(&mut self.b_out);
        v
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|&v| v == 0.0))
    }

    /// Base feedforward block `F_l(h)` with its intermediate values.
    fn block_forward(&self, l: usize, h: &[f64]) -> (Vec<f64>, BlockTrace) {
        let b = &self.blocks[l];
        let mut pre = b.w1.matvec(h);
        for (p, bias) in pre.iter_mut().zip(&b.b1) {
            *p += bias;
        }
        let act: Vec<f64> = pre.iter().map(|&p| Nonlinearity::Gelu.apply(p)).collect();
        let mut out = h.to_vec();
        b.w2.matvec_add(&act, &mut out);
        for (o, bias) in out.iter_mut().zip(&b.b2) {
            *o += bias;
        }
        (out, BlockTrace { pre, act })
    }
}

#[derive(Debug, Clone)]
struct BlockTrace {
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Frozen backbone plus trainable adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub backbone: Backbone,
    pub adapters: AdapterStack,
    pub frozen: bool,
}

/// One forward evaluation with everything backprop needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x_t: Vec<f64>,
    t_feat: Vec<f64>,
    cond: Vec<f64>,
    /// Hidden states `h_0 ..= h_L`.
    hidden: Vec<Vec<f64>>,
    blocks: Vec<BlockTrace>,
    /// Per entry of the adapter list given to the forward pass.
    adapters: Vec<Option<AdapterTrace>>,
    pub output: Vec<f64>,
}

impl ModelState {
    pub fn new(backbone: Backbone, adapters: AdapterStack) -> Result<Self> {
        if adapters.hidden != backbone.config.hidden {
            return Err(GraspError::ShapeMismatch {
                expected: backbone.config.hidden,
                got: adapters.hidden,
                context: "adapter interface width",
            });
        }
        if let Some(&b) = adapters
            .placement
            .iter()
            .find(|&&b| b >= backbone.config.blocks)
        {
            return Err(GraspError::invalid(format!(
                "adapter placed on block {b} of a {}-block backbone",
                backbone.config.blocks
            )));
        }
        adapters.validate()?;
        Ok(Self {
            backbone,
            adapters,
            frozen: true,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.backbone.config
    }

    /// The adapters a sample routed to `expert` passes through, in block
    /// order. `None` routes through the bare backbone.
    pub fn routed_adapters(&self, expert: Option<usize>) -> Result<Vec<&AdapterParams>> {
        match expert {
            None => Ok(Vec::new()),
            Some(k) if k >= self.adapters.k => Err(GraspError::invalid(format!(
                "expert {k} out of range for K = {}",
                self.adapters.k
            ))),
            Some(k) => Ok(self.adapters.params[self.adapters.expert_indices(k)]
                .iter()
                .collect()),
        }
    }

    fn check_inputs(&self, x_t: &[f64], t: f64, cond: &[f64]) -> Result<()> {
        let c = &self.backbone.config;
        if x_t.len() != c.data_dim {
            return Err(GraspError::ShapeMismatch {
                expected: c.data_dim,
                got: x_t.len(),
                context: "x_t",
            });
        }
        if cond.len() != c.cond_dim {
            return Err(GraspError::ShapeMismatch {
                expected: c.cond_dim,
                got: cond.len(),
                context: "condition",
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(GraspError::invalid(format!("time {t} outside [0, 1]")));
        }
        Ok(())
    }

    fn embed(&self, x_t: &[f64], t_feat: &[f64], cond: &[f64]) -> Vec<f64> {
        let b = &self.backbone;
        let mut h = b.w_in.matvec(x_t);
        for (hi, bias) in h.iter_mut().zip(&b.b_in) {
            *hi += bias;
        }
        b.w_time.matvec_add(t_feat, &mut h);
        b.w_cond.matvec_add(cond, &mut h);
        h
    }

    /// Velocity prediction of the frozen backbone alone.
    pub fn backbone_forward(&self, x_t: &[f64], t: f64, cond: &[f64]) -> Result<Vec<f64>> {
        self.forward(x_t, t, cond, None)
    }

    /// Velocity prediction for a sample routed to `expert`.
    pub fn forward(
        &self,
        x_t: &[f64],
        t: f64,
        cond: &[f64],
        expert: Option<usize>,
    ) -> Result<Vec<f64>> {
        let adapters = self.routed_adapters(expert)?;
        Ok(self.forward_cached(x_t, t, cond, &adapters)?.output)
    }

    /// `h_{l+1} = F_l(h_l) + A_{k,l}(h_l)`; the adapter term is absent on
    /// blocks without adapters.
    pub fn grasp_block_forward(&self, block: usize, h: &[f64], expert: usize) -> Result<Vec<f64>> {
        let c = &self.backbone.config;
        if block >= c.blocks {
            return Err(GraspError::invalid(format!("block {block} out of range")));
        }
        if h.len() != c.hidden {
            return Err(GraspError::ShapeMismatch {
                expected: c.hidden,
                got: h.len(),
                context: "block input",
            });
        }
        let (mut out, _) = self.backbone.block_forward(block, h);
        if self.adapters.is_placed(block) {
            let adapter = self.adapters.get(expert, block).ok_or_else(|| {
                GraspError::invalid(format!(
                    "expert {expert} out of range for K = {} on adapted block {block}",
                    self.adapters.k
                ))
            })?;
            let (delta, _) = adapter_forward_traced(adapter, h, self.adapters.nonlinearity)?;
            linalg::axpy(1.0, &delta, &mut out);
        }
        Ok(out)
    }

    /// Forward pass through an explicit adapter list (each adapter acts on
    /// the block it is labelled with).
    pub fn forward_cached(
        &self,
        x_t: &[f64],
        t: f64,
        cond: &[f64],
        adapters: &[&AdapterParams],
    ) -> Result<ForwardCache> {
        self.check_inputs(x_t, t, cond)?;
        let c = &self.backbone.config;
        let t_feat = time_features(t, c.time_embed_dim);
        let mut hidden = Vec::with_capacity(c.blocks + 1);
        hidden.push(self.embed(x_t, &t_feat, cond));
        let mut traces = Vec::with_capacity(c.blocks);
        let mut adapter_traces: Vec<Option<AdapterTrace>> = vec![None; adapters.len()];
        for l in 0..c.blocks {
            let h = &hidden[l];
            let (mut next, trace) = self.backbone.block_forward(l, h);
            for (slot, adapter) in adapters.iter().enumerate() {
                if adapter.block == l {
                    let (delta, at) =
                        adapter_forward_traced(adapter, h, self.adapters.nonlinearity)?;
                    linalg::axpy(1.0, &delta, &mut next);
                    adapter_traces[slot] = Some(at);
                }
            }
            traces.push(trace);
            hidden.push(next);
        }
        let mut output = self.backbone.w_out.matvec(&hidden[c.blocks]);
        for (o, bias) in output.iter_mut().zip(&self.backbone.b_out) {
            *o += bias;
        }
        Ok(ForwardCache {
            x_t: x_t.to_vec(),
            t_feat,
            cond: cond.to_vec(),
            hidden,
            blocks: traces,
            adapters: adapter_traces,
            output,
        })
    }

    /// Reverse pass for `grad_out = dL/d output`. Accumulates backbone
    /// gradients when `backbone_grad` is given and adapter gradients into
    /// `adapter_grads` (aligned with the adapter list of the forward pass;
    /// `None` entries are skipped). Returns `dL/dx_t`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        adapters: &[&AdapterParams],
        mut backbone_grad: Option<&mut Backbone>,
        adapter_grads: &mut [Option<&mut AdapterParams>],
    ) -> Vec<f64> {
        let b = &self.backbone;
        let c = &b.config;
        debug_assert_eq!(adapter_grads.len(), adapters.len());
        if let Some(g) = backbone_grad.as_deref_mut() {
            g.w_out.add_outer(1.0, grad_out, &cache.hidden[c.blocks]);
            linalg::axpy(1.0, grad_out, &mut g.b_out);
        }
        let mut g_h = b.w_out.matvec_t(grad_out);
        for l in (0..c.blocks).rev() {
            let h = &cache.hidden[l];
            let block = &b.blocks[l];
            let trace = &cache.blocks[l];
            // residual path
            let mut g_prev = g_h.clone();
            let d_act = block.w2.matvec_t(&g_h);
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&trace.pre)
                .map(|(g, &p)| g * Nonlinearity::Gelu.derivative(p))
                .collect();
            if let Some(g) = backbone_grad.as_deref_mut() {
                let gb = &mut g.blocks[l];
                gb.w2.add_outer(1.0, &g_h, &trace.act);
                linalg::axpy(1.0, &g_h, &mut gb.b2);
                gb.w1.add_outer(1.0, &d_pre, h);
                linalg::axpy(1.0, &d_pre, &mut gb.b1);
            }
            linalg::axpy(1.0, &block.w1.matvec_t(&d_pre), &mut g_prev);
            for (slot, adapter) in adapters.iter().enumerate() {
                if adapter.block != l {
                    continue;
                }
                let at = cache.adapters[slot]
                    .as_ref()
                    .expect("adapter trace recorded in forward pass");
                let g_in = adapter_backward(
                    adapter,
                    h,
                    at,
                    &g_h,
                    self.adapters.nonlinearity,
                    adapter_grads[slot].as_deref_mut(),
                );
                linalg::axpy(1.0, &g_in, &mut g_prev);
            }
            g_h = g_prev;
        }
        if let Some(g) = backbone_grad {
            g.w_in.add_outer(1.0, &g_h, &cache.x_t);
            linalg::axpy(1.0, &g_h, &mut g.b_in);
            g.w_time.add_outer(1.0, &g_h, &cache.t_feat);
            g.w_cond.add_outer(1.0, &g_h, &cache.cond);
        }
        b.w_in.matvec_t(&g_h)
    }

    /// Forward-mode derivative of the velocity output along `dx` in `x_t`.
    pub fn jvp_x(
        &self,
        x_t: &[f64],
        t: f64,
        cond: &[f64],
        expert: Option<usize>,
        dx: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if dx.len() != x_t.len() {
            return Err(GraspError::ShapeMismatch {
                expected: x_t.len(),
                got: dx.len(),
                context: "tangent",
            });
        }
        let adapters = self.routed_adapters(expert)?;
        let cache = self.forward_cached(x_t, t, cond, &adapters)?;
        let b = &self.backbone;
        let nl = self.adapters.nonlinearity;
        let mut dh = b.w_in.matvec(dx);
        for l in 0..b.config.blocks {
            let block = &b.blocks[l];
            let trace = &cache.blocks[l];
            let d_pre = block.w1.matvec(&dh);
            let d_act: Vec<f64> = d_pre
                .iter()
                .zip(&trace.pre)
                .map(|(d, &p)| d * Nonlinearity::Gelu.derivative(p))
                .collect();
            let mut next = dh.clone();
            block.w2.matvec_add(&d_act, &mut next);
            for (slot, adapter) in adapters.iter().enumerate() {
                if adapter.block != l {
                    continue;
                }
                let at = cache.adapters[slot].as_ref().expect("adapter trace");
                let da_pre = adapter.w1.matvec(&dh);
                let da_act: Vec<f64> = da_pre
                    .iter()
                    .zip(&at.pre)
                    .map(|(d, &p)| d * nl.derivative(p))
                    .collect();
                adapter.w2.matvec_add(&da_act, &mut next);
            }
            dh = next;
        }
        let dout = b.w_out.matvec(&dh);
        Ok((cache.output, dout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::adapter::{AdapterInit, Placement};

    fn small_state(placement: Placement, k: usize, width: usize) -> ModelState {
        let config = BackboneConfig {
            data_dim: 2,
            hidden: 8,
            blocks: 2,
            cond_dim: 3,
            time_embed_dim: 4,
            ffn_width: 10,
        };
        let backbone = Backbone::new(config, 1).unwrap();
        let stack = AdapterStack::new(
            k,
            placement.resolve(2).unwrap(),
            width,
            8,
            Nonlinearity::Gelu,
            AdapterInit {
                w1_std: 0.5,
                seed: 2,
            },
        )
        .unwrap();
        ModelState::new(backbone, stack).unwrap()
    }

    fn randomize_up(state: &mut ModelState, seed: u64) {
        let mut rng = seed::rng(seed);
        for p in &mut state.adapters.params {
            p.w2 = Matrix::gaussian(p.w2.rows, p.w2.cols, 0.3, &mut rng);
        }
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let s = small_state(Placement::All, 2, 6);
        let a = s
            .backbone_forward(&[0.1, -0.4], 0.3, &[1.0, 0.0, 0.5])
            .unwrap();
        let b = s
            .backbone_forward(&[0.1, -0.4], 0.3, &[1.0, 0.0, 0.5])
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(s.backbone_forward(&[0.1], 0.3, &[1.0, 0.0, 0.5]).is_err());
        assert!(s
            .backbone_forward(&[0.1, 0.2], 1.3, &[1.0, 0.0, 0.5])
            .is_err());
        assert!(s.backbone_forward(&[0.1, 0.2], 0.5, &[1.0]).is_err());
    }

    #[test]
    fn zero_up_projection_is_identity() {
        let s = small_state(Placement::All, 3, 6);
        let x = [0.7, -0.2];
        let cond = [0.2, 0.1, -0.3];
        let base = s.backbone_forward(&x, 0.6, &cond).unwrap();
        for k in 0..3 {
            assert_eq!(s.forward(&x, 0.6, &cond, Some(k)).unwrap(), base);
        }
    }

    #[test]
    fn block_composition_matches_separate_adapter() {
        let mut s = small_state(Placement::All, 2, 6);
        randomize_up(&mut s, 9);
        let h: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let (base, _) = s.backbone.block_forward(1, &h);
        let outs: Vec<Vec<f64>> = (0..2)
            .map(|k| s.grasp_block_forward(1, &h, k).unwrap())
            .collect();
        assert_ne!(outs[0], outs[1]);
        for (k, out) in outs.iter().enumerate() {
            let delta = super::super::adapter::adapter_forward(
                s.adapters.get(k, 1).unwrap(),
                &h,
                Nonlinearity::Gelu,
            )
            .unwrap();
            let want: Vec<f64> = base.iter().zip(&delta).map(|(a, b)| a + b).collect();
            assert_eq!(out, &want);
        }
        assert!(s.grasp_block_forward(1, &h, 2).is_err());
    }

    #[test]
    fn unplaced_block_ignores_expert() {
        let mut s = small_state(Placement::Last(1), 2, 6);
        randomize_up(&mut s, 4);
        let h = vec![0.25; 8];
        assert_eq!(
            s.grasp_block_forward(0, &h, 0).unwrap(),
            s.grasp_block_forward(0, &h, 1).unwrap()
        );
        // an out-of-range expert is harmless where no adapter is placed
        assert!(s.grasp_block_forward(0, &h, 7).is_ok());
    }

    #[test]
    fn jvp_matches_central_differences() {
        let mut s = small_state(Placement::All, 2, 6);
        randomize_up(&mut s, 11);
        let x = [0.4, -0.9];
        let cond = [0.3, -0.1, 0.8];
        let dx = [0.6, 0.8];
        let (_, jvp) = s.jvp_x(&x, 0.35, &cond, Some(1), &dx).unwrap();
        let eps = 1e-5;
        let plus: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a - eps * b).collect();
        let fp = s.forward(&plus, 0.35, &cond, Some(1)).unwrap();
        let fm = s.forward(&minus, 0.35, &cond, Some(1)).unwrap();
        for i in 0..2 {
            let fd = (fp[i] - fm[i]) / (2.0 * eps);
            let rel = (fd - jvp[i]).abs() / fd.abs().max(jvp[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "component {i}: fd {fd} vs jvp {jvp:?}");
        }
    }

    #[test]
    fn vjp_is_adjoint_of_jvp() {
        let mut s = small_state(Placement::All, 2, 5);
        randomize_up(&mut s, 12);
        let x = [0.1, 0.2];
        let cond = [1.0, 0.0, 0.0];
        let dx = [-0.3, 0.5];
        let u = [0.7, -1.1];
        let (_, jvp) = s.jvp_x(&x, 0.8, &cond, Some(0), &dx).unwrap();
        let adapters = s.routed_adapters(Some(0)).unwrap();
        let cache = s.forward_cached(&x, 0.8, &cond, &adapters).unwrap();
        let mut none: Vec<Option<&mut AdapterParams>> = adapters.iter().map(|_| None).collect();
        let vjp = s.backward(&cache, &u, &adapters, None, &mut none);
        let lhs = linalg::dot(&u, &jvp);
        let rhs = linalg::dot(&vjp, &dx);
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}
