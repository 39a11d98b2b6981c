use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::linalg::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    Gelu,
    Relu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let th = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            }
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Nonlinearity::Gelu),
            "relu" => Ok(Nonlinearity::Relu),
            other => Err(GraspError::invalid(format!(
                "unknown nonlinearity `{other}`"
            ))),
        }
    }
}

/// One expert's adapter at one block: `h -> W2 sigma(W1 h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    /// Down projection, `width x d`.
    pub w1: Matrix,
    /// Up projection, `d x width`.
    pub w2: Matrix,
    pub expert: usize,
    pub block: usize,
}

impl AdapterParams {
    pub fn zeros(hidden: usize, width: usize, expert: usize, block: usize) -> Self {
        Self {
            w1: Matrix::zeros(width, hidden),
            w2: Matrix::zeros(hidden, width),
            expert,
            block,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols
    }

    pub fn width(&self) -> usize {
        self.w1.rows
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.w2.len()
    }
}

/// Pre-activation `W1 h` and activation `sigma(W1 h)`, kept for backprop.
#[derive(Debug, Clone)]
pub struct AdapterTrace {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

pub fn adapter_forward(
    adapter: &AdapterParams,
    h: &[f64],
    nonlinearity: Nonlinearity,
) -> Result<Vec<f64>> {
    adapter_forward_traced(adapter, h, nonlinearity).map(|(out, _)| out)
}

pub(crate) fn adapter_forward_traced(
    adapter: &AdapterParams,
    h: &[f64],
    nonlinearity: Nonlinearity,
) -> Result<(Vec<f64>, AdapterTrace)> {
    if h.len() != adapter.hidden() {
        return Err(GraspError::ShapeMismatch {
            expected: adapter.hidden(),
            got: h.len(),
            context: "adapter input",
        });
    }
    let pre = adapter.w1.matvec(h);
    let act: Vec<f64> = pre.iter().map(|&v| nonlinearity.apply(v)).collect();
    let out = adapter.w2.matvec(&act);
    Ok((out, AdapterTrace { pre, act }))
}

/// Accumulate parameter gradients of one adapter application and return the
/// gradient with respect to its input `h`.
pub(crate) fn adapter_backward(
    adapter: &AdapterParams,
    h: &[f64],
    trace: &AdapterTrace,
    grad_out: &[f64],
    nonlinearity: Nonlinearity,
    grad: Option<&mut AdapterParams>,
) -> Vec<f64> {
    let d_act = adapter.w2.matvec_t(grad_out);
    let d_pre: Vec<f64> = d_act
        .iter()
        .zip(&trace.pre)
        .map(|(g, &p)| g * nonlinearity.derivative(p))
        .collect();
    if let Some(g) = grad {
        g.w2.add_outer(1.0, grad_out, &trace.act);
        g.w1.add_outer(1.0, &d_pre, h);
    }
    adapter.w1.matvec_t(&d_pre)
}

/// Which blocks carry adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "blocks")]
pub enum Placement {
    All,
    /// The last quarter of the blocks, at least one.
    LastQuarter,
    /// The last `m` blocks.
    Last(usize),
    Blocks(Vec<usize>),
}

impl Default for Placement {
    fn default() -> Self {
        Placement::LastQuarter
    }
}

impl Placement {
    pub fn resolve(&self, blocks: usize) -> Result<BTreeSet<usize>> {
        let set: BTreeSet<usize> = match self {
            Placement::All => (0..blocks).collect(),
            Placement::LastQuarter => {
                let m = blocks.div_ceil(4).max(1);
                (blocks.saturating_sub(m)..blocks).collect()
            }
            Placement::Last(m) => {
                if *m == 0 || *m > blocks {
                    return Err(GraspError::invalid(format!(
                        "cannot place adapters on the last {m} of {blocks} blocks"
                    )));
                }
                (blocks - m..blocks).collect()
            }
            Placement::Blocks(list) => {
                if let Some(bad) = list.iter().find(|&&b| b >= blocks) {
                    return Err(GraspError::invalid(format!(
                        "adapter block {bad} out of range for {blocks} blocks"
                    )));
                }
                list.iter().copied().collect()
            }
        };
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterInit {
    /// Std of the down projection entries; `W2` always starts at zero.
    pub w1_std: f64,
    pub seed: u64,
}

/// Adapters for experts `0..k` on every placed block, all of one width and
/// nonlinearity. Parameters are stored expert-major, block-minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterStack {
    pub k: usize,
    pub placement: Vec<usize>,
    pub width: usize,
    pub hidden: usize,
    pub nonlinearity: Nonlinearity,
    pub params: Vec<AdapterParams>,
}

impl AdapterStack {
    pub fn new(
        k: usize,
        placement: BTreeSet<usize>,
        width: usize,
        hidden: usize,
        nonlinearity: Nonlinearity,
        init: AdapterInit,
    ) -> Result<Self> {
        if k == 0 || width == 0 || hidden == 0 {
            return Err(GraspError::invalid(
                "adapter stack needs K, width and hidden size > 0",
            ));
        }
        let placement: Vec<usize> = placement.into_iter().collect();
        let mut params = Vec::with_capacity(k * placement.len());
        for expert in 0..k {
            for &block in &placement {
                let mut rng = seed::rng(seed::indexed_seed(
                    init.seed,
                    "adapter-init",
                    (expert * 1_000_003 + block) as u64,
                ));
                let mut p = AdapterParams::zeros(hidden, width, expert, block);
                p.w1 = Matrix::gaussian(width, hidden, init.w1_std, &mut rng);
                params.push(p);
            }
        }
        Ok(Self {
            k,
            placement,
            width,
            hidden,
            nonlinearity,
            params,
        })
    }

    /// Same layout with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in &mut z.params {
            p.w1 = Matrix::zeros(p.w1.rows, p.w1.cols);
            p.w2 = Matrix::zeros(p.w2.rows, p.w2.cols);
        }
        z
    }

    pub fn index_of(&self, expert: usize, block: usize) -> Option<usize> {
        if expert >= self.k {
            return None;
        }
        let pos = self.placement.iter().position(|&b| b == block)?;
        Some(expert * self.placement.len() + pos)
    }

    pub fn get(&self, expert: usize, block: usize) -> Option<&AdapterParams> {
        self.index_of(expert, block).map(|i| &self.params[i])
    }

    pub fn is_placed(&self, block: usize) -> bool {
        self.placement.contains(&block)
    }

    /// Indices into `params` for one expert, in block order.
    pub fn expert_indices(&self, expert: usize) -> std::ops::Range<usize> {
        let m = self.placement.len();
        expert * m..(expert + 1) * m
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(AdapterParams::num_params).sum()
    }

    pub fn expert_is_zero(&self, expert: usize) -> bool {
        self.params[self.expert_indices(expert)]
            .iter()
            .all(|p| p.w1.is_zero() && p.w2.is_zero())
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.params
            .iter()
            .flat_map(|p| [p.w1.data.as_slice(), p.w2.data.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.params
            .iter_mut()
            .flat_map(|p| [p.w1.data.as_mut_slice(), p.w2.data.as_mut_slice()])
            .collect()
    }

    /// Set every up projection to zero.
    pub fn zero_up_projections(&mut self) {
        for p in &mut self.params {
            p.w2 = Matrix::zeros(p.w2.rows, p.w2.cols);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.k * self.placement.len() {
            return Err(GraspError::invalid(
                "adapter stack parameter count mismatch",
            ));
        }
        for (i, p) in self.params.iter().enumerate() {
            let expert = i / self.placement.len().max(1);
            let block = self.placement[i % self.placement.len()];
            if p.expert != expert || p.block != block {
                return Err(GraspError::invalid(format!(
                    "adapter {i} labelled ({}, {}) but stored at ({expert}, {block})",
                    p.expert, p.block
                )));
            }
            if p.w1.rows != self.width
                || p.w1.cols != self.hidden
                || p.w2.rows != self.hidden
                || p.w2.cols != self.width
            {
                return Err(GraspError::invalid(format!(
                    "adapter ({expert}, {block}) has inconsistent shapes"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_up_projection_gives_zero() {
        let mut rng = seed::rng(1);
        let mut a = AdapterParams::zeros(3, 5, 0, 0);
        a.w1 = Matrix::gaussian(5, 3, 1.0, &mut rng);
        for h in [[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0]] {
            assert_eq!(
                adapter_forward(&a, &h, Nonlinearity::Gelu).unwrap(),
                vec![0.0; 3]
            );
        }
    }

    #[test]
    fn identity_relu_hand_value() {
        let a = AdapterParams {
            w1: Matrix::identity(2),
            w2: Matrix::identity(2),
            expert: 0,
            block: 0,
        };
        assert_eq!(
            adapter_forward(&a, &[-1.0, 2.0], Nonlinearity::Relu).unwrap(),
            vec![0.0, 2.0]
        );
        assert!(adapter_forward(&a, &[1.0], Nonlinearity::Relu).is_err());
    }

    #[test]
    fn random_adapter_matches_naive_matmul() {
        let mut rng = seed::rng(5);
        let a = AdapterParams {
            w1: Matrix::gaussian(6, 4, 1.0, &mut rng),
            w2: Matrix::gaussian(4, 6, 1.0, &mut rng),
            expert: 0,
            block: 0,
        };
        let h = [0.3, -1.2, 0.7, 2.0];
        // naive triple loop
        let mut hidden = [0.0; 6];
        for i in 0..6 {
            let mut s = 0.0;
            for j in 0..4 {
                s += a.w1.data[i * 4 + j] * h[j];
            }
            hidden[i] = Nonlinearity::Gelu.apply(s);
        }
        let mut want = [0.0; 4];
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..6 {
                s += a.w2.data[i * 6 + j] * hidden[j];
            }
            want[i] = s;
        }
        assert_eq!(
            adapter_forward(&a, &h, Nonlinearity::Gelu).unwrap(),
            want.to_vec()
        );
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd =
                (Nonlinearity::Gelu.apply(x + h) - Nonlinearity::Gelu.apply(x - h)) / (2.0 * h);
            assert!((fd - Nonlinearity::Gelu.derivative(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn placement_resolution() {
        assert_eq!(Placement::All.resolve(4).unwrap(), (0..4).collect());
        assert_eq!(Placement::LastQuarter.resolve(4).unwrap(), [3].into());
        assert_eq!(Placement::LastQuarter.resolve(8).unwrap(), [6, 7].into());
        assert_eq!(Placement::Last(2).resolve(4).unwrap(), [2, 3].into());
        assert!(Placement::Last(5).resolve(4).is_err());
        assert!(Placement::Blocks(vec![4]).resolve(4).is_err());
    }

    #[test]
    fn stack_layout_and_init() {
        let init = AdapterInit {
            w1_std: 0.1,
            seed: 3,
        };
        let s = AdapterStack::new(3, [1, 3].into(), 5, 8, Nonlinearity::Gelu, init).unwrap();
        s.validate().unwrap();
        assert_eq!(s.params.len(), 6);
        assert_eq!(s.num_params(), 6 * 2 * 5 * 8);
        assert_eq!(s.get(2, 3).unwrap().expert, 2);
        assert!(s.get(2, 2).is_none());
        assert!(s.get(3, 1).is_none());
        assert!(s.params.iter().all(|p| p.w2.is_zero() && !p.w1.is_zero()));
    }
}
