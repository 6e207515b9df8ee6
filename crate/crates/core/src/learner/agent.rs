use rand::Rng;

use super::LearnerError;
use crate::scalar::Scalar;

/// One-hidden-layer rectifier network mapping an observation to per-action
/// values. Parameters are a single flat array:
///
/// * `w1`: `input × hidden`, input-major (the weights fed by input `j` are
///   contiguous, so zero inputs can be skipped);
/// * `b1`: `hidden`;
/// * `w2`: `actions × hidden`, action-major;
/// * `b2`: `actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet<T> {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
    pub params: Vec<T>,
}

impl<T: Scalar> AgentNet<T> {
    pub fn param_count(input: usize, hidden: usize, actions: usize) -> usize {
        input * hidden + hidden + actions * hidden + actions
    }

    pub fn zeros(input: usize, hidden: usize, actions: usize) -> Self {
        AgentNet {
            input,
            hidden,
            actions,
            params: vec![T::zero(); Self::param_count(input, hidden, actions)],
        }
    }

    /// Uniform `±1/√fan_in` initialization.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, actions: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, actions);
        let b1 = 1.0 / (input as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let (l1, l2) = net.params.split_at_mut(input * hidden + hidden);
        for p in l1 {
            *p = T::lit(rng.gen_range(-b1..b1));
        }
        for p in l2 {
            *p = T::lit(rng.gen_range(-b2..b2));
        }
        net
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.input * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.actions * self.hidden;
        (b1, w2, b2)
    }

    /// Per-action values for one input vector.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, LearnerError> {
        if x.len() != self.input {
            return Err(LearnerError::Shape(format!(
                "agent input has length {}, expected {}",
                x.len(),
                self.input
            )));
        }
        let mut h = vec![T::zero(); self.hidden];
        let mut q = vec![T::zero(); self.actions];
        self.forward_into(x, &mut h, &mut q);
        Ok(q)
    }

    /// Forward pass writing rectified hidden activations into `h` and action
    /// values into `q`. Shapes are the caller's responsibility.
    pub fn forward_into(&self, x: &[T], h: &mut [T], q: &mut [T]) {
        let (ob1, ow2, ob2) = self.offsets();
        let hid = self.hidden;
        let p = &self.params;
        h.copy_from_slice(&p[ob1..ob1 + hid]);
        for (j, &xj) in x.iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            let col = &p[j * hid..(j + 1) * hid];
            if xj == T::one() {
                for (hv, &w) in h.iter_mut().zip(col) {
                    *hv += w;
                }
            } else {
                for (hv, &w) in h.iter_mut().zip(col) {
                    *hv += xj * w;
                }
            }
        }
        for hv in h.iter_mut() {
            if *hv < T::zero() {
                *hv = T::zero();
            }
        }
        for (a, qa) in q.iter_mut().enumerate() {
            let row = &p[ow2 + a * hid..ow2 + (a + 1) * hid];
            let mut acc = p[ob2 + a];
            for (&w, &hv) in row.iter().zip(h.iter()) {
                acc += w * hv;
            }
            *qa = acc;
        }
    }

    /// Accumulate `dq · ∂q[action]/∂params` into `grad`.
    pub fn backward_action(&self, x: &[T], h: &[T], action: usize, dq: T, grad: &mut [T]) {
        let (ob1, ow2, ob2) = self.offsets();
        let hid = self.hidden;
        let p = &self.params;
        grad[ob2 + action] += dq;
        let row = ow2 + action * hid;
        let mut dpre = [T::zero(); 256];
        let mut heap;
        let dpre: &mut [T] = if hid <= 256 {
            &mut dpre[..hid]
        } else {
            heap = vec![T::zero(); hid];
            &mut heap
        };
        for k in 0..hid {
            grad[row + k] += dq * h[k];
            dpre[k] = if h[k] > T::zero() { dq * p[row + k] } else { T::zero() };
        }
        for k in 0..hid {
            grad[ob1 + k] += dpre[k];
        }
        for (j, &xj) in x.iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            let g = &mut grad[j * hid..(j + 1) * hid];
            for (gv, &d) in g.iter_mut().zip(dpre.iter()) {
                *gv += xj * d;
            }
        }
    }
}
