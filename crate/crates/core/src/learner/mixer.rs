use rand::Rng;

use super::LearnerError;
use crate::config::MixerKind;
use crate::scalar::Scalar;

/// Monotonic state-conditioned mixer.
///
/// For the hypernetwork variant, with state `s`, agent values `q` and embed
/// width `E`:
///
/// ```text
/// W1 = |A1 s + a1|          (n × E)
/// B1 =  C1 s + c1           (E)
/// z  = elu(qᵀ W1 + B1)      (E)
/// W2 = |A2 s + a2|          (E)
/// B2 = v · relu(V s + u) + v0
/// Q_tot = z · W2 + B2
/// ```
///
/// The absolute values keep every `∂Q_tot/∂q_a` non-negative. The `Sum`
/// variant has no parameters and returns `Σ q_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer<T> {
    pub kind: MixerKind,
    pub n_agents: usize,
    pub state_len: usize,
    pub embed: usize,
    pub params: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    a1: usize,
    a1b: usize,
    c1: usize,
    c1b: usize,
    a2: usize,
    a2b: usize,
    v: usize,
    vb: usize,
    v_out: usize,
    v_out_b: usize,
    total: usize,
}

fn layout(n: usize, s: usize, e: usize) -> Layout {
    let a1 = 0;
    let a1b = a1 + n * e * s;
    let c1 = a1b + n * e;
    let c1b = c1 + e * s;
    let a2 = c1b + e;
    let a2b = a2 + e * s;
    let v = a2b + e;
    let vb = v + e * s;
    let v_out = vb + e;
    let v_out_b = v_out + e;
    Layout {
        a1,
        a1b,
        c1,
        c1b,
        a2,
        a2b,
        v,
        vb,
        v_out,
        v_out_b,
        total: v_out_b + 1,
    }
}

/// Intermediate values of one mixer forward pass.
#[derive(Debug, Clone, Default)]
pub struct MixerCache<T> {
    w1_raw: Vec<T>,
    pre: Vec<T>,
    z: Vec<T>,
    w2_raw: Vec<T>,
    vh: Vec<T>,
}

// y = W x + b for a row-major W of shape (b.len() × x.len())
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (&wv, &xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

// grad of y = W x + b given dy
fn affine_back<T: Scalar>(dy: &[T], x: &[T], gw: &mut [T], gb: &mut [T]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        gb[r] += d;
        if d == T::zero() {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, &xv) in row.iter_mut().zip(x) {
            *g += d * xv;
        }
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Mixer<T> {
    pub fn param_count(kind: MixerKind, n_agents: usize, state_len: usize, embed: usize) -> usize {
        match kind {
            MixerKind::Sum => 0,
            MixerKind::Qmix => layout(n_agents, state_len, embed).total,
        }
    }

    pub fn zeros(kind: MixerKind, n_agents: usize, state_len: usize, embed: usize) -> Self {
        Mixer {
            kind,
            n_agents,
            state_len,
            embed,
            params: vec![T::zero(); Self::param_count(kind, n_agents, state_len, embed)],
        }
    }

    /// Uniform `±1/√fan_in` initialization of every hypernetwork layer.
    pub fn init<R: Rng + ?Sized>(kind: MixerKind, n_agents: usize, state_len: usize, embed: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(kind, n_agents, state_len, embed);
        if kind == MixerKind::Sum {
            return m;
        }
        let l = layout(n_agents, state_len, embed);
        let bs = 1.0 / (state_len.max(1) as f64).sqrt();
        let be = 1.0 / (embed as f64).sqrt();
        for (i, p) in m.params.iter_mut().enumerate() {
            let bound = if i >= l.v_out { be } else { bs };
            *p = T::lit(rng.gen_range(-bound..bound));
        }
        m
    }

    pub fn new_cache(&self) -> MixerCache<T> {
        let e = self.embed;
        MixerCache {
            w1_raw: vec![T::zero(); self.n_agents * e],
            pre: vec![T::zero(); e],
            z: vec![T::zero(); e],
            w2_raw: vec![T::zero(); e],
            vh: vec![T::zero(); e],
        }
    }

    pub fn forward(&self, qs: &[T], state: &[T]) -> Result<T, LearnerError> {
        if qs.len() != self.n_agents || state.len() != self.state_len {
            return Err(LearnerError::Shape(format!(
                "mixer expects {} agent values and {} state features, got {} and {}",
                self.n_agents,
                self.state_len,
                qs.len(),
                state.len()
            )));
        }
        let mut cache = self.new_cache();
        Ok(self.forward_cached(qs, state, &mut cache))
    }

    pub fn forward_cached(&self, qs: &[T], state: &[T], c: &mut MixerCache<T>) -> T {
        if self.kind == MixerKind::Sum {
            return qs.iter().copied().sum();
        }
        let l = layout(self.n_agents, self.state_len, self.embed);
        let p = &self.params;
        let e = self.embed;
        affine(&p[l.a1..l.a1b], &p[l.a1b..l.c1], state, &mut c.w1_raw);
        affine(&p[l.c1..l.c1b], &p[l.c1b..l.a2], state, &mut c.pre);
        for (a, &q) in qs.iter().enumerate() {
            let w = &c.w1_raw[a * e..(a + 1) * e];
            for (pre, &wv) in c.pre.iter_mut().zip(w) {
                *pre += q * wv.abs();
            }
        }
        for (z, &pre) in c.z.iter_mut().zip(&c.pre) {
            *z = if pre > T::zero() { pre } else { pre.exp() - T::one() };
        }
        affine(&p[l.a2..l.a2b], &p[l.a2b..l.v], state, &mut c.w2_raw);
        affine(&p[l.v..l.vb], &p[l.vb..l.v_out], state, &mut c.vh);
        let mut out = p[l.v_out_b];
        for k in 0..e {
            if c.vh[k] < T::zero() {
                c.vh[k] = T::zero();
            }
            out += c.z[k] * c.w2_raw[k].abs() + p[l.v_out + k] * c.vh[k];
        }
        out
    }

    /// Backpropagate `dq_tot` through a cached forward pass: parameter
    /// gradients are accumulated into `grad`, agent-value gradients written
    /// to `dqs`.
    pub fn backward(&self, qs: &[T], state: &[T], c: &MixerCache<T>, dq_tot: T, grad: &mut [T], dqs: &mut [T]) {
        if self.kind == MixerKind::Sum {
            dqs.iter_mut().for_each(|d| *d = dq_tot);
            return;
        }
        let l = layout(self.n_agents, self.state_len, self.embed);
        let p = &self.params;
        let e = self.embed;
        let n = self.n_agents;

        grad[l.v_out_b] += dq_tot;
        let mut dvh = vec![T::zero(); e];
        let mut dw2 = vec![T::zero(); e];
        let mut dpre = vec![T::zero(); e];
        for k in 0..e {
            grad[l.v_out + k] += dq_tot * c.vh[k];
            dvh[k] = if c.vh[k] > T::zero() { dq_tot * p[l.v_out + k] } else { T::zero() };
            dw2[k] = dq_tot * c.z[k] * sign(c.w2_raw[k]);
            let dz = dq_tot * c.w2_raw[k].abs();
            let pre = c.pre[k];
            dpre[k] = if pre > T::zero() { dz } else { dz * pre.exp() };
        }
        {
            let (gv, rest) = grad[l.v..].split_at_mut(l.vb - l.v);
            affine_back(&dvh, state, gv, &mut rest[..e]);
        }
        {
            let (ga2, rest) = grad[l.a2..].split_at_mut(l.a2b - l.a2);
            affine_back(&dw2, state, ga2, &mut rest[..e]);
        }
        {
            let (gc1, rest) = grad[l.c1..].split_at_mut(l.c1b - l.c1);
            affine_back(&dpre, state, gc1, &mut rest[..e]);
        }
        let mut dw1 = vec![T::zero(); n * e];
        for a in 0..n {
            let w = &c.w1_raw[a * e..(a + 1) * e];
            let mut dq = T::zero();
            for k in 0..e {
                dq += dpre[k] * w[k].abs();
                dw1[a * e + k] = dpre[k] * qs[a] * sign(w[k]);
            }
            dqs[a] = dq;
        }
        let (ga1, rest) = grad[l.a1..].split_at_mut(l.a1b - l.a1);
        affine_back(&dw1, state, ga1, &mut rest[..n * e]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    #[test]
    fn sum_mixer_adds() {
        let m = Mixer::<f64>::zeros(MixerKind::Sum, 3, 4, 8);
        assert_eq!(m.forward(&[1.0, -2.0, 0.5], &[0.0; 4]).unwrap(), -0.5);
    }

    #[test]
    fn hand_computed_two_agent() {
        // n = 2, S = 1, E = 1; state s = 2
        let mut m = Mixer::<f64>::zeros(MixerKind::Qmix, 2, 1, 1);
        let l = layout(2, 1, 1);
        // W1 = |[0.5, -1.0]·s + [0, 0.5]| = [1.0, 1.5]
        m.params[l.a1] = 0.5;
        m.params[l.a1 + 1] = -1.0;
        m.params[l.a1b + 1] = 0.5;
        // B1 = 0.25·s − 1 = −0.5
        m.params[l.c1] = 0.25;
        m.params[l.c1b] = -1.0;
        // W2 = |−1·s| = 2
        m.params[l.a2] = -1.0;
        // B2 = 3·relu(s − 1) + 0.1 = 3.1
        m.params[l.v] = 1.0;
        m.params[l.vb] = -1.0;
        m.params[l.v_out] = 3.0;
        m.params[l.v_out_b] = 0.1;
        // q = [1, 2]: pre = 1·1 + 2·1.5 − 0.5 = 3.5, z = 3.5, Q = 7 + 3.1
        let q = m.forward(&[1.0, 2.0], &[2.0]).unwrap();
        assert!((q - 10.1).abs() < 1e-12);
        // q = [−1, 0]: pre = −1.5, z = e^−1.5 − 1
        let q = m.forward(&[-1.0, 0.0], &[2.0]).unwrap();
        assert!((q - (2.0 * ((-1.5f64).exp() - 1.0) + 3.1)).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_each_agent() {
        let mut rng = RngStreams::new(5).stream("mix");
        let m = Mixer::<f64>::init(MixerKind::Qmix, 3, 4, 8, &mut rng);
        let s = [0.1, -0.4, 0.9, 0.3];
        let base = [0.2, -1.0, 0.7];
        let q0 = m.forward(&base, &s).unwrap();
        for a in 0..3 {
            let mut up = base;
            up[a] += 0.5;
            assert!(m.forward(&up, &s).unwrap() >= q0);
        }
    }
}
