use crate::scalar::Scalar;

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    /// One bias-corrected update. Zero gradients leave parameters untouched
    /// only while both moments are still zero.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: T) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = one - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let step = lr / c1;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let denom = (self.v[i] / c2).sqrt() + self.eps;
            params[i] -= step * self.m[i] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_noop() {
        let mut adam = Adam::<f64>::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3], 0.1);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn quadratic_converges() {
        // minimize (x − 3)², starting from x = −2
        let mut adam = Adam::<f64>::new(1);
        let mut x = vec![-2.0];
        for _ in 0..500 {
            let g = 2.0 * (x[0] - 3.0);
            adam.step(&mut x, &[g], 0.1);
        }
        assert!((x[0] - 3.0).abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut adam = Adam::<f32>::new(2);
            let mut p = vec![0.3f32, -0.7];
            for k in 0..10 {
                adam.step(&mut p, &[0.1 * k as f32, -0.2], 0.01);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
