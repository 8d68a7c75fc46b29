use std::collections::BTreeMap;

use crate::checkpoint::ParamStore;
use crate::error::Result;

/// Adam with bias-corrected moments, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(name)?.as_slice(), self.v.get(name)?.as_slice()))
    }

    /// One update of every parameter named in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?.data_mut();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(x: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::new(vec![x.len()], x.to_vec()).unwrap());
        s
    }

    fn grads(g: &[f64]) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("x".to_string(), g.to_vec())])
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = store(&[1.0, -2.0]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut s, &grads(&[1.0, 1.0])).unwrap();
        let after_first = s.clone();
        let m0 = adam.moments("x").unwrap().0.to_vec();
        let mut zero = store(&[1.0, -2.0]);
        let mut fresh = Adam::new(0.1);
        fresh.step(&mut zero, &grads(&[0.0, 0.0])).unwrap();
        assert_eq!(zero, store(&[1.0, -2.0]));
        adam.step(&mut s, &grads(&[0.0, 0.0])).unwrap();
        let m1 = adam.moments("x").unwrap().0;
        assert!(m1[0].abs() < m0[0].abs());
        assert_ne!(s, after_first, "momentum keeps moving the parameter");
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store(&[0.0, 0.0, 0.0]);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut s, &grads(&[3.0, -0.01, 250.0])).unwrap();
        for (x, sign) in s.get("x").unwrap().data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - sign * 1e-3).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut s = store(&[1.0]);
        let mut adam = Adam::new(0.1);
        for _ in 0..100 {
            let x = s.get("x").unwrap().data()[0];
            adam.step(&mut s, &grads(&[2.0 * x])).unwrap();
        }
        assert!(s.get("x").unwrap().data()[0].abs() < 0.05);
        assert_eq!(adam.steps(), 100);
    }
}
