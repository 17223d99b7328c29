use super::params::{Gradients, ParamStore};
use super::tensor::Scalar;
use crate::{Error, Result};

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |_| -> Vec<Vec<T>> {
            store.ids().map(|id| vec![T::zero(); store.get(id).len()]).collect()
        };
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(()), v: zeros(()) }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: super::ParamId) -> &[T] {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: super::ParamId) -> &[T] {
        &self.v[id.index()]
    }

    /// Applies one update. Parameters without a gradient are left untouched
    /// and their moments do not decay.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.iter() {
            if id.index() >= self.m.len() || g.len() != store.get(id).len() {
                return Err(Error::invalid(format!(
                    "gradient for {} does not match the parameter shape",
                    store.name(id)
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter {}",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for (id, g) in grads.iter() {
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let p = store.get_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add(
            "x",
            Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(),
        );
        let before = s.clone();
        let mut adam = Adam::new(&s, 0.1);
        let mut g = Gradients::default();
        g.insert(id, vec![1.0; 3]);
        adam.step(&mut s, &g).unwrap();
        let m1 = adam.first_moment(id).to_vec();
        let p1 = s.get(id).clone();
        let mut z = Gradients::default();
        z.insert(id, vec![0.0; 3]);
        let mut fresh = before.clone();
        let mut adam0 = Adam::new(&fresh, 0.1);
        adam0.step(&mut fresh, &z).unwrap();
        assert_eq!(fresh, before);
        adam.step(&mut s, &z).unwrap();
        for (a, b) in adam.first_moment(id).iter().zip(&m1) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        assert_ne!(s.get(id), &p1, "momentum keeps moving after a nonzero step");
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_const("x", vec![4], 0.0);
        let mut adam = Adam::new(&s, 0.1);
        let mut g = Gradients::default();
        g.insert(id, vec![1.0; 4]);
        adam.step(&mut s, &g).unwrap();
        for &v in s.get(id).data() {
            // m̂ = v̂ = 1, update = lr / (1 + eps)
            assert!((v + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_const("x", vec![1], 0.0);
        let mut adam = Adam::new(&s, 0.05);
        for _ in 0..500 {
            let x = s.get(id).data()[0];
            let mut g = Gradients::default();
            g.insert(id, vec![2.0 * (x - 3.0)]);
            adam.step(&mut s, &g).unwrap();
        }
        assert!((s.get(id).data()[0] - 3.0).abs() <= 0.01);
    }

    #[test]
    fn nan_gradient_is_an_error_and_changes_nothing() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add_const("x", vec![2], 1.0);
        let mut adam = Adam::new(&s, 0.1);
        let mut g = Gradients::default();
        g.insert(id, vec![f32::NAN, 0.0]);
        let err = adam.step(&mut s, &g).unwrap_err();
        assert!(err.is_numeric());
        assert_eq!(adam.step_count(), 0);
        assert_eq!(s.get(id).data(), &[1.0, 1.0]);
    }

    #[test]
    fn sum_loss_drives_all_parameters_down_equally() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_const("w", vec![2, 2], 0.3);
        let mut g = Graph::new();
        let w = g.param(&s, id);
        let loss = g.sum(w).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut adam = Adam::new(&s, 0.01);
        adam.step(&mut s, &grads).unwrap();
        assert!(s.get(id).data().iter().all(|&v| (v - (0.3 - 0.01 / (1.0 + 1e-8))).abs() < 1e-12));
    }
}
