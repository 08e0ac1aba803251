use crate::densenet::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Momentum buffers, one per trainable parameter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar = f32> {
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        OptimizerState {
            velocity: params
                .iter()
                .map(|(_, p)| p.trainable.then(|| Tensor::zeros(p.tensor.shape())))
                .collect(),
        }
    }

    pub fn velocity(&self, index: usize) -> Option<&Tensor<T>> {
        self.velocity.get(index).and_then(Option::as_ref)
    }

    /// Number of parameters that carry a buffer.
    pub fn len(&self) -> usize {
        self.velocity.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One Nesterov SGD step with coupled weight decay:
/// `g' = g + wd·w; v = μ·v + g'; w -= lr·(g' + μ·v)`.
/// Non-trainable parameters are left untouched.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    hp: SgdParams,
) -> Result<()> {
    if state.velocity.len() != params.len() {
        return Err(Error::invalid(
            "sgd_step",
            format!("optimizer state covers {} parameters, store has {}", state.velocity.len(), params.len()),
        ));
    }
    let (lr, mu, wd) = (T::of(hp.lr), T::of(hp.momentum), T::of(hp.weight_decay));
    for (id, p) in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let g = grads
            .get(id)
            .ok_or_else(|| Error::invalid("sgd_step", format!("no gradient for trainable {}", p.name)))?;
        if g.shape() != p.tensor.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("{}: gradient {:?} vs parameter {:?}", p.name, g.shape(), p.tensor.shape()),
            ));
        }
        let v = state.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape()));
        for ((w, v), &g) in p.tensor.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            let g = g + wd * *w;
            *v = mu * *v + g;
            *w -= lr * (g + mu * *v);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore<f64>, crate::densenet::ParamId) {
        let mut store = ParamStore::default();
        let id = store.register("w".into(), Tensor::full(&[1], w));
        (store, id)
    }

    fn grads_of(store: &ParamStore<f64>, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::new(store.len());
        grads.set(store.id("w").unwrap(), Tensor::full(&[1], g));
        grads
    }

    #[test]
    fn first_nesterov_step() {
        let (mut store, id) = scalar_store(0.0);
        let mut state = OptimizerState::new(&store);
        let hp = SgdParams { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        let grads = grads_of(&store, 1.0);
        sgd_step(&mut store, &grads, &mut state, hp).unwrap();
        assert!((state.velocity(0).unwrap().data()[0] - 1.0).abs() < 1e-15);
        assert!((store.tensor(id).data()[0] + 0.19).abs() < 1e-15);
    }

    #[test]
    fn pure_decay_without_gradient_or_momentum() {
        let (mut store, id) = scalar_store(2.0);
        let mut state = OptimizerState::new(&store);
        let hp = SgdParams { lr: 0.1, momentum: 0.0, weight_decay: 5e-4 };
        let grads = grads_of(&store, 0.0);
        sgd_step(&mut store, &grads, &mut state, hp).unwrap();
        assert!((store.tensor(id).data()[0] - 2.0 * (1.0 - 0.1 * 5e-4)).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let (mut store, id) = scalar_store(3.0);
        store.set_trainable(id, false);
        let mut state = OptimizerState::new(&store);
        assert!(state.is_empty());
        let hp = SgdParams { lr: 0.1, momentum: 0.9, weight_decay: 0.1 };
        sgd_step(&mut store, &Gradients::new(1), &mut state, hp).unwrap();
        assert_eq!(store.tensor(id).data()[0], 3.0);
    }
}
