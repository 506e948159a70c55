use super::{Gradients, MlpModel, NnError};

/// SGD with heavy-ball momentum and coupled weight decay:
///
/// ```text
/// v ← μ·v + (g + wd·θ)
/// θ ← θ − lr·v
/// ```
///
/// Decay applies to every trainable buffer, biases and batch-norm
/// parameters included.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(model: &MlpModel, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: Gradients::zeros_like(model),
            learning_rate,
            momentum,
            weight_decay,
        }
    }
}

pub fn sgd_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<(), NnError> {
    let g = grads.slices();
    let shapes_match = |a: &[&[f64]], b: Vec<usize>| {
        a.len() == b.len() && a.iter().zip(&b).all(|(x, &n)| x.len() == n)
    };
    let param_sizes: Vec<usize> = model.parameter_slices().iter().map(|s| s.len()).collect();
    if !shapes_match(&g, param_sizes.clone())
        || !shapes_match(&state.velocity.slices(), param_sizes)
    {
        return Err(NnError::ShapeMismatch {
            expected: "gradients congruent with the model".into(),
            found: "different buffer layout".into(),
        });
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    let params = model.parameter_slices_mut();
    let vel = state.velocity.slices_mut();
    for ((p, v), g) in params.into_iter().zip(vel).zip(g) {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + (g + wd * *p);
            *p -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gumbel::RandomSource;
    use crate::nn::{Architecture, Mode};
    use ndarray::{array, Array2};

    fn model() -> MlpModel {
        let arch = Architecture::new(vec![3, 4, 2], true).unwrap();
        MlpModel::init(&arch, &mut RandomSource::new(1)).unwrap()
    }

    fn constant_grads(m: &MlpModel, value: f64) -> Gradients {
        let mut g = Gradients::zeros_like(m);
        for s in g.slices_mut() {
            s.fill(value);
        }
        g
    }

    fn flat(m: &MlpModel) -> Vec<f64> {
        m.parameter_slices().concat()
    }

    #[test]
    fn plain_gradient_descent() {
        let mut m = model();
        let before = flat(&m);
        let g = constant_grads(&m, 0.5);
        let mut opt = OptimizerState::new(&m, 0.1, 0.0, 0.0);
        sgd_step(&mut m, &g, &mut opt).unwrap();
        for (a, b) in flat(&m).iter().zip(&before) {
            assert_eq!(*a, b - 0.1 * 0.5);
        }
    }

    #[test]
    fn momentum_unrolls() {
        let mut m = model();
        let before = flat(&m);
        let g = constant_grads(&m, 1.0);
        let mut opt = OptimizerState::new(&m, 0.01, 0.9, 0.0);
        sgd_step(&mut m, &g, &mut opt).unwrap();
        sgd_step(&mut m, &g, &mut opt).unwrap();
        for (a, b) in flat(&m).iter().zip(&before) {
            assert!((b - a - 0.01 * (1.0 + 1.9)).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut m = model();
        let before = flat(&m);
        let g = constant_grads(&m, 0.0);
        let mut opt = OptimizerState::new(&m, 0.1, 0.0, 0.01);
        sgd_step(&mut m, &g, &mut opt).unwrap();
        for (a, b) in flat(&m).iter().zip(&before) {
            assert!((a - b * (1.0 - 0.1 * 0.01)).abs() <= 1e-16 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut m = model();
        let other = MlpModel::init(
            &Architecture::new(vec![3, 5, 2], true).unwrap(),
            &mut RandomSource::new(1),
        )
        .unwrap();
        let g = Gradients::zeros_like(&other);
        let mut opt = OptimizerState::new(&m, 0.1, 0.0, 0.0);
        assert!(sgd_step(&mut m, &g, &mut opt).is_err());
    }

    #[test]
    fn a_step_invalidates_earlier_caches() {
        let mut m = model();
        let x: Array2<f64> = array![[0.0, 1.0, 2.0], [1.0, 0.0, -1.0]];
        let (_, cache) = m.forward(x.view(), Mode::Train).unwrap();
        let g = Gradients::zeros_like(&m);
        let mut opt = OptimizerState::new(&m, 0.1, 0.0, 0.0);
        sgd_step(&mut m, &g, &mut opt).unwrap();
        assert!(m.backward(&cache, Array2::zeros((2, 2)).view()).is_err());
    }
}
