use super::mlp::{Layer, MlpModel};
use super::train::TrainConfig;
use crate::error::{Error, Result};

/// First and second moment estimates, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros: Vec<Layer> = model
            .layers()
            .iter()
            .map(|l| Layer::zeros(l.inputs(), l.outputs()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update at `cfg.learning_rate`.
pub fn adam_step(model: &mut MlpModel, grads: &[Layer], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    adam_step_lr(model, grads, state, cfg, cfg.learning_rate)
}

pub(crate) fn adam_step_lr(
    model: &mut MlpModel,
    grads: &[Layer],
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != model.layers().len() || state.m.len() != grads.len() {
        return Err(Error::dim("adam gradient tensors", model.layers().len(), grads.len()));
    }
    for (i, (g, l)) in grads.iter().zip(model.layers()).enumerate() {
        if g.weight.shape() != l.weight.shape() {
            return Err(Error::dim(
                format!("layer{i}.weight gradient"),
                l.weight.len(),
                g.weight.len(),
            ));
        }
        if g.bias.len() != l.bias.len() {
            return Err(Error::dim(
                format!("layer{i}.bias gradient"),
                l.bias.len(),
                g.bias.len(),
            ));
        }
        if g.weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer{i}.weight")));
        }
        if g.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer{i}.bias")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    };
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        update(
            layer.weight.as_mut_slice(),
            g.weight.as_slice(),
            m.weight.as_mut_slice(),
            v.weight.as_mut_slice(),
        );
        update(
            layer.bias.as_mut_slice(),
            g.bias.as_slice(),
            m.bias.as_mut_slice(),
            v.bias.as_mut_slice(),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::mlp::Activation;
    use nalgebra::{DMatrix, DVector};

    fn grads_like(model: &MlpModel, v: f64) -> Vec<Layer> {
        model
            .layers()
            .iter()
            .map(|l| Layer {
                weight: DMatrix::from_element(l.outputs(), l.inputs(), v),
                bias: DVector::from_element(l.outputs(), v),
            })
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = MlpModel::new(&[3, 4, 2], Activation::Relu, 1).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let cfg = TrainConfig::default();
        for _ in 0..5 {
            adam_step(&mut m, &grads_like(&before, 0.0), &mut st, &cfg).unwrap();
        }
        assert_eq!(m, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut m = MlpModel::new(&[2, 2], Activation::Identity, 1).unwrap();
        let mut st = AdamState::new(&m);
        let cfg = TrainConfig::default();
        let g = 0.37;
        // bias correction makes m̂ = g and v̂ = g² exactly under a constant gradient
        let want = cfg.learning_rate * g / (g + cfg.epsilon);
        for t in 1..=200 {
            let before = m.parameters();
            let gr = grads_like(&m, g);
            adam_step(&mut m, &gr, &mut st, &cfg).unwrap();
            if t == 1 || t == 200 {
                let moved = before - m.parameters();
                assert!(moved.iter().all(|d| (d - want).abs() < 1e-15), "step {t}: {moved}");
            }
        }
        let mut neg = MlpModel::new(&[2, 2], Activation::Identity, 1).unwrap();
        let before = neg.parameters();
        let mut st = AdamState::new(&neg);
        let gr = grads_like(&neg, -5.0);
        adam_step(&mut neg, &gr, &mut st, &cfg).unwrap();
        assert!((neg.parameters() - before)
            .iter()
            .all(|d| (d - cfg.learning_rate).abs() < 1e-12));
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut m = MlpModel::new(&[3, 4, 2], Activation::Relu, 1).unwrap();
        let before = m.clone();
        let mut g = grads_like(&m, 0.1);
        g[1].bias[0] = f64::NAN;
        let mut st = AdamState::new(&m);
        let err = adam_step(&mut m, &g, &mut st, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("layer1.bias"), "{err}");
        assert!(err.is_numerical());
        assert_eq!(m, before);
        assert_eq!(st.step, 0);
    }
}
