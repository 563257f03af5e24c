//! Small ReLU networks with a Gaussian output head.

use crate::error::{Error, Result};
use crate::params::{join, Binder};
use crate::tensor::{RngState, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in x out`.
    pub weight: Tensor,
    /// `1 x out`.
    pub bias: Tensor,
}

impl Dense {
    /// Uniform weights in `±1/√fan_in`, zero bias.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = Tensor::from_fn(fan_in, fan_out, |_, _| bound * (2.0 * rng.uniform_open() - 1.0));
        Dense { weight, bias: Tensor::zeros(1, fan_out) }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Tensor::zeros(fan_in, fan_out), bias: Tensor::zeros(1, fan_out) }
    }

    fn bind<'t>(&self, binder: &Binder<'t>, prefix: &str) -> (Var<'t>, Var<'t>) {
        (binder.param(&join(prefix, "weight"), &self.weight), binder.param(&join(prefix, "bias"), &self.bias))
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// How the second head is made positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Positivity {
    Softplus,
    /// `ν₀ · sigmoid(·)`, bounded in `(0, ν₀)`.
    ScaledSigmoid,
}

/// A ReLU trunk followed by a mean head and a variance head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpFunction {
    pub hidden: Vec<Dense>,
    pub mean_head: Dense,
    pub var_head: Dense,
}

impl MlpFunction {
    pub fn new(input: usize, widths: &[usize], output: usize, rng: &mut RngState) -> Self {
        let mut hidden = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for &w in widths {
            hidden.push(Dense::new(fan_in, w, rng));
            fan_in = w;
        }
        MlpFunction { hidden, mean_head: Dense::new(fan_in, output, rng), var_head: Dense::new(fan_in, output, rng) }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.mean_head).weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.mean_head.weight.cols()
    }

    /// Set every weight and bias to zero.
    pub fn zeroed(mut self) -> Self {
        self.visit_mut("", &mut |_, t| *t = Tensor::zeros(t.rows(), t.cols()));
        self
    }

    pub fn bind<'t>(&self, binder: &Binder<'t>, prefix: &str) -> MlpVars<'t> {
        MlpVars {
            hidden: self.hidden.iter().enumerate().map(|(i, l)| l.bind(binder, &join(prefix, &format!("h{i}")))).collect(),
            mean_head: self.mean_head.bind(binder, &join(prefix, "mean")),
            var_head: self.var_head.bind(binder, &join(prefix, "var")),
            input_dim: self.input_dim(),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.hidden.iter().enumerate() {
            l.visit(&join(prefix, &format!("h{i}")), f);
        }
        self.mean_head.visit(&join(prefix, "mean"), f);
        self.var_head.visit(&join(prefix, "var"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.hidden.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("h{i}")), f);
        }
        self.mean_head.visit_mut(&join(prefix, "mean"), f);
        self.var_head.visit_mut(&join(prefix, "var"), f);
    }
}

/// An [`MlpFunction`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars<'t> {
    hidden: Vec<(Var<'t>, Var<'t>)>,
    mean_head: (Var<'t>, Var<'t>),
    var_head: (Var<'t>, Var<'t>),
    input_dim: usize,
}

impl<'t> MlpVars<'t> {
    fn trunk(&self, x: Var<'t>) -> Result<Var<'t>> {
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} input columns, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        Ok(self.hidden.iter().fold(x, |h, (w, b)| (h.matmul(*w) + *b).relu()))
    }

    /// Mean and variance for each row of `x`. `nu0` is required for
    /// [`Positivity::ScaledSigmoid`].
    pub fn gaussian_head(&self, x: Var<'t>, positivity: Positivity, nu0: Option<Var<'t>>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.trunk(x)?;
        let mean = h.matmul(self.mean_head.0) + self.mean_head.1;
        let raw = h.matmul(self.var_head.0) + self.var_head.1;
        let var = match positivity {
            Positivity::Softplus => raw.softplus(),
            Positivity::ScaledSigmoid => {
                let nu0 = nu0.ok_or_else(|| Error::InvalidConfig("scaled sigmoid head needs ν₀".into()))?;
                raw.sigmoid() * nu0
            }
        };
        Ok((mean, var))
    }
}

/// Value-level forward pass of [`MlpVars::gaussian_head`].
pub fn gaussian_head(net: &MlpFunction, input: &Tensor, positivity: Positivity, nu0: Option<f64>) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let vars = net.bind(&Binder::constant(&tape), "");
    let nu0 = nu0.map(|v| tape.scalar(v));
    let (m, v) = vars.gaussian_head(tape.constant(input.clone()), positivity, nu0)?;
    Ok((m.value(), v.value()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_std_normal;

    #[test]
    fn zero_weights_give_closed_form_heads() {
        let mut rng = RngState::new(0);
        let net = MlpFunction::new(3, &[5, 4], 2, &mut rng).zeroed();
        let x = sample_std_normal(&mut rng, 4, 3);
        let (m, v) = gaussian_head(&net, &x, Positivity::Softplus, None).unwrap();
        assert!(m.as_slice().iter().all(|a| *a == 0.0));
        assert!(v.as_slice().iter().all(|a| (a - 2f64.ln()).abs() < 1e-15));
        let (_, v) = gaussian_head(&net, &x, Positivity::ScaledSigmoid, Some(0.01)).unwrap();
        assert!(v.as_slice().iter().all(|a| (a - 0.005).abs() < 1e-15));
    }

    #[test]
    fn rejects_wrong_width_and_missing_scale() {
        let mut rng = RngState::new(1);
        let net = MlpFunction::new(3, &[4], 1, &mut rng);
        assert!(matches!(
            gaussian_head(&net, &Tensor::zeros(2, 2), Positivity::Softplus, None),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(gaussian_head(&net, &Tensor::zeros(2, 3), Positivity::ScaledSigmoid, None).is_err());
    }

    #[test]
    fn batch_rows_are_independent_and_bounded() {
        let mut rng = RngState::new(2);
        let net = MlpFunction::new(2, &[8, 8, 8], 3, &mut rng);
        let x = sample_std_normal(&mut rng, 5, 2);
        let (m, v) = gaussian_head(&net, &x, Positivity::ScaledSigmoid, Some(0.3)).unwrap();
        for i in 0..5 {
            let (mi, vi) = gaussian_head(&net, &x.select_rows(&[i]), Positivity::ScaledSigmoid, Some(0.3)).unwrap();
            assert_eq!(mi.as_slice(), m.row_slice(i));
            assert_eq!(vi.as_slice(), v.row_slice(i));
        }
        assert!(v.as_slice().iter().all(|a| *a > 0.0 && *a < 0.3));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = RngState::new(3);
        let net = MlpFunction::new(16, &[100], 1, &mut rng);
        assert!(net.hidden[0].weight.as_slice().iter().all(|w| w.abs() <= 0.25));
        assert!(net.mean_head.weight.as_slice().iter().all(|w| w.abs() <= 0.1));
        assert!(net.hidden[0].bias.as_slice().iter().all(|b| *b == 0.0));
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = RngState::new(4);
        let net = MlpFunction::new(2, &[6, 5], 2, &mut rng);
        let x = sample_std_normal(&mut rng, 3, 2);
        let r = sample_std_normal(&mut rng, 3, 2);
        for pos in [Positivity::Softplus, Positivity::ScaledSigmoid] {
            let eval = |n: &MlpFunction| {
                let (m, v) = gaussian_head(n, &x, pos, Some(0.4)).unwrap();
                m.zip_map(&r, |a, b| a * b).sum() + v.map(f64::ln).sum()
            };
            let tape = Tape::new();
            let binder = Binder::new(&tape);
            let vars = net.bind(&binder, "");
            let (m, v) = vars.gaussian_head(tape.constant(x.clone()), pos, Some(tape.scalar(0.4))).unwrap();
            let y = (m * tape.constant(r.clone())).sum() + v.ln().sum();
            let bound = binder.bound();
            let grads = tape.grad(y, &bound.iter().map(|(_, v)| *v).collect::<Vec<_>>()).unwrap();
            let mut an = Vec::new();
            let mut fd = Vec::new();
            let mut idx = 0;
            let mut probe = net.clone();
            let mut names = Vec::new();
            net.visit("", &mut |n, t| names.push((n.to_string(), t.len())));
            for (k, (_, len)) in names.iter().enumerate() {
                for j in 0..*len {
                    let h = 1e-5;
                    let shift = |p: &mut MlpFunction, d: f64| {
                        let mut c = 0;
                        p.visit_mut("", &mut |_, t| {
                            if c == k {
                                t.as_mut_slice()[j] += d;
                            }
                            c += 1;
                        });
                    };
                    shift(&mut probe, h);
                    let up = eval(&probe);
                    shift(&mut probe, -2.0 * h);
                    let down = eval(&probe);
                    shift(&mut probe, h);
                    fd.push((up - down) / (2.0 * h));
                    an.push(grads[k].as_slice()[j]);
                    idx += 1;
                }
            }
            assert_eq!(idx, an.len());
            let diff: f64 = an.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = an.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(diff / scale <= 1e-4, "{pos:?}: {}", diff / scale);
        }
    }
}
