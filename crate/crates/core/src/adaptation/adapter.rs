use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Residual bottleneck `Y = X + α·relu(X·W_down)·W_up`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    /// `d_in × d_mid`
    pub w_down: Tensor,
    /// `d_mid × d_in`
    pub w_up: Tensor,
    /// Fixed scaling factor; never trained.
    pub alpha: f64,
}

pub struct AdapterGrads {
    pub w_down: Tensor,
    pub w_up: Tensor,
    pub input: Tensor,
}

impl AdapterParams {
    pub fn new(w_down: Tensor, w_up: Tensor, alpha: f64) -> Result<Self> {
        let (d_in, d_mid) = w_down.dims2()?;
        if w_up.shape() != [d_mid, d_in] {
            return Err(Error::dim(format!(
                "W_up {:?} does not mirror W_down {:?}",
                w_up.shape(),
                w_down.shape()
            )));
        }
        if d_mid == 0 || d_mid >= d_in {
            return Err(Error::InvalidConfig(format!(
                "bottleneck width {d_mid} must be in 1..{d_in}"
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be finite".into()));
        }
        Ok(Self { w_down, w_up, alpha })
    }

    /// Uniform(±1/sqrt(fan_in)) initialization for both projections.
    pub fn init(d_in: usize, d_mid: usize, alpha: f64, rng: &mut Prng) -> Result<Self> {
        let lin = |rng: &mut Prng, i: usize, o: usize| {
            let b = 1.0 / (i as f64).sqrt();
            Tensor::new(vec![i, o], (0..i * o).map(|_| rng.uniform(-b, b)).collect())
        };
        let w_down = lin(rng, d_in, d_mid)?;
        let w_up = lin(rng, d_mid, d_in)?;
        Self::new(w_down, w_up, alpha)
    }

    pub fn d_in(&self) -> usize {
        self.w_down.shape()[0]
    }

    pub fn d_mid(&self) -> usize {
        self.w_down.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, w) = x.dims2()?;
        if w != self.d_in() {
            return Err(Error::dim(format!(
                "adapter expects width {}, got {w}",
                self.d_in()
            )));
        }
        let hidden = ops::relu(&ops::matmul(x, &self.w_down)?);
        let branch = ops::matmul(&hidden, &self.w_up)?.scale(self.alpha);
        ops::add(x, &branch)
    }

    pub fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<AdapterGrads> {
        let pre = ops::matmul(x, &self.w_down)?;
        let hidden = ops::relu(&pre);
        let g_branch = g.scale(self.alpha);
        let (d_hidden, d_up) = ops::matmul_vjp(&hidden, &self.w_up, &g_branch)?;
        let d_pre = ops::relu_vjp(&pre, &d_hidden)?;
        let (dx_branch, d_down) = ops::matmul_vjp(x, &self.w_down, &d_pre)?;
        let mut input = g.clone();
        input.add_assign(&dx_branch)?;
        Ok(AdapterGrads {
            w_down: d_down,
            w_up: d_up,
            input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_zero_is_identity() {
        let mut rng = Prng::new(1);
        let a = AdapterParams::init(6, 2, 0.0, &mut rng).unwrap();
        let x = Tensor::new(vec![3, 6], (0..18).map(|i| i as f64 * 0.1 - 0.7).collect()).unwrap();
        assert_eq!(a.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_up_projection_is_identity() {
        let mut rng = Prng::new(2);
        let mut a = AdapterParams::init(4, 2, 0.5, &mut rng).unwrap();
        a.w_up = Tensor::zeros(&[2, 4]);
        let x = Tensor::new(vec![1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(a.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_evaluated_case() {
        let a = AdapterParams::new(
            Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(),
            Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap(),
            0.5,
        )
        .unwrap();
        let y = a.forward(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.5, 2.0]);
    }

    #[test]
    fn width_checks() {
        let mut rng = Prng::new(3);
        let a = AdapterParams::init(4, 1, 0.2, &mut rng).unwrap();
        assert!(a.forward(&Tensor::zeros(&[1, 5])).is_err());
        assert!(AdapterParams::init(4, 4, 0.2, &mut rng).is_err());
    }
}
