use crate::error::{NnError, Result};
use crate::matrix::Matrix;

/// `param ← param − lr · grad`.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(NnError::Contract(format!("learning rate must be positive, got {lr}")));
    }
    if param.shape() != grad.shape() {
        return Err(NnError::shape("sgd_step", param.shape(), grad.shape()));
    }
    param.axpy(-lr, grad)
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(NnError::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.momentum == 0.0 {
            for (p, g) in params.into_iter().zip(grads) {
                sgd_step(p, g, self.lr)?;
            }
            return Ok(());
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if v.shape() != g.shape() {
                return Err(NnError::shape("sgd momentum", v.shape(), g.shape()));
            }
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.momentum * *vv + gv;
            }
            sgd_step(p, v, self.lr)?;
        }
        Ok(())
    }
}
