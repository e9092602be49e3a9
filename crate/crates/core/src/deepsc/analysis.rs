//! One-layer dense link used to study how the channel enters the
//! transmitter's weight gradient.
//!
//! `X = σ(W_T s + b_T)`, `Y = H X + N`, `ŝ = σ(W_R Y + b_R)` with loss
//! `½‖ŝ − s‖²`. The transmitter gradient is
//! `∂L/∂W_T = (F_R W_R H F_T)ᵀ ∇_ŝL sᵀ` where `F_T`, `F_R` are the diagonal
//! sigmoid derivatives. Every factor of `H` in that product is random, which
//! is what makes training without CSI noisy; with zero-forcing the receiver
//! sees `X + H⁻¹N` and `H` drops out of the product.

use nalgebra::{DMatrix, DVector};

use crate::nncore::graph::sigmoid;

#[derive(Clone, Debug, PartialEq)]
pub struct OneLayerLink {
    pub w_t: DMatrix<f64>,
    pub b_t: DVector<f64>,
    pub w_r: DMatrix<f64>,
    pub b_r: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkPass {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s_hat: DVector<f64>,
    pub loss: f64,
}

impl OneLayerLink {
    /// Receiver input: `HX + N`, or `X + H⁻¹N` when zero-forcing.
    fn received(&self, x: &DVector<f64>, h: &DMatrix<f64>, n: &DVector<f64>, zf: bool) -> Option<DVector<f64>> {
        if zf {
            Some(x + h.clone().try_inverse()? * n)
        } else {
            Some(h * x + n)
        }
    }

    pub fn forward(&self, s: &DVector<f64>, h: &DMatrix<f64>, n: &DVector<f64>, zf: bool) -> Option<LinkPass> {
        let x = (&self.w_t * s + &self.b_t).map(sigmoid);
        let y = self.received(&x, h, n, zf)?;
        let s_hat = (&self.w_r * &y + &self.b_r).map(sigmoid);
        let loss = 0.5 * (&s_hat - s).norm_squared();
        Some(LinkPass { x, y, s_hat, loss })
    }

    /// Closed-form `∂L/∂W_T`. With `zf` the effective channel is `I`.
    pub fn grad_w_t(&self, s: &DVector<f64>, h: &DMatrix<f64>, n: &DVector<f64>, zf: bool) -> Option<DMatrix<f64>> {
        let pass = self.forward(s, h, n, zf)?;
        let f_t = DMatrix::from_diagonal(&pass.x.map(|v| v * (1.0 - v)));
        let f_r = DMatrix::from_diagonal(&pass.s_hat.map(|v| v * (1.0 - v)));
        let h_eff = if zf { DMatrix::identity(h.nrows(), h.ncols()) } else { h.clone() };
        let chain = f_r * &self.w_r * h_eff * f_t;
        let upstream = &pass.s_hat - s;
        Some(chain.transpose() * upstream * s.transpose())
    }
}
