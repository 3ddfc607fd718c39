use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{check_input, check_noise_level, EnergyModel};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::rng::standard_normal;

/// Input/output normalization of the denoiser at noise level `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmScalings {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

pub fn edm_scalings(t: f64, sigma_data: f64) -> EdmScalings {
    let sd2 = sigma_data * sigma_data;
    let root = libm::sqrt(sd2 + t * t);
    EdmScalings {
        c_skip: sd2 / (sd2 + t * t),
        c_out: t * sigma_data / root,
        c_in: 1.0 / root,
        c_noise: libm::log(t) / 4.0,
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-a))
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_d1(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

fn silu_d2(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 - s) * (2.0 + a * (1.0 - 2.0 * s))
}

/// Fully connected network with SiLU hidden activations and a linear output.
///
/// Parameters live in one flat vector; layer `j` stores its weight
/// (`sizes[j+1] × sizes[j]`, row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

impl Mlp {
    /// All-zero network (`F ≡ 0`).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(
                "layer sizes",
                "need at least two positive sizes",
            ));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for w in sizes.windows(2) {
            offsets.push(total);
            total += w[1] * w[0] + w[1];
        }
        offsets.push(total);
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; total],
            offsets,
        })
    }

    /// Weights drawn from `N(0, 1/fan_in)`, zero biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Mlp::zeros(sizes)?;
        for j in 0..mlp.num_layers() {
            let std = 1.0 / libm::sqrt(sizes[j] as f64);
            let start = mlp.offsets[j];
            for p in &mut mlp.params[start..start + sizes[j] * sizes[j + 1]] {
                *p = std * standard_normal(rng);
            }
        }
        Ok(mlp)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut mlp = Mlp::zeros(sizes)?;
        mlp.set_params(params)?;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                shape: vec![self.params.len()],
                len: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: "network parameters",
                index,
            });
        }
        self.params = params;
        Ok(())
    }

    /// Offset of layer `j`'s weight in the flat parameter vector.
    pub fn weight_offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    /// Offset of layer `j`'s bias in the flat parameter vector.
    pub fn bias_offset(&self, j: usize) -> usize {
        self.offsets[j] + self.sizes[j] * self.sizes[j + 1]
    }

    pub fn weight(&self, j: usize) -> &[f64] {
        &self.params[self.weight_offset(j)..self.bias_offset(j)]
    }

    pub fn bias(&self, j: usize) -> &[f64] {
        &self.params[self.bias_offset(j)..self.offsets[j + 1]]
    }
}

/// `W h + b` for a row-major `rows × cols` weight.
fn affine(w: &[f64], b: &[f64], h: &[f64]) -> Vec<f64> {
    let cols = h.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            bias + w[r * cols..(r + 1) * cols]
                .iter()
                .zip(h)
                .map(|(a, c)| a * c)
                .sum::<f64>()
        })
        .collect()
}

/// `Wᵀ v` for a row-major weight with `cols` columns.
fn transpose_apply(w: &[f64], v: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &vr) in v.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += wv * vr;
        }
    }
    out
}

/// `W v`
fn weight_apply(w: &[f64], v: &[f64], rows: usize) -> Vec<f64> {
    let cols = v.len();
    (0..rows)
        .map(|r| {
            w[r * cols..(r + 1) * cols]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// `G += a ⊗ b` on a row-major block.
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (gv, &bv) in g[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *gv += ar * bv;
        }
    }
}

/// Intermediate values of one denoiser evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub t: f64,
    pub scalings: EdmScalings,
    /// Layer inputs: `inputs[0]` is the network input, `inputs[j]` the
    /// activation feeding layer `j`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer (the last one is the network output).
    pub pre: Vec<Vec<f64>>,
    /// `D(x; t)`
    pub denoised: Vec<f64>,
}

/// Intermediates of the vector-Jacobian product through the network.
struct VjpTrace {
    /// Cotangent entering each hidden activation, indexed by layer.
    incoming: Vec<Vec<f64>>,
    /// Cotangent after the activation derivative, indexed by layer.
    deltas: Vec<Vec<f64>>,
    /// Cotangent at the network input.
    input: Vec<f64>,
}

/// Energy `½‖x − D(x; t)‖²` with an EDM-preconditioned network denoiser
/// `D = c_skip·x + c_out·F(c_in·x, c_noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralEBM {
    mlp: Mlp,
    sigma_data: f64,
    shape: Vec<usize>,
}

impl NeuralEBM {
    pub const ARCH: &'static str = "mlp-silu-edm";

    pub fn new(shape: &[usize], mlp: Mlp, sigma_data: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        let sizes = mlp.sizes();
        if sizes[0] != n + 1 || sizes[sizes.len() - 1] != n {
            return Err(Error::invalid(
                "layer sizes",
                "network must map dim + 1 inputs to dim outputs",
            ));
        }
        if !(sigma_data > 0.0) || !sigma_data.is_finite() {
            return Err(Error::invalid("sigma_data", "must be positive"));
        }
        Ok(NeuralEBM {
            mlp,
            sigma_data,
            shape: shape.to_vec(),
        })
    }

    /// Randomly initialized model with the given hidden widths.
    pub fn with_hidden<R: Rng + ?Sized>(
        shape: &[usize],
        hidden: &[usize],
        sigma_data: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut sizes = vec![n + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(n);
        NeuralEBM::new(shape, Mlp::random(&sizes, rng)?, sigma_data)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn forward(&self, x: &Field, t: f64) -> Result<ForwardTrace> {
        check_input(self, x, t)?;
        self.forward_slice(x.as_slice(), t)
    }

    fn forward_slice(&self, x: &[f64], t: f64) -> Result<ForwardTrace> {
        let sc = edm_scalings(t, self.sigma_data);
        let mut z: Vec<f64> = x.iter().map(|v| sc.c_in * v).collect();
        z.push(sc.c_noise);
        let nl = self.mlp.num_layers();
        let mut inputs = Vec::with_capacity(nl);
        let mut pre = Vec::with_capacity(nl);
        let mut h = z;
        for j in 0..nl {
            let a = affine(self.mlp.weight(j), self.mlp.bias(j), &h);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "network layer pre-activation",
                    index: j,
                });
            }
            let next = if j + 1 < nl {
                a.iter().map(|&v| silu(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(core::mem::replace(&mut h, next));
            pre.push(a);
        }
        let o = &pre[nl - 1];
        let denoised = x
            .iter()
            .zip(o)
            .map(|(&xi, &oi)| sc.c_skip * xi + sc.c_out * oi)
            .collect();
        Ok(ForwardTrace {
            t,
            scalings: sc,
            inputs,
            pre,
            denoised,
        })
    }

    /// `(∂F/∂z)ᵀ u` through the recorded trace.
    fn network_vjp(&self, trace: &ForwardTrace, u: &[f64]) -> VjpTrace {
        let nl = self.mlp.num_layers();
        let mut incoming = vec![Vec::new(); nl];
        let mut deltas = vec![Vec::new(); nl];
        let mut g = transpose_apply(self.mlp.weight(nl - 1), u, self.mlp.sizes[nl - 1]);
        for j in (0..nl - 1).rev() {
            let delta: Vec<f64> = trace.pre[j]
                .iter()
                .zip(&g)
                .map(|(&a, &gv)| silu_d1(a) * gv)
                .collect();
            let next = transpose_apply(self.mlp.weight(j), &delta, self.mlp.sizes[j]);
            incoming[j] = core::mem::replace(&mut g, next);
            deltas[j] = delta;
        }
        VjpTrace {
            incoming,
            deltas,
            input: g,
        }
    }

    /// `D(x; t)`
    pub fn denoiser(&self, x: &Field, t: f64) -> Result<Field> {
        let trace = self.forward(x, t)?;
        Ok(Field::from_parts(x.shape(), trace.denoised))
    }

    /// `J_D(x; t)ᵀ v`, with `J_D` the Jacobian of the network denoiser.
    pub fn denoiser_vjp(&self, x: &Field, t: f64, v: &Field) -> Result<Field> {
        v.same_shape(x)?;
        let trace = self.forward(x, t)?;
        let out = self.jacobian_transpose_apply(&trace, v.as_slice());
        let f = Field::from_parts(x.shape(), out);
        f.check_finite("denoiser vjp")?;
        Ok(f)
    }

    fn jacobian_transpose_apply(&self, trace: &ForwardTrace, v: &[f64]) -> Vec<f64> {
        let sc = trace.scalings;
        let vjp = self.network_vjp(trace, v);
        v.iter()
            .zip(&vjp.input)
            .map(|(&vi, &si)| sc.c_skip * vi + sc.c_out * sc.c_in * si)
            .collect()
    }

    /// Residual `r = x − D` and the gradient `r − t·J_Dᵀ(r/t)`.
    fn residual_and_grad(&self, x: &[f64], trace: &ForwardTrace) -> (Vec<f64>, Vec<f64>, VjpTrace) {
        let t = trace.t;
        let sc = trace.scalings;
        let r: Vec<f64> = x.iter().zip(&trace.denoised).map(|(a, d)| a - d).collect();
        let u: Vec<f64> = r.iter().map(|v| v / t).collect();
        let vjp = self.network_vjp(trace, &u);
        let grad = r
            .iter()
            .zip(&vjp.input)
            .map(|(&ri, &si)| ri - (sc.c_skip * ri + t * sc.c_out * sc.c_in * si))
            .collect();
        (r, grad, vjp)
    }

    /// Weighted regression loss `w‖D̃(x; t) − target‖²` of the energy denoiser
    /// `D̃ = x − ∇E`.
    pub fn regression_loss(&self, x: &Field, t: f64, target: &Field, weight: f64) -> Result<f64> {
        target.same_shape(x)?;
        let trace = self.forward(x, t)?;
        let (_, grad, _) = self.residual_and_grad(x.as_slice(), &trace);
        Ok(weight
            * x.as_slice()
                .iter()
                .zip(&grad)
                .zip(target.as_slice())
                .map(|((xi, gi), ti)| {
                    let r = xi - gi - ti;
                    r * r
                })
                .sum::<f64>())
    }

    /// Loss as in [`NeuralEBM::regression_loss`] and its gradient with respect
    /// to every network parameter, differentiating through the
    /// vector-Jacobian product inside `D̃`.
    pub fn regression_loss_and_grad(
        &self,
        x: &Field,
        t: f64,
        target: &Field,
        weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        target.same_shape(x)?;
        let trace = self.forward(x, t)?;
        let xs = x.as_slice();
        let (r, grad, vjp) = self.residual_and_grad(xs, &trace);
        let sc = trace.scalings;
        let n = xs.len();
        let nl = self.mlp.num_layers();
        let sizes = &self.mlp.sizes;

        let err: Vec<f64> = xs
            .iter()
            .zip(&grad)
            .zip(target.as_slice())
            .map(|((xi, gi), ti)| xi - gi - ti)
            .collect();
        let loss = weight * err.iter().map(|e| e * e).sum::<f64>();
        let mut pgrad = vec![0.0; self.mlp.num_params()];

        // Reverse through gradE = r − q, q = c_skip·r + t·c_out·c_in·s.
        let grad_bar: Vec<f64> = err.iter().map(|e| -2.0 * weight * e).collect();
        let mut r_bar = grad_bar.clone();
        for (rb, gb) in r_bar.iter_mut().zip(&grad_bar) {
            *rb -= sc.c_skip * gb;
        }
        let mut g_bar: Vec<f64> = grad_bar
            .iter()
            .map(|gb| -t * sc.c_out * sc.c_in * gb)
            .collect();
        g_bar.push(0.0);

        // Reverse through the network vjp, from the input side outwards.
        let mut pre_bar: Vec<Vec<f64>> = sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        for j in 0..nl - 1 {
            let wo = self.mlp.weight_offset(j);
            outer_acc(
                &mut pgrad[wo..wo + sizes[j] * sizes[j + 1]],
                &vjp.deltas[j],
                &g_bar,
            );
            let delta_bar = weight_apply(self.mlp.weight(j), &g_bar, sizes[j + 1]);
            g_bar = trace.pre[j]
                .iter()
                .zip(&delta_bar)
                .map(|(&a, &db)| silu_d1(a) * db)
                .collect();
            for (k, ab) in pre_bar[j].iter_mut().enumerate() {
                *ab += silu_d2(trace.pre[j][k]) * vjp.incoming[j][k] * delta_bar[k];
            }
        }
        let u: Vec<f64> = r.iter().map(|v| v / t).collect();
        let wo = self.mlp.weight_offset(nl - 1);
        outer_acc(&mut pgrad[wo..wo + sizes[nl - 1] * sizes[nl]], &u, &g_bar);
        let u_bar = weight_apply(self.mlp.weight(nl - 1), &g_bar, n);
        for (rb, ub) in r_bar.iter_mut().zip(&u_bar) {
            *rb += ub / t;
        }

        // Reverse through r = x − D, D = c_skip·x + c_out·F.
        let mut a_bar: Vec<f64> = r_bar.iter().map(|rb| -sc.c_out * rb).collect();
        for j in (0..nl).rev() {
            for (ab, extra) in a_bar.iter_mut().zip(&pre_bar[j]) {
                *ab += extra;
            }
            let wo = self.mlp.weight_offset(j);
            outer_acc(
                &mut pgrad[wo..wo + sizes[j] * sizes[j + 1]],
                &a_bar,
                &trace.inputs[j],
            );
            let bo = self.mlp.bias_offset(j);
            for (p, ab) in pgrad[bo..bo + sizes[j + 1]].iter_mut().zip(&a_bar) {
                *p += ab;
            }
            if j > 0 {
                let h_bar = transpose_apply(self.mlp.weight(j), &a_bar, sizes[j]);
                a_bar = trace.pre[j - 1]
                    .iter()
                    .zip(&h_bar)
                    .map(|(&a, &hb)| silu_d1(a) * hb)
                    .collect();
            }
        }
        if !loss.is_finite() || pgrad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: "regression loss gradient",
                index: 0,
            });
        }
        Ok((loss, pgrad))
    }
}

impl EnergyModel for NeuralEBM {
    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn energy(&self, x: &Field, t: f64) -> Result<f64> {
        let trace = self.forward(x, t)?;
        Ok(0.5
            * x.as_slice()
                .iter()
                .zip(&trace.denoised)
                .map(|(a, d)| (a - d) * (a - d))
                .sum::<f64>())
    }

    fn grad_energy(&self, x: &Field, t: f64) -> Result<Field> {
        Ok(self.energy_and_grad(x, t)?.1)
    }

    fn energy_and_grad(&self, x: &Field, t: f64) -> Result<(f64, Field)> {
        check_noise_level(t)?;
        let trace = self.forward(x, t)?;
        let (r, grad, _) = self.residual_and_grad(x.as_slice(), &trace);
        let g = Field::from_parts(x.shape(), grad);
        g.check_finite("neural grad_energy")?;
        Ok((0.5 * r.iter().map(|v| v * v).sum::<f64>(), g))
    }
}
