//! Weight-space forward pass, energy gradient, and parameter layout.
//!
//! Fully connected architectures (plain chains, skip DAGs, the single
//! nonlinear layer) share one edge-list code path; circular convolutions get
//! a gather/scatter pair around the same dense products.

use super::{Architecture, CnnReadout, Dataset, NetworkConfig};
use crate::error::{CoreError, Result};
use crate::gpkernels::ActivationSpec;
use crate::mat::{self, Mat};
use alloc::format;
use alloc::vec::Vec;

/// Shape, fan-in normalizer, and prior variance of one parameter matrix.
#[derive(Debug, Clone)]
pub struct ParamSlot {
    pub rows: usize,
    pub cols: usize,
    /// Divisor under the square root in the layer map.
    pub fanin: usize,
    /// Prior variance per column (conv slots vary by tap; everything else is
    /// uniform).
    pub col_vars: ColVars,
    pub role: SlotRole,
}

#[derive(Debug, Clone)]
pub enum ColVars {
    Uniform(f64),
    PerColumn(Vec<f64>),
}

impl ColVars {
    pub fn var(&self, col: usize) -> f64 {
        match self {
            ColVars::Uniform(v) => *v,
            ColVars::PerColumn(v) => v[col],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    /// Dense map from layer `from` into layer `layer`; `layer == depth` is
    /// (part of) the readout.
    Dense { layer: usize, from: usize },
    /// Filter bank of convolutional layer `layer`, stored as
    /// `n_l x (n_prev * taps)`.
    Conv { layer: usize },
}

/// Parameter slots of `config` for inputs of dimension `input_dim`.
pub fn param_layout(config: &NetworkConfig, input_dim: usize) -> Result<Vec<ParamSlot>> {
    config.validate_filters_present()?;
    let channels = config.input_channels(input_dim)?;
    let d = config.depth();
    let profile = config.profile();
    let width = |l: usize| if l == 0 { channels } else { profile.width(l) };
    let mut slots = Vec::new();
    match config.arch() {
        Architecture::CnnLinear { spatial } => {
            let s = spatial.size();
            for l in 1..d {
                let filter = &config.filters()[l - 1];
                let taps = filter.taps();
                let n_prev = width(l - 1);
                let mut vars = Vec::with_capacity(n_prev * taps.len());
                for _ in 0..n_prev {
                    for (_, w) in &taps {
                        vars.push(profile.sigma_sq(l) * w);
                    }
                }
                slots.push(ParamSlot {
                    rows: width(l),
                    cols: n_prev * taps.len(),
                    fanin: n_prev,
                    col_vars: ColVars::PerColumn(vars),
                    role: SlotRole::Conv { layer: l },
                });
            }
            let (cols, fanin) = match config.readout() {
                CnnReadout::Vectorization => (width(d - 1) * s, width(d - 1) * s),
                CnnReadout::GlobalAveragePooling => (width(d - 1), width(d - 1)),
            };
            slots.push(ParamSlot {
                rows: profile.output_width(),
                cols,
                fanin,
                col_vars: ColVars::Uniform(profile.sigma_sq(d)),
                role: SlotRole::Dense { layer: d, from: d - 1 },
            });
        }
        _ => {
            // Plain chains are the single-edge special case of the DAG path.
            for l in 1..=d {
                for from in 0..l {
                    let var = match config.skip() {
                        Some(skip) => skip.edge(l, from),
                        None => {
                            if from == l - 1 {
                                profile.sigma_sq(l)
                            } else {
                                0.0
                            }
                        }
                    };
                    if var > 0.0 {
                        slots.push(ParamSlot {
                            rows: width(l),
                            cols: width(from),
                            fanin: width(from),
                            col_vars: ColVars::Uniform(var),
                            role: SlotRole::Dense { layer: l, from },
                        });
                    }
                }
            }
        }
    }
    Ok(slots)
}

/// Inputs as a layer-0 activation matrix: `channels x (samples * sites)`.
pub(super) fn input_activation(config: &NetworkConfig, x: &Mat) -> Result<Mat> {
    let s = config.sites();
    let p = x.nrows();
    let channels = config.input_channels(x.ncols())?;
    let mut a0 = Mat::zeros(channels, p * s);
    for mu in 0..p {
        for i in 0..channels {
            for site in 0..s {
                a0[(i, mu * s + site)] = x[(mu, i * s + site)];
            }
        }
    }
    Ok(a0)
}

/// Activations and kernels of one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-activations per hidden layer, `n_l x (p * s)`.
    pub pre: Vec<Mat>,
    /// Post-activations per hidden layer.
    pub post: Vec<Mat>,
    /// Postactivation kernels per hidden layer: `(1/n_l)`-normalized inner
    /// products, `(p*s) x (p*s)` flattenings for CNNs, `p x p` otherwise.
    pub kernels: Vec<Mat>,
    /// Network outputs, `p x n_d` rows.
    pub output: Mat,
}

/// Gathered layer input for circular convolutions: row `j * taps + t` holds
/// source channel `j` shifted by tap `t`.
fn conv_gather(config: &NetworkConfig, layer: usize, prev: &Mat, p: usize) -> Mat {
    let spatial = match config.arch() {
        Architecture::CnnLinear { spatial } => spatial,
        _ => unreachable!("conv gather on non-CNN architecture"),
    };
    let s = spatial.size();
    let taps = config.filters()[layer - 1].taps();
    let n_prev = prev.nrows();
    let mut g = Mat::zeros(n_prev * taps.len(), p * s);
    for (t, (offset, _)) in taps.iter().enumerate() {
        let table = spatial.shift_table(offset);
        for j in 0..n_prev {
            let row = j * taps.len() + t;
            for mu in 0..p {
                for a in 0..s {
                    g[(row, mu * s + a)] = prev[(j, mu * s + table[a])];
                }
            }
        }
    }
    g
}

/// Readout feature matrix (what the last dense map multiplies) for CNNs.
fn cnn_features(config: &NetworkConfig, last: &Mat, p: usize) -> Mat {
    let s = config.sites();
    let n = last.nrows();
    match config.readout() {
        CnnReadout::Vectorization => {
            let mut f = Mat::zeros(n * s, p);
            for i in 0..n {
                for a in 0..s {
                    for mu in 0..p {
                        f[(i * s + a, mu)] = last[(i, mu * s + a)];
                    }
                }
            }
            f
        }
        CnnReadout::GlobalAveragePooling => {
            let mut f = Mat::zeros(n, p);
            for i in 0..n {
                for mu in 0..p {
                    let mut acc = 0.0;
                    for a in 0..s {
                        acc += last[(i, mu * s + a)];
                    }
                    f[(i, mu)] = acc / s as f64;
                }
            }
            f
        }
    }
}

/// Evaluate the network on inputs `x` (`p x n_in` rows).
pub fn forward(config: &NetworkConfig, params: &[Mat], x: &Mat) -> Result<ForwardPass> {
    let layout = param_layout(config, x.ncols())?;
    check_params(&layout, params)?;
    let act = config.activation();
    let d = config.depth();
    let p = x.nrows();
    let a0 = input_activation(config, x)?;

    let mut pre = Vec::with_capacity(d - 1);
    let mut post: Vec<Mat> = Vec::with_capacity(d - 1);
    let mut kernels = Vec::with_capacity(d - 1);
    let mut output_pre: Option<Mat> = None;

    match config.arch() {
        Architecture::CnnLinear { .. } => {
            for l in 1..d {
                let prev = if l == 1 { &a0 } else { &post[l - 2] };
                let g = conv_gather(config, l, prev, p);
                let h = (&params[l - 1] * g) / libm::sqrt(layout[l - 1].fanin as f64);
                let a = h.clone(); // linear convolutions
                let n_l = config.profile().width(l) as f64;
                kernels.push(mat::symmetrize(&((a.transpose() * &a) / n_l)));
                pre.push(h);
                post.push(a);
            }
            let features = cnn_features(config, &post[d - 2], p);
            let slot = layout.last().expect("readout slot");
            output_pre =
                Some((params.last().expect("readout") * features) / libm::sqrt(slot.fanin as f64));
        }
        _ => {
            for l in 1..=d {
                let n_l =
                    if l == d { config.profile().output_width() } else { config.profile().width(l) };
                let mut h = Mat::zeros(n_l, p);
                for (slot, w) in layout.iter().zip(params.iter()) {
                    if let SlotRole::Dense { layer, from } = slot.role {
                        if layer == l {
                            let src = if from == 0 { &a0 } else { &post[from - 1] };
                            h += (w * src) / libm::sqrt(slot.fanin as f64);
                        }
                    }
                }
                if l == d {
                    output_pre = Some(h);
                } else {
                    let a = h.map(|v| act.apply(v));
                    kernels.push(mat::symmetrize(
                        &((a.transpose() * &a) / config.profile().width(l) as f64),
                    ));
                    pre.push(h);
                    post.push(a);
                }
            }
        }
    }

    Ok(ForwardPass {
        pre,
        post,
        kernels,
        output: output_pre.expect("readout evaluated").transpose(),
    })
}

fn check_params(layout: &[ParamSlot], params: &[Mat]) -> Result<()> {
    if layout.len() != params.len() {
        return Err(CoreError::invalid(format!(
            "expected {} parameter matrices, got {}",
            layout.len(),
            params.len()
        )));
    }
    for (slot, w) in layout.iter().zip(params) {
        if w.shape() != (slot.rows, slot.cols) {
            return Err(CoreError::invalid(format!(
                "parameter for {:?} must be {}x{}, got {}x{}",
                slot.role,
                slot.rows,
                slot.cols,
                w.nrows(),
                w.ncols()
            )));
        }
    }
    Ok(())
}

fn activation_derivative(act: &ActivationSpec, x: f64) -> f64 {
    match act {
        ActivationSpec::Identity => 1.0,
        ActivationSpec::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationSpec::Erf => 2.0 / libm::sqrt(core::f64::consts::PI) * libm::exp(-x * x),
        ActivationSpec::Polynomial(c) => {
            // Horner on the derivative coefficients.
            let mut acc = 0.0;
            for i in (1..c.len()).rev() {
                acc = acc * x + c[i] * i as f64;
            }
            acc
        }
        ActivationSpec::Custom(f) => {
            let h = 1e-6 * x.abs().max(1.0);
            (f(x + h) - f(x - h)) / (2.0 * h)
        }
    }
}

/// Energy `E = (1/2) sum_mu ||f(x_mu) - y_mu||^2` and its exact reverse-mode
/// gradient with respect to every parameter matrix (same order as
/// [`param_layout`]).
pub fn grad_energy(
    config: &NetworkConfig,
    params: &[Mat],
    data: &Dataset,
) -> Result<(f64, Vec<Mat>)> {
    let layout = param_layout(config, data.input_dim())?;
    check_params(&layout, params)?;
    if data.output_dim() != config.profile().output_width() {
        return Err(CoreError::invalid(format!(
            "targets have {} columns but the readout width is {}",
            data.output_dim(),
            config.profile().output_width()
        )));
    }
    let fwd = forward(config, params, data.x())?;
    let act = config.activation();
    let d = config.depth();
    let s = config.sites();
    let p = data.len();
    let a0 = input_activation(config, data.x())?;

    let diff = (&fwd.output - data.y()).transpose(); // n_d x p
    let energy = 0.5 * {
        let n = mat::frobenius(&diff);
        n * n
    };

    let mut grads: Vec<Mat> = layout.iter().map(|s| Mat::zeros(s.rows, s.cols)).collect();
    // d E / d post-activation, per hidden layer.
    let mut dpost: Vec<Mat> =
        fwd.post.iter().map(|m| Mat::zeros(m.nrows(), m.ncols())).collect();

    match config.arch() {
        Architecture::CnnLinear { .. } => {
            let features = cnn_features(config, &fwd.post[d - 2], p);
            let ridx = layout.len() - 1;
            let r_fan = libm::sqrt(layout[ridx].fanin as f64);
            grads[ridx] = (&diff * features.transpose()) / r_fan;
            let dfeat = (params[ridx].transpose() * &diff) / r_fan;
            let n_last = fwd.post[d - 2].nrows();
            match config.readout() {
                CnnReadout::Vectorization => {
                    for i in 0..n_last {
                        for a in 0..s {
                            for mu in 0..p {
                                dpost[d - 2][(i, mu * s + a)] = dfeat[(i * s + a, mu)];
                            }
                        }
                    }
                }
                CnnReadout::GlobalAveragePooling => {
                    for i in 0..n_last {
                        for mu in 0..p {
                            let v = dfeat[(i, mu)] / s as f64;
                            for a in 0..s {
                                dpost[d - 2][(i, mu * s + a)] = v;
                            }
                        }
                    }
                }
            }
            for l in (1..d).rev() {
                // Linear convolutions: dpre == dpost.
                let dpre = &dpost[l - 1];
                let prev = if l == 1 { &a0 } else { &fwd.post[l - 2] };
                let gathered = conv_gather(config, l, prev, p);
                let fan = libm::sqrt(layout[l - 1].fanin as f64);
                grads[l - 1] = (dpre * gathered.transpose()) / fan;
                if l > 1 {
                    let dgather = (params[l - 1].transpose() * dpre) / fan;
                    let spatial = match config.arch() {
                        Architecture::CnnLinear { spatial } => spatial,
                        _ => unreachable!(),
                    };
                    let taps = config.filters()[l - 1].taps();
                    let mut scatter = Mat::zeros(prev.nrows(), prev.ncols());
                    for (t, (offset, _)) in taps.iter().enumerate() {
                        let table = spatial.shift_table(offset);
                        for j in 0..prev.nrows() {
                            let row = j * taps.len() + t;
                            for mu in 0..p {
                                for a in 0..s {
                                    scatter[(j, mu * s + table[a])] += dgather[(row, mu * s + a)];
                                }
                            }
                        }
                    }
                    dpost[l - 2] += scatter;
                }
            }
        }
        _ => {
            // Reverse sweep over the DAG; layer d's "dpre" is the output
            // residual itself.
            for l in (1..=d).rev() {
                let dpre = if l == d {
                    diff.clone()
                } else {
                    let mut dp = dpost[l - 1].clone();
                    for (dv, pv) in dp.iter_mut().zip(fwd.pre[l - 1].iter()) {
                        *dv *= activation_derivative(&act, *pv);
                    }
                    dp
                };
                for (idx, slot) in layout.iter().enumerate() {
                    if let SlotRole::Dense { layer, from } = slot.role {
                        if layer == l {
                            let src = if from == 0 { &a0 } else { &fwd.post[from - 1] };
                            let fan = libm::sqrt(slot.fanin as f64);
                            grads[idx] = (&dpre * src.transpose()) / fan;
                            if from > 0 {
                                dpost[from - 1] += (params[idx].transpose() * &dpre) / fan;
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((energy, grads))
}
