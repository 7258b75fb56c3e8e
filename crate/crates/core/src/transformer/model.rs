use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{add_bias, col_sum_acc, matmul, matmul_a_bt, matmul_at_b_acc, softmax_in_place};
use super::{slot, MixingBlock, Parameters, HEAD_OUTPUTS};
use crate::geom::Vec2;
use crate::mixture::{energy, log_normalizer, logsumexp, CovSource, CovarianceSchedule, DisplacementPower, InverseCovariance, SymMat2};
use crate::scene::{step_time, AgentContext, ModePrediction, PredictionSet, Trajectory, HORIZON_STEPS};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Where the per-step inverse covariances used by the loss come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovMode {
    /// Fixed schedule oriented along the ground truth; the `(a, b, c)`
    /// head outputs receive no gradient.
    Schedule(CovarianceSchedule),
    /// The head's own `(a, b, c)` outputs.
    Predicted,
}

/// One training example, expressed in the agent frame (agent at the origin,
/// heading along +x).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub ctx: AgentContext,
    pub gt: Trajectory,
}

impl Sample {
    /// Constant-velocity prior the decoded offsets are added to.
    pub fn prior(&self) -> [Vec2; HORIZON_STEPS] {
        cv_prior(self.ctx.speed)
    }
}

pub(crate) fn cv_prior(speed: f64) -> [Vec2; HORIZON_STEPS] {
    core::array::from_fn(|k| Vec2::new(speed * step_time(k), 0.0))
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `n_modes × d_attn` tokens: `concat(actor, mode_embedding_α) · W + b`.
pub fn make_mode_tokens(actor: &[f64], params: &Parameters) -> Result<Vec<f64>> {
    Ok(token_inputs_and_tokens(actor, params)?.1)
}

fn token_inputs_and_tokens(actor: &[f64], params: &Parameters) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = params.config();
    if actor.len() != c.d_actor {
        return Err(Error::Shape {
            what: "actor embedding",
            expected: c.d_actor,
            got: actor.len(),
        });
    }
    check_finite(actor, "actor embedding")?;
    let width = c.d_actor + c.d_mode;
    let emb = params.get(slot::MODE_EMB);
    let mut input = Vec::with_capacity(c.n_modes * width);
    for alpha in 0..c.n_modes {
        input.extend_from_slice(actor);
        input.extend_from_slice(&emb[alpha * c.d_mode..(alpha + 1) * c.d_mode]);
    }
    let mut tokens = vec![0.0; c.n_modes * c.d_attn];
    matmul(&input, params.get(slot::TOK_W), c.n_modes, width, c.d_attn, &mut tokens);
    add_bias(&mut tokens, params.get(slot::TOK_B));
    Ok((input, tokens))
}

#[derive(Debug, Clone, PartialEq)]
struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / d);
    for (row, out) in x.chunks(d).zip(xhat.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / libm::sqrt(var + LN_EPS);
        for (o, v) in out.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    let mut y = xhat.clone();
    for row in y.chunks_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Accumulates gain/bias gradients and returns `dL/dx`.
fn layer_norm_backward(dy: &[f64], d: usize, gain: &[f64], cache: &LnCache, dgain: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (i, (dyr, dxr)) in dy.chunks(d).zip(dx.chunks_mut(d)).enumerate() {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dxr[j] = cache.inv_std[i] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Intermediate values of the attention and dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    ln1: Option<LnCache>,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attention: Vec<f64>,
    z: Vec<f64>,
    ln2: Option<LnCache>,
    h2: Vec<f64>,
    pre_relu: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardTrace {
    /// `n_modes × d_attn` block output.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// `n_heads × n_modes × n_modes` attention weights (identity rows for
    /// the per-token ablation).
    pub fn attention(&self) -> &[f64] {
        &self.attention
    }
}

fn head_cols(x: &[f64], d: usize, h: usize, dh: usize) -> Vec<f64> {
    x.chunks(d).flat_map(|row| row[h * dh..(h + 1) * dh].iter().copied()).collect()
}

fn scatter_head_cols(src: &[f64], d: usize, h: usize, dh: usize, dst: &mut [f64]) {
    for (s, row) in src.chunks(dh).zip(dst.chunks_mut(d)) {
        for (o, v) in row[h * dh..(h + 1) * dh].iter_mut().zip(s) {
            *o += v;
        }
    }
}

/// Self-attention across the mode tokens followed by the dense block.
pub fn mode_attention_forward(tokens: &[f64], params: &Parameters) -> Result<ForwardTrace> {
    let c = params.config();
    let (n, d, f) = (c.n_modes, c.d_attn, c.d_ff);
    if tokens.len() != n * d {
        return Err(Error::Shape {
            what: "mode tokens",
            expected: n * d,
            got: tokens.len(),
        });
    }
    let (h1, ln1) = if c.layer_norm {
        let (y, cache) = layer_norm(tokens, d, params.get(slot::LN1_G), params.get(slot::LN1_B));
        (y, Some(cache))
    } else {
        (tokens.to_vec(), None)
    };
    let project = |w: usize, b: usize| {
        let mut out = vec![0.0; n * d];
        matmul(&h1, params.get(w), n, d, d, &mut out);
        add_bias(&mut out, params.get(b));
        out
    };
    let v = project(slot::V_W, slot::V_B);
    let (q, k, attention, z) = match c.mixing {
        MixingBlock::Attention => {
            let q = project(slot::Q_W, slot::Q_B);
            let k = project(slot::K_W, slot::K_B);
            let dh = c.head_dim();
            let scale = 1.0 / libm::sqrt(dh as f64);
            let mut attention = vec![0.0; c.n_heads * n * n];
            let mut z = vec![0.0; n * d];
            for h in 0..c.n_heads {
                let (qh, kh, vh) = (head_cols(&q, d, h, dh), head_cols(&k, d, h, dh), head_cols(&v, d, h, dh));
                let a = &mut attention[h * n * n..(h + 1) * n * n];
                matmul_a_bt(&qh, &kh, n, dh, n, a);
                for row in a.chunks_mut(n) {
                    row.iter_mut().for_each(|s| *s *= scale);
                    softmax_in_place(row);
                }
                let mut zh = vec![0.0; n * dh];
                matmul(a, &vh, n, n, dh, &mut zh);
                scatter_head_cols(&zh, d, h, dh, &mut z);
            }
            (q, k, attention, z)
        }
        MixingBlock::PerToken => {
            let mut attention = vec![0.0; c.n_heads * n * n];
            for h in 0..c.n_heads {
                for i in 0..n {
                    attention[h * n * n + i * n + i] = 1.0;
                }
            }
            (Vec::new(), Vec::new(), attention, v.clone())
        }
    };
    let mut x1 = vec![0.0; n * d];
    matmul(&z, params.get(slot::O_W), n, d, d, &mut x1);
    add_bias(&mut x1, params.get(slot::O_B));
    if c.residual {
        x1.iter_mut().zip(tokens).for_each(|(o, t)| *o += t);
    }

    let (h2, ln2) = if c.layer_norm {
        let (y, cache) = layer_norm(&x1, d, params.get(slot::LN2_G), params.get(slot::LN2_B));
        (y, Some(cache))
    } else {
        (x1.clone(), None)
    };
    let mut pre_relu = vec![0.0; n * f];
    matmul(&h2, params.get(slot::FF1_W), n, d, f, &mut pre_relu);
    add_bias(&mut pre_relu, params.get(slot::FF1_B));
    let hidden: Vec<f64> = pre_relu.iter().map(|&v| v.max(0.0)).collect();
    let mut output = vec![0.0; n * d];
    matmul(&hidden, params.get(slot::FF2_W), n, f, d, &mut output);
    add_bias(&mut output, params.get(slot::FF2_B));
    if c.residual {
        output.iter_mut().zip(&x1).for_each(|(o, t)| *o += t);
    }
    Ok(ForwardTrace {
        ln1,
        h1,
        q,
        k,
        v,
        attention,
        z,
        ln2,
        h2,
        pre_relu,
        hidden,
        output,
    })
}

/// Per-mode head outputs in the agent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedModes {
    /// Position offsets (meters) relative to whatever prior the caller uses.
    pub offsets: Vec<[Vec2; HORIZON_STEPS]>,
    /// Raw `(a, b, c)` per step; not validated for finiteness.
    pub cov: Vec<[InverseCovariance; HORIZON_STEPS]>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn head_forward(tokens: &[f64], params: &Parameters) -> Vec<f64> {
    let c = params.config();
    let mut y = vec![0.0; c.n_modes * HEAD_OUTPUTS];
    matmul(tokens, params.get(slot::HEAD_W), c.n_modes, c.d_attn, HEAD_OUTPUTS, &mut y);
    add_bias(&mut y, params.get(slot::HEAD_B));
    y
}

fn decode_raw(y: &[f64], output_scale: f64) -> DecodedModes {
    let mut out = DecodedModes {
        offsets: Vec::new(),
        cov: Vec::new(),
        logits: Vec::new(),
        probs: Vec::new(),
    };
    for row in y.chunks(HEAD_OUTPUTS) {
        out.offsets
            .push(core::array::from_fn(|k| Vec2::new(row[5 * k], row[5 * k + 1]) * output_scale));
        out.cov.push(core::array::from_fn(|k| InverseCovariance {
            a: row[5 * k + 2],
            b: row[5 * k + 3],
            c: row[5 * k + 4],
        }));
        out.logits.push(row[HEAD_OUTPUTS - 1]);
    }
    out.probs = out.logits.clone();
    softmax_in_place(&mut out.probs);
    out
}

/// Decode block outputs into trajectories, covariances and probabilities.
pub fn decode_modes(tokens: &[f64], params: &Parameters) -> Result<DecodedModes> {
    let c = params.config();
    if tokens.len() != c.n_modes * c.d_attn {
        return Err(Error::Shape {
            what: "mode tokens",
            expected: c.n_modes * c.d_attn,
            got: tokens.len(),
        });
    }
    Ok(decode_raw(&head_forward(tokens, params), c.output_scale))
}

/// Batch loss and its gradient with respect to the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub nll: f64,
    pub gradient: Vec<f64>,
}

/// Mean mixture NLL of the batch (no gradient).
pub fn sample_nll(batch: &[Sample], params: &Parameters, r: DisplacementPower, cov_mode: &CovMode) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        total += sample_forward(s, params, r, cov_mode)?.nll;
    }
    finite_mean(total, batch.len())
}

fn finite_mean(total: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let m = total / n as f64;
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

struct SampleForward {
    input: Vec<f64>,
    trace: ForwardTrace,
    /// `dL/dy` for the head output.
    dy: Vec<f64>,
    nll: f64,
}

fn scheduled_lambdas(s: &Sample, schedule: &CovarianceSchedule) -> Result<[InverseCovariance; HORIZON_STEPS]> {
    let dummy = ModePrediction::new(s.gt.clone(), None, 1.0)?;
    CovSource::Schedule(schedule, s.ctx).resolve(&dummy, &s.gt)
}

fn sample_forward(s: &Sample, params: &Parameters, r: DisplacementPower, cov_mode: &CovMode) -> Result<SampleForward> {
    let c = params.config();
    let (input, tokens) = token_inputs_and_tokens(&s.features, params)?;
    let trace = mode_attention_forward(&tokens, params)?;
    let y = head_forward(&trace.output, params);
    let decoded = decode_raw(&y, c.output_scale);
    let prior = s.prior();
    let fixed = match cov_mode {
        CovMode::Schedule(schedule) => Some(scheduled_lambdas(s, schedule)?),
        CovMode::Predicted => None,
    };
    let rv = r.get();
    let log_z = logsumexp(&decoded.logits);
    let mut ll = vec![0.0; c.n_modes];
    // dℓ_α/dy for each mode, filled before responsibilities are known.
    let mut dll = vec![0.0; c.n_modes * HEAD_OUTPUTS];
    for alpha in 0..c.n_modes {
        let row = &mut dll[alpha * HEAD_OUTPUTS..(alpha + 1) * HEAD_OUTPUTS];
        for k in 0..HORIZON_STEPS {
            let lam = fixed.map_or(decoded.cov[alpha][k], |f| f[k]);
            let m = lam.matrix();
            let mean = prior[k] + decoded.offsets[alpha][k];
            let d = s.gt.at(k) - mean;
            let q = lam.quad_form(d);
            ll[alpha] += -energy(q, r) - log_normalizer(r, &lam);
            // dE/dq with the q = 0 subgradient for r < 2.
            let de_dq = if rv == 2.0 {
                0.5
            } else if q > 0.0 {
                0.25 * rv * libm::pow(q, 0.5 * rv - 1.0)
            } else {
                0.0
            };
            let lam_d = Vec2::new(m.xx * d.x + m.xy * d.y, m.xy * d.x + m.yy * d.y);
            row[5 * k] = 2.0 * de_dq * lam_d.x * c.output_scale;
            row[5 * k + 1] = 2.0 * de_dq * lam_d.y * c.output_scale;
            if fixed.is_none() {
                let (ea, ena) = (libm::exp(lam.a), libm::exp(-lam.a));
                let ec = libm::exp(lam.c);
                let (cb, sb) = (libm::cosh(lam.b), libm::sinh(lam.b));
                let (x2, y2, xy) = (d.x * d.x, d.y * d.y, d.x * d.y);
                let dq_da = ec * cb * (ea * x2 - ena * y2);
                let dq_db = ec * (sb * (ea * x2 + ena * y2) + 2.0 * cb * xy);
                row[5 * k + 2] = -de_dq * dq_da;
                row[5 * k + 3] = -de_dq * dq_db;
                row[5 * k + 4] = 1.0 - de_dq * q;
            }
        }
    }
    let joint: Vec<f64> = decoded.logits.iter().zip(&ll).map(|(l, ll)| l - log_z + ll).collect();
    let total = logsumexp(&joint);
    let nll = -total;
    if !nll.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let mut dy = vec![0.0; c.n_modes * HEAD_OUTPUTS];
    for alpha in 0..c.n_modes {
        let w = libm::exp(joint[alpha] - total);
        let row = &mut dy[alpha * HEAD_OUTPUTS..(alpha + 1) * HEAD_OUTPUTS];
        for (o, g) in row.iter_mut().zip(&dll[alpha * HEAD_OUTPUTS..(alpha + 1) * HEAD_OUTPUTS]) {
            *o = -w * g;
        }
        row[HEAD_OUTPUTS - 1] = decoded.probs[alpha] - w;
    }
    Ok(SampleForward {
        input,
        trace,
        dy,
        nll,
    })
}

struct GradView<'a> {
    params: &'a Parameters,
    grad: &'a mut [f64],
}

impl GradView<'_> {
    fn slot(&mut self, s: usize) -> &mut [f64] {
        let spec = self.params.spec(s);
        &mut self.grad[spec.offset..spec.offset + spec.len()]
    }
}

/// Linear layer backward: accumulates weight/bias gradients, returns `dL/dx`.
fn linear_backward(g: &mut GradView<'_>, x: &[f64], dy: &[f64], w_slot: usize, b_slot: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_at_b_acc(x, dy, m, k, n, g.slot(w_slot));
    col_sum_acc(dy, n, g.slot(b_slot));
    let mut dx = vec![0.0; m * k];
    matmul_a_bt(dy, g.params.get(w_slot), m, n, k, &mut dx);
    dx
}

fn backward(f: &SampleForward, params: &Parameters, grad: &mut [f64]) {
    let c = params.config();
    let (n, d, ff) = (c.n_modes, c.d_attn, c.d_ff);
    let t = &f.trace;
    let mut g = GradView { params, grad };

    let dx2 = linear_backward(&mut g, &t.output, &f.dy, slot::HEAD_W, slot::HEAD_B, n, d, HEAD_OUTPUTS);

    // Dense block.
    let mut dhidden = linear_backward(&mut g, &t.hidden, &dx2, slot::FF2_W, slot::FF2_B, n, ff, d);
    for (dh, &pre) in dhidden.iter_mut().zip(&t.pre_relu) {
        if pre <= 0.0 {
            *dh = 0.0;
        }
    }
    let dh2 = linear_backward(&mut g, &t.h2, &dhidden, slot::FF1_W, slot::FF1_B, n, d, ff);
    let mut dx1 = match &t.ln2 {
        Some(cache) => {
            let spec_g = params.spec(slot::LN2_G).clone();
            let spec_b = params.spec(slot::LN2_B).clone();
            let (mut dg, mut db) = (vec![0.0; d], vec![0.0; d]);
            let dx = layer_norm_backward(&dh2, d, params.get(slot::LN2_G), cache, &mut dg, &mut db);
            acc(&mut g.grad[spec_g.offset..spec_g.offset + d], &dg);
            acc(&mut g.grad[spec_b.offset..spec_b.offset + d], &db);
            dx
        }
        None => dh2,
    };
    if c.residual {
        acc(&mut dx1, &dx2);
    }

    // Attention block.
    let dz = linear_backward(&mut g, &t.z, &dx1, slot::O_W, slot::O_B, n, d, d);
    let mut dh1 = vec![0.0; n * d];
    match c.mixing {
        MixingBlock::Attention => {
            let dh = c.head_dim();
            let scale = 1.0 / libm::sqrt(dh as f64);
            let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
            for h in 0..c.n_heads {
                let a = &t.attention[h * n * n..(h + 1) * n * n];
                let (qh, kh, vh) = (head_cols(&t.q, d, h, dh), head_cols(&t.k, d, h, dh), head_cols(&t.v, d, h, dh));
                let dzh = head_cols(&dz, d, h, dh);
                let mut da = vec![0.0; n * n];
                matmul_a_bt(&dzh, &vh, n, dh, n, &mut da);
                let mut dvh = vec![0.0; n * dh];
                matmul_at_b_acc(a, &dzh, n, n, dh, &mut dvh);
                let mut ds = vec![0.0; n * n];
                for i in 0..n {
                    let (ar, dar) = (&a[i * n..(i + 1) * n], &da[i * n..(i + 1) * n]);
                    let dot: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        ds[i * n + j] = ar[j] * (dar[j] - dot) * scale;
                    }
                }
                let mut dqh = vec![0.0; n * dh];
                matmul(&ds, &kh, n, n, dh, &mut dqh);
                let mut dkh = vec![0.0; n * dh];
                matmul_at_b_acc(&ds, &qh, n, n, dh, &mut dkh);
                scatter_head_cols(&dqh, d, h, dh, &mut dq);
                scatter_head_cols(&dkh, d, h, dh, &mut dk);
                scatter_head_cols(&dvh, d, h, dh, &mut dv);
            }
            for (dy, w, b) in [(&dq, slot::Q_W, slot::Q_B), (&dk, slot::K_W, slot::K_B), (&dv, slot::V_W, slot::V_B)] {
                let dx = linear_backward(&mut g, &t.h1, dy, w, b, n, d, d);
                acc(&mut dh1, &dx);
            }
        }
        MixingBlock::PerToken => {
            let dx = linear_backward(&mut g, &t.h1, &dz, slot::V_W, slot::V_B, n, d, d);
            acc(&mut dh1, &dx);
        }
    }
    let mut dx0 = match &t.ln1 {
        Some(cache) => {
            let spec_g = params.spec(slot::LN1_G).clone();
            let spec_b = params.spec(slot::LN1_B).clone();
            let (mut dg, mut db) = (vec![0.0; d], vec![0.0; d]);
            let dx = layer_norm_backward(&dh1, d, params.get(slot::LN1_G), cache, &mut dg, &mut db);
            acc(&mut g.grad[spec_g.offset..spec_g.offset + d], &dg);
            acc(&mut g.grad[spec_b.offset..spec_b.offset + d], &db);
            dx
        }
        None => dh1,
    };
    if c.residual {
        acc(&mut dx0, &dx1);
    }

    // Token construction.
    let width = c.d_actor + c.d_mode;
    let dinput = linear_backward(&mut g, &f.input, &dx0, slot::TOK_W, slot::TOK_B, n, width, d);
    let demb = g.slot(slot::MODE_EMB);
    for alpha in 0..n {
        let src = &dinput[alpha * width + c.d_actor..(alpha + 1) * width];
        acc(&mut demb[alpha * c.d_mode..(alpha + 1) * c.d_mode], src);
    }
}

fn acc(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Mean NLL over `batch` and its exact gradient.
pub fn loss_and_gradients(batch: &[Sample], params: &Parameters, r: DisplacementPower, cov_mode: &CovMode) -> Result<LossOutput> {
    let mut gradient = vec![0.0; params.len()];
    let mut total = 0.0;
    for s in batch {
        let f = sample_forward(s, params, r, cov_mode)?;
        total += f.nll;
        backward(&f, params, &mut gradient);
    }
    let nll = finite_mean(total, batch.len())?;
    let inv = 1.0 / batch.len() as f64;
    gradient.iter_mut().for_each(|g| *g *= inv);
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(LossOutput { nll, gradient })
}

fn rotate_inv_cov(lam: &InverseCovariance, heading: f64) -> Result<InverseCovariance> {
    // Λ_world = R Λ Rᵀ.
    let m = lam.matrix();
    let (s, c) = (libm::sin(heading), libm::cos(heading));
    let xx = c * c * m.xx - 2.0 * c * s * m.xy + s * s * m.yy;
    let xy = c * s * (m.xx - m.yy) + (c * c - s * s) * m.xy;
    let yy = s * s * m.xx + 2.0 * c * s * m.xy + c * c * m.yy;
    let mut out = InverseCovariance::from_matrix(SymMat2 { xx, xy, yy })?;
    // Rotation preserves the determinant exactly in this parametrization.
    out.c = lam.c;
    Ok(out)
}

/// Run the model for one agent and express the result in world coordinates.
///
/// `ctx` is the agent's world-frame context; `features` its actor embedding.
/// Covariances are attached only for [`CovMode::Predicted`].
pub fn predict_set(
    features: &[f64],
    ctx: &AgentContext,
    params: &Parameters,
    cov_mode: &CovMode,
    scene_id: &str,
    agent_id: &str,
) -> Result<PredictionSet> {
    let tokens = make_mode_tokens(features, params)?;
    let trace = mode_attention_forward(&tokens, params)?;
    let decoded = decode_modes(trace.output(), params)?;
    let prior = cv_prior(ctx.speed);
    let mut modes = Vec::with_capacity(decoded.probs.len());
    for alpha in 0..decoded.probs.len() {
        let pts: Vec<Vec2> = (0..HORIZON_STEPS)
            .map(|k| ctx.start + (prior[k] + decoded.offsets[alpha][k]).rotate(ctx.heading))
            .collect();
        let mean = Trajectory::new(&pts)?;
        let cov = match cov_mode {
            CovMode::Predicted => Some(
                decoded.cov[alpha]
                    .iter()
                    .map(|l| rotate_inv_cov(l, ctx.heading))
                    .collect::<Result<Vec<_>>>()?,
            ),
            CovMode::Schedule(_) => None,
        };
        modes.push((mean, cov, decoded.probs[alpha]));
    }
    PredictionSet::from_weights(scene_id, agent_id, modes)
}
