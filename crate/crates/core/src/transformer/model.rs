use super::params::{LayerSpans, Params, Span};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::promptgen::{Prompt, TokenSequence};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;
/// Sequences per internal forward chunk when no gradient is needed.
const EVAL_CHUNK: usize = 128;

/// Predictions at the x-token positions and, optionally, the final-normalized
/// residual vectors the readout consumed there.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub predictions: Vec<f64>,
    /// `(k + 1) x m`, row `i` belongs to `x_{i+1}`.
    pub residuals: Option<Matrix>,
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
    out: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    ln2: LnCache<T>,
    h: Vec<T>,
    tanh: Vec<T>,
    act: Vec<T>,
}

struct Pass<T> {
    batch: usize,
    len: usize,
    tokens: Vec<T>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    /// One prediction per token position.
    preds: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], m: usize, g: &[T], b: &[T]) -> LnCache<T> {
    let n = x.len() / m;
    let inv_m = T::c(1.0 / m as f64);
    let eps = T::c(LN_EPS);
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    for r in 0..n {
        let row = &x[r * m..(r + 1) * m];
        let mean = row.iter().copied().sum::<T>() * inv_m;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * m..(r + 1) * m];
        let o = &mut out[r * m..(r + 1) * m];
        for j in 0..m {
            xh[j] = (row[j] - mean) * rs;
            o[j] = xh[j] * g[j] + b[j];
        }
    }
    LnCache { xhat, rstd, out }
}

/// Adds the input gradient to `dx` and returns the (gain, bias) gradients.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    c: &LnCache<T>,
    m: usize,
    g: &[T],
    dx: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let inv_m = T::c(1.0 / m as f64);
    let mut dg = vec![T::zero(); m];
    let mut db = vec![T::zero(); m];
    for (r, &rs) in c.rstd.iter().enumerate() {
        let dyr = &dy[r * m..(r + 1) * m];
        let xh = &c.xhat[r * m..(r + 1) * m];
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for j in 0..m {
            let dxh = dyr[j] * g[j];
            s1 += dxh;
            s2 += dxh * xh[j];
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
        }
        s1 *= inv_m;
        s2 *= inv_m;
        let dxr = &mut dx[r * m..(r + 1) * m];
        for j in 0..m {
            dxr[j] += rs * (dyr[j] * g[j] - s1 - xh[j] * s2);
        }
    }
    (dg, db)
}

/// `y (+)= x w + b` for `x: n x din`, `w: din x dout`.
fn linear<T: Scalar>(
    x: &[T],
    n: usize,
    din: usize,
    w: &[T],
    b: &[T],
    y: &mut [T],
    accumulate: bool,
) {
    let dout = b.len();
    for row in y.chunks_exact_mut(dout) {
        if accumulate {
            row.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
        } else {
            row.copy_from_slice(b);
        }
    }
    T::gemm(n, din, dout, x, false, w, false, y, true);
}

/// Gradients of `y = x w + b`: `dw += xᵀ dy`, `db += colsum(dy)`, returns `dy wᵀ`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Scalar>(
    x: &[T],
    n: usize,
    din: usize,
    dout: usize,
    w: &[T],
    dy: &[T],
    grads: &mut [T],
    w_span: Span,
    b_span: Span,
) -> Vec<T> {
    T::gemm(din, n, dout, x, true, dy, false, w_span.of_mut(grads), true);
    let db = b_span.of_mut(grads);
    for row in dy.chunks_exact(dout) {
        db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    let mut dx = vec![T::zero(); n * din];
    T::gemm(n, dout, din, dy, false, w, true, &mut dx, false);
    dx
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
}

/// `tanh` through a single `exp`; several times faster than the libm call and
/// accurate to a few ulps of 1.
#[inline]
fn tanh<T: Scalar>(u: T) -> T {
    let lim = T::c(20.0);
    let e = (T::c(2.0) * u.max(-lim).min(lim)).exp();
    T::one() - T::c(2.0) / (e + T::one())
}

fn gelu<T: Scalar>(h: &[T]) -> (Vec<T>, Vec<T>) {
    let (c, a, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
    let t: Vec<T> = h.iter().map(|&x| tanh(c * (x + a * x * x * x))).collect();
    let out = h
        .iter()
        .zip(&t)
        .map(|(&x, &th)| half * x * (T::one() + th))
        .collect();
    (t, out)
}

fn gelu_backward<T: Scalar>(h: &[T], t: &[T], dy: &mut [T]) {
    let (c, a3, half) = (T::c(GELU_C), T::c(3.0 * GELU_A), T::c(0.5));
    for ((g, &x), &th) in dy.iter_mut().zip(h).zip(t) {
        let dudx = c * (T::one() + a3 * x * x);
        *g *= half * (T::one() + th) + half * x * (T::one() - th * th) * dudx;
    }
}

/// Copies head `h` of sequence `b` out of the fused `[q | k | v]` rows into
/// three contiguous `len x hd` blocks.
fn gather_head<T: Scalar>(
    qkv: &[T],
    b: usize,
    h: usize,
    len: usize,
    m: usize,
    hd: usize,
    dst: &mut [T],
) {
    for part in 0..3 {
        for i in 0..len {
            let src = &qkv[(b * len + i) * 3 * m + part * m + h * hd..][..hd];
            dst[(part * len + i) * hd..][..hd].copy_from_slice(src);
        }
    }
}

/// Causal multi-head attention over `batch` sequences of length `len`.
/// `qkv` rows are `[q | k | v]`; returns `(probs, out)`.
fn attention<T: Scalar>(
    qkv: &[T],
    batch: usize,
    len: usize,
    m: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>) {
    let hd = m / heads;
    let scale = T::c(1.0 / (hd as f64).sqrt());
    let mut probs = vec![T::zero(); batch * heads * len * len];
    let mut out = vec![T::zero(); batch * len * m];
    let mut blk = vec![T::zero(); 3 * len * hd];
    let mut o = vec![T::zero(); len * hd];
    for b in 0..batch {
        for h in 0..heads {
            gather_head(qkv, b, h, len, m, hd, &mut blk);
            let (q, kv) = blk.split_at(len * hd);
            let (k, v) = kv.split_at(len * hd);
            let p = &mut probs[(b * heads + h) * len * len..][..len * len];
            T::gemm(len, hd, len, q, false, k, true, p, false);
            for (i, row) in p.chunks_exact_mut(len).enumerate() {
                let (live, masked) = row.split_at_mut(i + 1);
                masked.iter_mut().for_each(|x| *x = T::zero());
                let max = live.iter().fold(T::neg_infinity(), |a, &s| a.max(s));
                let mut z = T::zero();
                for s in live.iter_mut() {
                    *s = ((*s - max) * scale).exp();
                    z += *s;
                }
                let inv = T::one() / z;
                live.iter_mut().for_each(|s| *s *= inv);
            }
            T::gemm(len, len, hd, p, false, v, false, &mut o, false);
            for i in 0..len {
                out[(b * len + i) * m + h * hd..][..hd].copy_from_slice(&o[i * hd..][..hd]);
            }
        }
    }
    (probs, out)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    qkv: &[T],
    probs: &[T],
    dout: &[T],
    batch: usize,
    len: usize,
    m: usize,
    heads: usize,
) -> Vec<T> {
    let hd = m / heads;
    let scale = T::c(1.0 / (hd as f64).sqrt());
    let mut dqkv = vec![T::zero(); batch * len * 3 * m];
    let mut blk = vec![T::zero(); 3 * len * hd];
    let mut dblk = vec![T::zero(); 3 * len * hd];
    let mut d_o = vec![T::zero(); len * hd];
    let mut ds = vec![T::zero(); len * len];
    for b in 0..batch {
        for h in 0..heads {
            gather_head(qkv, b, h, len, m, hd, &mut blk);
            let (q, kv) = blk.split_at(len * hd);
            let (k, v) = kv.split_at(len * hd);
            for i in 0..len {
                d_o[i * hd..][..hd].copy_from_slice(&dout[(b * len + i) * m + h * hd..][..hd]);
            }
            let p = &probs[(b * heads + h) * len * len..][..len * len];
            // dP = dO Vᵀ, then dS = P ⊙ (dP - rowsum(P ⊙ dP)) · scale
            T::gemm(len, hd, len, &d_o, false, v, true, &mut ds, false);
            for (prow, drow) in p.chunks_exact(len).zip(ds.chunks_exact_mut(len)) {
                let s: T = prow.iter().zip(drow.iter()).map(|(&a, &g)| a * g).sum();
                drow.iter_mut()
                    .zip(prow)
                    .for_each(|(g, &a)| *g = a * (*g - s) * scale);
            }
            let (dq, dkv) = dblk.split_at_mut(len * hd);
            let (dk, dv) = dkv.split_at_mut(len * hd);
            T::gemm(len, len, hd, &ds, false, k, false, dq, false);
            T::gemm(len, len, hd, &ds, true, q, false, dk, false);
            T::gemm(len, len, hd, p, true, &d_o, false, dv, false);
            for part in 0..3 {
                for i in 0..len {
                    dqkv[(b * len + i) * 3 * m + part * m + h * hd..][..hd]
                        .copy_from_slice(&dblk[(part * len + i) * hd..][..hd]);
                }
            }
        }
    }
    dqkv
}

fn check_batch<T: Scalar>(params: &Params<T>, seqs: &[TokenSequence]) -> Result<usize> {
    let c = params.config();
    let len = seqs.first().map_or(0, TokenSequence::len);
    for s in seqs {
        if s.len() > c.max_positions {
            return Err(Error::SequenceTooLong {
                len: s.len(),
                max: c.max_positions,
            });
        }
        if s.dim() != c.token_dim {
            return Err(Error::Shape(format!(
                "token width {} does not match model token_dim {}",
                s.dim(),
                c.token_dim
            )));
        }
        if s.len() != len {
            return Err(Error::Shape(
                "sequences in one batch must have equal length".into(),
            ));
        }
        if s.x_positions.iter().any(|&p| p >= len) {
            return Err(Error::Shape("x position outside the sequence".into()));
        }
    }
    Ok(len)
}

fn run<T: Scalar>(params: &Params<T>, seqs: &[TokenSequence], keep: bool) -> Pass<T> {
    let c = params.config();
    let lay = &params.layout;
    let w = &params.data[..];
    let (d, m, heads) = (c.token_dim, c.hidden, c.heads);
    let batch = seqs.len();
    let len = seqs.first().map_or(0, TokenSequence::len);
    let n = batch * len;
    let tokens: Vec<T> = seqs
        .iter()
        .flat_map(|s| s.tokens.as_slice().iter().map(|&v| T::c(v)))
        .collect();

    let mut x = vec![T::zero(); n * m];
    linear(
        &tokens,
        n,
        d,
        lay.embed_w.of(w),
        lay.embed_b.of(w),
        &mut x,
        false,
    );
    let pos = lay.pos.of(w);
    for b in 0..batch {
        for i in 0..len {
            add_into(&mut x[(b * len + i) * m..][..m], &pos[i * m..][..m]);
        }
    }

    let mut layers = Vec::with_capacity(if keep { lay.layers.len() } else { 0 });
    for ls in &lay.layers {
        let ln1 = layer_norm(&x, m, ls.ln1_g.of(w), ls.ln1_b.of(w));
        let mut qkv = vec![T::zero(); n * 3 * m];
        linear(
            &ln1.out,
            n,
            m,
            ls.w_qkv.of(w),
            ls.b_qkv.of(w),
            &mut qkv,
            false,
        );
        let (probs, att) = attention(&qkv, batch, len, m, heads);
        linear(&att, n, m, ls.w_o.of(w), ls.b_o.of(w), &mut x, true);

        let ln2 = layer_norm(&x, m, ls.ln2_g.of(w), ls.ln2_b.of(w));
        let mf = c.mlp_dim();
        let mut h = vec![T::zero(); n * mf];
        linear(&ln2.out, n, m, ls.w_fc.of(w), ls.b_fc.of(w), &mut h, false);
        let (tanh, act) = gelu(&h);
        linear(&act, n, mf, ls.w_proj.of(w), ls.b_proj.of(w), &mut x, true);

        if keep {
            layers.push(LayerCache {
                ln1,
                qkv,
                probs,
                att,
                ln2,
                h,
                tanh,
                act,
            });
        }
    }

    let lnf = layer_norm(&x, m, lay.lnf_g.of(w), lay.lnf_b.of(w));
    let f = lay.readout_w.of(w);
    let fb = lay.readout_b.of(w)[0];
    let preds = lnf
        .out
        .chunks_exact(m)
        .map(|z| z.iter().zip(f).map(|(&a, &b)| a * b).sum::<T>() + fb)
        .collect();
    Pass {
        batch,
        len,
        tokens,
        layers,
        lnf,
        preds,
    }
}

fn backward<T: Scalar>(params: &Params<T>, pass: &Pass<T>, dpred: &[T]) -> Vec<T> {
    let c = params.config();
    let lay = &params.layout;
    let w = &params.data[..];
    let (d, m, heads, mf) = (c.token_dim, c.hidden, c.heads, c.mlp_dim());
    let (batch, len) = (pass.batch, pass.len);
    let n = batch * len;
    let mut g = vec![T::zero(); lay.total];

    let f = lay.readout_w.of(w);
    let mut dz = vec![T::zero(); n * m];
    {
        let df = lay.readout_w.of_mut(&mut g);
        for (r, &dp) in dpred.iter().enumerate() {
            let z = &pass.lnf.out[r * m..][..m];
            for j in 0..m {
                df[j] += dp * z[j];
                dz[r * m + j] = dp * f[j];
            }
        }
    }
    lay.readout_b.of_mut(&mut g)[0] = dpred.iter().copied().sum();

    let mut dx = vec![T::zero(); n * m];
    let (dg, db) = layer_norm_backward(&dz, &pass.lnf, m, lay.lnf_g.of(w), &mut dx);
    add_into(lay.lnf_g.of_mut(&mut g), &dg);
    add_into(lay.lnf_b.of_mut(&mut g), &db);

    for (ls, lc) in lay.layers.iter().zip(&pass.layers).rev() {
        layer_backward(ls, lc, w, &mut g, &mut dx, batch, len, m, heads, mf);
    }

    T::gemm(
        d,
        n,
        m,
        &pass.tokens,
        true,
        &dx,
        false,
        lay.embed_w.of_mut(&mut g),
        true,
    );
    let gb = lay.embed_b.of_mut(&mut g);
    for row in dx.chunks_exact(m) {
        add_into(gb, row);
    }
    let gp = lay.pos.of_mut(&mut g);
    for b in 0..batch {
        for i in 0..len {
            add_into(&mut gp[i * m..][..m], &dx[(b * len + i) * m..][..m]);
        }
    }
    g
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Scalar>(
    ls: &LayerSpans,
    lc: &LayerCache<T>,
    w: &[T],
    g: &mut [T],
    dx: &mut [T],
    batch: usize,
    len: usize,
    m: usize,
    heads: usize,
    mf: usize,
) {
    let n = batch * len;
    let mut dact = linear_backward(
        &lc.act,
        n,
        mf,
        m,
        ls.w_proj.of(w),
        dx,
        g,
        ls.w_proj,
        ls.b_proj,
    );
    gelu_backward(&lc.h, &lc.tanh, &mut dact);
    let dln2 = linear_backward(
        &lc.ln2.out,
        n,
        m,
        mf,
        ls.w_fc.of(w),
        &dact,
        g,
        ls.w_fc,
        ls.b_fc,
    );
    let (dg, db) = layer_norm_backward(&dln2, &lc.ln2, m, ls.ln2_g.of(w), dx);
    add_into(ls.ln2_g.of_mut(g), &dg);
    add_into(ls.ln2_b.of_mut(g), &db);

    let datt = linear_backward(&lc.att, n, m, m, ls.w_o.of(w), dx, g, ls.w_o, ls.b_o);
    let dqkv = attention_backward(&lc.qkv, &lc.probs, &datt, batch, len, m, heads);
    let dln1 = linear_backward(
        &lc.ln1.out,
        n,
        m,
        3 * m,
        ls.w_qkv.of(w),
        &dqkv,
        g,
        ls.w_qkv,
        ls.b_qkv,
    );
    let (dg, db) = layer_norm_backward(&dln1, &lc.ln1, m, ls.ln1_g.of(w), dx);
    add_into(ls.ln1_g.of_mut(g), &dg);
    add_into(ls.ln1_b.of_mut(g), &db);
}

fn outputs<T: Scalar>(
    params: &Params<T>,
    seqs: &[TokenSequence],
    pass: &Pass<T>,
    capture: bool,
) -> Vec<ForwardOutput> {
    let m = params.config().hidden;
    seqs.iter()
        .enumerate()
        .map(|(b, s)| {
            let base = b * pass.len;
            let predictions = s
                .x_positions
                .iter()
                .map(|&p| pass.preds[base + p].f64())
                .collect();
            let residuals = capture.then(|| {
                Matrix::from_fn(s.x_positions.len(), m, |i, j| {
                    pass.lnf.out[(base + s.x_positions[i]) * m + j].f64()
                })
            });
            ForwardOutput {
                predictions,
                residuals,
            }
        })
        .collect()
}

/// Runs the model on one token sequence.
pub fn forward<T: Scalar>(
    params: &Params<T>,
    tokens: &TokenSequence,
    capture: bool,
) -> Result<ForwardOutput> {
    Ok(forward_batch(params, std::slice::from_ref(tokens), capture)?.remove(0))
}

/// Runs the model on many sequences; consecutive sequences of equal length
/// share one batched pass.
pub fn forward_batch<T: Scalar>(
    params: &Params<T>,
    seqs: &[TokenSequence],
    capture: bool,
) -> Result<Vec<ForwardOutput>> {
    let mut out = Vec::with_capacity(seqs.len());
    for group in seqs.chunk_by(|a, b| a.len() == b.len()) {
        for chunk in group.chunks(EVAL_CHUNK) {
            check_batch(params, chunk)?;
            let pass = run(params, chunk, false);
            out.extend(outputs(params, chunk, &pass, capture));
        }
    }
    Ok(out)
}

/// Mean squared error over the x-token positions against the prompt's labels
/// (query included).
pub fn loss(output: &ForwardOutput, prompt: &Prompt) -> Result<f64> {
    if output.predictions.len() != prompt.ys.len() {
        return Err(Error::Shape(format!(
            "{} predictions for a prompt with {} labels",
            output.predictions.len(),
            prompt.ys.len()
        )));
    }
    let n = prompt.ys.len() as f64;
    Ok(output
        .predictions
        .iter()
        .zip(&prompt.ys)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

/// Batch loss, final-position loss and the gradient of the batch loss.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub loss: f64,
    /// Mean squared error at the last x position (the query).
    pub final_loss: f64,
    pub grad: Vec<T>,
}

/// Mean over sequences and x positions of `(prediction - target)^2`, with the
/// query position optionally left out, and its gradient.
pub fn loss_and_grad<T: Scalar>(
    params: &Params<T>,
    seqs: &[TokenSequence],
    targets: &[Vec<f64>],
    include_query: bool,
) -> Result<LossGrad<T>> {
    if seqs.is_empty() || seqs.len() != targets.len() {
        return Err(Error::Shape("need one target vector per sequence".into()));
    }
    check_batch(params, seqs)?;
    let counted = |s: &TokenSequence| s.x_positions.len() - usize::from(!include_query);
    let total: usize = seqs.iter().map(counted).sum();
    if total == 0 {
        return Err(Error::Shape("no positions contribute to the loss".into()));
    }
    let pass = run(params, seqs, true);
    let mut dpred = vec![T::zero(); pass.preds.len()];
    let mut loss = 0.0;
    let mut final_loss = 0.0;
    for (b, (s, t)) in seqs.iter().zip(targets).enumerate() {
        if t.len() != s.x_positions.len() {
            return Err(Error::Shape("target count differs from x positions".into()));
        }
        let last = s.x_positions.len() - 1;
        for (i, (&p, &y)) in s.x_positions.iter().zip(t).enumerate() {
            let r = b * pass.len + p;
            let e = pass.preds[r].f64() - y;
            if i == last {
                final_loss += e * e;
                if !include_query {
                    continue;
                }
            }
            loss += e * e;
            dpred[r] = T::c(2.0 * e / total as f64);
        }
    }
    let loss = loss / total as f64;
    let final_loss = final_loss / seqs.len() as f64;
    let grad = backward(params, &pass, &dpred);
    Ok(LossGrad {
        loss,
        final_loss,
        grad,
    })
}
