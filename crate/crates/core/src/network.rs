//! Full forward pass with caches and the matching backward pass for one
//! sentence pair, shared by training and decoding.

use crate::attention::{attend, attend_backward, keys_backward, project_keys, AttentionCache};
use crate::data::{Batch, BOS, EOS};
use crate::encoder::{
    concat_annotations, gru_backward, gru_forward, project_image, run_direction,
    DirectionMasks, GruCache,
};
use crate::error::{Error, Result};
use crate::model::{Layout, Model, ModelConfig};
use crate::decoder::readout_forward;
use crate::numerics::{add_assign, DenseMatrix, Real};
use crate::training::DropoutMasks;

fn mul_mask<F: Real>(v: &mut [F], mask: Option<&[F]>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(a, &b)| *a *= b);
    }
}

/// Encoder-side activations of one source sentence.
#[derive(Debug, Clone)]
pub struct SourceForward<F> {
    pub(crate) src_ids: Vec<usize>,
    /// Image vector after dropout.
    pub(crate) q: Option<Vec<F>>,
    pub(crate) img_hidden: Option<Vec<F>>,
    pub(crate) d_src: Option<Vec<F>>,
    pub(crate) d_dec: Option<Vec<F>>,
    pub(crate) init_fwd: Vec<F>,
    pub(crate) init_bwd: Vec<F>,
    pub(crate) fwd_caches: Vec<GruCache<F>>,
    pub(crate) bwd_caches: Vec<GruCache<F>>,
    pub(crate) annotations: DenseMatrix<F>,
    pub(crate) mask: Vec<F>,
    pub(crate) keys: DenseMatrix<F>,
    /// `[←h_1 ; →h_N']`
    pub(crate) boundary: Vec<F>,
    pub(crate) s0: Vec<F>,
}

impl<F: Real> SourceForward<F> {
    pub fn annotations(&self) -> &DenseMatrix<F> {
        &self.annotations
    }

    pub fn initial_state(&self) -> &[F] {
        &self.s0
    }

    pub fn mask(&self) -> &[F] {
        &self.mask
    }

    /// Encoder initial states `(forward, backward)`.
    pub fn encoder_init(&self) -> (&[F], &[F]) {
        (&self.init_fwd, &self.init_bwd)
    }

    /// Recurrent inputs actually fed to the forward encoder RNN per step,
    /// after recurrent dropout.
    pub fn encoder_recurrent_inputs(&self) -> Vec<&[F]> {
        self.fwd_caches.iter().map(|c| c.h_rec.as_slice()).collect()
    }

    /// Forward encoder states entering each step, before dropout.
    pub fn encoder_previous_states(&self) -> Vec<&[F]> {
        self.fwd_caches.iter().map(|c| c.h_prev.as_slice()).collect()
    }
}

pub(crate) fn image_vector<F: Real>(model: &Model<F>, image: Option<&[f32]>) -> Result<Option<Vec<F>>> {
    let mode = model.config.mode;
    match (mode.uses_image(), image) {
        (false, _) => Ok(None),
        (true, None) => Err(Error::InvalidInput(format!(
            "{mode} mode needs an image feature vector"
        ))),
        (true, Some(q)) => {
            if q.len() != model.config.image_dim {
                return Err(Error::shape(format!(
                    "image vector of length {}, expected {}",
                    q.len(),
                    model.config.image_dim
                )));
            }
            Ok(Some(q.iter().map(|&v| F::lit(f64::from(v))).collect()))
        }
    }
}

fn check_ids(ids: &[usize], vocab: usize, side: &str) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(Error::InvalidInput(format!(
            "{side} token id {bad} outside a vocabulary of {vocab}"
        )));
    }
    Ok(())
}

/// Embeds, injects the image, runs both encoder RNNs and computes `s_0`.
pub fn encode_source<F: Real>(
    model: &Model<F>,
    src_ids: &[usize],
    image: Option<&[f32]>,
    masks: &DropoutMasks<F>,
) -> Result<SourceForward<F>> {
    if src_ids.is_empty() {
        return Err(Error::InvalidInput("empty source sentence".into()));
    }
    let cfg = &model.config;
    check_ids(src_ids, cfg.src_vocab_size, "source")?;
    let values = model.store.values();
    let lay = &model.layout;
    let mode = cfg.mode;

    let q = image_vector(model, image)?.map(|mut q| {
        mul_mask(&mut q, masks.image.as_deref());
        q
    });

    let (mut img_hidden, mut d_src, mut d_dec) = (None, None, None);
    if let (Some(img), Some(q)) = (lay.image.as_ref(), q.as_ref()) {
        let mut hidden = values[img.b1.0].as_slice().to_vec();
        values[img.w1.0].vecmat_acc(q, &mut hidden);
        if let Some((w2, b2)) = img.src {
            let mut d = values[b2.0].as_slice().to_vec();
            values[w2.0].vecmat_acc(&hidden, &mut d);
            d_src = Some(d);
        }
        if let Some((w2, b2, _)) = img.dec {
            let mut d = values[b2.0].as_slice().to_vec();
            values[w2.0].vecmat_acc(&hidden, &mut d);
            d_dec = Some(d);
        }
        img_hidden = Some(hidden);
    }

    // Encoder input rows.
    let k = mode.image_words();
    let n = src_ids.len() + k;
    let mut rows = DenseMatrix::zeros(n, cfg.d_x);
    let emb = &values[lay.src_emb.0];
    for (i, &id) in src_ids.iter().enumerate() {
        let row = rows.row_mut(i + usize::from(k > 0));
        row.copy_from_slice(emb.row(id));
        mul_mask(row, masks.src_embed.as_deref());
    }
    if k > 0 {
        let mut d = d_src.clone().expect("image words need a source projection");
        mul_mask(&mut d, masks.image_word.as_deref());
        rows.row_mut(0).copy_from_slice(&d);
        if k == 2 {
            rows.row_mut(n - 1).copy_from_slice(&d);
        }
    }

    // Initial encoder states.
    let (init_fwd, init_bwd) = match lay.image.and_then(|i| i.enc_init) {
        Some((w_f, b_f, w_b, b_b)) => {
            let d = d_src.as_ref().expect("encoder init needs a source projection");
            let affine_tanh = |w: usize, b: usize| {
                let mut out = values[b].as_slice().to_vec();
                values[w].vecmat_acc(d, &mut out);
                out.iter_mut().for_each(|v| *v = v.tanh());
                out
            };
            (affine_tanh(w_b.0, b_b.0), affine_tanh(w_f.0, b_f.0))
        }
        None => (vec![F::zero(); cfg.d_h], vec![F::zero(); cfg.d_h]),
    };

    let mask = vec![F::one(); n];
    let fwd_p = lay.enc_fwd.params(values);
    let bwd_p = lay.enc_bwd.params(values);
    let (fs, fc) = run_direction(
        &rows,
        &mask,
        &init_fwd,
        &fwd_p,
        DirectionMasks {
            input: masks.enc_fwd_input.as_deref(),
            recurrent: masks.enc_fwd_rec.as_deref(),
        },
        false,
    );
    let (bs, bc) = run_direction(
        &rows,
        &mask,
        &init_bwd,
        &bwd_p,
        DirectionMasks {
            input: masks.enc_bwd_input.as_deref(),
            recurrent: masks.enc_bwd_rec.as_deref(),
        },
        true,
    );
    let annotations = concat_annotations(&fs, &bs);
    let keys = project_keys(&annotations, &values[lay.att.w_a.0]);

    let mut boundary = bs[0].clone();
    boundary.extend_from_slice(&fs[n - 1]);
    let mut s0 = values[lay.b_di.0].as_slice().to_vec();
    values[lay.w_di.0].vecmat_acc(&boundary, &mut s0);
    if let Some((_, _, w_m)) = lay.image.and_then(|i| i.dec) {
        values[w_m.0].vecmat_acc(d_dec.as_ref().expect("decoder image vector"), &mut s0);
    }
    s0.iter_mut().for_each(|v| *v = v.tanh());

    Ok(SourceForward {
        src_ids: src_ids.to_vec(),
        q,
        img_hidden,
        d_src,
        d_dec,
        init_fwd,
        init_bwd,
        fwd_caches: fc.into_iter().map(|c| c.expect("all positions real")).collect(),
        bwd_caches: bc.into_iter().map(|c| c.expect("all positions real")).collect(),
        annotations,
        mask,
        keys,
        boundary,
        s0,
    })
}

/// Activations of one decoder step.
#[derive(Debug, Clone)]
pub struct StepForward<F> {
    pub(crate) y_prev: usize,
    /// Previous-token embedding after dropout.
    pub(crate) y_emb: Vec<F>,
    pub(crate) s_prev: Vec<F>,
    pub(crate) att: AttentionCache<F>,
    pub(crate) gru: GruCache<F>,
    /// Readout tanh layer before dropout.
    pub(crate) readout_hidden: Vec<F>,
    pub(crate) log_probs: Vec<F>,
}

impl<F: Real> StepForward<F> {
    pub fn state(&self) -> &[F] {
        &self.gru.h
    }

    pub fn alpha(&self) -> &[F] {
        &self.att.alpha
    }

    pub fn context(&self) -> &[F] {
        &self.att.context
    }

    pub fn log_probs(&self) -> &[F] {
        &self.log_probs
    }

    /// Recurrent input fed to the decoder GRU after recurrent dropout.
    pub fn recurrent_input(&self) -> &[F] {
        &self.gru.h_rec
    }

    /// `s_{t−1}` before recurrent dropout.
    pub fn previous_state(&self) -> &[F] {
        &self.s_prev
    }
}

/// Attention from `s_{t−1}`, GRU update on `[ỹ_{t−1} ; c_t]`, then the
/// readout distribution.
pub fn decoder_step<F: Real>(
    model: &Model<F>,
    src: &SourceForward<F>,
    s_prev: &[F],
    y_prev: usize,
    masks: &DropoutMasks<F>,
) -> Result<StepForward<F>> {
    decoder_step_raw(model, &src.annotations, &src.keys, &src.mask, s_prev, y_prev, masks)
}

pub(crate) fn decoder_step_raw<F: Real>(
    model: &Model<F>,
    annotations: &DenseMatrix<F>,
    keys: &DenseMatrix<F>,
    mask: &[F],
    s_prev: &[F],
    y_prev: usize,
    masks: &DropoutMasks<F>,
) -> Result<StepForward<F>> {
    let cfg = &model.config;
    if y_prev >= cfg.tgt_vocab_size {
        return Err(Error::InvalidInput(format!(
            "target token id {y_prev} outside a vocabulary of {}",
            cfg.tgt_vocab_size
        )));
    }
    let values = model.store.values();
    let lay = &model.layout;
    let mut y_emb = values[lay.tgt_emb.0].row(y_prev).to_vec();
    mul_mask(&mut y_emb, masks.tgt_embed.as_deref());

    let att = attend(s_prev, keys, annotations, mask, &lay.att.params(values))?;
    let mut x = y_emb.clone();
    x.extend_from_slice(&att.context);
    let gru = gru_forward(
        &x,
        s_prev,
        &lay.dec.params(values),
        masks.dec_input.as_deref(),
        masks.dec_rec.as_deref(),
    );

    let (hidden, log_probs) = readout_forward(
        &gru.h,
        &y_emb,
        &att.context,
        &lay.readout.params(values),
        masks.readout.as_deref(),
    );

    Ok(StepForward {
        y_prev,
        y_emb,
        s_prev: s_prev.to_vec(),
        att,
        gru,
        readout_hidden: hidden,
        log_probs,
    })
}

/// Teacher-forced pass over `BOS y_1 … y_M` predicting `y_1 … y_M EOS`.
pub struct PairForward<F> {
    pub source: SourceForward<F>,
    pub steps: Vec<StepForward<F>>,
    /// Gold outputs, `EOS` last.
    pub targets: Vec<usize>,
    /// Sum of gold-token log-probabilities.
    pub log_likelihood: F,
}

pub fn forward_pair<F: Real>(
    model: &Model<F>,
    src_ids: &[usize],
    tgt_ids: &[usize],
    image: Option<&[f32]>,
    masks: &DropoutMasks<F>,
) -> Result<PairForward<F>> {
    check_ids(tgt_ids, model.config.tgt_vocab_size, "target")?;
    let source = encode_source(model, src_ids, image, masks)?;
    let mut inputs = Vec::with_capacity(tgt_ids.len() + 1);
    inputs.push(BOS);
    inputs.extend_from_slice(tgt_ids);
    let mut targets = tgt_ids.to_vec();
    targets.push(EOS);

    let mut s = source.s0.clone();
    let mut steps = Vec::with_capacity(targets.len());
    let mut ll = F::zero();
    for (&y_prev, &y) in inputs.iter().zip(&targets) {
        let step = decoder_step(model, &source, &s, y_prev, masks)?;
        ll += step.log_probs[y];
        s = step.gru.h.clone();
        steps.push(step);
    }
    Ok(PairForward {
        source,
        steps,
        targets,
        log_likelihood: ll,
    })
}

/// Accumulates the gradient of `scale · (−log_likelihood)` into the
/// store's gradient buffers.
pub fn backward_pair<F: Real>(model: &mut Model<F>, fwd: &PairForward<F>, masks: &DropoutMasks<F>, scale: F) {
    let Model { config, store, layout } = model;
    let (values, grads) = store.split_mut();
    backward_into(config, layout, values, fwd, masks, scale, grads);
}

fn backward_into<F: Real>(
    cfg: &ModelConfig,
    lay: &Layout,
    values: &[DenseMatrix<F>],
    fwd: &PairForward<F>,
    masks: &DropoutMasks<F>,
    scale: F,
    grads: &mut [DenseMatrix<F>],
) {
    let src = &fwd.source;
    let n = src.annotations.rows();
    let mut d_ann = DenseMatrix::zeros(n, 2 * cfg.d_h);
    let mut d_keys = DenseMatrix::zeros(n, cfg.d_a());
    let mut ds_next = vec![F::zero(); cfg.d_s];
    let ro = &lay.readout;

    for (step, &y) in fwd.steps.iter().zip(&fwd.targets).rev() {
        // softmax cross-entropy
        let mut d_logits: Vec<F> = step.log_probs.iter().map(|&lp| lp.exp() * scale).collect();
        d_logits[y] -= scale;
        let mut out = step.readout_hidden.clone();
        mul_mask(&mut out, masks.readout.as_deref());
        grads[ro.w_o.0].add_outer(&out, &d_logits);
        add_assign(grads[ro.b_o.0].as_mut_slice(), &d_logits);
        let mut d_out = vec![F::zero(); out.len()];
        values[ro.w_o.0].matvec_acc(&d_logits, &mut d_out);
        mul_mask(&mut d_out, masks.readout.as_deref());
        let d_pre: Vec<F> = d_out
            .iter()
            .zip(&step.readout_hidden)
            .map(|(&g, &h)| g * (F::one() - h * h))
            .collect();
        add_assign(grads[ro.b_r.0].as_mut_slice(), &d_pre);
        grads[ro.w_rs.0].add_outer(&step.gru.h, &d_pre);
        grads[ro.w_ry.0].add_outer(&step.y_emb, &d_pre);
        grads[ro.w_rc.0].add_outer(&step.att.context, &d_pre);

        let mut ds = ds_next.clone();
        values[ro.w_rs.0].matvec_acc(&d_pre, &mut ds);
        let mut d_y_emb = vec![F::zero(); cfg.d_y];
        values[ro.w_ry.0].matvec_acc(&d_pre, &mut d_y_emb);
        let mut d_ctx = vec![F::zero(); 2 * cfg.d_h];
        values[ro.w_rc.0].matvec_acc(&d_pre, &mut d_ctx);

        let (dx, mut ds_prev) = gru_backward(
            &step.gru,
            &ds,
            &lay.dec,
            values,
            grads,
            masks.dec_input.as_deref(),
            masks.dec_rec.as_deref(),
        );
        add_assign(&mut d_y_emb, &dx[..cfg.d_y]);
        add_assign(&mut d_ctx, &dx[cfg.d_y..]);

        let ds_att = attend_backward(
            &step.att,
            &step.s_prev,
            &src.annotations,
            &d_ctx,
            &lay.att,
            values,
            grads,
            &mut d_ann,
            &mut d_keys,
        );
        add_assign(&mut ds_prev, &ds_att);
        ds_next = ds_prev;

        mul_mask(&mut d_y_emb, masks.tgt_embed.as_deref());
        add_assign(grads[lay.tgt_emb.0].row_mut(step.y_prev), &d_y_emb);
    }

    // s_0 = tanh(W_diᵀ[←h_1 ; →h_N] + W_mᵀd + b_di)
    let d_pre: Vec<F> = ds_next
        .iter()
        .zip(&src.s0)
        .map(|(&g, &s)| g * (F::one() - s * s))
        .collect();
    add_assign(grads[lay.b_di.0].as_mut_slice(), &d_pre);
    grads[lay.w_di.0].add_outer(&src.boundary, &d_pre);
    let mut d_boundary = vec![F::zero(); 2 * cfg.d_h];
    values[lay.w_di.0].matvec_acc(&d_pre, &mut d_boundary);
    let mut d_dec = None;
    if let Some((_, _, w_m)) = lay.image.and_then(|i| i.dec) {
        let d = src.d_dec.as_ref().expect("decoder image vector");
        grads[w_m.0].add_outer(d, &d_pre);
        let mut g = vec![F::zero(); d.len()];
        values[w_m.0].matvec_acc(&d_pre, &mut g);
        d_dec = Some(g);
    }

    keys_backward(&src.annotations, &d_keys, &lay.att, values, grads, &mut d_ann);

    // Encoder, forward direction.
    let d_h = cfg.d_h;
    let mut d_rows = DenseMatrix::zeros(n, cfg.d_x);
    let mut dh = d_boundary[d_h..].to_vec();
    for i in (0..n).rev() {
        add_assign(&mut dh, &d_ann.row(i)[..d_h]);
        let (dx, dprev) = gru_backward(
            &src.fwd_caches[i],
            &dh,
            &lay.enc_fwd,
            values,
            grads,
            masks.enc_fwd_input.as_deref(),
            masks.enc_fwd_rec.as_deref(),
        );
        add_assign(d_rows.row_mut(i), &dx);
        dh = dprev;
    }
    let d_init_fwd = dh;
    // Backward direction.
    let mut dh = vec![F::zero(); d_h];
    for i in 0..n {
        add_assign(&mut dh, &d_ann.row(i)[d_h..]);
        if i == 0 {
            add_assign(&mut dh, &d_boundary[..d_h]);
        }
        let (dx, dnext) = gru_backward(
            &src.bwd_caches[i],
            &dh,
            &lay.enc_bwd,
            values,
            grads,
            masks.enc_bwd_input.as_deref(),
            masks.enc_bwd_rec.as_deref(),
        );
        add_assign(d_rows.row_mut(i), &dx);
        dh = dnext;
    }
    let d_init_bwd = dh;

    let k = cfg.mode.image_words();
    for (i, &id) in src.src_ids.iter().enumerate() {
        let mut g = d_rows.row(i + usize::from(k > 0)).to_vec();
        mul_mask(&mut g, masks.src_embed.as_deref());
        add_assign(grads[lay.src_emb.0].row_mut(id), &g);
    }

    let Some(img) = lay.image else { return };
    let mut d_src = vec![F::zero(); cfg.source_image_dim()];
    let mut has_src = false;
    if k > 0 {
        add_assign(&mut d_src, d_rows.row(0));
        if k == 2 {
            add_assign(&mut d_src, d_rows.row(n - 1));
        }
        mul_mask(&mut d_src, masks.image_word.as_deref());
        has_src = true;
    }
    if let Some((w_f, b_f, w_b, b_b)) = img.enc_init {
        let d = src.d_src.as_ref().expect("source image vector");
        for (w, b, init, g) in [
            (w_f, b_f, &src.init_bwd, &d_init_bwd),
            (w_b, b_b, &src.init_fwd, &d_init_fwd),
        ] {
            let d_pre: Vec<F> = g
                .iter()
                .zip(init.iter())
                .map(|(&g, &h)| g * (F::one() - h * h))
                .collect();
            add_assign(grads[b.0].as_mut_slice(), &d_pre);
            grads[w.0].add_outer(d, &d_pre);
            values[w.0].matvec_acc(&d_pre, &mut d_src);
        }
        has_src = true;
    }

    let hidden = src.img_hidden.as_ref().expect("image hidden layer");
    let mut d_hidden = vec![F::zero(); hidden.len()];
    if has_src {
        let (w2, b2) = img.src.expect("source projection");
        add_assign(grads[b2.0].as_mut_slice(), &d_src);
        grads[w2.0].add_outer(hidden, &d_src);
        values[w2.0].matvec_acc(&d_src, &mut d_hidden);
    }
    if let (Some((w2, b2, _)), Some(dd)) = (img.dec, d_dec.as_ref()) {
        add_assign(grads[b2.0].as_mut_slice(), dd);
        grads[w2.0].add_outer(hidden, dd);
        values[w2.0].matvec_acc(dd, &mut d_hidden);
    }
    add_assign(grads[img.b1.0].as_mut_slice(), &d_hidden);
    grads[img.w1.0].add_outer(src.q.as_ref().expect("image vector"), &d_hidden);
}

/// Outputs of the padded batch path.
#[derive(Debug, Clone)]
pub struct BatchForward<F> {
    /// Per row: `[N'_max × 2·d_h]` annotations (padded rows included).
    pub annotations: Vec<DenseMatrix<F>>,
    /// Per row: attention mask over `N'_max`, image words counted as real.
    pub source_masks: Vec<Vec<F>>,
    /// Per row: decoder states, one per target step (padded steps copy).
    pub states: Vec<Vec<Vec<F>>>,
    /// Per row: readout log-probabilities per target step.
    pub log_probs: Vec<Vec<Vec<F>>>,
    /// Per row: attention weights per target step.
    pub alphas: Vec<Vec<Vec<F>>>,
}

/// Inference-mode teacher-forced pass over a padded batch. Padding is
/// handled through masks only: encoder states copy through padded
/// positions, attention gives them zero weight, and decoder states copy
/// through padded target steps.
pub fn forward_batch<F: Real>(model: &Model<F>, batch: &Batch) -> Result<BatchForward<F>> {
    let cfg = &model.config;
    let values = model.store.values();
    let lay = &model.layout;
    let none = DropoutMasks::none();
    let mut out = BatchForward {
        annotations: Vec::new(),
        source_masks: Vec::new(),
        states: Vec::new(),
        log_probs: Vec::new(),
        alphas: Vec::new(),
    };
    let emb = &values[lay.src_emb.0];
    for b in 0..batch.len() {
        let ids = &batch.source_ids[b];
        let mask: Vec<F> = batch.source_mask[b].iter().map(|&m| F::lit(f64::from(m))).collect();
        check_ids(ids, cfg.src_vocab_size, "source")?;
        let mut rows = DenseMatrix::zeros(ids.len(), cfg.d_x);
        for (i, &id) in ids.iter().enumerate() {
            rows.row_mut(i).copy_from_slice(emb.row(id));
        }
        let image = batch.images.as_ref().map(|im| im[b].as_slice());
        let q = image_vector(model, image)?;
        let (mut d_src, mut d_dec) = (None, None);
        if let (Some(img), Some(q)) = (lay.image, q.as_ref()) {
            if let Some((w2, b2)) = img.src {
                d_src = Some(project_image(q, &values[img.w1.0], &values[img.b1.0], &values[w2.0], &values[b2.0])?);
            }
            if let Some((w2, b2, _)) = img.dec {
                d_dec = Some(project_image(q, &values[img.w1.0], &values[img.b1.0], &values[w2.0], &values[b2.0])?);
            }
        }
        let (rows, mask) = if cfg.mode.image_words() > 0 {
            crate::encoder::insert_image_words_masked(
                &rows,
                &mask,
                d_src.as_ref().expect("source image vector"),
                cfg.mode,
            )?
        } else {
            (rows, mask)
        };
        let (init_fwd, init_bwd) = match lay.image.and_then(|i| i.enc_init) {
            Some((w_f, b_f, w_b, b_b)) => crate::encoder::image_encoder_init(
                d_src.as_ref().expect("source image vector"),
                &values[w_f.0],
                &values[b_f.0],
                &values[w_b.0],
                &values[b_b.0],
            )?,
            None => (vec![F::zero(); cfg.d_h], vec![F::zero(); cfg.d_h]),
        };
        let enc = crate::encoder::encode_bidirectional(
            &rows,
            &mask,
            &init_fwd,
            &init_bwd,
            &lay.enc_fwd.params(values),
            &lay.enc_bwd.params(values),
        )?;
        let s0 = crate::decoder::init_decoder_state(
            &enc.h_bwd_first,
            &enc.h_fwd_last,
            d_dec.as_deref(),
            &values[lay.w_di.0],
            &values[lay.b_di.0],
            lay.image.and_then(|i| i.dec).map(|(_, _, w_m)| &values[w_m.0]),
        )?;
        let keys = project_keys(&enc.annotations, &values[lay.att.w_a.0]);

        let tgt = &batch.target_ids[b];
        let tmask = &batch.target_mask[b];
        let mut s = s0.s;
        let mut states = Vec::new();
        let mut lps = Vec::new();
        let mut alphas = Vec::new();
        let mut y_prev = BOS;
        // One extra step predicts EOS after the last real token.
        for t in 0..=tgt.len() {
            let real = t == 0 || tmask.get(t - 1).copied().unwrap_or(0) != 0;
            if real {
                let step = decoder_step_raw(model, &enc.annotations, &keys, &mask, &s, y_prev, &none)?;
                s = step.gru.h.clone();
                lps.push(step.log_probs);
                alphas.push(step.att.alpha);
            } else {
                lps.push(Vec::new());
                alphas.push(Vec::new());
            }
            states.push(s.clone());
            if t < tgt.len() {
                y_prev = tgt[t];
            }
        }
        out.annotations.push(enc.annotations);
        out.source_masks.push(mask);
        out.states.push(states);
        out.log_probs.push(lps);
        out.alphas.push(alphas);
    }
    Ok(out)
}
