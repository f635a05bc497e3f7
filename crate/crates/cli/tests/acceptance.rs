//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mmnmt::data::{
    load_parallel_corpus, read_features, read_lines, write_features, write_lines, Batch, Example,
    Vocabulary, BOS, EOS, NUM_RESERVED,
};
use mmnmt::decoder::{beam_decode, default_max_steps, greedy_hypothesis};
use mmnmt::evaluation::{bleu4, chrf3};
use mmnmt::network::{decoder_step, encode_source, forward_batch, forward_pair};
use mmnmt::numerics::{ParameterStore, Real, Rng};
use mmnmt::training::{adadelta_update, merge_corpora, train, BleuScorer, DropoutMasks, TrainOptions};
use mmnmt::model::Model;
use mmnmt::{Mode, ModelConfig, Precision};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmnmt"))
}

fn run_bin(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| format!("spawn failed: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if out.status.success() {
        Ok(stdout)
    } else {
        Err(format!(
            "`mmnmt {}` exited with {:?}: {}{}",
            args.join(" "),
            out.status.code(),
            stdout,
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn max_diff<F: Real>(a: &[F], b: &[F]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x.to_f64_lossless() - y.to_f64_lossless()).abs())
        .fold(0.0, f64::max)
}

fn random_model<F: Real>(config: ModelConfig, std: f64, rng: &mut Rng) -> Model<F> {
    let mut m = Model::new(config).expect("valid config");
    m.randomize(std, rng);
    m
}

fn ids(rng: &mut Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| NUM_RESERVED + rng.below(vocab - NUM_RESERVED)).collect()
}

fn image(rng: &mut Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.normal(0.0, 1.0) as f32).collect()
}

fn random_examples(cfg: &ModelConfig, rng: &mut Rng, n: usize, max_src: usize, max_tgt: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let n_src = 1 + rng.below(max_src);
            let n_tgt = 1 + rng.below(max_tgt);
            Example {
                source_ids: ids(rng, cfg.src_vocab_size, n_src),
                target_ids: ids(rng, cfg.tgt_vocab_size, n_tgt),
                image: cfg.mode.uses_image().then(|| image(rng, cfg.image_dim)),
            }
        })
        .collect()
}

// --- 1 -------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for mode in Mode::ALL {
        let t = Instant::now();
        let out = run_bin(&["gradcheck", "--set", &format!("mode={}", mode.name())])?;
        let took = t.elapsed();
        check(took < Duration::from_secs(60), || format!("{mode} took {took:?}"))?;
        slowest = slowest.max(took);
        let rel = out
            .lines()
            .find_map(|l| l.strip_prefix("max relative error "))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| format!("{mode}: no summary line in {out}"))?;
        check(rel < 1e-4, || format!("{mode}: max relative error {rel:e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("7 modes, max rel error {worst:.2e}, slowest {slowest:.2?}"))
}

// --- 2 -------------------------------------------------------------------

fn text_only_equivalence() -> Outcome {
    let base = ModelConfig {
        image_dim: 4096,
        ..ModelConfig::tiny(Mode::TextOnly)
    };
    let zero_image = vec![0.0f32; base.image_dim];
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = Rng::new(seed);
        let text: Model<f64> = random_model(base.clone(), 0.5, &mut rng);
        let n = 1 + rng.below(8);
        let m = 1 + rng.below(6);
        let src = ids(&mut rng, base.src_vocab_size, n);
        let tgt = ids(&mut rng, base.tgt_vocab_size, m);
        let reference = forward_pair(&text, &src, &tgt, None, &DropoutMasks::none()).map_err(|e| e.to_string())?;
        for mode in [Mode::ImgE, Mode::ImgD] {
            let mut model: Model<f64> = random_model(ModelConfig { mode, ..base.clone() }, 0.5, &mut rng);
            model.store.copy_shared_from(&text.store).map_err(|e| e.to_string())?;
            let biases: Vec<String> = model
                .image_parameter_names()
                .into_iter()
                .filter(|n| n.rsplit('.').next().is_some_and(|last| last.starts_with("b_")))
                .map(str::to_owned)
                .collect();
            check(!biases.is_empty(), || format!("{mode}: no image biases found"))?;
            for name in &biases {
                let id = model.store.require(name).map_err(|e| e.to_string())?;
                model.store.value_mut(id).fill(0.0);
            }
            let fwd = forward_pair(&model, &src, &tgt, Some(&zero_image), &DropoutMasks::none())
                .map_err(|e| e.to_string())?;
            let mut d = fwd.source.annotations().max_abs_diff(reference.source.annotations());
            d = d.max(max_diff(fwd.source.initial_state(), reference.source.initial_state()));
            for (a, b) in fwd.steps.iter().zip(&reference.steps) {
                d = d.max(max_diff(a.log_probs(), b.log_probs()));
                d = d.max(max_diff(a.state(), b.state()));
            }
            check(d <= 1e-12, || format!("{mode} seed {seed}: difference {d:e}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("100 inputs x IMG_E/IMG_D, max diff {worst:e}"))
}

// --- 3 -------------------------------------------------------------------

fn attention_normalisation() -> Outcome {
    let mut steps = 0usize;
    let mut masked = 0usize;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while steps < 1000 {
        let mode = Mode::ALL[seed as usize % Mode::ALL.len()];
        let mut rng = Rng::new(1000 + seed);
        seed += 1;
        let cfg = ModelConfig {
            precision: Precision::F32,
            ..ModelConfig::tiny(mode)
        };
        let model: Model<f32> = random_model(cfg.clone(), 0.5, &mut rng);
        let examples = random_examples(&cfg, &mut rng, 3, 10, 6);
        let batch = Batch::from_examples(&examples, &[0, 1, 2]);
        let fwd = forward_batch(&model, &batch).map_err(|e| e.to_string())?;
        for (alphas, mask) in fwd.alphas.iter().zip(&fwd.source_masks) {
            for alpha in alphas.iter().filter(|a| !a.is_empty()) {
                check(alpha.len() == mask.len(), || "alpha length differs from mask".into())?;
                let sum: f64 = alpha.iter().map(|&a| f64::from(a)).sum();
                worst = worst.max((sum - 1.0).abs());
                check((sum - 1.0).abs() <= 1e-6, || format!("{mode}: alpha sums to {sum}"))?;
                for (&a, &m) in alpha.iter().zip(mask) {
                    if m == 0.0 {
                        masked += 1;
                        check(a == 0.0, || format!("{mode}: masked weight {a:e}"))?;
                    }
                }
                steps += 1;
            }
        }
    }
    check(masked > 0, || "no padded positions exercised".into())?;
    Ok(format!("{steps} steps, {masked} masked weights all 0, max |sum-1| {worst:.1e}"))
}

// --- 4 -------------------------------------------------------------------

fn image_word_rows() -> Outcome {
    let mut rng = Rng::new(4);
    for (mode, extra) in [(Mode::TextOnly, 0), (Mode::Img1W, 1), (Mode::Img2W, 2)] {
        let cfg = ModelConfig::tiny(mode);
        let model: Model<f64> = random_model(cfg.clone(), 0.3, &mut rng);
        let q = image(&mut rng, cfg.image_dim);
        for n in 1..=20 {
            let src = ids(&mut rng, cfg.src_vocab_size, n);
            let q = mode.uses_image().then_some(q.as_slice());
            let enc = encode_source(&model, &src, q, &DropoutMasks::none()).map_err(|e| e.to_string())?;
            let rows = enc.annotations().rows();
            check(rows == n + extra, || format!("{mode} N={n}: {rows} annotation rows"))?;
            check(enc.annotations().cols() == 2 * cfg.d_h, || "annotation width".into())?;
        }
    }
    Ok("N+1 rows for IMG_1W and N+2 for IMG_2W, N=1..20".into())
}

// --- 5 -------------------------------------------------------------------

fn toy_ids(n: usize, seed: u64, image_dim: usize) -> Vec<Example> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let len = 3 + rng.below(4);
            let src: Vec<usize> = (0..len).map(|_| 4 + rng.below(12)).collect();
            let tgt = src.iter().map(|&s| 4 + ((s - 4) * 5 + 3) % 12).collect();
            Example {
                source_ids: src,
                target_ids: tgt,
                image: Some(image(&mut rng, image_dim)),
            }
        })
        .collect()
}

fn overfit() -> Outcome {
    let d = 64;
    let start = Instant::now();
    let mut summary = Vec::new();
    for mode in Mode::ALL {
        let mut examples = toy_ids(50, 7, 4096);
        if !mode.uses_image() {
            examples.iter_mut().for_each(|e| e.image = None);
        }
        let cfg = ModelConfig {
            d_x: d / 2,
            d_y: d / 2,
            d_h: d,
            d_s: d,
            d_a: Some(d),
            d_readout: Some(d / 2),
            image_dim: 4096,
            image_hidden: 16,
            src_vocab_size: 16,
            tgt_vocab_size: 16,
            mode,
            dropout_embed: 0.0,
            dropout_image: 0.0,
            dropout_hidden: 0.0,
            batch_size: 5,
            max_epochs: 500,
            patience: 500,
            precision: Precision::F32,
            ..ModelConfig::default()
        };
        let sv = Vocabulary::from_tokens((0..12).map(|i| format!("s{i}"))).map_err(|e| e.to_string())?;
        let tv = Vocabulary::from_tokens((0..12).map(|i| format!("t{i}"))).map_err(|e| e.to_string())?;
        let mut scorer = BleuScorer { examples: &examples };
        let options = TrainOptions {
            target_score: Some(99.0),
            ..Default::default()
        };
        let out = train::<f32, _>(&cfg, &examples, &sv, &tv, &mut scorer, options, |_| {})
            .map_err(|e| e.to_string())?;
        let bleu = out.best.dev_bleu.unwrap_or(0.0);
        check(bleu >= 99.0, || format!("{mode}: best training BLEU {bleu:.2} after {} epochs", out.history.len()))?;
        summary.push(format!("{mode} {}", out.history.len()));
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(600), || format!("took {took:?}"))?;
    Ok(format!("BLEU >= 99 in all modes (epochs: {}) in {took:.1?}", summary.join(", ")))
}

// --- 6 -------------------------------------------------------------------

fn batched_equals_unbatched() -> Outcome {
    let mut worst: f64 = 0.0;
    for (k, mode) in Mode::ALL.into_iter().enumerate() {
        let mut rng = Rng::new(60 + k as u64);
        let cfg = ModelConfig {
            precision: Precision::F32,
            image_dim: 64,
            ..ModelConfig::tiny(mode)
        };
        let model: Model<f32> = random_model(cfg.clone(), 0.5, &mut rng);
        let examples = random_examples(&cfg, &mut rng, 5, 8, 6);
        let batch = Batch::from_examples(&examples, &[0, 1, 2, 3, 4]);
        let fwd = forward_batch(&model, &batch).map_err(|e| e.to_string())?;
        for (b, ex) in examples.iter().enumerate() {
            let single = forward_pair(&model, &ex.source_ids, &ex.target_ids, ex.image.as_deref(), &DropoutMasks::none())
                .map_err(|e| e.to_string())?;
            let ann = single.source.annotations();
            let mut d: f64 = 0.0;
            for i in 0..ann.rows() {
                d = d.max(max_diff(ann.row(i), fwd.annotations[b].row(i)));
            }
            for (t, step) in single.steps.iter().enumerate() {
                d = d.max(max_diff(step.state(), &fwd.states[b][t]));
                d = d.max(max_diff(step.log_probs(), &fwd.log_probs[b][t]));
                let alpha = &fwd.alphas[b][t];
                d = d.max(max_diff(step.alpha(), &alpha[..ann.rows()]));
                check(alpha[ann.rows()..].iter().all(|&a| a == 0.0), || format!("{mode}: padding attended"))?;
            }
            check(d <= 1e-6, || format!("{mode} row {b}: difference {d:e}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("7 modes, f32, max diff {worst:.1e}"))
}

// --- 7 -------------------------------------------------------------------

/// Elementwise `rec / prev`, the multiplier that recurrent dropout applied.
fn implied_mask(prev: &[f64], rec: &[f64]) -> Result<Vec<f64>, String> {
    check(prev.iter().all(|&p| p != 0.0), || "zero state entry".into())?;
    Ok(prev.iter().zip(rec).map(|(&p, &r)| r / p).collect())
}

fn variational_dropout() -> Outcome {
    let cfg = ModelConfig {
        dropout_embed: 0.2,
        dropout_image: 0.5,
        dropout_hidden: 0.5,
        d_h: 8,
        d_s: 8,
        ..ModelConfig::tiny(Mode::ImgE)
    };
    let (mut dropped, mut kept, mut sequences) = (0usize, 0usize, 0usize);
    let mut distinct = false;
    let mut first_dec: Option<Vec<f64>> = None;
    for seed in 0..20u64 {
        let mut rng = Rng::new(700 + seed);
        let model: Model<f64> = random_model(cfg.clone(), 0.5, &mut rng);
        let masks = DropoutMasks::sample(&cfg, &mut rng);
        let src = ids(&mut rng, cfg.src_vocab_size, 6);
        let tgt = ids(&mut rng, cfg.tgt_vocab_size, 6);
        let q = image(&mut rng, cfg.image_dim);
        let fwd = forward_pair(&model, &src, &tgt, Some(&q), &masks).map_err(|e| e.to_string())?;

        let dec: Vec<Vec<f64>> = fwd
            .steps
            .iter()
            .map(|s| implied_mask(s.previous_state(), s.recurrent_input()))
            .collect::<Result<_, _>>()?;
        let enc: Vec<Vec<f64>> = fwd
            .source
            .encoder_previous_states()
            .into_iter()
            .zip(fwd.source.encoder_recurrent_inputs())
            .map(|(p, r)| implied_mask(p, r))
            .collect::<Result<_, _>>()?;
        for (name, per_step, sampled) in [
            ("decoder", &dec, masks.dec_rec.as_ref()),
            ("encoder", &enc, masks.enc_fwd_rec.as_ref()),
        ] {
            let sampled = sampled.ok_or_else(|| format!("{name}: no recurrent mask sampled"))?;
            check(per_step.len() >= 6, || format!("{name}: only {} steps", per_step.len()))?;
            for (t, m) in per_step.iter().enumerate() {
                check(m == &per_step[0], || format!("seed {seed} {name}: mask at step {t} differs from step 0"))?;
            }
            check(&per_step[0] == sampled, || format!("seed {seed} {name}: mask differs from sampled mask"))?;
            dropped += per_step[0].iter().filter(|&&v| v == 0.0).count();
            kept += per_step[0].iter().filter(|&&v| v != 0.0).count();
        }
        match &first_dec {
            None => first_dec = Some(dec[0].clone()),
            Some(f) => distinct |= f != &dec[0],
        }
        sequences += 1;
    }
    check(dropped > 0 && kept > 0, || "masks never dropped or never kept a unit".into())?;
    check(distinct, || "every sequence drew the same mask".into())?;
    Ok(format!("{sequences} sequences, step-invariant masks ({dropped} dropped / {kept} kept units)"))
}

// --- 8 -------------------------------------------------------------------

fn adadelta_oracle() -> Outcome {
    let (rho, eps) = (0.95f64, 1e-6f64);
    let x0 = [0.5, -1.25, 2.0, 0.0];
    let g = [0.3, -1.7, 1e-3, 5.0];
    let mut store: ParameterStore<f64> = ParameterStore::new();
    let ids: Vec<_> = (0..4)
        .map(|i| {
            store
                .insert(format!("p{i}"), mmnmt::numerics::DenseMatrix::from_vec(1, 1, vec![x0[i]]).unwrap())
                .unwrap()
        })
        .collect();
    for _ in 0..2 {
        for (&id, &gi) in ids.iter().zip(&g) {
            store.grad_mut(id).as_mut_slice()[0] = gi;
        }
        adadelta_update(&mut store, rho, eps);
    }
    let mut worst: f64 = 0.0;
    for (i, &id) in ids.iter().enumerate() {
        let gi = g[i];
        let eg1 = (1.0 - rho) * gi * gi;
        let dx1 = -(eps.sqrt() / (eg1 + eps).sqrt()) * gi;
        let ed1 = (1.0 - rho) * dx1 * dx1;
        let eg2 = rho * eg1 + (1.0 - rho) * gi * gi;
        let dx2 = -((ed1 + eps).sqrt() / (eg2 + eps).sqrt()) * gi;
        let ed2 = rho * ed1 + (1.0 - rho) * dx2 * dx2;
        let x2 = x0[i] + dx1 + dx2;
        let got = [
            store.value(id).as_slice()[0],
            store.sq_grad_avg(id).as_slice()[0],
            store.sq_update_avg(id).as_slice()[0],
        ];
        for (a, e) in got.iter().zip([x2, eg2, ed2]) {
            let d = (a - e).abs();
            check(d <= 1e-12, || format!("p{i}: got {a:e}, expected {e:e}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("2 steps on 4 scalars, max diff {worst:e}"))
}

// --- 9 -------------------------------------------------------------------

fn grams<T: Clone>(s: &[T], n: usize) -> Vec<Vec<T>> {
    if s.len() < n {
        Vec::new()
    } else {
        s.windows(n).map(<[T]>::to_vec).collect()
    }
}

/// Matches each hypothesis n-gram against a not-yet-used reference copy.
fn clipped_matches<T: PartialEq>(hyp: &[Vec<T>], reference: &[Vec<T>]) -> usize {
    let mut used = vec![false; reference.len()];
    let mut matched = 0;
    for g in hyp {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *g) {
            used[j] = true;
            matched += 1;
        }
    }
    matched
}

fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let (mut c, mut r) = (0usize, 0usize);
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let hg = grams(h, n);
            matched[n - 1] += clipped_matches(&hg, &grams(rf, n));
            total[n - 1] += hg.len();
        }
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let mean_log = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    100.0 * bp * mean_log.exp()
}

fn oracle_chrf(hyps: &[String], refs: &[String]) -> f64 {
    let strip = |s: &str| -> Vec<char> { s.chars().filter(|c| !c.is_whitespace()).collect() };
    let mut f_sum = 0.0;
    let mut orders = 0;
    for n in 1..=6 {
        let (mut m, mut th, mut tr) = (0usize, 0usize, 0usize);
        for (h, rf) in hyps.iter().zip(refs) {
            let hg = grams(&strip(h), n);
            let rg = grams(&strip(rf), n);
            m += clipped_matches(&hg, &rg);
            th += hg.len();
            tr += rg.len();
        }
        if tr == 0 {
            continue;
        }
        orders += 1;
        let p = if th == 0 { 0.0 } else { m as f64 / th as f64 };
        let rec = m as f64 / tr as f64;
        if p + rec > 0.0 {
            f_sum += 10.0 * p * rec / (9.0 * p + rec);
        }
    }
    if orders == 0 {
        let same = hyps.iter().zip(refs).all(|(h, r)| strip(h) == strip(r));
        return if same { 100.0 } else { 0.0 };
    }
    100.0 * f_sum / orders as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(9);
    let words = ["a", "b", "c"];
    let sentence = |rng: &mut Rng| -> Vec<String> {
        let len = 4 + rng.below(11);
        (0..len).map(|_| words[rng.below(words.len())].to_owned()).collect()
    };
    let hyps: Vec<Vec<String>> = (0..20).map(|_| sentence(&mut rng)).collect();
    // References are noisy copies so that pairs share some but not all n-grams.
    let refs: Vec<Vec<String>> = hyps
        .iter()
        .map(|h| {
            let mut r = Vec::new();
            for w in h {
                match rng.below(10) {
                    0 | 1 => r.push(words[rng.below(words.len())].to_owned()),
                    2 => {}
                    3 => {
                        r.push(w.clone());
                        r.push(words[rng.below(words.len())].to_owned());
                    }
                    _ => r.push(w.clone()),
                }
            }
            r
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut compare = |got: f64, expected: f64, what: &str| -> Result<(), String> {
        let d = (got - expected).abs();
        worst = worst.max(d);
        check(d <= 1e-9, || format!("{what}: {got} vs oracle {expected}"))
    };
    let mut nonzero = 0;
    for i in 0..hyps.len() {
        let got = bleu4(&hyps[i..=i], &refs[i..=i]).map_err(|e| e.to_string())?.score;
        compare(got, oracle_bleu(&hyps[i..=i], &refs[i..=i]), &format!("BLEU pair {i}"))?;
        nonzero += usize::from(got > 0.0);
    }
    check(nonzero >= 10, || format!("only {nonzero} sentence BLEU scores above zero"))?;
    compare(bleu4(&hyps, &refs).map_err(|e| e.to_string())?.score, oracle_bleu(&hyps, &refs), "BLEU corpus")?;

    let chars = ['a', 'b', 'c', ' '];
    let text = |rng: &mut Rng| -> String { (0..rng.below(16)).map(|_| chars[rng.below(chars.len())]).collect() };
    let ch: Vec<String> = (0..20).map(|_| text(&mut rng)).collect();
    let cr: Vec<String> = (0..20).map(|_| text(&mut rng)).collect();
    for i in 0..ch.len() {
        let got = chrf3(&ch[i..=i], &cr[i..=i]).map_err(|e| e.to_string())?.score;
        compare(got, oracle_chrf(&ch[i..=i], &cr[i..=i]), &format!("chrF pair {i}"))?;
    }
    compare(chrf3(&ch, &cr).map_err(|e| e.to_string())?.score, oracle_chrf(&ch, &cr), "chrF corpus")?;

    let b = bleu4(&refs, &refs).map_err(|e| e.to_string())?.score;
    check(b == 100.0, || format!("BLEU identity {b}"))?;
    let c = chrf3(&cr, &cr).map_err(|e| e.to_string())?.score;
    check(c == 100.0, || format!("chrF identity {c}"))?;

    let hyp: Vec<&str> = "a b c d".split(' ').collect();
    let reference: Vec<&str> = "a b c d e f g h".split(' ').collect();
    let short = bleu4(&[hyp], &[reference]).map_err(|e| e.to_string())?;
    check((short.score - 36.79).abs() <= 0.01, || format!("brevity case {}", short.score))?;
    Ok(format!(
        "21 BLEU ({nonzero} non-zero pairs) + 21 chrF oracle checks, max diff {worst:.1e}, identity 100, brevity case {:.2}",
        short.score
    ))
}

// --- 10 ------------------------------------------------------------------

fn beam_search() -> Outcome {
    let cfg = ModelConfig {
        tgt_vocab_size: 3,
        ..ModelConfig::tiny(Mode::TextOnly)
    };
    let none = DropoutMasks::none();
    for seed in 0..50u64 {
        let mut rng = Rng::new(1_000 + seed);
        let model: Model<f64> = random_model(cfg.clone(), 1.0, &mut rng);
        let n = 1 + rng.below(5);
        let src = ids(&mut rng, cfg.src_vocab_size, n);
        let enc = encode_source(&model, &src, None, &none).map_err(|e| e.to_string())?;
        let first = decoder_step(&model, &enc, enc.initial_state(), BOS, &none).map_err(|e| e.to_string())?;
        // Every sequence of at most two tokens that stops at EOS or the cap.
        let mut candidates: Vec<(Vec<usize>, f64)> = Vec::new();
        for a in 0..3 {
            let lp_a = first.log_probs()[a];
            if a == EOS {
                candidates.push((vec![BOS, a], lp_a));
                continue;
            }
            let second = decoder_step(&model, &enc, first.state(), a, &none).map_err(|e| e.to_string())?;
            for b in 0..3 {
                candidates.push((vec![BOS, a, b], lp_a + second.log_probs()[b]));
            }
        }
        check(candidates.len() == 7, || "candidate count".into())?;
        let score = |c: &(Vec<usize>, f64)| c.1 / (c.0.len() - 1) as f64;
        let best = candidates
            .iter()
            .fold(None::<&(Vec<usize>, f64)>, |best, c| match best {
                Some(b) if score(b) >= score(c) => Some(b),
                _ => Some(c),
            })
            .expect("non-empty");
        let hyp = beam_decode(&model, &src, None, 9, 2).map_err(|e| e.to_string())?;
        check(hyp.tokens == best.0, || format!("seed {seed}: beam {:?}, exhaustive {:?}", hyp.tokens, best.0))?;
        check((hyp.logprob - best.1).abs() <= 1e-12, || format!("seed {seed}: log-probability differs"))?;
    }

    let cfg = ModelConfig::tiny(Mode::TextOnly);
    for seed in 0..100u64 {
        let mut rng = Rng::new(2_000 + seed);
        let model: Model<f64> = random_model(cfg.clone(), 0.7, &mut rng);
        let n = 1 + rng.below(6);
        let src = ids(&mut rng, cfg.src_vocab_size, n);
        let steps = default_max_steps(n);
        let beam = beam_decode(&model, &src, None, 1, steps).map_err(|e| e.to_string())?;
        let greedy = greedy_hypothesis(&model, &src, None, steps).map_err(|e| e.to_string())?;
        check(beam.tokens == greedy.tokens, || format!("seed {seed}: beam=1 {:?} vs greedy {:?}", beam.tokens, greedy.tokens))?;
    }
    Ok("50 exhaustive 2-step searches match, beam=1 equals greedy on 100 models".into())
}

// --- 11 / 12 -------------------------------------------------------------

struct Toy {
    src: Vec<String>,
    tgt: Vec<String>,
    feats: Vec<Vec<f32>>,
}

fn toy_text(n: usize, seed: u64, image_dim: usize) -> Toy {
    let ex = toy_ids(n, seed, image_dim);
    let line = |ids: &[usize], p: &str| ids.iter().map(|i| format!("{p}{}", i - 4)).collect::<Vec<_>>().join(" ");
    Toy {
        src: ex.iter().map(|e| line(&e.source_ids, "s")).collect(),
        tgt: ex.iter().map(|e| line(&e.target_ids, "t")).collect(),
        feats: ex.into_iter().map(|e| e.image.expect("toy images")).collect(),
    }
}

const SMALL: [&str; 18] = [
    "--set", "d_x=8", "--set", "d_y=8", "--set", "d_h=16", "--set", "d_s=16", "--set", "d_a=16",
    "--set", "image_hidden=8", "--set", "batch_size=5", "--set", "precision=f64", "--set", "patience=30",
];

fn train_args(mode: &str, extra: &[&str]) -> Vec<String> {
    let mut a: Vec<String> = vec!["train".into(), "--set".into(), format!("mode={mode}")];
    a.extend(SMALL.iter().map(|s| s.to_string()));
    a.extend(extra.iter().map(|s| s.to_string()));
    a
}

fn run_owned(args: &[String]) -> Result<String, String> {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_bin(&refs)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Reverse model, back-translation, merge, forward IMG_D model.
fn backtranslation_pipeline(dir: &Path) -> Result<(Vec<Vec<u8>>, usize), String> {
    let orig = toy_text(30, 11, 64);
    let mono = toy_text(10, 12, 64);
    let w = |name: &str, lines: &[String]| write_lines(&dir.join(name), lines).map_err(|e| e.to_string());
    w("orig.src", &orig.src)?;
    w("orig.tgt", &orig.tgt)?;
    w("mono.tgt", &mono.tgt)?;
    write_features(&dir.join("orig.feats"), &orig.feats).map_err(|e| e.to_string())?;
    write_features(&dir.join("mono.feats"), &mono.feats).map_err(|e| e.to_string())?;

    let mut reverse = train_args("TEXT_ONLY", &["--set", "max_epochs=15"]);
    for (flag, name) in [
        ("--train-src", "orig.tgt"),
        ("--train-tgt", "orig.src"),
        ("--dev-src", "orig.tgt"),
        ("--dev-tgt", "orig.src"),
        ("--out", "reverse.ckpt"),
    ] {
        reverse.push(flag.into());
        reverse.push(p(dir, name));
    }
    run_owned(&reverse)?;

    run_bin(&[
        "backtranslate",
        "--reverse-model",
        &p(dir, "reverse.ckpt"),
        "--mono-tgt",
        &p(dir, "mono.tgt"),
        "--out-src",
        &p(dir, "synthetic.src"),
        "--out-tgt",
        &p(dir, "synthetic.tgt"),
        "--beam",
        "3",
    ])?;

    let max_len = 80;
    let original = load_parallel_corpus(&dir.join("orig.src"), &dir.join("orig.tgt"), Some(&dir.join("orig.feats")), max_len)
        .map_err(|e| e.to_string())?;
    let synthetic = load_parallel_corpus(
        &dir.join("synthetic.src"),
        &dir.join("synthetic.tgt"),
        Some(&dir.join("mono.feats")),
        max_len,
    )
    .map_err(|e| e.to_string())?;
    let merged = merge_corpora(original, synthetic).map_err(|e| e.to_string())?;
    let join = |t: &[String]| t.join(" ");
    w("merged.src", &merged.iter().map(|p| join(&p.source)).collect::<Vec<_>>())?;
    w("merged.tgt", &merged.iter().map(|p| join(&p.target)).collect::<Vec<_>>())?;
    let feats: Vec<Vec<f32>> = merged.iter().map(|p| p.image.clone().expect("merged images")).collect();
    write_features(&dir.join("merged.feats"), &feats).map_err(|e| e.to_string())?;

    let mut forward = train_args("IMG_D", &["--set", "max_epochs=5", "--set", "image_dim=64"]);
    for (flag, name) in [
        ("--train-src", "merged.src"),
        ("--train-tgt", "merged.tgt"),
        ("--train-feats", "merged.feats"),
        ("--dev-src", "orig.src"),
        ("--dev-tgt", "orig.tgt"),
        ("--dev-feats", "orig.feats"),
        ("--out", "forward.ckpt"),
    ] {
        forward.push(flag.into());
        forward.push(p(dir, name));
    }
    run_owned(&forward)?;

    let reread = load_parallel_corpus(
        &dir.join("merged.src"),
        &dir.join("merged.tgt"),
        Some(&dir.join("merged.feats")),
        max_len,
    )
    .map_err(|e| e.to_string())?;
    check(read_features(&dir.join("merged.feats")).map_err(|e| e.to_string())?.len() == reread.len(), || {
        "feature rows differ from merged lines".into()
    })?;
    let artefacts = ["reverse.ckpt", "synthetic.src", "synthetic.tgt", "forward.ckpt"]
        .iter()
        .map(|n| fs::read(dir.join(n)).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((artefacts, reread.len()))
}

fn backtranslation() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (first, merged) = backtranslation_pipeline(a.path())?;
    let (second, _) = backtranslation_pipeline(b.path())?;
    check(merged == 30 + 10, || format!("merged corpus has {merged} pairs, expected 40"))?;
    let synthetic = read_lines(&a.path().join("synthetic.src")).map_err(|e| e.to_string())?;
    check(synthetic.len() == 10, || format!("{} synthetic sources", synthetic.len()))?;
    check(first == second, || "pipeline outputs differ between runs".into())?;
    Ok("reverse -> backtranslate -> merge -> IMG_D: 40 merged pairs, identical across two runs".into())
}

fn training_determinism() -> Outcome {
    let toy = toy_text(20, 13, 64);
    let mut checkpoints = Vec::new();
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for dir in &dirs {
        let dir = dir.path();
        write_lines(&dir.join("train.src"), &toy.src).map_err(|e| e.to_string())?;
        write_lines(&dir.join("train.tgt"), &toy.tgt).map_err(|e| e.to_string())?;
        write_features(&dir.join("train.feats"), &toy.feats).map_err(|e| e.to_string())?;
        let mut args = train_args("IMG_E_D", &["--set", "max_epochs=4", "--set", "image_dim=64"]);
        for (flag, name) in [
            ("--train-src", "train.src"),
            ("--train-tgt", "train.tgt"),
            ("--train-feats", "train.feats"),
            ("--dev-src", "train.src"),
            ("--dev-tgt", "train.tgt"),
            ("--dev-feats", "train.feats"),
            ("--out", "model.ckpt"),
        ] {
            args.push(flag.into());
            args.push(p(dir, name));
        }
        run_owned(&args)?;
        checkpoints.push(fs::read(dir.join("model.ckpt")).map_err(|e| e.to_string())?);
    }
    check(checkpoints[0] == checkpoints[1], || "checkpoint bytes differ".into())?;
    Ok(format!("two seeded f64 runs with dropout, identical {}-byte checkpoints", checkpoints[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient check, all modes", gradient_check),
        ("image modes reduce to text-only", text_only_equivalence),
        ("attention weights normalised and masked", attention_normalisation),
        ("image words add annotation rows", image_word_rows),
        ("overfit a toy corpus, all modes", overfit),
        ("batched equals unbatched", batched_equals_unbatched),
        ("variational dropout masks", variational_dropout),
        ("Adadelta two-step oracle", adadelta_oracle),
        ("BLEU and chrF oracles", metric_oracles),
        ("beam search exhaustive and greedy", beam_search),
        ("back-translation pipeline", backtranslation),
        ("seeded training determinism", training_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({detail}) [{took:.1?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why} [{took:.1?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
