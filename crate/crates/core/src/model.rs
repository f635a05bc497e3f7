//! Model configuration, parameter layout and initialisation.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionIds;
use crate::data::{EOS, UNK};
use crate::encoder::GruIds;
use crate::error::{Error, Result};
use crate::numerics::{init_gaussian, init_orthogonal, DenseMatrix, ParamId, ParameterStore, Real, Rng};

/// Where (if anywhere) the global image feature vector enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "TEXT_ONLY")]
    TextOnly,
    /// Projected image prepended to the source sentence.
    #[serde(rename = "IMG_1W")]
    Img1W,
    /// Projected image prepended and appended to the source sentence.
    #[serde(rename = "IMG_2W")]
    Img2W,
    /// Projected image initialises both encoder RNNs.
    #[serde(rename = "IMG_E")]
    ImgE,
    /// Projected image is an extra input to the decoder's initial state.
    #[serde(rename = "IMG_D")]
    ImgD,
    #[serde(rename = "IMG_2W_D")]
    Img2WD,
    #[serde(rename = "IMG_E_D")]
    ImgED,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::TextOnly,
        Mode::Img1W,
        Mode::Img2W,
        Mode::ImgE,
        Mode::ImgD,
        Mode::Img2WD,
        Mode::ImgED,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::TextOnly => "TEXT_ONLY",
            Mode::Img1W => "IMG_1W",
            Mode::Img2W => "IMG_2W",
            Mode::ImgE => "IMG_E",
            Mode::ImgD => "IMG_D",
            Mode::Img2WD => "IMG_2W_D",
            Mode::ImgED => "IMG_E_D",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    pub fn uses_image(self) -> bool {
        self != Mode::TextOnly
    }

    /// Number of image pseudo-words added to the source: 0, 1 or 2.
    pub fn image_words(self) -> usize {
        match self {
            Mode::Img1W => 1,
            Mode::Img2W | Mode::Img2WD => 2,
            _ => 0,
        }
    }

    pub fn image_encoder_init(self) -> bool {
        matches!(self, Mode::ImgE | Mode::ImgED)
    }

    pub fn image_decoder_init(self) -> bool {
        matches!(self, Mode::ImgD | Mode::Img2WD | Mode::ImgED)
    }

    /// Whether a projection of the image feeds the encoder side.
    pub fn image_source_side(self) -> bool {
        self.image_words() > 0 || self.image_encoder_init()
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Every hyperparameter of a model and its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Source word embedding size.
    pub d_x: usize,
    /// Target word embedding size.
    pub d_y: usize,
    /// Hidden size of each encoder direction.
    pub d_h: usize,
    /// Decoder hidden size.
    pub d_s: usize,
    /// Alignment layer size; defaults to `d_s`.
    pub d_a: Option<usize>,
    /// Readout hidden layer size; defaults to `d_y`.
    pub d_readout: Option<usize>,
    /// Dimensionality of the global image feature vector.
    pub image_dim: usize,
    /// Output size of the first image transformation.
    pub image_hidden: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub mode: Mode,
    pub dropout_embed: f64,
    pub dropout_image: f64,
    pub dropout_hidden: f64,
    pub batch_size: usize,
    pub sort_by_length: bool,
    pub patience: usize,
    pub max_epochs: usize,
    pub max_len: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub precision: Precision,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub dropout_seed: u64,
    /// Beam width for translation; 1 is greedy.
    pub beam: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 620,
            d_y: 620,
            d_h: 1024,
            d_s: 1024,
            d_a: None,
            d_readout: None,
            image_dim: 4096,
            image_hidden: 4096,
            src_vocab_size: 100_000,
            tgt_vocab_size: 100_000,
            mode: Mode::TextOnly,
            dropout_embed: 0.2,
            dropout_image: 0.5,
            dropout_hidden: 0.5,
            batch_size: 40,
            sort_by_length: false,
            patience: 20,
            max_epochs: 1000,
            max_len: 80,
            clip_norm: 1.0,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-6,
            precision: Precision::F32,
            init_seed: 1234,
            shuffle_seed: 5678,
            dropout_seed: 91011,
            beam: 1,
        }
    }
}

impl ModelConfig {
    pub fn d_a(&self) -> usize {
        self.d_a.unwrap_or(self.d_s)
    }

    pub fn d_readout(&self) -> usize {
        self.d_readout.unwrap_or(self.d_y)
    }

    /// Size of the projected image vector feeding the source side.
    pub fn source_image_dim(&self) -> usize {
        if self.mode.image_words() > 0 {
            self.d_x
        } else {
            self.d_h
        }
    }

    /// Small dimensions for gradient checks and toy runs.
    pub fn tiny(mode: Mode) -> Self {
        Self {
            d_x: 5,
            d_y: 4,
            d_h: 4,
            d_s: 5,
            d_a: Some(3),
            d_readout: Some(4),
            image_dim: 6,
            image_hidden: 5,
            src_vocab_size: 9,
            tgt_vocab_size: 8,
            mode,
            dropout_embed: 0.0,
            dropout_image: 0.0,
            dropout_hidden: 0.0,
            clip_norm: 0.0,
            precision: Precision::F64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("d_h", self.d_h),
            ("d_s", self.d_s),
            ("d_a", self.d_a()),
            ("d_readout", self.d_readout()),
            ("image_dim", self.image_dim),
            ("image_hidden", self.image_hidden),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("beam", self.beam),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        // Sources need room for UNK, targets for EOS.
        if self.src_vocab_size <= UNK || self.tgt_vocab_size <= EOS {
            return Err(Error::Config(format!(
                "vocabulary sizes must be at least {} (source) and {} (target)",
                UNK + 1,
                EOS + 1
            )));
        }
        for (name, r) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_image", self.dropout_image),
            ("dropout_hidden", self.dropout_hidden),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {r}")));
            }
        }
        if !(0.0..1.0).contains(&self.adadelta_rho) || self.adadelta_eps <= 0.0 {
            return Err(Error::Config("adadelta_rho in [0,1) and adadelta_eps > 0 required".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies a `key=value` override. Keys must name a config field.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let mut json = serde_json::to_value(&*self).expect("config serialises");
        let obj = json.as_object_mut().expect("config is an object");
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown config key {key}")));
        }
        let parsed = match serde_json::from_str::<serde_json::Value>(value) {
            Ok(v) => v,
            Err(_) => serde_json::Value::String(value.to_owned()),
        };
        obj.insert(key.to_owned(), parsed);
        *self = serde_json::from_value(json)
            .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Gaussian,
    Orthogonal,
    Zero,
}

/// Ids of the image-path parameters present in the current mode.
#[derive(Debug, Clone, Copy)]
pub struct ImageIds {
    pub w1: ParamId,
    pub b1: ParamId,
    /// Second transformation into word or encoder-state space.
    pub src: Option<(ParamId, ParamId)>,
    /// Encoder initialisers `(W_f, b_f, W_b, b_b)`.
    pub enc_init: Option<(ParamId, ParamId, ParamId, ParamId)>,
    /// Second transformation into decoder-state space and `W_m`.
    pub dec: Option<(ParamId, ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy)]
pub struct ReadoutIds {
    pub w_rs: ParamId,
    pub w_ry: ParamId,
    pub w_rc: ParamId,
    pub b_r: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

/// Resolved ids of every parameter used by the network.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub src_emb: ParamId,
    pub tgt_emb: ParamId,
    pub enc_fwd: GruIds,
    pub enc_bwd: GruIds,
    pub att: AttentionIds,
    pub w_di: ParamId,
    pub b_di: ParamId,
    pub dec: GruIds,
    pub readout: ReadoutIds,
    pub image: Option<ImageIds>,
}

fn gru_specs(prefix: &str, d_in: usize, d_h: usize, out: &mut Vec<(String, usize, usize, Init)>) {
    for gate in ["z", "r", "h"] {
        out.push((format!("{prefix}.W_{gate}"), d_in, d_h, Init::Gaussian));
        out.push((format!("{prefix}.U_{gate}"), d_h, d_h, Init::Orthogonal));
        out.push((format!("{prefix}.b_{gate}"), 1, d_h, Init::Zero));
    }
}

/// Name, shape and initialiser of every parameter the config calls for,
/// in canonical (sorted) order.
pub(crate) fn parameter_specs(cfg: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let mut v = Vec::new();
    let ann = 2 * cfg.d_h;
    v.push(("src.emb".into(), cfg.src_vocab_size, cfg.d_x, Init::Gaussian));
    v.push(("tgt.emb".into(), cfg.tgt_vocab_size, cfg.d_y, Init::Gaussian));
    gru_specs("enc.fwd", cfg.d_x, cfg.d_h, &mut v);
    gru_specs("enc.bwd", cfg.d_x, cfg.d_h, &mut v);
    v.push(("att.W_a".into(), ann, cfg.d_a(), Init::Gaussian));
    v.push(("att.U_a".into(), cfg.d_s, cfg.d_a(), Init::Gaussian));
    v.push(("att.v_a".into(), 1, cfg.d_a(), Init::Gaussian));
    v.push(("dec.init.W_di".into(), ann, cfg.d_s, Init::Gaussian));
    v.push(("dec.init.b_di".into(), 1, cfg.d_s, Init::Zero));
    gru_specs("dec.gru", cfg.d_y + ann, cfg.d_s, &mut v);
    let d_r = cfg.d_readout();
    v.push(("readout.W_rs".into(), cfg.d_s, d_r, Init::Gaussian));
    v.push(("readout.W_ry".into(), cfg.d_y, d_r, Init::Gaussian));
    v.push(("readout.W_rc".into(), ann, d_r, Init::Gaussian));
    v.push(("readout.b_r".into(), 1, d_r, Init::Zero));
    v.push(("readout.W_o".into(), d_r, cfg.tgt_vocab_size, Init::Gaussian));
    v.push(("readout.b_o".into(), 1, cfg.tgt_vocab_size, Init::Zero));

    let mode = cfg.mode;
    if mode.uses_image() {
        v.push(("img.W_I1".into(), cfg.image_dim, cfg.image_hidden, Init::Gaussian));
        v.push(("img.b_I1".into(), 1, cfg.image_hidden, Init::Zero));
    }
    if mode.image_source_side() {
        let d = cfg.source_image_dim();
        v.push(("img.src.W_I2".into(), cfg.image_hidden, d, Init::Gaussian));
        v.push(("img.src.b_I2".into(), 1, d, Init::Zero));
    }
    if mode.image_encoder_init() {
        v.push(("img.enc.W_f".into(), cfg.d_h, cfg.d_h, Init::Gaussian));
        v.push(("img.enc.b_f".into(), 1, cfg.d_h, Init::Zero));
        v.push(("img.enc.W_b".into(), cfg.d_h, cfg.d_h, Init::Gaussian));
        v.push(("img.enc.b_b".into(), 1, cfg.d_h, Init::Zero));
    }
    if mode.image_decoder_init() {
        v.push(("img.dec.W_I2".into(), cfg.image_hidden, cfg.d_s, Init::Gaussian));
        v.push(("img.dec.b_I2".into(), 1, cfg.d_s, Init::Zero));
        v.push(("dec.init.W_m".into(), cfg.d_s, cfg.d_s, Init::Gaussian));
    }
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

impl Layout {
    pub fn resolve<F: Real>(cfg: &ModelConfig, store: &ParameterStore<F>) -> Result<Self> {
        let expected = parameter_specs(cfg);
        if expected.len() != store.len() {
            return Err(Error::InvalidInput(format!(
                "store holds {} parameters, {} mode needs {}",
                store.len(),
                cfg.mode,
                expected.len()
            )));
        }
        for (name, r, c, _) in &expected {
            let id = store.require(name)?;
            if store.value(id).shape() != (*r, *c) {
                return Err(Error::shape(format!(
                    "{name} is {:?}, expected {r}x{c}",
                    store.value(id).shape()
                )));
            }
        }
        let get = |n: &str| store.require(n);
        let gru = |p: &str| -> Result<GruIds> {
            Ok(GruIds {
                w_z: get(&format!("{p}.W_z"))?,
                w_r: get(&format!("{p}.W_r"))?,
                w_h: get(&format!("{p}.W_h"))?,
                u_z: get(&format!("{p}.U_z"))?,
                u_r: get(&format!("{p}.U_r"))?,
                u_h: get(&format!("{p}.U_h"))?,
                b_z: get(&format!("{p}.b_z"))?,
                b_r: get(&format!("{p}.b_r"))?,
                b_h: get(&format!("{p}.b_h"))?,
            })
        };
        let mode = cfg.mode;
        let image = if mode.uses_image() {
            Some(ImageIds {
                w1: get("img.W_I1")?,
                b1: get("img.b_I1")?,
                src: if mode.image_source_side() {
                    Some((get("img.src.W_I2")?, get("img.src.b_I2")?))
                } else {
                    None
                },
                enc_init: if mode.image_encoder_init() {
                    Some((
                        get("img.enc.W_f")?,
                        get("img.enc.b_f")?,
                        get("img.enc.W_b")?,
                        get("img.enc.b_b")?,
                    ))
                } else {
                    None
                },
                dec: if mode.image_decoder_init() {
                    Some((get("img.dec.W_I2")?, get("img.dec.b_I2")?, get("dec.init.W_m")?))
                } else {
                    None
                },
            })
        } else {
            None
        };
        Ok(Layout {
            src_emb: get("src.emb")?,
            tgt_emb: get("tgt.emb")?,
            enc_fwd: gru("enc.fwd")?,
            enc_bwd: gru("enc.bwd")?,
            att: AttentionIds {
                v_a: get("att.v_a")?,
                u_a: get("att.U_a")?,
                w_a: get("att.W_a")?,
            },
            w_di: get("dec.init.W_di")?,
            b_di: get("dec.init.b_di")?,
            dec: gru("dec.gru")?,
            readout: ReadoutIds {
                w_rs: get("readout.W_rs")?,
                w_ry: get("readout.W_ry")?,
                w_rc: get("readout.W_rc")?,
                b_r: get("readout.b_r")?,
                w_o: get("readout.W_o")?,
                b_o: get("readout.b_o")?,
            },
            image,
        })
    }
}

/// A configured network: hyperparameters, parameters and their layout.
#[derive(Debug, Clone)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub store: ParameterStore<F>,
    pub layout: Layout,
}

impl<F: Real> Model<F> {
    /// Fresh parameters: Gaussian (σ = 0.01) for non-recurrent matrices,
    /// orthogonal recurrent matrices, zero biases.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.init_seed);
        let mut store = ParameterStore::new();
        for (name, r, c, init) in parameter_specs(&config) {
            let m = match init {
                Init::Gaussian => init_gaussian(r, c, &mut rng)?,
                Init::Orthogonal => init_orthogonal(r, &mut rng)?,
                Init::Zero => DenseMatrix::zeros(r, c),
            };
            store.insert(name, m)?;
        }
        Self::from_store(config, store)
    }

    pub fn from_store(config: ModelConfig, store: ParameterStore<F>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &store)?;
        Ok(Self {
            config,
            store,
            layout,
        })
    }

    /// Overwrites every parameter with `Normal(0, std²)` draws.
    pub fn randomize(&mut self, std: f64, rng: &mut Rng) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            for v in self.store.value_mut(id).as_mut_slice() {
                *v = F::lit(rng.normal(0.0, std));
            }
        }
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout,
        }
    }

    /// Names of image-path parameters present in the store.
    pub fn image_parameter_names(&self) -> Vec<&str> {
        self.store
            .names()
            .filter(|n| n.starts_with("img.") || *n == "dec.init.W_m")
            .collect()
    }
}
