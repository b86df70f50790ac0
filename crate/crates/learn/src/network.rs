//! Tokenized attention backbone: per-Gaussian embedding, mask token, sinusoidal
//! positions, encoder/decoder blocks and the output heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use splatsem_core::scene::{layout, ATTR_DIM};

use crate::error::{LearnError, Result};
use crate::graph::{Graph, Var};
use crate::layers::{block, init_block, init_layer_norm, init_linear, init_mlp, layer_norm, linear, mlp};
use crate::params::{normal_init, Mat, ParamStore};

pub const MASK_TOKEN: &str = "mask_token";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub mlp_ratio: usize,
    /// Language feature dimension.
    pub out_dim: usize,
    pub head_hidden: usize,
    pub mask_token: bool,
    /// Length scale (meters) of the lowest positional frequency.
    pub pos_scale: f64,
    pub language_head: bool,
    pub recon_heads: bool,
    /// Self-distillation projectors (pooled and per-token).
    pub projectors: bool,
    pub dino_hidden: usize,
    pub dino_out: usize,
    pub ibot_hidden: usize,
    pub ibot_out: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: ATTR_DIM,
            embed_hidden: 64,
            embed_dim: 48,
            encoder_depth: 2,
            encoder_heads: 4,
            decoder_depth: 1,
            decoder_heads: 4,
            mlp_ratio: 2,
            out_dim: 768,
            head_hidden: 64,
            mask_token: true,
            pos_scale: 4.0,
            language_head: true,
            recon_heads: true,
            projectors: false,
            dino_hidden: 128,
            dino_out: 64,
            ibot_hidden: 64,
            ibot_out: 32,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("embed_hidden", self.embed_hidden),
            ("embed_dim", self.embed_dim),
            ("encoder_heads", self.encoder_heads),
            ("decoder_heads", self.decoder_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("out_dim", self.out_dim),
            ("head_hidden", self.head_hidden),
            ("dino_hidden", self.dino_hidden),
            ("dino_out", self.dino_out),
            ("ibot_hidden", self.ibot_hidden),
            ("ibot_out", self.ibot_out),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(LearnError::Config(format!("model.{name} must be positive")));
        }
        for (name, heads) in [("encoder_heads", self.encoder_heads), ("decoder_heads", self.decoder_heads)] {
            if self.embed_dim % heads != 0 {
                return Err(LearnError::Config(format!(
                    "model.{name} = {heads} does not divide embed_dim {}",
                    self.embed_dim
                )));
            }
        }
        if self.embed_dim < 6 {
            return Err(LearnError::Config("model.embed_dim must be at least 6 for positional encoding".into()));
        }
        if self.recon_heads && self.input_dim != ATTR_DIM {
            return Err(LearnError::Config(format!(
                "reconstruction heads need input_dim {ATTR_DIM}, got {}",
                self.input_dim
            )));
        }
        if !(self.pos_scale > 0.0) {
            return Err(LearnError::Config("model.pos_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Attribute groups predicted by the reconstruction heads, in token order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconAttr {
    Center,
    Scale,
    Rotation,
    Opacity,
    Color,
}

impl ReconAttr {
    pub const ALL: [ReconAttr; 5] = [
        ReconAttr::Center,
        ReconAttr::Scale,
        ReconAttr::Rotation,
        ReconAttr::Opacity,
        ReconAttr::Color,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReconAttr::Center => "center",
            ReconAttr::Scale => "scale",
            ReconAttr::Rotation => "rotation",
            ReconAttr::Opacity => "opacity",
            ReconAttr::Color => "color",
        }
    }

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            ReconAttr::Center => layout::CENTER,
            ReconAttr::Scale => layout::SCALE,
            ReconAttr::Rotation => layout::ROTATION,
            ReconAttr::Opacity => layout::OPACITY,
            ReconAttr::Color => layout::COLOR,
        }
    }
}

pub struct ForwardOutput {
    pub embedded: Var,
    /// Encoder output tokens, n x embed_dim.
    pub encoded: Var,
    /// Mean over encoder tokens, 1 x embed_dim.
    pub pooled: Var,
    pub decoded: Var,
    pub language: Option<Var>,
    /// Activated attribute predictions, n x 59.
    pub recon: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
}

/// Sinusoidal features of absolute centers; columns past 6·F stay zero.
pub fn positional_encoding(positions: &Mat, dim: usize, pos_scale: f64) -> Mat {
    let freqs = dim / 6;
    let mut out = Mat::zeros((positions.nrows(), dim));
    for (r, p) in positions.rows().into_iter().enumerate() {
        for c in 0..3 {
            for k in 0..freqs {
                let w = (1u64 << k) as f64 * std::f64::consts::PI / pos_scale;
                let a = w * p[c];
                out[[r, c * 2 * freqs + 2 * k]] = a.sin();
                out[[r, c * 2 * freqs + 2 * k + 1]] = a.cos();
            }
        }
    }
    out
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = s.embed_dim;
        init_mlp(&mut store, &mut rng, "embed", &[s.input_dim, s.embed_hidden, d]);
        if s.mask_token {
            store.insert(MASK_TOKEN, normal_init(&mut rng, 1, d, 0.02));
        }
        for i in 0..s.encoder_depth {
            init_block(&mut store, &mut rng, &format!("encoder.{i}"), d, s.mlp_ratio);
        }
        init_layer_norm(&mut store, "encoder.norm", d);
        for i in 0..s.decoder_depth {
            init_block(&mut store, &mut rng, &format!("decoder.{i}"), d, s.mlp_ratio);
        }
        init_layer_norm(&mut store, "decoder.norm", d);
        if s.language_head {
            init_layer_norm(&mut store, "language.norm", d);
            init_linear(&mut store, &mut rng, "language.0", d, s.head_hidden);
            init_linear(&mut store, &mut rng, "language.1", s.head_hidden, s.out_dim);
        }
        if s.recon_heads {
            for attr in ReconAttr::ALL {
                let out = attr.range().len();
                init_mlp(&mut store, &mut rng, &format!("recon.{}", attr.name()), &[d, s.head_hidden, s.head_hidden, out]);
            }
        }
        if s.projectors {
            init_mlp(&mut store, &mut rng, "dino_proj", &[d, s.dino_hidden, s.dino_hidden, s.dino_out]);
            init_mlp(&mut store, &mut rng, "ibot_proj", &[d, s.ibot_hidden, s.ibot_hidden, s.ibot_out]);
        }
        store
    }

    fn check_inputs(&self, attrs: &Mat, positions: &Mat) -> Result<()> {
        if attrs.ncols() != self.spec.input_dim {
            return Err(LearnError::Shape(format!(
                "tokens have {} attributes, network expects {}",
                attrs.ncols(),
                self.spec.input_dim
            )));
        }
        if positions.dim() != (attrs.nrows(), 3) {
            return Err(LearnError::Shape(format!(
                "positions {:?} do not match {} tokens",
                positions.dim(),
                attrs.nrows()
            )));
        }
        if attrs.nrows() == 0 {
            return Err(LearnError::Shape("forward on zero tokens".into()));
        }
        for (name, m) in [("token", attrs), ("position", positions)] {
            if let Some(r) = m.rows().into_iter().position(|row| row.iter().any(|v| !v.is_finite())) {
                return Err(LearnError::NonFinite(format!("{name} row {r}")));
            }
        }
        Ok(())
    }

    /// Two-layer perceptron from raw attributes to tokens.
    pub fn embed_tokens(&self, g: &mut Graph, store: &ParamStore, attrs: &Mat) -> Result<Var> {
        if let Some(r) = attrs.rows().into_iter().position(|row| row.iter().any(|v| !v.is_finite())) {
            return Err(LearnError::NonFinite(format!("token row {r}")));
        }
        let x = g.constant(attrs.clone());
        mlp(g, store, "embed", 2, x)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, attrs: &Mat, positions: &Mat, masked: &[usize]) -> Result<ForwardOutput> {
        self.check_inputs(attrs, positions)?;
        let s = &self.spec;
        if let Some(&bad) = masked.iter().find(|&&i| i >= attrs.nrows()) {
            return Err(LearnError::Shape(format!("masked index {bad} out of {} tokens", attrs.nrows())));
        }
        let embedded = self.embed_tokens(g, store, attrs)?;
        let mut h = embedded;
        if !masked.is_empty() {
            if !s.mask_token {
                return Err(LearnError::Config("masking requested but the network has no mask token".into()));
            }
            let token = g.param(store, MASK_TOKEN)?;
            h = g.replace_rows(h, token, masked);
        }
        let pe = g.constant(positional_encoding(positions, s.embed_dim, s.pos_scale));
        h = g.add(h, pe);
        for i in 0..s.encoder_depth {
            h = block(g, store, &format!("encoder.{i}"), s.encoder_heads, h)?;
        }
        let encoded = layer_norm(g, store, "encoder.norm", h)?;
        let pooled = g.mean_rows(encoded);

        let mut d = g.add(encoded, pe);
        for i in 0..s.decoder_depth {
            d = block(g, store, &format!("decoder.{i}"), s.decoder_heads, d)?;
        }
        let decoded = layer_norm(g, store, "decoder.norm", d)?;

        let language = if s.language_head {
            let n = layer_norm(g, store, "language.norm", decoded)?;
            let h = linear(g, store, "language.0", n)?;
            let h = g.gelu(h);
            Some(linear(g, store, "language.1", h)?)
        } else {
            None
        };
        let recon = if s.recon_heads {
            let mut parts = Vec::with_capacity(5);
            for attr in ReconAttr::ALL {
                let raw = mlp(g, store, &format!("recon.{}", attr.name()), 3, decoded)?;
                parts.push(match attr {
                    ReconAttr::Center => raw,
                    ReconAttr::Scale | ReconAttr::Opacity => g.sigmoid(raw),
                    ReconAttr::Rotation => {
                        let t = g.tanh(raw);
                        g.l2_normalize_rows(t, 1e-8)
                    }
                    ReconAttr::Color => g.tanh(raw),
                });
            }
            Some(g.concat_cols(&parts))
        } else {
            None
        };
        Ok(ForwardOutput {
            embedded,
            encoded,
            pooled,
            decoded,
            language,
            recon,
        })
    }

    /// Pooled-view projector followed by L2 normalization.
    pub fn dino_project(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = mlp(g, store, "dino_proj", 3, x)?;
        Ok(g.l2_normalize_rows(h, 1e-8))
    }

    /// Per-token projector followed by L2 normalization.
    pub fn ibot_project(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = mlp(g, store, "ibot_proj", 3, x)?;
        Ok(g.l2_normalize_rows(h, 1e-8))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network {
        Network::new(NetworkSpec {
            embed_hidden: 8,
            embed_dim: 12,
            encoder_depth: 1,
            encoder_heads: 2,
            decoder_depth: 1,
            decoder_heads: 3,
            out_dim: 5,
            head_hidden: 6,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let bad = NetworkSpec { encoder_heads: 5, ..Default::default() };
        assert!(Network::new(bad).is_err());
    }

    #[test]
    fn rotation_head_is_unit() {
        let net = small();
        let store = net.init(3);
        let attrs = Mat::from_shape_fn((7, ATTR_DIM), |(i, j)| ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.5);
        let pos = Mat::from_shape_fn((7, 3), |(i, j)| (i + j) as f64 * 0.1);
        let mut g = Graph::new();
        let out = net.forward(&mut g, &store, &attrs, &pos, &[1, 4]).unwrap();
        let recon = g.value(out.recon.unwrap());
        for r in recon.rows() {
            let q = r.slice(ndarray::s![6..10]);
            assert!((q.dot(&q).sqrt() - 1.0).abs() < 1e-12);
            assert!(r[10] > 0.0 && r[10] < 1.0);
        }
        assert_eq!(g.value(out.language.unwrap()).dim(), (7, 5));
    }

    #[test]
    fn non_finite_token_reports_row() {
        let net = small();
        let store = net.init(0);
        let mut attrs = Mat::zeros((3, ATTR_DIM));
        attrs[[2, 5]] = f64::NAN;
        let mut g = Graph::new();
        let err = net.forward(&mut g, &store, &attrs, &Mat::zeros((3, 3)), &[]).err().unwrap();
        assert!(err.to_string().contains("row 2"), "{err}");
    }
}
