use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};
use crate::nn::NormConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Tst,
    TstS,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Tst => "tst",
            Variant::TstS => "tst-s",
        }
    }

    pub fn local_channels(self) -> [usize; 3] {
        match self {
            Variant::Tst => [64, 128, 160],
            Variant::TstS => [48, 96, 128],
        }
    }
}

impl FromStr for Variant {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tst" => Ok(Variant::Tst),
            "tst-s" | "tsts" | "tst_s" => Ok(Variant::TstS),
            other => Err(config_err(format!("unknown variant `{other}` (expected tst or tst-s)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Source of keys/values in the connection module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// Keys and values from the shared global token.
    Cross,
    /// Keys and values from the pooled local map itself.
    SelfAttention,
    /// No connection module: local features pass through untouched.
    Disabled,
}

impl AttentionMode {
    pub fn tag(self) -> &'static str {
        match self {
            AttentionMode::Cross => "cross",
            AttentionMode::SelfAttention => "self",
            AttentionMode::Disabled => "none",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AttentionMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(AttentionMode::Cross),
            "self" => Ok(AttentionMode::SelfAttention),
            "none" => Ok(AttentionMode::Disabled),
            other => Err(config_err(format!("unknown attention mode `{other}` (cross, self or none)"))),
        }
    }
}

/// Output width of an encoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageWidth {
    Fixed(usize),
    /// Feeds local level `i` (0-based) and takes its channel count.
    Local(usize),
    /// Produces the shared global token.
    Global,
}

/// One downsampling stage: the first block has stride 2, the rest stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub width: StageWidth,
    pub expansion: usize,
    pub blocks: usize,
    pub kernel: usize,
}

/// Stem (stride 2) followed by inverted-residual stages, each halving the
/// resolution. Stage `i` therefore outputs stride `2^(i+2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSchedule {
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
}

impl EncoderSchedule {
    pub fn standard(global_token: bool) -> Self {
        let stage = |width, expansion, blocks| StageSpec {
            width,
            expansion,
            blocks,
            kernel: 3,
        };
        let mut stages = vec![
            stage(StageWidth::Fixed(24), 4, 2),
            stage(StageWidth::Local(0), 6, 2),
            stage(StageWidth::Local(1), 6, 2),
            stage(StageWidth::Local(2), 6, 2),
        ];
        if global_token {
            stages.push(stage(StageWidth::Global, 4, 1));
        }
        Self {
            stem_channels: 16,
            stages,
        }
    }

    pub fn stride_of(stage: usize) -> usize {
        1 << (stage + 2)
    }

    fn to_text(&self) -> String {
        self.stages
            .iter()
            .map(|s| {
                let w = match s.width {
                    StageWidth::Fixed(c) => c.to_string(),
                    StageWidth::Local(i) => format!("L{}", i + 1),
                    StageWidth::Global => "G".to_string(),
                };
                format!("{w}/{}/{}/{}", s.expansion, s.blocks, s.kernel)
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    fn parse_stages(text: &str) -> Result<Vec<StageSpec>> {
        text.split(',')
            .map(|item| {
                let parts: Vec<&str> = item.trim().split('/').collect();
                let bad = || config_err(format!("bad encoder stage `{item}` (width/expansion/blocks/kernel)"));
                if parts.len() != 4 {
                    return Err(bad());
                }
                let width = match parts[0] {
                    "G" => StageWidth::Global,
                    w if w.starts_with('L') => {
                        let i: usize = w[1..].parse().map_err(|_| bad())?;
                        if !(1..=3).contains(&i) {
                            return Err(bad());
                        }
                        StageWidth::Local(i - 1)
                    }
                    w => StageWidth::Fixed(w.parse().map_err(|_| bad())?),
                };
                let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
                Ok(StageSpec {
                    width,
                    expansion: num(parts[1])?,
                    blocks: num(parts[2])?,
                    kernel: num(parts[3])?,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub local_channels: [usize; 3],
    pub global_channels: usize,
    /// 64 builds a dedicated global-token stage; 32 reuses the coarsest local
    /// map as the global token.
    pub global_stride: usize,
    pub heads: [usize; 3],
    pub qk_dim: usize,
    pub v_dim: usize,
    pub ffn_expansion: usize,
    pub decoder_channels: usize,
    pub sff_hidden: usize,
    pub max_depth: f64,
    pub attention: AttentionMode,
    pub norm: NormConfig,
    pub encoder: EncoderSchedule,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        let local_channels = variant.local_channels();
        Self {
            variant,
            local_channels,
            global_channels: 256,
            global_stride: 64,
            heads: local_channels.map(|c| c.div_ceil(32)),
            qk_dim: 16,
            v_dim: 32,
            ffn_expansion: 2,
            decoder_channels: 64,
            sff_hidden: 64,
            max_depth: 10.0,
            attention: AttentionMode::Cross,
            norm: NormConfig::default(),
            encoder: EncoderSchedule::standard(true),
        }
    }

    pub fn tst() -> Self {
        Self::new(Variant::Tst)
    }

    pub fn tst_s() -> Self {
        Self::new(Variant::TstS)
    }

    pub fn with_attention(mut self, mode: AttentionMode) -> Self {
        self.attention = mode;
        self
    }

    pub fn with_max_depth(mut self, max_depth: f64) -> Self {
        self.max_depth = max_depth;
        self
    }

    /// Channel count of the key/value source.
    pub fn kv_channels(&self) -> usize {
        if self.global_stride == 64 {
            self.global_channels
        } else {
            self.local_channels[2]
        }
    }

    pub fn stage_channels(&self, width: StageWidth) -> usize {
        match width {
            StageWidth::Fixed(c) => c,
            StageWidth::Local(i) => self.local_channels[i],
            StageWidth::Global => self.global_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(config_err(m));
        if self.local_channels.contains(&0) || self.global_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.heads.contains(&0) || self.qk_dim == 0 || self.v_dim == 0 || self.ffn_expansion == 0 {
            return fail("heads, qk_dim, v_dim and ffn_expansion must be positive".into());
        }
        if self.decoder_channels == 0 || self.sff_hidden == 0 {
            return fail("decoder widths must be positive".into());
        }
        if !(self.max_depth.is_finite() && self.max_depth > 0.0) {
            return fail(format!("max_depth must be positive, got {}", self.max_depth));
        }
        if !(0.0..=1.0).contains(&self.norm.momentum) || self.norm.eps <= 0.0 {
            return fail("bn_momentum must lie in [0, 1] and bn_eps be positive".into());
        }
        let stages = &self.encoder.stages;
        let mut locals = [None; 3];
        let mut global = None;
        for (i, s) in stages.iter().enumerate() {
            if s.expansion == 0 || s.blocks == 0 || s.kernel % 2 == 0 {
                return fail(format!("encoder stage {i} is degenerate: {s:?}"));
            }
            match s.width {
                StageWidth::Local(l) if locals[l].replace(i).is_some() => {
                    return fail(format!("local level {} tapped twice", l + 1))
                }
                StageWidth::Global if global.replace(i).is_some() => return fail("global token tapped twice".into()),
                _ => {}
            }
        }
        for (l, tap) in locals.iter().enumerate() {
            let want = 8 << l;
            match tap {
                Some(i) if EncoderSchedule::stride_of(*i) == want => {}
                _ => return fail(format!("local level {} must be tapped at stride {want}", l + 1)),
            }
        }
        match (self.global_stride, global) {
            (64, Some(i)) if EncoderSchedule::stride_of(i) == 64 => {}
            (32, None) => {}
            (s, _) => {
                return fail(format!(
                    "global_stride {s} needs {} global-token stage",
                    if s == 32 { "no" } else { "a stride-64" }
                ))
            }
        }
        let last = if global.is_some() { StageWidth::Global } else { StageWidth::Local(2) };
        if stages.last().map(|s| s.width) != Some(last) {
            return fail("the encoder must end at its last tap".into());
        }
        Ok(())
    }

    /// Canonical `key = value` lines; parsing them back gives an equal config.
    pub fn to_kv_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        [
            ("variant", self.variant.tag().to_string()),
            ("local_channels", list(&self.local_channels)),
            ("global_channels", self.global_channels.to_string()),
            ("global_stride", self.global_stride.to_string()),
            ("heads", list(&self.heads)),
            ("qk_dim", self.qk_dim.to_string()),
            ("v_dim", self.v_dim.to_string()),
            ("ffn_expansion", self.ffn_expansion.to_string()),
            ("decoder_channels", self.decoder_channels.to_string()),
            ("sff_hidden", self.sff_hidden.to_string()),
            ("max_depth", self.max_depth.to_string()),
            ("attention", self.attention.tag().to_string()),
            ("bn_momentum", self.norm.momentum.to_string()),
            ("bn_eps", self.norm.eps.to_string()),
            ("encoder_stem", self.encoder.stem_channels.to_string()),
            ("encoder_stages", self.encoder.to_text()),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_kv_text().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Applies one model key. Returns `false` for keys that are not model keys.
    /// `variant` is handled by the caller since it resets the defaults.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<N: FromStr>(key: &str, v: &str) -> Result<N> {
            v.parse().map_err(|_| config_err(format!("`{key}` expects a number, got `{v}`")))
        }
        fn triple(key: &str, v: &str) -> Result<[usize; 3]> {
            let items: Vec<usize> = v.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
            items
                .try_into()
                .map_err(|_| config_err(format!("`{key}` expects three comma-separated values")))
        }
        match key {
            "local_channels" => self.local_channels = triple(key, value)?,
            "global_channels" => self.global_channels = num(key, value)?,
            "global_stride" => {
                self.global_stride = num(key, value)?;
                let has_global = self.encoder.stages.iter().any(|s| s.width == StageWidth::Global);
                match (self.global_stride, has_global) {
                    (32, true) => self.encoder.stages.retain(|s| s.width != StageWidth::Global),
                    (64, false) => {
                        self.encoder.stages.push(EncoderSchedule::standard(true).stages[4]);
                    }
                    _ => {}
                }
            }
            "heads" => self.heads = triple(key, value)?,
            "qk_dim" => self.qk_dim = num(key, value)?,
            "v_dim" => self.v_dim = num(key, value)?,
            "ffn_expansion" => self.ffn_expansion = num(key, value)?,
            "decoder_channels" => self.decoder_channels = num(key, value)?,
            "sff_hidden" => self.sff_hidden = num(key, value)?,
            "max_depth" => self.max_depth = num(key, value)?,
            "attention" => self.attention = value.parse()?,
            "bn_momentum" => self.norm.momentum = num(key, value)?,
            "bn_eps" => self.norm.eps = num(key, value)?,
            "encoder_stem" => self.encoder.stem_channels = num(key, value)?,
            "encoder_stages" => self.encoder.stages = EncoderSchedule::parse_stages(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses `key = value` lines (with `#` comments) holding only model keys.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let pairs = crate::kv::parse(text)?;
        let variant = pairs
            .iter()
            .find(|(k, _)| k == "variant")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Variant::Tst);
        let mut cfg = Self::new(variant);
        for (k, v) in &pairs {
            if k != "variant" && !cfg.apply(k, v)? {
                return Err(config_err(format!("unknown model key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_channel_configs() {
        let t = ModelConfig::tst();
        let s = ModelConfig::tst_s();
        assert_eq!(t.local_channels, [64, 128, 160]);
        assert_eq!(s.local_channels, [48, 96, 128]);
        assert_eq!(t.heads, [2, 4, 5]);
        assert_eq!((t.qk_dim, t.v_dim, t.global_channels), (16, 32, 256));
        t.validate().unwrap();
        s.validate().unwrap();
    }

    #[test]
    fn kv_text_roundtrip_and_digest() {
        let mut cfg = ModelConfig::tst_s().with_attention(AttentionMode::SelfAttention);
        cfg.apply("global_stride", "32").unwrap();
        cfg.apply("v_dim", "16").unwrap();
        let back = ModelConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_ne!(cfg.digest(), ModelConfig::tst_s().digest());
        assert_eq!(cfg.kv_channels(), 128);
    }

    #[test]
    fn bad_taps_are_rejected() {
        let mut cfg = ModelConfig::tst();
        cfg.encoder.stages.swap(1, 2);
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tst();
        cfg.global_stride = 32;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::from_kv_text("variant = tst\nbogus = 1\n").is_err());
    }
}
