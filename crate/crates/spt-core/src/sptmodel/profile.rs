//! Analytic parameter and FLOP accounting.
//!
//! `param_count` enumerates exactly the scalars the constructor allocates as
//! trainable, so the instantiated total must match it to the scalar. FLOP
//! counts follow the multiply-add convention (2 FLOPs per MAC) and ignore
//! normalizations, activations and softmax.

use crate::sptmodel::{AttentionType, EmbeddingType, ModelConfig, Variant};

/// Hidden width of the naive point transformer's positional embedding MLP.
pub(crate) fn npt_pos_hidden(d: usize) -> usize {
    16 * d
}

fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

fn norm(w: usize) -> usize {
    2 * w
}

fn residual_block(d: usize) -> usize {
    norm(d) + linear(d, 3 * d) + linear(d, d) + norm(d) + linear(d, 4 * d) + linear(4 * d, d)
}

fn offset_block(d: usize) -> usize {
    linear(d, 3 * d) + (linear(d, d) + norm(d)) + norm(d) + linear(d, 4 * d) + linear(4 * d, d)
}

/// Exact count of trainable scalars for a configuration.
pub fn param_count(config: &ModelConfig) -> usize {
    let d = config.embed_dim;
    let m = config.blocks;
    let c = config.features.width();
    match config.variant {
        Variant::Spt => {
            let embed = match config.embedding {
                EmbeddingType::Mlp => linear(c, d / 2) + norm(d / 2) + linear(d / 2, d) + norm(d),
                EmbeddingType::Conv => {
                    (c * (d / 2) * 3 + d / 2) + norm(d / 2) + ((d / 2) * d * 3 + d) + norm(d)
                }
            };
            let block = match config.attention {
                AttentionType::Residual => residual_block(d),
                AttentionType::Offset => offset_block(d),
            };
            let dg = 2 * (m + 1) * d;
            let dh = (m + 1) * d;
            let head = linear(dg, dh) + norm(dh) + linear(dh, 1);
            embed + m * block + head
        }
        Variant::Npt => {
            let h = npt_pos_hidden(d);
            let embed = linear(1, d) + linear(4, h) + norm(h) + linear(h, d) + norm(d);
            let class = d;
            let head = linear(d, d / 2) + norm(d / 2) + linear(d / 2, 1);
            embed + class + m * residual_block(d) + head
        }
    }
}

/// Analytic multiply-add FLOP count for one forward pass.
pub fn flop_estimate(config: &ModelConfig) -> f64 {
    let n = config.n_points as f64;
    let d = config.embed_dim as f64;
    let m = config.blocks as f64;
    let c = config.features.width() as f64;
    let block = |len: f64| {
        2.0 * len * d * 3.0 * d            // fused QKV projection
            + 2.0 * 2.0 * len * len * d    // logits and value mixing
            + 2.0 * len * d * d            // output projection / LBR
            + 2.0 * 2.0 * len * d * 4.0 * d // FFN
    };
    match config.variant {
        Variant::Spt => {
            let embed = match config.embedding {
                EmbeddingType::Mlp => 2.0 * n * (c * d / 2.0 + d / 2.0 * d),
                EmbeddingType::Conv => 2.0 * n * 3.0 * (c * d / 2.0 + d / 2.0 * d),
            };
            let dh = (m + 1.0) * d;
            let head = 2.0 * (2.0 * dh * dh + dh);
            embed + m * block(n) + head
        }
        Variant::Npt => {
            let h = npt_pos_hidden(config.embed_dim) as f64;
            let embed = 2.0 * n * (d + 4.0 * h + h * d);
            let head = 2.0 * (d * d / 2.0 + d / 2.0);
            embed + m * block(n + 1.0) + head
        }
    }
}

/// FLOP estimate in billions.
pub fn flop_estimate_g(config: &ModelConfig) -> f64 {
    flop_estimate(config) / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FeatureSubset;

    #[test]
    fn default_spt_is_within_5_percent_of_0_70m() {
        let cfg = ModelConfig::spt_default();
        let count = param_count(&cfg) as f64 / 1e6;
        assert!((count - 0.70).abs() / 0.70 < 0.05, "got {count} M");
    }

    #[test]
    fn npt_is_within_10_percent_of_0_70m() {
        let mut cfg = ModelConfig::spt_default();
        cfg.variant = Variant::Npt;
        let count = param_count(&cfg) as f64 / 1e6;
        assert!((count - 0.70).abs() / 0.70 < 0.10, "got {count} M");
    }

    #[test]
    fn smaller_config_has_fewer_params() {
        let big = ModelConfig::spt_default();
        let mut small = ModelConfig::spt_default();
        small.n_points = 256;
        small.heads = 4;
        small.embed_dim = 64;
        small.blocks = 1;
        assert!(param_count(&small) < param_count(&big));
    }

    #[test]
    fn flops_default_within_factor_two_of_1_04g() {
        let cfg = ModelConfig::spt_default();
        let g = flop_estimate_g(&cfg);
        assert!(g > 1.04 / 2.0 && g < 1.04 * 2.0, "got {g} G");
    }

    #[test]
    fn doubling_n_more_than_doubles_flops() {
        let cfg = ModelConfig::spt_default();
        let mut cfg2 = cfg.clone();
        cfg2.n_points *= 2;
        assert!(flop_estimate(&cfg2) > 2.0 * flop_estimate(&cfg));
    }

    #[test]
    fn tiny_config_matches_hand_count() {
        // d = 4, M = 1, c = 5, mlp embedding, residual attention
        let cfg = ModelConfig {
            n_points: 1,
            heads: 2,
            embed_dim: 4,
            blocks: 1,
            features: FeatureSubset::Full,
            ..ModelConfig::spt_default()
        };
        // embed: (5*2+2) + 4 + (2*4+4) + 8 = 36
        // block: 8 + (4*12+12) + (4*4+4) + 8 + (4*16+16) + (16*4+4) = 244
        // head: dg=16, dh=8: (16*8+8) + 16 + (8+1) = 161
        assert_eq!(param_count(&cfg), 36 + 244 + 161);

        // FLOPs for d = 1, N = 1, M = 1 (heads irrelevant, c = 5):
        // embed 2*1*(5*0.5 + 0.5*1) = 6
        // block 6 + 4 + 2 + 16 = 28
        // head dh = 2: 2*(2*4 + 2) = 20
        let mut tiny = cfg.clone();
        tiny.n_points = 1;
        tiny.embed_dim = 1;
        tiny.heads = 1;
        assert_eq!(flop_estimate(&tiny), 6.0 + 28.0 + 20.0);
    }
}
