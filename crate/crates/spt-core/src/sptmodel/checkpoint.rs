//! Checkpoint serialization: magic "SPTC", a key=value metadata block with
//! the full model configuration, then named parameter records as 32-bit
//! floats, little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SptError};
use crate::io as bin;
use crate::numcore::{Array, Real};
use crate::spectral::FeatureSubset;
use crate::sptmodel::{
    AttentionType, EmbeddingType, ModelConfig, NormType, SptModel, Variant,
};

const MAGIC: &[u8; 4] = b"SPTC";
const VERSION: u32 = 1;

fn config_lines(config: &ModelConfig) -> String {
    format!(
        "model.variant={}\nmodel.n_points={}\nmodel.heads={}\nmodel.embed_dim={}\n\
         model.blocks={}\nmodel.features={}\nmodel.attention={}\nmodel.qk_norm={}\n\
         model.embedding={}\nmodel.norm={}\n",
        config.variant.as_str(),
        config.n_points,
        config.heads,
        config.embed_dim,
        config.blocks,
        config.features.as_str(),
        config.attention.as_str(),
        config.qk_norm,
        config.embedding.as_str(),
        config.norm.as_str()
    )
}

fn parse_usize(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    map.get(key)
        .ok_or_else(|| SptError::Format(format!("checkpoint metadata missing '{key}'")))?
        .parse()
        .map_err(|e| SptError::Format(format!("checkpoint metadata '{key}': {e}")))
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| SptError::Format(format!("checkpoint metadata missing '{key}'")))
}

fn config_from_map(map: &BTreeMap<String, String>) -> Result<ModelConfig> {
    Ok(ModelConfig {
        variant: Variant::parse(get(map, "model.variant")?)?,
        n_points: parse_usize(map, "model.n_points")?,
        heads: parse_usize(map, "model.heads")?,
        embed_dim: parse_usize(map, "model.embed_dim")?,
        blocks: parse_usize(map, "model.blocks")?,
        features: FeatureSubset::parse(get(map, "model.features")?)?,
        attention: AttentionType::parse(get(map, "model.attention")?)?,
        qk_norm: get(map, "model.qk_norm")? == "true",
        embedding: EmbeddingType::parse(get(map, "model.embedding")?)?,
        norm: NormType::parse(get(map, "model.norm")?)?,
    })
}

/// Writes the model with extra metadata lines (training configuration and
/// provenance). Parameters are stored as f32 regardless of the model's
/// compute type.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &SptModel<T>,
    extra_metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let mut meta = config_lines(&model.config);
    for (k, v) in extra_metadata {
        if k.starts_with("model.") {
            return Err(SptError::invalid(format!(
                "extra metadata key '{k}' collides with the model namespace"
            )));
        }
        meta.push_str(&format!("{k}={v}\n"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    bin::write_u32(&mut w, VERSION)?;
    bin::write_str(&mut w, &meta)?;
    let params = model.params();
    bin::write_u32(&mut w, params.len() as u32)?;
    for id in params.ids() {
        let value = params.value(id);
        bin::write_str(&mut w, params.name(id))?;
        bin::write_u32(&mut w, value.shape().len() as u32)?;
        for &d in value.shape() {
            bin::write_u32(&mut w, d as u32)?;
        }
        let data: Vec<f32> = value.data().iter().map(|x| x.to_f64() as f32).collect();
        bin::write_f32_slice(&mut w, &data)?;
    }
    Ok(())
}

/// Reads a checkpoint back into an f32 model plus its metadata map
/// (model.* keys included).
pub fn load_checkpoint(path: &Path) -> Result<(SptModel<f32>, BTreeMap<String, String>)> {
    let mut r = BufReader::new(File::open(path)?);
    bin::expect_magic(&mut r, MAGIC, "checkpoint")?;
    let version = bin::read_u32(&mut r)?;
    if version != VERSION {
        return Err(SptError::Format(format!(
            "checkpoint version {version} unsupported"
        )));
    }
    let meta_text = bin::read_str(&mut r, 1 << 20)?;
    let mut map = BTreeMap::new();
    for line in meta_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SptError::Format(format!("metadata line '{line}' lacks '='")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let config = config_from_map(&map)?;
    let mut model = SptModel::<f32>::new(config, 0)?;
    let count = bin::read_u32(&mut r)? as usize;
    if count != model.params().len() {
        return Err(SptError::Format(format!(
            "checkpoint has {count} parameter records, model wants {}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name = bin::read_str(&mut r, 4096)?;
        let rank = bin::read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(SptError::Format(format!("parameter rank {rank} implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(bin::read_u32(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        if len > 1 << 28 {
            return Err(SptError::Format("parameter size implausible".into()));
        }
        let data = bin::read_f32_vec(&mut r, len)?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| SptError::Format(format!("unknown parameter '{name}'")))?;
        if model.params().value(id).shape() != shape.as_slice() {
            return Err(SptError::Format(format!(
                "parameter '{name}' has shape {:?}, model wants {:?}",
                shape,
                model.params().value(id).shape()
            )));
        }
        model.params_mut().set_value(id, Array::from_vec(shape, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SptError::Format("trailing bytes after parameters".into()));
    }
    Ok((model, map))
}
