//! Binary checkpoint container.
//!
//! Layout: magic `LSEG`, `u32` version, `u64` manifest length (all
//! little-endian), the UTF-8 manifest, then raw little-endian `f64`
//! buffers. Manifest lines:
//!
//! ```text
//! config <key>=<value>
//! tensor <name> <d0,d1,..> <byte offset> <frozen|trainable>
//! loose <row> <layer> <A|B> <rows,cols>
//! ```

use std::fs;
use std::path::Path;

use lseg_autograd::Tensor;

use crate::encoder::{loose_descriptors, EncoderConfig};
use crate::error::{Error, Result};
use crate::lora::FactorDescriptor;
use crate::model::Model;

pub const MAGIC: &[u8; 4] = b"LSEG";
pub const VERSION: u32 = 1;

fn config_lines(cfg: &EncoderConfig) -> Vec<(String, String)> {
    [
        ("image_size", cfg.image_size.to_string()),
        ("patch_size", cfg.patch_size.to_string()),
        ("embed_dim", cfg.embed_dim.to_string()),
        ("num_blocks", cfg.num_blocks.to_string()),
        ("num_heads", cfg.num_heads.to_string()),
        ("mlp_ratio", cfg.mlp_ratio.to_string()),
        ("lora_rank", cfg.lora_rank.to_string()),
        ("use_loose_embedding", cfg.use_loose_embedding.to_string()),
        ("pooled_len", cfg.pooled_len.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut manifest = String::new();
    for (k, v) in config_lines(&model.config) {
        manifest.push_str(&format!("config {k}={v}\n"));
    }
    let mut offset = 0usize;
    for (name, p) in model.params.iter() {
        let kind = if p.trainable { "trainable" } else { "frozen" };
        manifest.push_str(&format!("tensor {name} {} {offset} {kind}\n", dims(p.value.shape())));
        offset += 8 * p.value.len();
    }
    if model.config.use_loose_embedding {
        for (row, d) in loose_descriptors(&model.config).iter().enumerate() {
            manifest.push_str(&format!("loose {row} {} {} {}\n", d.layer, d.role, dims(&d.shape)));
        }
    }
    let mut out = Vec::with_capacity(16 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, p) in model.params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|d| d.parse().map_err(|_| bad(format!("bad shape {s:?}"))))
        .collect()
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    trainable: bool,
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing LSEG header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("manifest length exceeds file"))?;
    let manifest = std::str::from_utf8(&bytes[16..data_start]).map_err(|_| bad("manifest is not UTF-8"))?;
    let data = &bytes[data_start..];

    let mut cfg_text = String::new();
    let mut entries = Vec::new();
    let mut loose = Vec::new();
    for line in manifest.lines().filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(' ').collect();
        match f.as_slice() {
            ["config", kv] => {
                cfg_text.push_str(kv);
                cfg_text.push('\n');
            }
            ["tensor", name, shape, offset, kind] => entries.push(Entry {
                name: name.to_string(),
                shape: parse_dims(shape)?,
                offset: offset.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?,
                trainable: match *kind {
                    "trainable" => true,
                    "frozen" => false,
                    _ => return Err(bad(format!("bad tensor kind in {line:?}"))),
                },
            }),
            ["loose", row, layer, role, shape] => {
                let shape = parse_dims(shape)?;
                let row: usize = row.parse().map_err(|_| bad(format!("bad row in {line:?}")))?;
                if shape.len() != 2 || row != loose.len() {
                    return Err(bad(format!("bad loose descriptor {line:?}")));
                }
                loose.push(FactorDescriptor {
                    layer: layer.to_string(),
                    role: role.parse()?,
                    shape: [shape[0], shape[1]],
                });
            }
            _ => return Err(bad(format!("unrecognized manifest line {line:?}"))),
        }
    }

    let mut tc = crate::train::TrainConfig::default();
    for (k, v) in crate::config::parse_pairs(&cfg_text)? {
        crate::config::apply(&mut tc, &k, &v).map_err(|e| bad(e.to_string()))?;
    }
    let cfg = tc.encoder;
    cfg.validate().map_err(|e| bad(e.to_string()))?;

    let expected_loose = if cfg.use_loose_embedding {
        loose_descriptors(&cfg)
    } else {
        Vec::new()
    };
    if loose != expected_loose {
        return Err(bad("loose descriptors do not match the configuration"));
    }

    // Shapes and flags come from a freshly built model; values from the file.
    let mut model = Model::new(cfg, 0)?;
    if entries.len() != model.params.len() {
        return Err(bad(format!(
            "checkpoint has {} tensors, configuration expects {}",
            entries.len(),
            model.params.len()
        )));
    }
    let payload: usize = entries.iter().map(|e| 8 * e.shape.iter().product::<usize>()).sum();
    if payload != data.len() {
        return Err(bad(format!("tensor data is {} bytes, manifest describes {payload}", data.len())));
    }
    for e in entries {
        let expected = model
            .params
            .get(&e.name)
            .ok_or_else(|| bad(format!("unexpected tensor {}", e.name)))?;
        if expected.value.shape() != e.shape.as_slice() || expected.trainable != e.trainable {
            return Err(bad(format!(
                "tensor {} is {:?} ({}), configuration expects {:?} ({})",
                e.name,
                e.shape,
                if e.trainable { "trainable" } else { "frozen" },
                expected.value.shape(),
                if expected.trainable { "trainable" } else { "frozen" }
            )));
        }
        let n: usize = e.shape.iter().product();
        let end = e
            .offset
            .checked_add(8 * n)
            .filter(|&end| end <= data.len())
            .ok_or_else(|| bad(format!("tensor {} runs past the end of the file", e.name)))?;
        let values = data[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *model.params.tensor_mut(&e.name)? = Tensor::new(e.shape, values)?;
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks it against an expected encoder shape.
pub fn load_expecting(path: &Path, cfg: &EncoderConfig) -> Result<Model> {
    let model = load(path)?;
    if &model.config != cfg {
        return Err(bad(format!(
            "checkpoint was built for {:?}, expected {:?}",
            model.config, cfg
        )));
    }
    Ok(model)
}
