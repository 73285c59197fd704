//! Versioned checkpoint container.
//!
//! A single JSON document: a format tag and version, a shape header listing
//! every tensor, then the checkpoint body. Floats are written in their
//! shortest round-trip form and parsed exactly, so a reload is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::Checkpoint;

pub const FORMAT_TAG: &str = "emo2vec-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    shapes: Vec<TensorShape>,
    checkpoint: Checkpoint,
}

pub fn tensor_shapes(ckpt: &Checkpoint) -> Vec<TensorShape> {
    let m = &ckpt.model;
    let mut out = vec![TensorShape {
        name: "embedding".into(),
        shape: vec![m.embedding.table().rows(), m.embedding.table().cols()],
    }];
    for bank in &m.cnn.banks {
        out.push(TensorShape {
            name: format!("cnn.width{}.filters", bank.width),
            shape: vec![bank.filters.len(), bank.width, m.embedding.dim()],
        });
        out.push(TensorShape {
            name: format!("cnn.width{}.bias", bank.width),
            shape: vec![bank.bias.len()],
        });
    }
    out.push(TensorShape {
        name: "cnn.out.weights".into(),
        shape: vec![m.cnn.out_w.rows(), m.cnn.out_w.cols()],
    });
    out.push(TensorShape {
        name: "cnn.out.bias".into(),
        shape: vec![m.cnn.out_b.len()],
    });
    for h in &m.heads {
        out.push(TensorShape {
            name: format!("head.{}.weights", h.name),
            shape: vec![h.weights.rows(), h.weights.cols()],
        });
        out.push(TensorShape {
            name: format!("head.{}.bias", h.name),
            shape: vec![h.bias.len()],
        });
    }
    out
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let container = Container {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        shapes: tensor_shapes(ckpt),
        checkpoint: ckpt.clone(),
    };
    let text = serde_json::to_string(&container)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let container: Container = serde_json::from_str(&text)?;
    if container.format != FORMAT_TAG {
        return Err(Error::Checkpoint(format!(
            "unknown format `{}`",
            container.format
        )));
    }
    if container.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {FORMAT_VERSION})",
            container.version
        )));
    }
    if container.shapes != tensor_shapes(&container.checkpoint) {
        return Err(Error::Checkpoint(
            "shape header does not match tensors".into(),
        ));
    }
    Ok(container.checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::CnnConfig;
    use crate::corpus::build_vocab;
    use crate::trainer::{Emo2VecModel, ModelConfig, OptimizerState, TrainerConfig};

    fn ckpt() -> Checkpoint {
        let words = [(0..6).map(|i| format!("w{i}")).collect::<Vec<_>>()];
        let vocab = build_vocab(words.iter().map(Vec::as_slice), 1);
        let cfg = ModelConfig {
            dim: 3,
            cnn: CnnConfig {
                widths: vec![1, 3],
                filters: 2,
            },
        };
        let mut model = Emo2VecModel::init(vocab, &cfg, 2, &[("s".into(), 2)], 1).unwrap();
        model.heads[0].weights.values_mut()[0] = 0.1 + 0.2;
        model.cnn.out_b[1] = -1.0 / 3.0;
        let optimizer = OptimizerState::new(&model);
        Checkpoint {
            model,
            optimizer,
            config: TrainerConfig::default(),
            epoch: 3,
            best_dev: 0.75,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = ckpt();
        save_checkpoint(&c, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        let bits = |c: &Checkpoint| {
            c.model
                .embedding
                .table()
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&c));
    }

    #[test]
    fn rejects_wrong_version_and_tampered_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        save_checkpoint(&ckpt(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replacen("\"version\":1", "\"version\":9", 1)).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        fs::write(&p, text.replacen("\"shape\":[8,3]", "\"shape\":[9,3]", 1)).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
