//! Model checkpoints: the parameter container plus header keys
//!
//! | key | value |
//! |-----|-------|
//! | `model.num_layers` … `model.dropout` | [`ModelConfig`] fields |
//! | `direction` | `forward` or `reverse` |
//! | `trained` | `true` / `false` |
//! | `domains`, `tasks` | comma-separated ids, or `-` for a model without feature embeddings |
//! | `vocab` | space-separated non-reserved tokens in id order (optional) |
//!
//! The checkpoint id is the first 16 hex digits of the SHA-256 of the file.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dafe::{DomainId, TaskId};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::transformer::{ModelMeta, Seq2Seq};
use crate::numerics::checkpoint::{read_params, write_params, Header};
use crate::scalar::Scalar;

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Seq2Seq<T>,
    pub vocab: Option<Vocabulary>,
    pub id: String,
}

pub fn checkpoint_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn header_of<T: Scalar>(model: &Seq2Seq<T>, vocab: Option<&Vocabulary>) -> Header {
    let c = model.config();
    let mut h: Header = vec![
        ("model.num_layers".into(), c.num_layers.to_string()),
        ("model.hidden_size".into(), c.hidden_size.to_string()),
        ("model.num_heads".into(), c.num_heads.to_string()),
        ("model.ff_size".into(), c.ff_size.to_string()),
        ("model.vocab_size".into(), c.vocab_size.to_string()),
        ("model.max_len".into(), c.max_len.to_string()),
        ("model.dropout".into(), c.dropout.to_string()),
        ("direction".into(), model.meta.direction.to_string()),
        ("trained".into(), model.meta.trained.to_string()),
    ];
    let (domains, tasks) = match model.dafe() {
        Some(t) => (
            t.domains().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
            t.tasks().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
        ),
        None => ("-".to_string(), "-".to_string()),
    };
    h.push(("domains".into(), domains));
    h.push(("tasks".into(), tasks));
    if let Some(v) = vocab {
        h.push(("vocab".into(), v.words().join(" ")));
    }
    h
}

/// Serialises a model to bytes and returns them with the checkpoint id.
pub fn model_bytes<T: Scalar>(model: &Seq2Seq<T>, vocab: Option<&Vocabulary>) -> Result<(Vec<u8>, String)> {
    let mut buf = Vec::new();
    write_params(&mut buf, &header_of(model, vocab), model.store())?;
    let id = checkpoint_id(&buf);
    Ok((buf, id))
}

pub fn save_model<T: Scalar>(path: &Path, model: &Seq2Seq<T>, vocab: Option<&Vocabulary>) -> Result<String> {
    let (bytes, id) = model_bytes(model, vocab)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(id)
}

fn get<'a>(header: &'a Header, key: &str) -> Result<&'a str> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format(format!("checkpoint header lacks `{key}`")))
}

fn parse<V: std::str::FromStr>(header: &Header, key: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    let raw = get(header, key)?;
    raw.parse()
        .map_err(|e| Error::Format(format!("header `{key}` = `{raw}`: {e}")))
}

fn id_list<V: std::str::FromStr<Err = Error>>(raw: &str) -> Result<Vec<V>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(str::parse).collect()
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let id = checkpoint_id(bytes);
    let (header, store) = read_params::<T, _>(BufReader::new(bytes))?;
    let config = ModelConfig {
        num_layers: parse(&header, "model.num_layers")?,
        hidden_size: parse(&header, "model.hidden_size")?,
        num_heads: parse(&header, "model.num_heads")?,
        ff_size: parse(&header, "model.ff_size")?,
        vocab_size: parse(&header, "model.vocab_size")?,
        max_len: parse(&header, "model.max_len")?,
        dropout: parse(&header, "model.dropout")?,
    };
    let meta = ModelMeta {
        direction: get(&header, "direction")?.parse()?,
        trained: parse(&header, "trained")?,
    };
    let domains_raw = get(&header, "domains")?;
    let tasks_raw = get(&header, "tasks")?;
    let model = if domains_raw == "-" {
        Seq2Seq::from_store(config, store, None, meta)?
    } else {
        let domains: Vec<DomainId> = id_list(domains_raw)?;
        let tasks: Vec<TaskId> = id_list(tasks_raw)?;
        Seq2Seq::from_store(config, store, Some((&domains, &tasks)), meta)?
    };
    let vocab = match header.iter().find(|(k, _)| k == "vocab") {
        Some((_, v)) => {
            let words: Vec<&str> = v.split(' ').filter(|w| !w.is_empty()).collect();
            let vocab = Vocabulary::from_tokens(&words)?;
            if vocab.len() != model.config().vocab_size {
                return Err(Error::Format(format!(
                    "vocabulary has {} entries, model expects {}",
                    vocab.len(),
                    model.config().vocab_size
                )));
            }
            Some(vocab)
        }
        None => None,
    };
    Ok(Checkpoint { model, vocab, id })
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
