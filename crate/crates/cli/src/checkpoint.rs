//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"AQCF" | version: u32 | entry count: u32 | entries...
//! entry: name_len: u32 | name (utf8) | dtype: u8 | ndim: u32 | dims: u64 * ndim | payload
//! ```
//!
//! dtype 0 is f64, 1 is u64, 2 is raw utf8 bytes (one dim, the byte length).
//! Floats are stored bit-exact.
//!
//! Entries: `config` (TOML of the run), `vocab` (one token per line),
//! `param/<name>`, `adam.m/<name>`, `adam.v/<name>`, `adam.steps`, and
//! `counters` = [seed, step, epoch]. `prev_quantum_rms` is present only when set.
//! Memory banks live in the parameter store and travel with it. All random
//! draws are derived from the seed and the step counter, so those two fully
//! determine the random state.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use aqcf_core::model::Model;
use aqcf_core::training::{OptimizerState, TrainState};
use aqcf_core::{ParamStore, Tensor};

use crate::config::RunConfig;
use crate::data::Vocab;
use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"AQCF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
enum Payload {
    F64(Vec<usize>, Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

fn err(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

fn write_entries(out: &mut impl Write, entries: &[(String, Payload)]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, p) in entries {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let (tag, dims): (u8, Vec<u64>) = match p {
            Payload::F64(shape, _) => (0, shape.iter().map(|&d| d as u64).collect()),
            Payload::U64(v) => (1, vec![v.len() as u64]),
            Payload::Bytes(b) => (2, vec![b.len() as u64]),
        };
        out.write_all(&[tag])?;
        out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in dims {
            out.write_all(&d.to_le_bytes())?;
        }
        match p {
            Payload::F64(_, v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()))?,
            Payload::U64(v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()))?,
            Payload::Bytes(b) => out.write_all(b)?,
        }
    }
    Ok(())
}

struct Cursor<'b> {
    buf: &'b [u8],
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], CliError> {
        if self.buf.len() < n {
            return Err(err("truncated file"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_entries(buf: &[u8]) -> Result<BTreeMap<String, Payload>, CliError> {
    let mut c = Cursor { buf };
    if c.take(4)? != MAGIC {
        return Err(err("not an AQCF checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| err("entry name is not utf8"))?;
        let tag = c.take(1)?[0];
        let ndim = c.u32()? as usize;
        let dims = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = dims.iter().product::<usize>();
        let p = match tag {
            0 => Payload::F64(
                dims,
                (0..numel)
                    .map(|_| c.u64().map(f64::from_bits))
                    .collect::<Result<_, _>>()?,
            ),
            1 => Payload::U64((0..numel).map(|_| c.u64()).collect::<Result<_, _>>()?),
            2 => Payload::Bytes(c.take(numel)?.to_vec()),
            t => return Err(err(format!("entry {name}: unknown dtype {t}"))),
        };
        if out.insert(name.clone(), p).is_some() {
            return Err(err(format!("duplicate entry {name}")));
        }
    }
    if !c.buf.is_empty() {
        return Err(err("trailing bytes after last entry"));
    }
    Ok(out)
}

fn tensor(t: &Tensor) -> Payload {
    Payload::F64(t.shape().to_vec(), t.data().to_vec())
}

/// Serializes a run to bytes.
pub fn encode(config: &RunConfig, vocab: &Vocab, state: &TrainState) -> Result<Vec<u8>, CliError> {
    let mut entries = vec![
        ("config".to_string(), Payload::Bytes(config.to_toml()?.into_bytes())),
        ("vocab".to_string(), Payload::Bytes(vocab.to_text().into_bytes())),
    ];
    for (i, e) in state.store.entries().iter().enumerate() {
        entries.push((format!("param/{}", e.name), tensor(&e.tensor)));
        entries.push((format!("adam.m/{}", e.name), tensor(&state.optimizer.m[i])));
        entries.push((format!("adam.v/{}", e.name), tensor(&state.optimizer.v[i])));
    }
    entries.push(("adam.steps".into(), Payload::U64(state.optimizer.steps.clone())));
    entries.push((
        "counters".into(),
        Payload::U64(vec![state.seed, state.step, state.epoch as u64]),
    ));
    if let Some(r) = state.prev_quantum_rms {
        entries.push(("prev_quantum_rms".into(), Payload::F64(vec![1], vec![r])));
    }
    let mut buf = Vec::new();
    write_entries(&mut buf, &entries)?;
    Ok(buf)
}

/// Writes through a temporary file and a rename, so a crash never leaves a
/// half-written checkpoint under the final name.
pub fn save(path: &Path, config: &RunConfig, vocab: &Vocab, state: &TrainState) -> Result<(), CliError> {
    let bytes = encode(config, vocab, state)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub model: Model,
    pub state: TrainState,
}

fn take_tensor(map: &mut BTreeMap<String, Payload>, key: &str, like: &Tensor) -> Result<Tensor, CliError> {
    match map.remove(key) {
        Some(Payload::F64(shape, data)) => {
            if shape != like.shape() {
                return Err(err(format!("{key}: shape {shape:?}, model expects {:?}", like.shape())));
            }
            Tensor::new(shape, data).map_err(CliError::from)
        }
        Some(_) => Err(err(format!("{key}: wrong dtype"))),
        None => Err(err(format!("missing entry {key}"))),
    }
}

fn take_bytes(map: &mut BTreeMap<String, Payload>, key: &str) -> Result<String, CliError> {
    match map.remove(key) {
        Some(Payload::Bytes(b)) => String::from_utf8(b).map_err(|_| err(format!("{key} is not utf8"))),
        _ => Err(err(format!("missing or mistyped entry {key}"))),
    }
}

fn take_u64(map: &mut BTreeMap<String, Payload>, key: &str) -> Result<Vec<u64>, CliError> {
    match map.remove(key) {
        Some(Payload::U64(v)) => Ok(v),
        _ => Err(err(format!("missing or mistyped entry {key}"))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Loaded, CliError> {
    let mut map = read_entries(bytes)?;
    let config = RunConfig::parse(&take_bytes(&mut map, "config")?)?;
    let vocab = Vocab::from_text(&take_bytes(&mut map, "vocab")?);
    if vocab.len() != config.model.vocab_size {
        return Err(err(format!(
            "vocabulary has {} tokens, config says {}",
            vocab.len(),
            config.model.vocab_size
        )));
    }
    // The architecture is rebuilt from the config; every tensor is then overwritten.
    let (model, mut store) = Model::new(&config.model, &mut aqcf_core::rng::stream(0, &[]))?;
    let mut optimizer = OptimizerState::new(&store);
    let ids: Vec<_> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let name = store.name(id).to_string();
        let t = take_tensor(&mut map, &format!("param/{name}"), store.get(id))?;
        store.set(id, t)?;
        optimizer.m[i] = take_tensor(&mut map, &format!("adam.m/{name}"), &optimizer.m[i])?;
        optimizer.v[i] = take_tensor(&mut map, &format!("adam.v/{name}"), &optimizer.v[i])?;
    }
    optimizer.steps = take_u64(&mut map, "adam.steps")?;
    if optimizer.steps.len() != store.len() {
        return Err(err("adam.steps length does not match the parameter count"));
    }
    let counters = take_u64(&mut map, "counters")?;
    let [seed, step, epoch] = counters[..] else {
        return Err(err("counters must hold seed, step and epoch"));
    };
    let prev_quantum_rms = match map.remove("prev_quantum_rms") {
        Some(Payload::F64(_, v)) if v.len() == 1 => Some(v[0]),
        None => None,
        Some(_) => return Err(err("prev_quantum_rms: wrong dtype")),
    };
    if let Some(extra) = map.keys().next() {
        return Err(err(format!("unexpected entry {extra}; checkpoint does not match this model")));
    }
    Ok(Loaded {
        config,
        vocab,
        model,
        state: TrainState {
            store,
            optimizer,
            seed,
            step,
            epoch: epoch as usize,
            prev_quantum_rms,
        },
    })
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| err(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    decode(&bytes).map_err(|e| err(format!("{}: {e}", path.display())))
}

/// Parameter store only, for callers that already hold the architecture.
pub fn params_equal(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.entries().iter().zip(b.entries()).all(|(x, y)| {
            x.name == y.name
                && x.tensor.shape() == y.tensor.shape()
                && x.tensor.data().iter().zip(y.tensor.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> (RunConfig, Vocab) {
        let vocab = Vocab::build(["a a b b c c"], 2);
        let mut cfg = RunConfig::default();
        cfg.model.vocab_size = vocab.len();
        cfg.model.d_model = 8;
        cfg.model.n_heads = 2;
        cfg.model.n_layers = 1;
        cfg.model.n_qubits = 3;
        cfg.model.l_max = 2;
        cfg.model.memory_slots = 2;
        cfg.model.max_seq_len = 8;
        (cfg, vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, vocab) = micro();
        let (_, store) = Model::new(&cfg.model, &mut aqcf_core::rng::stream(5, &[])).unwrap();
        let mut state = TrainState::new(store, 5);
        state.step = 17;
        state.epoch = 2;
        state.prev_quantum_rms = Some(0.125);
        state.optimizer.m[0].data_mut()[0] = 1.0 / 3.0;
        state.optimizer.steps[1] = 4;
        let bytes = encode(&cfg, &vocab, &state).unwrap();
        let back = decode(&bytes).unwrap();
        assert!(params_equal(&back.state.store, &state.store));
        assert_eq!(back.state.optimizer, state.optimizer);
        assert_eq!((back.state.step, back.state.epoch, back.state.seed), (17, 2, 5));
        assert_eq!(back.state.prev_quantum_rms, Some(0.125));
        assert_eq!(back.vocab, vocab);
        assert_eq!(back.config, cfg);
        assert_eq!(encode(&back.config, &back.vocab, &back.state).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let (cfg, vocab) = micro();
        let (_, store) = Model::new(&cfg.model, &mut aqcf_core::rng::stream(5, &[])).unwrap();
        let bytes = encode(&cfg, &vocab, &TrainState::new(store, 5)).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(decode(&bad).unwrap_err().to_string().contains("version"));
    }
}
