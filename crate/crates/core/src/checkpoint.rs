//! Binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, then tagged sections
//! (`[u8; 4]` tag, `u64` byte length, payload), and a trailing FNV-1a hash
//! of everything before it. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::adam::AdamState;
use crate::config::TrainConfig;
use crate::density::{ClassNormalization, DensityState};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{Activation, Dense, EmbeddingNet};
use crate::train::Trainer;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DMCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const SECTIONS: [&[u8; 4]; 6] = [b"CONF", b"NETW", b"ADAM", b"DENS", b"ITER", b"RNGS"];

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn section(&mut self, tag: &[u8; 4], payload: Writer) {
        self.0.extend_from_slice(tag);
        self.u64(payload.0.len() as u64);
        self.0.extend_from_slice(&payload.0);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
            .collect())
    }
    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        let found = self.take(4)?;
        if found != tag {
            return Err(corrupt(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = self.len()?;
        Ok(Reader { bytes: self.take(len)?, pos: 0 })
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(corrupt(format!("{} unread bytes in section", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode(trainer: &Trainer) -> Vec<u8> {
    let mut out = Writer::default();
    out.0.extend_from_slice(CHECKPOINT_MAGIC);
    out.u32(CHECKPOINT_VERSION);

    let mut conf = Writer::default();
    conf.0.extend_from_slice(trainer.config.to_kv().as_bytes());
    out.section(SECTIONS[0], conf);

    let mut net = Writer::default();
    net.u32(trainer.net.layers().len() as u32);
    for layer in trainer.net.layers() {
        net.u64(layer.out_dim() as u64);
        net.u64(layer.in_dim() as u64);
        net.u8(match layer.activation {
            Activation::Relu => 1,
            Activation::None => 0,
        });
        net.f64s(layer.weights.as_slice());
        net.f64s(&layer.bias);
    }
    out.section(SECTIONS[1], net);

    let a = &trainer.adam;
    let mut adam = Writer::default();
    adam.u64(a.t);
    for v in [a.beta1, a.beta2, a.eps, a.lr] {
        adam.f64(v);
    }
    adam.u32(a.m.len() as u32);
    for (m, v) in a.m.iter().zip(&a.v) {
        adam.f64s(m);
        adam.f64s(v);
    }
    out.section(SECTIONS[2], adam);

    let d = &trainer.density;
    let mut dens = Writer::default();
    for v in [d.eta, d.lambda, d.penalty_weight] {
        dens.f64(v);
    }
    dens.u8(match d.normalization {
        ClassNormalization::Batch => 0,
        ClassNormalization::Global => 1,
    });
    dens.f64s(&d.alphas);
    dens.f64s(&d.d0);
    out.section(SECTIONS[3], dens);

    let mut iter = Writer::default();
    iter.u64(trainer.iteration);
    out.section(SECTIONS[4], iter);

    let mut rng = Writer::default();
    rng.0.extend_from_slice(&trainer.rng.get_seed());
    rng.u64(trainer.rng.get_stream());
    rng.0.extend_from_slice(&trainer.rng.get_word_pos().to_le_bytes());
    out.section(SECTIONS[5], rng);

    let hash = fnv1a(&out.0);
    out.u64(hash);
    out.0
}

pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 8 || !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(corrupt("missing checkpoint header"));
    }
    let mut r = Reader { bytes, pos: CHECKPOINT_MAGIC.len() };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8"));
    if fnv1a(&bytes[..body_end]) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader { bytes: &bytes[..body_end], pos: r.pos };

    let conf = r.section(SECTIONS[0])?;
    let text = std::str::from_utf8(conf.bytes).map_err(|_| corrupt("config is not UTF-8"))?;
    let config = TrainConfig::from_kv(text).map_err(|e| corrupt(format!("config: {e}")))?;

    let mut s = r.section(SECTIONS[1])?;
    let n_layers = s.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let out_dim = s.len()?;
        let in_dim = s.len()?;
        let activation = match s.u8()? {
            0 => Activation::None,
            1 => Activation::Relu,
            other => return Err(corrupt(format!("unknown activation tag {other}"))),
        };
        let weights = Matrix::from_vec(out_dim, in_dim, s.f64s()?).map_err(|e| corrupt(e.to_string()))?;
        let bias = s.f64s()?;
        layers.push(Dense { weights, bias, activation });
    }
    s.finish()?;
    let net = EmbeddingNet::from_layers(layers).map_err(|e| corrupt(e.to_string()))?;

    let mut s = r.section(SECTIONS[2])?;
    let t = s.u64()?;
    let (beta1, beta2, eps, lr) = (s.f64()?, s.f64()?, s.f64()?, s.f64()?);
    let n_tensors = s.u32()? as usize;
    let mut m = Vec::with_capacity(n_tensors.min(1024));
    let mut v = Vec::with_capacity(n_tensors.min(1024));
    for _ in 0..n_tensors {
        m.push(s.f64s()?);
        v.push(s.f64s()?);
    }
    s.finish()?;
    let adam = AdamState { t, beta1, beta2, eps, lr, m, v };

    let mut s = r.section(SECTIONS[3])?;
    let (eta, lambda, penalty_weight) = (s.f64()?, s.f64()?, s.f64()?);
    let normalization = match s.u8()? {
        0 => ClassNormalization::Batch,
        1 => ClassNormalization::Global,
        other => return Err(corrupt(format!("unknown normalization tag {other}"))),
    };
    let alphas = s.f64s()?;
    let d0 = s.f64s()?;
    s.finish()?;
    let density = DensityState { alphas, d0, eta, lambda, penalty_weight, normalization };
    density.validate().map_err(|e| corrupt(e.to_string()))?;

    let mut s = r.section(SECTIONS[4])?;
    let iteration = s.u64()?;
    s.finish()?;

    let mut s = r.section(SECTIONS[5])?;
    let seed: [u8; 32] = s.take(32)?.try_into().expect("32");
    let stream = s.u64()?;
    let word_pos = u128::from_le_bytes(s.take(16)?.try_into().expect("16"));
    s.finish()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    if r.pos != r.bytes.len() {
        return Err(corrupt("trailing bytes after last section"));
    }

    let mut expected: Vec<usize> = net.param_slices().iter().map(|p| p.len()).collect();
    expected.push(density.num_classes());
    if adam.tensor_sizes() != expected || adam.v.iter().map(Vec::len).ne(expected.iter().copied()) {
        return Err(corrupt("optimizer state does not match parameter shapes"));
    }
    if net.out_dim() != config.embedding_dim {
        return Err(corrupt("network output width disagrees with config"));
    }

    Ok(Trainer { config, net, density, adam, rng, iteration })
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    fs::write(path, encode(trainer))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    decode(&fs::read(path)?)
}
