//! Binary checkpoints.
//!
//! Layout (all integers u32 LE, all reals f64 LE):
//!
//! ```text
//! "APCT" version
//! features k classes n_enc enc.. n_dec dec..
//! n_params { name_len name layer_id ndim dims.. values.. momentum.. }
//! n_bn     { channels epsilon running_mean.. running_var.. }
//! ```

use std::path::Path;

use super::{BatchNormState, NetSpec, Network, ParamTensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"APCT";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn reals(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn real(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        // bound the allocation by what is actually left in the buffer
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        (0..n).map(|_| self.real()).collect()
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 1024 {
            return Err(Error::Checkpoint("implausible layer count".into()));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn write_checkpoint(net: &Network) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let s = net.spec();
    w.u32(s.features);
    w.u32(s.k);
    w.u32(s.classes);
    w.u32(s.encoder.len());
    s.encoder.iter().for_each(|&v| w.u32(v));
    w.u32(s.decoder.len());
    s.decoder.iter().for_each(|&v| w.u32(v));

    w.u32(net.params().len());
    for p in net.params() {
        w.u32(p.name.len());
        w.0.extend_from_slice(p.name.as_bytes());
        w.u32(p.layer_id);
        w.u32(p.shape.len());
        p.shape.iter().for_each(|&d| w.u32(d));
        w.reals(&p.values);
        w.reals(&p.momentum_buf);
    }
    w.u32(net.bn_states().len());
    for b in net.bn_states() {
        w.u32(b.channels());
        w.reals(&[b.epsilon]);
        w.reals(&b.running_mean);
        w.reals(&b.running_var);
    }
    w.0
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let features = r.u32()?;
    let k = r.u32()?;
    let classes = r.u32()?;
    let encoder = r.widths()?;
    let decoder = r.widths()?;
    let spec = NetSpec {
        features,
        encoder,
        decoder,
        k,
        classes,
    };
    spec.validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

    let n_params = r.u32()?;
    let mut params = Vec::with_capacity(n_params.min(4096));
    for _ in 0..n_params {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let layer_id = r.u32()?;
        let ndim = r.u32()?;
        if ndim > 8 {
            return Err(Error::Checkpoint("implausible tensor rank".into()));
        }
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let values = r.reals(n)?;
        let momentum_buf = r.reals(n)?;
        params.push(ParamTensor {
            layer_id,
            name,
            shape,
            values,
            grad: vec![0.0; n],
            momentum_buf,
            trainable_candidate: true,
        });
    }
    let n_bn = r.u32()?;
    let mut bn = Vec::with_capacity(n_bn.min(1024));
    for _ in 0..n_bn {
        let ch = r.u32()?;
        let epsilon = r.real()?;
        let running_mean = r.reals(ch)?;
        let running_var = r.reals(ch)?;
        bn.push(BatchNormState {
            running_mean,
            running_var,
            epsilon,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Network::from_parts(spec, params, bn)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(net))
        .map_err(|e| Error::io("writing checkpoint", path, e))
}

/// Load a checkpoint; when `expected` is given the stored spec must match it.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&NetSpec>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io("reading checkpoint", path, e))?;
    let net = read_checkpoint(&bytes)?;
    if let Some(spec) = expected {
        if net.spec() != spec {
            return Err(Error::Checkpoint(format!(
                "spec mismatch: checkpoint has {:?}, expected {:?}",
                net.spec(),
                spec
            )));
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{BnMode, NetSpec};

    fn trained_like() -> Network {
        let mut net = Network::init(
            NetSpec {
                encoder: vec![5, 4],
                decoder: vec![6],
                k: 3,
                ..NetSpec::default()
            },
            3,
        )
        .unwrap();
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            p.momentum_buf
                .iter_mut()
                .enumerate()
                .for_each(|(j, m)| *m = (i * 31 + j) as f64 * 1e-3);
        }
        for s in net.bn_states_mut() {
            s.running_mean.iter_mut().for_each(|m| *m = 0.25);
            s.running_var.iter_mut().for_each(|v| *v = 1.5);
        }
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = trained_like();
        let back = read_checkpoint(&write_checkpoint(&net)).unwrap();
        assert_eq!(back, net);
        let batch = crate::net::forward::tests::random_batch(1, 8, 1, 4);
        let (a, _) = net.forward(&batch, BnMode::RunningStats).unwrap();
        let (b, _) = back.forward(&batch, BnMode::RunningStats).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_magic_fails() {
        let mut bytes = write_checkpoint(&trained_like());
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_and_wrong_version_fail() {
        let bytes = write_checkpoint(&trained_like());
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_checkpoint(&bytes[..cut]).is_err());
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(read_checkpoint(&v2)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn spec_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = trained_like();
        save_checkpoint(&net, &path).unwrap();
        assert!(load_checkpoint(&path, Some(net.spec())).is_ok());
        let err = load_checkpoint(&path, Some(&NetSpec::default())).unwrap_err();
        assert!(err.to_string().contains("spec mismatch"));
    }
}
