//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "STCKPT01"
//! version          u32      = 1
//! input_channels   u32
//! window_len       u32
//! num_classes      u32
//! domain           u8       0 = source, 1 = target
//! conv_layers      u32
//! conv_filters     u32
//! kernel           u32
//! lstm_layers      u32
//! lstm_hidden      u32
//! tensor_count     u32
//! repeated tensor_count times:
//!   rank           u32
//!   dims           rank x u32
//!   values         prod(dims) x f32
//! ```
//!
//! Tensor order: for each conv layer `weight [F,C,K]`, `bias [F]`; for each
//! LSTM layer `w_ih [4H,I]`, `w_hh [4H,H]`, `bias [4H]`; then classifier
//! `weight [K,d]`, `bias [K]`. No bytes may follow the last tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Architecture, ClassifierParams, ConvLayer, Domain, EmbedderParams, LstmLayer, ModelError, ModelMeta, ModelParams};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on any single dimension read from a file.
const MAX_DIM: u32 = 1 << 24;

pub fn write_checkpoint<W: Write>(model: &ModelParams, mut w: W) -> Result<(), ModelError> {
    model.validate()?;
    let m = &model.meta;
    w.write_all(CHECKPOINT_MAGIC)?;
    let header = [
        CHECKPOINT_VERSION,
        m.input_channels as u32,
        m.window_len as u32,
        m.num_classes as u32,
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[match m.domain {
        Domain::Source => 0u8,
        Domain::Target => 1u8,
    }])?;
    let a = &m.arch;
    for v in [a.conv_layers, a.conv_filters, a.kernel, a.lstm_layers, a.lstm_hidden] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let tensors = model.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let file = File::create(path)?;
    write_checkpoint(model, BufWriter::new(file))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<(), ModelError> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => ModelError::Corrupt(format!("file truncated while reading {}", what)),
            _ => ModelError::Io(e),
        })
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn dim(&mut self, what: &str) -> Result<usize, ModelError> {
        let v = self.u32(what)?;
        if v > MAX_DIM {
            return Err(ModelError::Corrupt(format!("{} = {} is implausibly large", what, v)));
        }
        Ok(v as usize)
    }
}

pub fn read_checkpoint<R: Read>(inner: R) -> Result<ModelParams, ModelError> {
    let mut r = Reader { inner };
    let mut magic = [0u8; 8];
    r.exact(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Corrupt("bad magic; not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Corrupt(format!(
            "unsupported checkpoint version {} (expected {})",
            version, CHECKPOINT_VERSION
        )));
    }
    let input_channels = r.dim("input_channels")?;
    let window_len = r.dim("window_len")?;
    let num_classes = r.dim("num_classes")?;
    let mut domain = [0u8; 1];
    r.exact(&mut domain, "domain")?;
    let domain = match domain[0] {
        0 => Domain::Source,
        1 => Domain::Target,
        other => return Err(ModelError::Corrupt(format!("unknown domain tag {}", other))),
    };
    let arch = Architecture {
        conv_layers: r.dim("conv_layers")?,
        conv_filters: r.dim("conv_filters")?,
        kernel: r.dim("kernel")?,
        lstm_layers: r.dim("lstm_layers")?,
        lstm_hidden: r.dim("lstm_hidden")?,
    };
    let meta = ModelMeta {
        input_channels,
        window_len,
        num_classes,
        domain,
        arch,
    };
    arch.validate(window_len).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    let expected = ModelParams::expected_shapes(&meta);
    let count = r.u32("tensor_count")? as usize;
    if count != expected.len() {
        return Err(ModelError::Corrupt(format!(
            "{} tensors stored, architecture needs {}",
            count,
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, shape) in expected.iter().enumerate() {
        let rank = r.dim("rank")?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.dim("dimension")?);
        }
        if &dims != shape {
            return Err(ModelError::Corrupt(format!(
                "tensor {} has stored shape {:?}, meta implies {:?}",
                i, dims, shape
            )));
        }
        let n: usize = dims.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.exact(&mut buf, "tensor values")?;
        let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push(Tensor::new(dims, data).map_err(|e| ModelError::Corrupt(e.to_string()))?);
    }
    let mut extra = [0u8; 1];
    match r.inner.read(&mut extra)? {
        0 => {}
        _ => return Err(ModelError::Corrupt("trailing bytes after last tensor".into())),
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("count checked");
    let conv = (0..arch.conv_layers)
        .map(|_| ConvLayer {
            weight: next(),
            bias: next(),
        })
        .collect();
    let lstm = (0..arch.lstm_layers)
        .map(|_| LstmLayer {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        })
        .collect();
    let classifier = ClassifierParams {
        weight: next(),
        bias: next(),
    };
    let model = ModelParams {
        meta,
        embedder: EmbedderParams { conv, lstm },
        classifier,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, ModelError> {
    let file = File::open(path)?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(channels: usize) -> ModelParams {
        let meta = ModelMeta {
            input_channels: channels,
            window_len: 100,
            num_classes: 5,
            domain: Domain::Target,
            arch: Architecture {
                conv_layers: 4,
                conv_filters: 4,
                kernel: 5,
                lstm_layers: 2,
                lstm_hidden: 6,
            },
        };
        ModelParams::init(meta, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    fn bytes(m: &ModelParams) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model(9);
        let back = read_checkpoint(bytes(&m).as_slice()).unwrap();
        assert_eq!(back.meta, m.meta);
        for (a, b) in back.tensors().iter().zip(m.tensors()) {
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let buf = bytes(&model(3));
        for cut in [4, 30, buf.len() / 2, buf.len() - 1] {
            let err = read_checkpoint(&buf[..cut]).unwrap_err();
            assert!(matches!(err, ModelError::Corrupt(_)), "cut {}: {:?}", cut, err);
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = bytes(&model(3));
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(ModelError::Corrupt(_))));
        let mut buf = bytes(&model(3));
        buf[8] = 9;
        let err = read_checkpoint(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn meta_shape_disagreement_is_corrupt() {
        let mut buf = bytes(&model(3));
        // input_channels lives right after magic + version
        buf[12] = 4;
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(ModelError::Corrupt(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = bytes(&model(3));
        buf.push(0);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(ModelError::Corrupt(_))));
    }

    #[test]
    fn loaded_nine_channel_model_rejects_three_channel_window() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(9), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let window = Tensor::zeros(&[3, 100]);
        assert!(matches!(super::super::embed(&loaded, &window), Err(ModelError::InputShape { .. })));
    }
}
