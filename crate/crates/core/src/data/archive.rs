//! Window archive, little-endian:
//!
//! ```text
//! magic            8 bytes  "STWARC01"
//! version          u32      = 1
//! num_classes      u32      K
//! source_channels  u32
//! target_channels  u32
//! window_len       u32
//! window_count     u32
//! K class names:   u32 byte length + UTF-8 bytes each
//! window_count records:
//!   pair_id        u64
//!   subject        u32
//!   start_time     f64      seconds
//!   label          u8       255 = unlabeled
//!   source         source_channels * window_len f32, channel-major
//!   target         target_channels * window_len f32, channel-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, PairedWindow};
use crate::numerics::Tensor;

pub const ARCHIVE_MAGIC: &[u8; 8] = b"STWARC01";
pub const ARCHIVE_VERSION: u32 = 1;
/// Label byte for a window without a label.
pub const UNLABELED: u8 = 255;

const MAX_DIM: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowArchive {
    pub class_names: Vec<String>,
    pub source_channels: usize,
    pub target_channels: usize,
    pub window_len: usize,
    pub windows: Vec<PairedWindow>,
}

impl WindowArchive {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Builds an archive, checking every window against the first one's shapes.
    pub fn new(class_names: Vec<String>, windows: Vec<PairedWindow>) -> Result<Self, DataError> {
        let first = windows.first().ok_or(DataError::TooFewWindows { needed: 1, found: 0 })?;
        let (sc, len) = (first.source.shape()[0], first.source.shape()[1]);
        let tc = first.target.shape()[0];
        if class_names.len() >= UNLABELED as usize {
            return Err(DataError::Invalid(format!("{} classes do not fit a label byte", class_names.len())));
        }
        for w in &windows {
            if w.source.shape() != [sc, len] || w.target.shape() != [tc, len] {
                return Err(DataError::Invalid(format!("window {} has inconsistent shape", w.pair_id)));
            }
            if let Some(l) = w.label {
                if l >= class_names.len() {
                    return Err(DataError::Invalid(format!("window {} label {} out of range", w.pair_id, l)));
                }
            }
        }
        Ok(WindowArchive {
            class_names,
            source_channels: sc,
            target_channels: tc,
            window_len: len,
            windows,
        })
    }
}

pub fn write_archive<W: Write>(archive: &WindowArchive, mut w: W) -> Result<(), DataError> {
    w.write_all(ARCHIVE_MAGIC)?;
    for v in [
        ARCHIVE_VERSION,
        archive.class_names.len() as u32,
        archive.source_channels as u32,
        archive.target_channels as u32,
        archive.window_len as u32,
        archive.windows.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for name in &archive.class_names {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    let mut buf = Vec::new();
    for win in &archive.windows {
        buf.clear();
        buf.extend_from_slice(&win.pair_id.to_le_bytes());
        buf.extend_from_slice(&win.subject.to_le_bytes());
        buf.extend_from_slice(&win.start_time.to_le_bytes());
        buf.push(win.label.map(|l| l as u8).unwrap_or(UNLABELED));
        for v in win.source.data().iter().chain(win.target.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_archive(archive: &WindowArchive, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_archive(archive, BufWriter::new(File::create(path)?))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DataError::Corrupt(format!("truncated while reading {}", what)),
        _ => DataError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_dim<R: Read>(r: &mut R, what: &str) -> Result<usize, DataError> {
    let v = read_u32(r, what)?;
    if v > MAX_DIM {
        return Err(DataError::Corrupt(format!("{} = {} is implausibly large", what, v)));
    }
    Ok(v as usize)
}

fn read_floats<R: Read>(r: &mut R, n: usize, buf: &mut Vec<u8>) -> Result<Vec<f32>, DataError> {
    buf.resize(n * 4, 0);
    read_exact(r, buf, "window samples")?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

pub fn read_archive<R: Read>(mut r: R) -> Result<WindowArchive, DataError> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != ARCHIVE_MAGIC {
        return Err(DataError::Corrupt("bad magic; not a window archive".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != ARCHIVE_VERSION {
        return Err(DataError::Corrupt(format!("unsupported archive version {}", version)));
    }
    let k = read_dim(&mut r, "num_classes")?;
    let sc = read_dim(&mut r, "source_channels")?;
    let tc = read_dim(&mut r, "target_channels")?;
    let len = read_dim(&mut r, "window_len")?;
    let count = read_dim(&mut r, "window_count")?;
    let mut class_names = Vec::with_capacity(k);
    for _ in 0..k {
        let n = read_dim(&mut r, "class name length")?;
        let mut b = vec![0u8; n];
        read_exact(&mut r, &mut b, "class name")?;
        class_names.push(String::from_utf8(b).map_err(|_| DataError::Corrupt("class name is not UTF-8".into()))?);
    }
    let mut windows = Vec::with_capacity(count);
    let mut buf = Vec::new();
    for _ in 0..count {
        let mut head = [0u8; 21];
        read_exact(&mut r, &mut head, "window header")?;
        let pair_id = u64::from_le_bytes(head[0..8].try_into().expect("8 bytes"));
        let subject = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
        let start_time = f64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
        let label = match head[20] {
            UNLABELED => None,
            l if (l as usize) < k => Some(l as usize),
            l => return Err(DataError::Corrupt(format!("label {} out of range for {} classes", l, k))),
        };
        let corrupt = |e: crate::numerics::NumericsError| DataError::Corrupt(e.to_string());
        let source = Tensor::new(vec![sc, len], read_floats(&mut r, sc * len, &mut buf)?).map_err(corrupt)?;
        let target = Tensor::new(vec![tc, len], read_floats(&mut r, tc * len, &mut buf)?).map_err(corrupt)?;
        windows.push(PairedWindow {
            pair_id,
            subject,
            start_time,
            source,
            target,
            label,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(DataError::Corrupt("trailing bytes after last window".into()));
    }
    Ok(WindowArchive {
        class_names,
        source_channels: sc,
        target_channels: tc,
        window_len: len,
        windows,
    })
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<WindowArchive, DataError> {
    read_archive(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_paired_dataset, SynthConfig};
    use proptest::prelude::*;

    fn archive(per_class: usize, seed: u64) -> WindowArchive {
        let config = SynthConfig {
            windows_per_class: per_class,
            source_channels: 4,
            target_channels: 2,
            ..SynthConfig::default()
        };
        let mut windows = synth_paired_dataset(&config, seed).windows;
        windows[0].label = None;
        WindowArchive::new(crate::data::FiveClass::names(), windows).unwrap()
    }

    fn bytes(a: &WindowArchive) -> Vec<u8> {
        let mut buf = Vec::new();
        write_archive(a, &mut buf).unwrap();
        buf
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_bit_exact(per_class in 1usize..4, seed in any::<u64>()) {
            let a = archive(per_class, seed);
            let encoded = bytes(&a);
            let back = read_archive(encoded.as_slice()).unwrap();
            prop_assert_eq!(&back.class_names, &a.class_names);
            prop_assert_eq!(back.windows.len(), a.windows.len());
            for (x, y) in back.windows.iter().zip(&a.windows) {
                prop_assert!(x.source.bit_eq(&y.source) && x.target.bit_eq(&y.target));
                prop_assert_eq!(x.label, y.label);
                prop_assert_eq!(x.pair_id, y.pair_id);
                prop_assert_eq!(x.start_time.to_bits(), y.start_time.to_bits());
            }
            prop_assert_eq!(bytes(&back), encoded);
        }
    }

    #[test]
    fn truncation_detected() {
        let buf = bytes(&archive(1, 0));
        for cut in [3, 20, buf.len() - 1] {
            assert!(matches!(read_archive(&buf[..cut]), Err(DataError::Corrupt(_))), "cut {}", cut);
        }
    }

    #[test]
    fn header_layout() {
        let buf = bytes(&archive(1, 0));
        assert_eq!(&buf[..8], ARCHIVE_MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[24..28].try_into().unwrap()), 100);
        assert_eq!(u32::from_le_bytes(buf[28..32].try_into().unwrap()), 5);
    }
}
