//! Binary weight file.
//!
//! ```text
//! "CQOE"                     magic, 4 bytes
//! u32 LE                     format version
//! u8                         mode (0 = nr, 1 = fr)
//! u32 LE + bytes             config as UTF-8 key=value lines
//! u32 LE                     parameter count
//! per parameter:
//!   u32 LE + bytes           UTF-8 name
//!   u32 LE                   rank
//!   rank × u32 LE            dimensions
//!   numel × f32 LE           values
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Mode, ModelConfig, ModelError, QualityModel};
use crate::diffcore::Tensor;
use crate::qoptim::ParamMap;

pub const MAGIC: [u8; 4] = *b"CQOE";
pub const FORMAT_VERSION: u32 = 1;

fn mode_byte(mode: Mode) -> u8 {
    match mode {
        Mode::Nr => 0,
        Mode::Fr => 1,
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serialises a model to bytes.
pub fn write_weights(model: &QualityModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(mode_byte(model.mode()));
    let text = model.config().to_text();
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, model.params().len());
    for (name, t) in model.params() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(model: &QualityModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&write_weights(model))?;
    f.sync_all()?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).ok_or(ModelError::Truncated(what))?;
        let bytes = self.buf.get(self.pos..end).ok_or(ModelError::Truncated(what))?;
        self.pos = end;
        Ok(bytes)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ModelError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, what: &'static str) -> Result<String, ModelError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ModelError::Inconsistent(format!("{what} is not UTF-8")))
    }
}

/// Parses a weight file image. Nothing is returned unless every check passes.
pub fn read_weights(bytes: &[u8]) -> Result<QualityModel, ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mode = match r.take(1, "mode")?[0] {
        0 => Mode::Nr,
        1 => Mode::Fr,
        b => return Err(ModelError::Inconsistent(format!("unknown mode byte {b}"))),
    };
    let config = ModelConfig::from_text(&r.utf8("config")?)
        .map_err(|e| ModelError::Inconsistent(e.to_string()))?;
    if config.mode != mode {
        return Err(ModelError::Inconsistent(format!(
            "mode byte says {mode}, config says {}",
            config.mode
        )));
    }
    let count = r.u32("parameter count")? as usize;
    let mut params = ParamMap::new();
    for _ in 0..count {
        let name = r.utf8("parameter name")?;
        let rank = r.u32("parameter rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("parameter dims")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(ModelError::Truncated("parameter values"))?;
        let raw = r.take(numel.checked_mul(4).ok_or(ModelError::Truncated("parameter values"))?, "parameter values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| ModelError::Inconsistent(format!("`{name}`: {e}")))?;
        if params.insert(name.clone(), t).is_some() {
            return Err(ModelError::Inconsistent(format!("duplicate parameter `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Inconsistent(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut model = QualityModel::build(config, 0)?;
    model.set_params(params)?;
    Ok(model)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<QualityModel, ModelError> {
    read_weights(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> QualityModel {
        QualityModel::build(ModelConfig::micro(Mode::Nr), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cqoe");
        save_weights(&m, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.config(), m.config());
        for (name, t) in m.params() {
            let b = &back.params()[name];
            assert_eq!(t.shape(), b.shape());
            assert!(t.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = write_weights(&model());
        assert_eq!(&bytes[..4], b"CQOE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(bytes[8], 0);
    }

    #[test]
    fn distinct_errors() {
        let bytes = write_weights(&model());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_weights(&bad), Err(ModelError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_weights(&bad), Err(ModelError::VersionMismatch { found: 9, .. })));

        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_weights(&bytes[..cut]), Err(ModelError::Truncated(_))), "cut {cut}");
        }

        let mut bad = bytes.clone();
        bad[8] = 1;
        assert!(matches!(read_weights(&bad), Err(ModelError::Inconsistent(_))));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(read_weights(&bad), Err(ModelError::Inconsistent(_))));
    }

    #[test]
    fn renamed_parameter_is_inconsistent() {
        let mut bytes = write_weights(&model());
        let needle = b"fc1.bias";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        bytes[at..at + 3].copy_from_slice(b"fc9");
        assert!(matches!(read_weights(&bytes), Err(ModelError::Inconsistent(_))));
    }
}
