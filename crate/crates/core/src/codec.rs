//! Bounds-checked cursor over an in-memory file.

use crate::error::{Error, Result};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: &'a str,
}

macro_rules! read_num {
    ($name:ident, $ty:ty, $conv:ident) => {
        pub(crate) fn $name(&mut self, what: &str) -> Result<$ty> {
            let bytes = self.take(std::mem::size_of::<$ty>(), what)?;
            Ok(<$ty>::$conv(bytes.try_into().expect("sized slice")))
        }
    };
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], context: &'a str) -> Self {
        Self { buf, pos: 0, context }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn error(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::format(self.context, offset as u64, reason)
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} available",
                    self.remaining()
                ),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    read_num!(u8, u8, from_le_bytes);
    read_num!(u16_le, u16, from_le_bytes);
    read_num!(u32_le, u32, from_le_bytes);
    read_num!(u64_le, u64, from_le_bytes);
    read_num!(i32_le, i32, from_le_bytes);
    read_num!(u32_be, u32, from_be_bytes);

    /// Reads `n` little-endian `f32` values widened to `f64`.
    pub(crate) fn f32s_le(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 4, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(
                self.pos,
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temp file and renames, so readers never see a
/// partial file.
pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
