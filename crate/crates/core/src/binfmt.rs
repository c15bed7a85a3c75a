//! Little-endian framing shared by the weight and dataset files:
//! 4-byte magic, payload, trailing CRC32 of everything before it.

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        Self {
            buf: magic.to_vec(),
        }
    }

    pub fn with_capacity(magic: &[u8; 4], capacity: usize) -> Self {
        let mut buf = Vec::with_capacity(capacity + 8);
        buf.extend_from_slice(magic);
        Self { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and checksum; the reader is positioned after the magic.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::CorruptFile(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != magic {
            return Err(Error::CorruptFile(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::CorruptFile(format!(
                "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
            )));
        }
        Ok(Self { data: body, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CorruptFile("unexpected end of payload".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(Error::CorruptFile(format!("{} trailing bytes", self.remaining())))
        }
    }
}
