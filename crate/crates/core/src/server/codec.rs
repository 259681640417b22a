//! Length-prefixed little-endian sections: `[tag: u8][len: u64][payload]`.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(magic: &[u8; 8]) -> Self {
        Writer { buf: magic.to_vec() }
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub(crate) fn section(&mut self, tag: u8, body: impl FnOnce(&mut Section)) {
        let mut s = Section::default();
        body(&mut s);
        self.buf.push(tag);
        self.buf.extend_from_slice(&(s.0.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&s.0);
    }
}

#[derive(Default)]
pub(crate) struct Section(Vec<u8>);

impl Section {
    pub(crate) fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }

    pub(crate) fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub(crate) fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub(crate) fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        for &v in vs {
            self.f64(v);
        }
        self
    }

    pub(crate) fn u32s(&mut self, vs: &[u32]) -> &mut Self {
        for &v in vs {
            self.u32(v);
        }
        self
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..8] != magic {
            return Err(Error::Decode("bad magic".into()));
        }
        Ok(Reader { buf: &buf[8..] })
    }

    pub(crate) fn section(&mut self, tag: u8) -> Result<Cursor<'a>> {
        if self.buf.len() < 9 {
            return Err(Error::Decode(format!("missing section {tag}")));
        }
        if self.buf[0] != tag {
            return Err(Error::Decode(format!("expected section {tag}, found {}", self.buf[0])));
        }
        let len = u64::from_le_bytes(self.buf[1..9].try_into().unwrap()) as usize;
        let rest = &self.buf[9..];
        if rest.len() < len {
            return Err(Error::Decode(format!("section {tag} truncated")));
        }
        self.buf = &rest[len..];
        Ok(Cursor { buf: &rest[..len] })
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Decode("section ended early".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        (0..n).map(|_| self.u32()).collect()
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub(crate) fn end(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode("unread bytes in section".into()))
        }
    }
}
