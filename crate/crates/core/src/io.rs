//! Binary container used for datasets and checkpoints.
//!
//! Layout: header `{ magic "LVLA", format version u32 LE, record count u64 LE }`
//! followed by `record count` length-prefixed records (u64 LE byte length,
//! then payload). Inside payloads, tensors are little-endian f32 with an
//! explicit shape prefix (u32 rank, u64 per dimension) and strings are
//! length-prefixed UTF-8 (u64 byte length).

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"LVLA";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes one record payload.
#[derive(Default)]
pub struct RecordWriter {
    buf: Vec<u8>,
}

impl RecordWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_string(&mut self, s: &str) {
        self.put_u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn put_tensor(&mut self, shape: &[usize], data: &[f32]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.put_u32(shape.len() as u32);
        for &d in shape {
            self.put_u64(d as u64);
        }
        for &x in data {
            self.put_f32(x);
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Deserializes one record payload with bounds checking.
pub struct RecordReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> RecordReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        RecordReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "record truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_string(&mut self) -> Result<String> {
        let n = self.get_u64()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Format(format!("bad utf-8: {e}")))
    }

    pub fn get_tensor(&mut self) -> Result<(Vec<usize>, Vec<f32>)> {
        let rank = self.get_u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.get_u64()? as usize);
        }
        let n: usize = shape.iter().product();
        if n > (1 << 30) {
            return Err(Error::Format(format!("implausible tensor size {n}")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.get_f32()?);
        }
        Ok((shape, data))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Streams records to a file, writing the header up front and patching the
/// record count on finish.
pub struct ContainerWriter {
    out: BufWriter<File>,
    count: u64,
}

impl ContainerWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?; // patched in finish()
        Ok(ContainerWriter { out, count: 0 })
    }

    pub fn write_record(&mut self, payload: &[u8]) -> Result<()> {
        self.out.write_all(&(payload.len() as u64).to_le_bytes())?;
        self.out.write_all(payload)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        use std::io::Seek;
        self.out.flush()?;
        let mut file = self.out.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        file.seek(std::io::SeekFrom::Start(8))?;
        file.write_all(&self.count.to_le_bytes())?;
        file.flush()?;
        Ok(self.count)
    }
}

/// Reads a whole container into memory and hands out record slices.
pub struct Container {
    bytes: Vec<u8>,
    /// (offset, len) per record.
    index: Vec<(usize, usize)>,
}

impl Container {
    pub fn open(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("file shorter than header".into()));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let mut index = Vec::new();
        let mut pos = 16usize;
        while pos < bytes.len() {
            if pos + 8 > bytes.len() {
                return Err(Error::Format("truncated record length".into()));
            }
            let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
            pos += 8;
            if pos + len > bytes.len() {
                return Err(Error::Format(format!(
                    "truncated record body: wanted {len} bytes, have {}",
                    bytes.len() - pos
                )));
            }
            index.push((pos, len));
            pos += len;
        }
        if index.len() as u64 != declared {
            return Err(Error::Format(format!(
                "header declares {declared} records, body holds {}",
                index.len()
            )));
        }
        Ok(Container { bytes, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn record(&self, i: usize) -> RecordReader<'_> {
        let (off, len) = self.index[i];
        RecordReader::new(&self.bytes[off..off + len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("lvla_io_{}_{}", std::process::id(), name));
        p
    }

    #[test]
    fn roundtrip_records() {
        let path = tmp("roundtrip.bin");
        let mut w = ContainerWriter::create(&path).unwrap();
        let mut r1 = RecordWriter::new();
        r1.put_string("hello");
        r1.put_tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        w.write_record(&r1.into_bytes()).unwrap();
        let mut r2 = RecordWriter::new();
        r2.put_u64(42);
        w.write_record(&r2.into_bytes()).unwrap();
        assert_eq!(w.finish().unwrap(), 2);

        let c = Container::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        let mut rr = c.record(0);
        assert_eq!(rr.get_string().unwrap(), "hello");
        let (shape, data) = rr.get_tensor().unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert_eq!(data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.record(1).get_u64().unwrap(), 42);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupted_magic_rejected() {
        let path = tmp("magic.bin");
        {
            let w = ContainerWriter::create(&path).unwrap();
            w.finish().unwrap();
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let res = Container::from_bytes(bytes);
        match res.err() {
            Some(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncation_detected_anywhere() {
        let path = tmp("trunc.bin");
        {
            let mut w = ContainerWriter::create(&path).unwrap();
            let mut r = RecordWriter::new();
            r.put_tensor(&[4], &[1.0, 2.0, 3.0, 4.0]);
            w.write_record(&r.into_bytes()).unwrap();
            w.finish().unwrap();
        }
        let bytes = std::fs::read(&path).unwrap();
        // Every strict prefix must be rejected, not crash.
        for cut in 0..bytes.len() {
            assert!(
                Container::from_bytes(bytes[..cut].to_vec()).is_err(),
                "prefix of {cut} bytes accepted"
            );
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn record_count_mismatch_rejected() {
        let path = tmp("count.bin");
        {
            let mut w = ContainerWriter::create(&path).unwrap();
            w.write_record(&[1, 2, 3]).unwrap();
            w.finish().unwrap();
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 5; // claim 5 records
        assert!(Container::from_bytes(bytes).is_err());
        std::fs::remove_file(&path).ok();
    }
}
