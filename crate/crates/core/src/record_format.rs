//! TFRecord framing and the keyed-example payload layout used by shard files.
//!
//! Each frame is laid out as
//!
//! ```text
//! u64 length            (little endian)
//! u32 masked_crc(length bytes)
//! u8  data[length]
//! u32 masked_crc(data)
//! ```
//!
//! and the data of every frame in a shard is a keyed example:
//! `[u32 key_len][key][payload]`.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

const CRC_MASK_DELTA: u32 = 0xa282_ead8;

pub const LENGTH_FIELD_LEN: usize = 8;
pub const HEADER_LEN: usize = LENGTH_FIELD_LEN + 4;
pub const FOOTER_LEN: usize = 4;
/// Bytes a frame adds around its data.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + FOOTER_LEN;

/// Largest record data accepted by writers and readers (1 GiB).
pub const MAX_RECORD_LEN: u64 = 1 << 30;

/// Applies the TFRecord/LevelDB masking permutation to a raw CRC-32C value.
pub fn mask_crc32c(crc: u32) -> u32 {
    crc.rotate_right(15).wrapping_add(CRC_MASK_DELTA)
}

/// Inverse of [`mask_crc32c`].
pub fn unmask_crc32c(masked: u32) -> u32 {
    masked.wrapping_sub(CRC_MASK_DELTA).rotate_left(15)
}

/// Masked CRC-32C (Castagnoli) of `data`.
pub fn masked_crc(data: &[u8]) -> u32 {
    mask_crc32c(crc32c::crc32c(data))
}

fn header_for(len: u64) -> [u8; HEADER_LEN] {
    let mut header = [0u8; HEADER_LEN];
    let len_bytes = len.to_le_bytes();
    header[..LENGTH_FIELD_LEN].copy_from_slice(&len_bytes);
    header[LENGTH_FIELD_LEN..].copy_from_slice(&masked_crc(&len_bytes).to_le_bytes());
    header
}

/// Frames `data` as a single TFRecord.
pub fn frame_record(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() + FRAME_OVERHEAD);
    out.extend_from_slice(&header_for(data.len() as u64));
    out.extend_from_slice(data);
    out.extend_from_slice(&masked_crc(data).to_le_bytes());
    out
}

/// Validates a frame header and returns the data length it announces.
///
/// `offset` is the position of the frame in its stream and is only used for
/// error reporting.
pub fn parse_header(header: &[u8; HEADER_LEN], offset: u64) -> Result<u64> {
    let mut len_bytes = [0u8; LENGTH_FIELD_LEN];
    len_bytes.copy_from_slice(&header[..LENGTH_FIELD_LEN]);
    let mut crc_bytes = [0u8; 4];
    crc_bytes.copy_from_slice(&header[LENGTH_FIELD_LEN..]);
    if masked_crc(&len_bytes) != u32::from_le_bytes(crc_bytes) {
        return Err(Error::ChecksumMismatch {
            offset,
            what: "length",
        });
    }
    let len = u64::from_le_bytes(len_bytes);
    if len > MAX_RECORD_LEN {
        return Err(Error::RecordTooLarge {
            len,
            max: MAX_RECORD_LEN,
        });
    }
    Ok(len)
}

/// Appends framed records to an underlying writer.
pub struct RecordWriter<W> {
    inner: W,
    position: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W) -> Self {
        RecordWriter { inner, position: 0 }
    }

    /// Writes one record and returns the byte offset its frame starts at.
    pub fn write_record(&mut self, data: &[u8]) -> Result<u64> {
        let len = data.len() as u64;
        if len > MAX_RECORD_LEN {
            return Err(Error::RecordTooLarge {
                len,
                max: MAX_RECORD_LEN,
            });
        }
        let offset = self.position;
        self.inner.write_all(&header_for(len))?;
        self.inner.write_all(data)?;
        self.inner.write_all(&masked_crc(data).to_le_bytes())?;
        self.position += len + FRAME_OVERHEAD as u64;
        Ok(offset)
    }

    /// Bytes written so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Reads as many bytes as are available up to `buf.len()`; returns the count.
pub(crate) fn read_fully<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Incremental reader over a concatenation of frames.
///
/// Memory use is bounded by the largest record: the data buffer is reused
/// between calls to [`RecordReader::read_record`].
pub struct RecordReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        Self::with_offset(inner, 0)
    }

    /// Reader whose reported offsets start at `offset` (for readers positioned
    /// mid-file).
    pub fn with_offset(inner: R, offset: u64) -> Self {
        RecordReader { inner, offset }
    }

    /// Offset of the next frame.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Reads the next record into `buf`, replacing its contents. Returns
    /// `Ok(false)` on a clean end of stream.
    pub fn read_record(&mut self, buf: &mut Vec<u8>) -> Result<bool> {
        let start = self.offset;
        let mut header = [0u8; HEADER_LEN];
        let got = read_fully(&mut self.inner, &mut header)?;
        if got == 0 {
            return Ok(false);
        }
        if got < HEADER_LEN {
            return Err(Error::TruncatedFrame { offset: start });
        }
        let len = parse_header(&header, start)? as usize;
        buf.clear();
        buf.resize(len, 0);
        if read_fully(&mut self.inner, buf)? < len {
            return Err(Error::TruncatedFrame { offset: start });
        }
        let mut footer = [0u8; FOOTER_LEN];
        if read_fully(&mut self.inner, &mut footer)? < FOOTER_LEN {
            return Err(Error::TruncatedFrame { offset: start });
        }
        if masked_crc(buf) != u32::from_le_bytes(footer) {
            return Err(Error::ChecksumMismatch {
                offset: start,
                what: "data",
            });
        }
        self.offset = start + (len + FRAME_OVERHEAD) as u64;
        Ok(true)
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}

/// Iterator form of [`RecordReader`]; stops after the first error.
pub struct Unframe<R> {
    reader: RecordReader<R>,
    failed: bool,
}

impl<R: Read> Iterator for Unframe<R> {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let mut buf = Vec::new();
        match self.reader.read_record(&mut buf) {
            Ok(true) => Some(Ok(buf)),
            Ok(false) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Yields the data of each frame in `reader`, in order.
pub fn unframe_stream<R: Read>(reader: R) -> Unframe<R> {
    Unframe {
        reader: RecordReader::new(reader),
        failed: false,
    }
}

/// A group key plus an opaque serialized example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyedExample {
    pub key: Vec<u8>,
    pub payload: Vec<u8>,
}

/// Encodes `(key, payload)` as `[u32 key_len LE][key][payload]`.
pub fn encode_keyed_example(key: &[u8], payload: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + key.len() + payload.len());
    encode_keyed_example_into(key, payload, &mut out)?;
    Ok(out)
}

pub(crate) fn encode_keyed_example_into(key: &[u8], payload: &[u8], out: &mut Vec<u8>) -> Result<()> {
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    let key_len = u32::try_from(key.len())
        .map_err(|_| Error::MalformedRecord(format!("key of {} bytes is too long", key.len())))?;
    out.extend_from_slice(&key_len.to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(payload);
    Ok(())
}

/// Splits an encoded keyed example into borrowed `(key, payload)` slices.
pub fn split_keyed_example(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < 5 {
        return Err(Error::MalformedRecord(format!(
            "{} bytes is shorter than the 5-byte minimum",
            bytes.len()
        )));
    }
    let key_len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let rest = &bytes[4..];
    if key_len == 0 {
        return Err(Error::MalformedRecord("zero-length key".into()));
    }
    if key_len > rest.len() {
        return Err(Error::MalformedRecord(format!(
            "key length {key_len} exceeds the {} remaining bytes",
            rest.len()
        )));
    }
    Ok(rest.split_at(key_len))
}

pub fn decode_keyed_example(bytes: &[u8]) -> Result<KeyedExample> {
    let (key, payload) = split_keyed_example(bytes)?;
    Ok(KeyedExample {
        key: key.to_vec(),
        payload: payload.to_vec(),
    })
}

/// `data-<shard:05>-of-<total:05>.tfrecord`
pub fn shard_file_name(shard: usize, total: usize) -> String {
    format!("data-{shard:05}-of-{total:05}.tfrecord")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn mask_of_zero_is_the_delta() {
        assert_eq!(mask_crc32c(0), 0xa282_ead8);
        assert_eq!(unmask_crc32c(mask_crc32c(0xdead_beef)), 0xdead_beef);
    }

    #[test]
    fn known_tensorflow_checksum() {
        // Record from a TensorFlow event file.
        assert_eq!(masked_crc(b"\x1a\x11CRC test, one two"), 0x5794_d08a);
        // RFC 3720 B.4: 32 zero bytes.
        assert_eq!(masked_crc(&[0u8; 32]), mask_crc32c(0x8a91_36aa));
    }

    #[test]
    fn frame_sizes() {
        let empty = frame_record(b"");
        assert_eq!(empty.len(), 16);
        assert_eq!(&empty[..8], &[0u8; 8]);
        assert_eq!(frame_record(b"x").len(), 17);
    }

    #[test]
    fn unframe_empty_and_pairs() {
        assert_eq!(unframe_stream(Cursor::new(Vec::new())).count(), 0);
        let mut bytes = frame_record(b"a");
        bytes.extend(frame_record(b"bc"));
        let got: Vec<_> = unframe_stream(Cursor::new(bytes)).map(|r| r.unwrap()).collect();
        assert_eq!(got, vec![b"a".to_vec(), b"bc".to_vec()]);
    }

    #[test]
    fn corrupt_data_names_offset() {
        let mut bytes = frame_record(b"first");
        let second = bytes.len() as u64;
        bytes.extend(frame_record(b"second"));
        bytes[second as usize + HEADER_LEN + 2] ^= 0x01;
        let results: Vec<_> = unframe_stream(Cursor::new(bytes)).collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(Error::ChecksumMismatch { offset, what }) => {
                assert_eq!(*offset, second);
                assert_eq!(*what, "data");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(results.len(), 2);
    }

    #[test]
    fn corrupt_length_is_detected() {
        let mut bytes = frame_record(b"abc");
        bytes[0] ^= 0x04;
        let err = unframe_stream(Cursor::new(bytes)).next().unwrap().unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch { what: "length", .. }));
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = frame_record(b"hello world");
        for cut in [1, HEADER_LEN - 1, HEADER_LEN, HEADER_LEN + 3, bytes.len() - 1] {
            let err = unframe_stream(Cursor::new(bytes[..cut].to_vec()))
                .next()
                .unwrap()
                .unwrap_err();
            assert!(matches!(err, Error::TruncatedFrame { offset: 0 }), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn oversized_length_is_rejected() {
        let len = MAX_RECORD_LEN + 1;
        let mut bytes = header_for(len).to_vec();
        bytes.extend_from_slice(&[0u8; 8]);
        let err = unframe_stream(Cursor::new(bytes)).next().unwrap().unwrap_err();
        assert!(matches!(err, Error::RecordTooLarge { .. }));
    }

    #[test]
    fn keyed_example_layout() {
        let bytes = encode_keyed_example(b"g1", b"hi").unwrap();
        assert_eq!(bytes, vec![0x02, 0, 0, 0, b'g', b'1', b'h', b'i']);
        let decoded = decode_keyed_example(&bytes).unwrap();
        assert_eq!(decoded.key, b"g1");
        assert_eq!(decoded.payload, b"hi");
    }

    #[test]
    fn keyed_example_errors() {
        assert!(matches!(encode_keyed_example(b"", b"x"), Err(Error::EmptyKey)));
        assert!(matches!(decode_keyed_example(&[1, 0, 0]), Err(Error::MalformedRecord(_))));
        let mut bad = 10u32.to_le_bytes().to_vec();
        bad.extend_from_slice(b"ab");
        assert_eq!(bad.len(), 6);
        assert!(matches!(decode_keyed_example(&bad), Err(Error::MalformedRecord(_))));
    }

    #[test]
    fn shard_names() {
        assert_eq!(shard_file_name(3, 8), "data-00003-of-00008.tfrecord");
    }
}
