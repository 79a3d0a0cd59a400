//! Printable string carving, in the manner of Sysinternals `strings`.
//!
//! Two encodings are recognised:
//!
//! * ASCII: runs of bytes in `0x20..=0x7E` plus tab.
//! * UTF-16LE: runs of code units whose low byte is printable ASCII and whose
//!   high byte is zero. Both byte parities are scanned since process memory
//!   carries no alignment guarantee.
//!
//! [`Carver`] is a streaming state machine, so dumps larger than memory can
//! be fed in chunks and still produce exactly the output of a single pass.

use std::fmt;
use std::io::{self, Read};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::MemoryImage;

pub const DEFAULT_MIN_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Ascii,
    Utf16le,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Ascii => "ascii",
            Encoding::Utf16le => "utf16le",
        })
    }
}

/// Which encodings a carve pass looks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncodingFilter {
    Ascii,
    Utf16,
    #[default]
    Both,
}

impl EncodingFilter {
    fn ascii(self) -> bool {
        matches!(self, Self::Ascii | Self::Both)
    }

    fn utf16(self) -> bool {
        matches!(self, Self::Utf16 | Self::Both)
    }
}

impl FromStr for EncodingFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ascii" => Ok(Self::Ascii),
            "utf16" | "utf16le" | "unicode" => Ok(Self::Utf16),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown encoding {other:?} (expected ascii, utf16 or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedString {
    pub text: String,
    /// Offset of the first byte of the run in the image.
    pub offset: usize,
    pub encoding: Encoding,
    pub byte_len: usize,
}

#[inline]
pub fn is_printable(b: u8) -> bool {
    b == b'\t' || (0x20..=0x7e).contains(&b)
}

#[derive(Default)]
struct Run {
    start: usize,
    text: Vec<u8>,
}

/// Incremental carver. Feed bytes in order, then call [`Carver::finish`].
pub struct Carver {
    min_len: usize,
    filter: EncodingFilter,
    pos: usize,
    prev: Option<u8>,
    ascii: Option<Run>,
    // indexed by the parity of the code unit's first byte
    wide: [Option<Run>; 2],
    out: Vec<ExtractedString>,
}

impl Carver {
    /// `min_len` is in characters; zero is treated as one.
    pub fn new(min_len: usize, filter: EncodingFilter) -> Self {
        Self {
            min_len: min_len.max(1),
            filter,
            pos: 0,
            prev: None,
            ascii: None,
            wide: [None, None],
            out: Vec::new(),
        }
    }

    pub fn feed(&mut self, chunk: &[u8]) {
        for &b in chunk {
            if self.filter.ascii() {
                if is_printable(b) {
                    self.ascii
                        .get_or_insert_with(|| Run {
                            start: self.pos,
                            text: Vec::new(),
                        })
                        .text
                        .push(b);
                } else if let Some(run) = self.ascii.take() {
                    self.emit(run, Encoding::Ascii);
                }
            }
            if self.filter.utf16() {
                if let Some(lo) = self.prev {
                    let unit_start = self.pos - 1;
                    let slot = unit_start & 1;
                    if b == 0 && is_printable(lo) {
                        self.wide[slot]
                            .get_or_insert_with(|| Run {
                                start: unit_start,
                                text: Vec::new(),
                            })
                            .text
                            .push(lo);
                    } else if let Some(run) = self.wide[slot].take() {
                        self.emit(run, Encoding::Utf16le);
                    }
                }
                self.prev = Some(b);
            }
            self.pos += 1;
        }
    }

    fn emit(&mut self, run: Run, encoding: Encoding) {
        if run.text.len() < self.min_len {
            return;
        }
        let chars = run.text.len();
        let byte_len = match encoding {
            Encoding::Ascii => chars,
            Encoding::Utf16le => 2 * chars,
        };
        // printable bytes are all ASCII
        let text = String::from_utf8(run.text).expect("printable run is ASCII");
        self.out.push(ExtractedString {
            text,
            offset: run.start,
            encoding,
            byte_len,
        });
    }

    /// Closes open runs and returns every string sorted by offset (ASCII
    /// before UTF-16LE on ties).
    pub fn finish(mut self) -> Vec<ExtractedString> {
        if let Some(run) = self.ascii.take() {
            self.emit(run, Encoding::Ascii);
        }
        for slot in 0..2 {
            if let Some(run) = self.wide[slot].take() {
                self.emit(run, Encoding::Utf16le);
            }
        }
        let mut out = std::mem::take(&mut self.out);
        out.sort_by_key(|s| (s.offset, s.encoding));
        out
    }
}

/// Every maximal printable run of at least `min_len` characters in either
/// encoding, sorted by offset.
pub fn carve(image: &MemoryImage, min_len: usize) -> Vec<ExtractedString> {
    carve_bytes(image.data(), min_len, EncodingFilter::Both)
}

pub fn carve_bytes(data: &[u8], min_len: usize, filter: EncodingFilter) -> Vec<ExtractedString> {
    let mut carver = Carver::new(min_len, filter);
    carver.feed(data);
    carver.finish()
}

/// Streams `reader` through the carver in fixed-size chunks.
pub fn carve_reader<R: Read>(
    mut reader: R,
    min_len: usize,
    filter: EncodingFilter,
) -> io::Result<Vec<ExtractedString>> {
    let mut carver = Carver::new(min_len, filter);
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        carver.feed(&buf[..n]);
    }
    Ok(carver.finish())
}

/// One string per line, newline-terminated, in input order.
pub fn render_text(strings: &[ExtractedString]) -> String {
    let cap = strings.iter().map(|s| s.text.len() + 1).sum();
    let mut out = String::with_capacity(cap);
    for s in strings {
        out.push_str(&s.text);
        out.push('\n');
    }
    out
}
