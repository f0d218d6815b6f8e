//! LSB-first bit packing into 64-bit words.

/// Number of bits needed to represent `v` (0 needs 0 bits).
#[inline]
pub fn bits_for(v: u64) -> u32 {
    64 - v.leading_zeros()
}

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    words: Vec<u64>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: u64) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(64) as usize),
            len: 0,
        }
    }

    /// Appends the low `width` bits of `value`. `width` may be 0..=64.
    pub fn push(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        if width == 0 {
            return;
        }
        let v = if width == 64 { value } else { value & ((1u64 << width) - 1) };
        let off = (self.len % 64) as u32;
        if off == 0 {
            self.words.push(v);
        } else {
            *self.words.last_mut().unwrap() |= v << off;
            if off + width > 64 {
                self.words.push(v >> (64 - off));
            }
        }
        self.len += width as u64;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn finish(self) -> (Vec<u64>, u64) {
        (self.words, self.len)
    }
}

/// Reads `width`-bit values at arbitrary bit offsets of a word slice.
#[inline]
pub fn read_bits(words: &[u64], pos: u64, width: u32) -> u64 {
    debug_assert!(width <= 64);
    if width == 0 {
        return 0;
    }
    let w = (pos / 64) as usize;
    let off = (pos % 64) as u32;
    let mut v = words[w] >> off;
    if off + width > 64 {
        v |= words[w + 1] << (64 - off);
    }
    if width == 64 {
        v
    } else {
        v & ((1u64 << width) - 1)
    }
}
