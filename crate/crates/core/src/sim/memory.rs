use crate::error::{Error, Result};

/// Tracks which port-wide burst of a memory is currently latched.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BurstCache {
    port_bytes: usize,
    current: Option<usize>,
}

impl BurstCache {
    pub fn new(port_bytes: usize) -> Self {
        Self {
            port_bytes,
            current: None,
        }
    }

    /// Latches the burst holding `addr`; true if that took a new memory access.
    pub fn touch(&mut self, addr: usize) -> bool {
        let burst = addr / self.port_bytes;
        let fetched = self.current != Some(burst);
        self.current = Some(burst);
        fetched
    }

    pub fn invalidate(&mut self) {
        self.current = None;
    }
}

/// Sequential writer that commits one burst each time it leaves a burst or finishes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BurstWriter {
    cache: BurstCache,
    dirty: bool,
}

impl BurstWriter {
    pub fn new(port_bytes: usize) -> Self {
        Self {
            cache: BurstCache::new(port_bytes),
            dirty: false,
        }
    }

    /// Writes `data` at `addr`; returns the number of bursts committed.
    pub fn write(&mut self, mem: &mut [u8], addr: usize, data: &[u8]) -> Result<u64> {
        let end = addr + data.len();
        let slot = mem
            .get_mut(addr..end)
            .ok_or_else(|| Error::Fault(format!("write past memory end at {end}")))?;
        slot.copy_from_slice(data);
        let mut committed = 0;
        for a in addr..end {
            if self.cache.touch(a) && self.dirty {
                committed += 1;
            }
            self.dirty = true;
        }
        Ok(committed)
    }

    pub fn finish(&mut self) -> u64 {
        let committed = u64::from(self.dirty);
        self.dirty = false;
        self.cache.invalidate();
        committed
    }
}

pub(crate) const FIFO_CHUNK_BITS: usize = 128;
pub(crate) const FIFO_CHUNKS: usize = 16;

/// Input spike FIFO: up to 16 loaded 128-bit chunks popped at 1/2/4/8/16 bits.
#[derive(Debug, Clone, Default)]
pub(crate) struct InputFifo {
    chunks: Vec<u128>,
    pos: usize,
    bits: u32,
}

impl InputFifo {
    /// Packs `values` of `bits` each, little-end first, so no value straddles a chunk.
    pub fn load(&mut self, values: &[u32], bits: u32) -> Result<()> {
        if !crate::network::FIFO_WIDTHS.contains(&bits) {
            return Err(Error::Fault(format!("FIFO read width {bits} unsupported")));
        }
        let total = values.len() * bits as usize;
        let n = total.div_ceil(FIFO_CHUNK_BITS);
        if n > FIFO_CHUNKS {
            return Err(Error::Fault(format!(
                "{total} input bits overflow the {FIFO_CHUNKS}-chunk FIFO"
            )));
        }
        self.chunks = vec![0; n];
        let mask = (1u128 << bits) - 1;
        for (i, &v) in values.iter().enumerate() {
            let at = i * bits as usize;
            self.chunks[at / FIFO_CHUNK_BITS] |= (u128::from(v) & mask) << (at % FIFO_CHUNK_BITS);
        }
        self.bits = bits;
        self.pos = 0;
        Ok(())
    }

    pub fn rewind(&mut self) {
        self.pos = 0;
    }

    pub fn pop(&mut self) -> Result<u32> {
        let chunk = self.pos / FIFO_CHUNK_BITS;
        let word = self.chunks.get(chunk).ok_or_else(|| {
            Error::Fault(format!(
                "FIFO read at bit {} beyond loaded chunks",
                self.pos
            ))
        })?;
        let v = (word >> (self.pos % FIFO_CHUNK_BITS)) & ((1u128 << self.bits) - 1);
        self.pos += self.bits as usize;
        Ok(v as u32)
    }
}

/// Bit-packs layer outputs and writes them to activation memory one full port
/// word at a time.
#[derive(Debug, Clone)]
pub(crate) struct OutputBuffer {
    port_bits: usize,
    bits: u32,
    addr: usize,
    word: Vec<u8>,
    fill: usize,
}

impl OutputBuffer {
    pub fn new(port_bits: u32, bits: u32, addr: usize) -> Self {
        Self {
            port_bits: port_bits as usize,
            bits,
            addr,
            word: vec![0; port_bits as usize / 8],
            fill: 0,
        }
    }

    /// Appends one value; returns true if the buffer flushed.
    pub fn push(&mut self, mem: &mut [u8], value: u32) -> Result<bool> {
        for b in 0..self.bits as usize {
            if value >> b & 1 == 1 {
                let at = self.fill + b;
                self.word[at / 8] |= 1 << (at % 8);
            }
        }
        self.fill += self.bits as usize;
        if self.fill == self.port_bits {
            self.flush(mem)?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Writes a partially filled word, zero padded; true if anything was written.
    pub fn finish(&mut self, mem: &mut [u8]) -> Result<bool> {
        if self.fill == 0 {
            return Ok(false);
        }
        self.flush(mem)?;
        Ok(true)
    }

    fn flush(&mut self, mem: &mut [u8]) -> Result<()> {
        let end = self.addr + self.word.len();
        let slot = mem
            .get_mut(self.addr..end)
            .ok_or_else(|| Error::Fault(format!("output write past memory end at {end}")))?;
        slot.copy_from_slice(&self.word);
        self.addr = end;
        self.word.iter_mut().for_each(|b| *b = 0);
        self.fill = 0;
        Ok(())
    }
}

/// Unpacks `count` values of `bits` each from little-end-first packed bytes.
pub(crate) fn unpack(bytes: &[u8], bits: u32, count: usize) -> Vec<u32> {
    (0..count)
        .map(|i| {
            let at = i * bits as usize;
            (0..bits as usize).fold(0u32, |v, b| {
                let bit = at + b;
                v | u32::from(bytes[bit / 8] >> (bit % 8) & 1) << b
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_cache_counts_new_bursts() {
        let mut c = BurstCache::new(16);
        let fetched = (0..40).filter(|&a| c.touch(a)).count();
        assert_eq!(fetched, 3);
    }

    #[test]
    fn burst_writer_commits_touched_bursts() {
        let mut mem = vec![0u8; 64];
        let mut w = BurstWriter::new(16);
        let mut n = 0;
        for i in 0..5 {
            n += w.write(&mut mem, i * 4, &[1, 2, 3, 4]).unwrap();
        }
        n += w.finish();
        assert_eq!(n, 2);
        assert_eq!(&mem[16..20], &[1, 2, 3, 4]);
    }

    #[test]
    fn fifo_pops_in_order_and_stops_at_loaded_data() {
        let mut f = InputFifo::default();
        let values: Vec<u32> = (0..40).map(|i| i % 16).collect();
        f.load(&values, 4).unwrap();
        let popped: Vec<u32> = (0..40).map(|_| f.pop().unwrap()).collect();
        assert_eq!(popped, values);
        // 160 bits occupy two chunks; reading the rest of chunk 1 is allowed, past it is not.
        for _ in 40..64 {
            f.pop().unwrap();
        }
        assert!(f.pop().is_err());
        f.rewind();
        assert_eq!(f.pop().unwrap(), 0);
    }

    #[test]
    fn fifo_rejects_overflow_and_bad_width() {
        let mut f = InputFifo::default();
        assert!(f.load(&[0; 129], 16).is_err());
        assert!(f.load(&[0; 4], 3).is_err());
        assert!(f.load(&[0; 128], 16).is_ok());
    }

    #[test]
    fn output_buffer_flushes_at_port_width() {
        let mut mem = vec![0u8; 64];
        let mut ob = OutputBuffer::new(128, 8, 16);
        let flushes = (0..20).filter(|&i| ob.push(&mut mem, i).unwrap()).count();
        assert_eq!(flushes, 1);
        assert!(ob.finish(&mut mem).unwrap());
        assert_eq!(unpack(&mem[16..], 8, 20), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn unpack_narrow_values() {
        let mut mem = vec![0u8; 16];
        let mut ob = OutputBuffer::new(128, 2, 0);
        for v in [3, 0, 1, 2, 2] {
            ob.push(&mut mem, v).unwrap();
        }
        ob.finish(&mut mem).unwrap();
        assert_eq!(unpack(&mem, 2, 5), vec![3, 0, 1, 2, 2]);
    }
}
