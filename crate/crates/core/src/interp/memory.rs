use crate::ir::align_to;

pub const GLOBAL_BASE: u32 = 0x1000_0000;
pub const STACK_BASE: u32 = 0x2000_0000;
pub const HEAP_BASE: u32 = 0x3000_0000;
const REGION_SPAN: u64 = 0x1000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MemFault {
    OutOfBounds(u32),
    Exhausted,
}

/// One bump-allocated address range with a byte-granular "written" shadow.
#[derive(Debug)]
pub(crate) struct Region {
    base: u32,
    limit: u64,
    bytes: Vec<u8>,
    written: Vec<bool>,
    /// Live allocations as `[start, end)` offsets, sorted by start.
    allocs: Vec<(u64, u64)>,
    top: u64,
}

impl Region {
    pub fn new(base: u32, limit: u64) -> Self {
        Region {
            base,
            limit: limit.min(REGION_SPAN),
            bytes: Vec::new(),
            written: Vec::new(),
            allocs: Vec::new(),
            top: 0,
        }
    }

    pub fn used(&self) -> u64 {
        self.top
    }

    pub fn alloc(&mut self, size: u64, align: u64, zeroed: bool) -> Result<u32, MemFault> {
        let start = align_to(self.top, align.max(1));
        let end = start.checked_add(size).ok_or(MemFault::Exhausted)?;
        if end > self.limit {
            return Err(MemFault::Exhausted);
        }
        if end as usize > self.bytes.len() {
            self.bytes.resize(end as usize, 0);
            self.written.resize(end as usize, false);
        }
        if zeroed {
            self.written[start as usize..end as usize].fill(true);
        }
        self.allocs.push((start, end));
        self.top = end;
        Ok(self.base + start as u32)
    }

    /// Allocation watermark, for releasing a stack frame.
    pub fn mark(&self) -> (u64, usize) {
        (self.top, self.allocs.len())
    }

    /// Frees everything allocated after `mark`; freed bytes read as zero and
    /// unwritten if reused.
    pub fn release(&mut self, mark: (u64, usize)) {
        let (top, n) = mark;
        let hi = self.top as usize;
        self.bytes[top as usize..hi].fill(0);
        self.written[top as usize..hi].fill(false);
        self.allocs.truncate(n);
        self.top = top;
    }

    fn contains(&self, addr: u32) -> bool {
        addr >= self.base && ((addr - self.base) as u64) < REGION_SPAN
    }

    /// Offset of `[addr, addr+len)` if it lies inside one live allocation.
    fn check(&self, addr: u32, len: u64) -> Result<usize, MemFault> {
        let off = (addr - self.base) as u64;
        let i = self.allocs.partition_point(|&(s, _)| s <= off);
        // Zero-sized allocations share a start with their successor; scan back.
        for &(s, e) in self.allocs[..i].iter().rev() {
            if off + len <= e && off >= s {
                return Ok(off as usize);
            }
            if e <= off && s < e {
                break;
            }
        }
        Err(MemFault::OutOfBounds(addr))
    }
}

#[derive(Debug)]
pub(crate) struct Memory {
    pub globals: Region,
    pub stack: Region,
    pub heap: Region,
}

impl Memory {
    pub fn new(max_stack: u64, max_heap: u64) -> Self {
        Memory {
            globals: Region::new(GLOBAL_BASE, REGION_SPAN),
            stack: Region::new(STACK_BASE, max_stack),
            heap: Region::new(HEAP_BASE, max_heap),
        }
    }

    fn region_mut(&mut self, addr: u32) -> Result<&mut Region, MemFault> {
        if self.globals.contains(addr) {
            Ok(&mut self.globals)
        } else if self.stack.contains(addr) {
            Ok(&mut self.stack)
        } else if self.heap.contains(addr) {
            Ok(&mut self.heap)
        } else {
            Err(MemFault::OutOfBounds(addr))
        }
    }

    /// Little-endian read of up to 8 bytes. The flag reports whether any byte
    /// was never written.
    pub fn read(&mut self, addr: u32, len: u64) -> Result<(u64, bool), MemFault> {
        let r = self.region_mut(addr)?;
        let off = r.check(addr, len)?;
        let end = off + len as usize;
        let mut buf = [0u8; 8];
        buf[..len as usize].copy_from_slice(&r.bytes[off..end]);
        let uninit = r.written[off..end].iter().any(|w| !w);
        Ok((u64::from_le_bytes(buf), uninit))
    }

    pub fn write(&mut self, addr: u32, len: u64, value: u64) -> Result<(), MemFault> {
        let r = self.region_mut(addr)?;
        let off = r.check(addr, len)?;
        let end = off + len as usize;
        r.bytes[off..end].copy_from_slice(&value.to_le_bytes()[..len as usize]);
        r.written[off..end].fill(true);
        Ok(())
    }

    pub fn write_bytes(&mut self, addr: u32, data: &[u8]) -> Result<(), MemFault> {
        if data.is_empty() {
            return Ok(());
        }
        let r = self.region_mut(addr)?;
        let off = r.check(addr, data.len() as u64)?;
        r.bytes[off..off + data.len()].copy_from_slice(data);
        r.written[off..off + data.len()].fill(true);
        Ok(())
    }

    pub fn fill(&mut self, addr: u32, byte: u8, len: u64) -> Result<(), MemFault> {
        if len == 0 {
            return Ok(());
        }
        let r = self.region_mut(addr)?;
        let off = r.check(addr, len)?;
        r.bytes[off..off + len as usize].fill(byte);
        r.written[off..off + len as usize].fill(true);
        Ok(())
    }

    /// Copies `len` bytes including their written-ness. Overlap is allowed.
    pub fn copy(&mut self, dst: u32, src: u32, len: u64) -> Result<(), MemFault> {
        if len == 0 {
            return Ok(());
        }
        let (data, shadow) = {
            let r = self.region_mut(src)?;
            let off = r.check(src, len)?;
            let end = off + len as usize;
            (r.bytes[off..end].to_vec(), r.written[off..end].to_vec())
        };
        let r = self.region_mut(dst)?;
        let off = r.check(dst, len)?;
        r.bytes[off..off + data.len()].copy_from_slice(&data);
        r.written[off..off + shadow.len()].copy_from_slice(&shadow);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocations_are_aligned_and_bounded() {
        let mut m = Memory::new(1024, 1024);
        let a = m.stack.alloc(1, 1, false).unwrap();
        let b = m.stack.alloc(4, 4, false).unwrap();
        assert_eq!(a, STACK_BASE);
        assert_eq!(b, STACK_BASE + 4);
        m.write(b, 4, 0xdead_beef).unwrap();
        assert_eq!(m.read(b, 4).unwrap(), (0xdead_beef, false));
        assert_eq!(m.read(b + 1, 4), Err(MemFault::OutOfBounds(b + 1)));
        assert_eq!(m.read(a, 1).unwrap(), (0, true));
        assert_eq!(
            m.read(STACK_BASE + 2, 1),
            Err(MemFault::OutOfBounds(STACK_BASE + 2))
        );
        assert_eq!(m.read(0x10, 1), Err(MemFault::OutOfBounds(0x10)));
    }

    #[test]
    fn release_reclaims_and_clears() {
        let mut m = Memory::new(64, 64);
        let mark = m.stack.mark();
        let p = m.stack.alloc(8, 8, false).unwrap();
        m.write(p, 8, u64::MAX).unwrap();
        m.stack.release(mark);
        assert!(m.read(p, 8).is_err());
        let q = m.stack.alloc(8, 8, false).unwrap();
        assert_eq!(p, q);
        assert_eq!(m.read(q, 8).unwrap(), (0, true));
    }

    #[test]
    fn limits_are_enforced() {
        let mut m = Memory::new(16, 16);
        assert!(m.heap.alloc(16, 1, true).is_ok());
        assert_eq!(m.heap.alloc(1, 1, true), Err(MemFault::Exhausted));
    }

    #[test]
    fn copy_carries_shadow() {
        let mut m = Memory::new(64, 64);
        let a = m.heap.alloc(4, 4, false).unwrap();
        let b = m.heap.alloc(4, 4, false).unwrap();
        m.write(a, 2, 0x1234).unwrap();
        m.copy(b, a, 4).unwrap();
        assert_eq!(m.read(b, 2).unwrap(), (0x1234, false));
        assert!(m.read(b, 4).unwrap().1);
    }
}
