use crate::ir::{MemIntrinsic, Opcode};

/// Observer of interpreter events.
///
/// Handlers only accumulate; nothing they do can change program semantics.
/// All ids are module-wide static ids (blocks and instructions are numbered
/// separately).
#[allow(unused_variables)]
pub trait Probe {
    fn block_enter(&mut self, block: u32) {}
    fn instruction(&mut self, static_id: u32, opcode: Opcode) {}
    fn load(&mut self, addr: u32, bytes: u32) {}
    fn store(&mut self, addr: u32, bytes: u32) {}
    /// A conditional `br` at `site` resolved to `taken` (its first target).
    fn cond_branch(&mut self, site: u32, taken: bool) {}
    fn block_transition(&mut self, from: u32, to: u32) {}
    fn mem_intrinsic(&mut self, kind: MemIntrinsic, bytes: u64) {}
    fn call(&mut self, callee: &str) {}
    /// A load read at least one byte that was allocated but never written.
    fn uninitialized_load(&mut self, addr: u32) {}
    /// The entry function returned.
    fn program_exit(&mut self) {}
}

/// Probe that ignores every event.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoProbe;

impl Probe for NoProbe {}

impl<P: Probe + ?Sized> Probe for &mut P {
    fn block_enter(&mut self, block: u32) {
        (**self).block_enter(block)
    }
    fn instruction(&mut self, static_id: u32, opcode: Opcode) {
        (**self).instruction(static_id, opcode)
    }
    fn load(&mut self, addr: u32, bytes: u32) {
        (**self).load(addr, bytes)
    }
    fn store(&mut self, addr: u32, bytes: u32) {
        (**self).store(addr, bytes)
    }
    fn cond_branch(&mut self, site: u32, taken: bool) {
        (**self).cond_branch(site, taken)
    }
    fn block_transition(&mut self, from: u32, to: u32) {
        (**self).block_transition(from, to)
    }
    fn mem_intrinsic(&mut self, kind: MemIntrinsic, bytes: u64) {
        (**self).mem_intrinsic(kind, bytes)
    }
    fn call(&mut self, callee: &str) {
        (**self).call(callee)
    }
    fn uninitialized_load(&mut self, addr: u32) {
        (**self).uninitialized_load(addr)
    }
    fn program_exit(&mut self) {
        (**self).program_exit()
    }
}
