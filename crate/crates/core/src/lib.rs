//! Compiler and noisy emulator for hybrid quantum/classical programs on a
//! linear trapped-ion device.

pub mod ir;
pub mod textir;
pub mod passes;
pub mod predication;
pub mod regalloc;
pub mod qccd;
pub mod emulator;
pub mod pipeline;
pub mod experiments;
