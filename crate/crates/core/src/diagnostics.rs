//! Per-thread call counters for the expensive numerical kernels.
//!
//! Tests use these to check which kernels a pipeline configuration touches.
//! Counters are thread-local so concurrently running pipelines do not mix.

use std::cell::Cell;

thread_local! {
    static FULL_EIG: Cell<u64> = const { Cell::new(0) };
    static SECULAR: Cell<u64> = const { Cell::new(0) };
    static OSMC: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub full_eig: u64,
    pub secular_solves: u64,
    pub osmc_fits: u64,
}

pub fn snapshot() -> Counters {
    Counters {
        full_eig: FULL_EIG.with(Cell::get),
        secular_solves: SECULAR.with(Cell::get),
        osmc_fits: OSMC.with(Cell::get),
    }
}

pub fn reset() {
    FULL_EIG.with(|c| c.set(0));
    SECULAR.with(|c| c.set(0));
    OSMC.with(|c| c.set(0));
}

pub(crate) fn record_full_eig() {
    FULL_EIG.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_secular_solve() {
    SECULAR.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_osmc() {
    OSMC.with(|c| c.set(c.get() + 1));
}
