//! Peak memory measurement: a counting global allocator plus a resident-set
//! sampler.
//!
//! Binaries opt in to heap tracking with
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: grouper::memtrack::TrackingAllocator = grouper::memtrack::TrackingAllocator;
//! ```
//!
//! Without it only the resident-set samples are available.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

pub const SAMPLE_INTERVAL: Duration = Duration::from_millis(10);

/// The system allocator, counting live bytes and their high-water mark.
pub struct TrackingAllocator;

fn grew(size: usize) {
    let now = CURRENT.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            ACTIVE.store(true, Ordering::Relaxed);
            grew(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            ACTIVE.store(true, Ordering::Relaxed);
            grew(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size > layout.size() {
                grew(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Whether a [`TrackingAllocator`] is installed and has seen allocations.
pub fn heap_tracking_active() -> bool {
    ACTIVE.load(Ordering::Relaxed)
}

pub fn heap_current() -> usize {
    CURRENT.load(Ordering::Relaxed)
}

/// Resets the high-water mark to the current live size and returns it.
pub fn reset_heap_peak() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

pub fn heap_peak() -> usize {
    PEAK.load(Ordering::Relaxed)
}

/// Current resident set size, where the platform exposes it.
pub fn rss_bytes() -> Option<u64> {
    #[cfg(target_os = "linux")]
    {
        let status = std::fs::read_to_string("/proc/self/status").ok()?;
        let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
        let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
        Some(kb * 1024)
    }
    #[cfg(not(target_os = "linux"))]
    {
        None
    }
}

/// Tracks peak memory growth over a region of code.
///
/// A background thread samples the resident set every [`SAMPLE_INTERVAL`];
/// the heap high-water mark is read at the end. The reported value is the
/// larger of the two growths over their baselines.
pub struct PeakMeter {
    rss_base: Option<u64>,
    heap_base: usize,
    stop: Arc<AtomicBool>,
    max_rss: Arc<AtomicUsize>,
    sampler: Option<JoinHandle<()>>,
}

impl PeakMeter {
    pub fn start() -> Self {
        let rss_base = rss_bytes();
        let heap_base = reset_heap_peak();
        let stop = Arc::new(AtomicBool::new(false));
        let max_rss = Arc::new(AtomicUsize::new(rss_base.unwrap_or(0) as usize));
        let sampler = rss_base.map(|_| {
            let stop = Arc::clone(&stop);
            let max_rss = Arc::clone(&max_rss);
            thread::Builder::new()
                .name("rss-sampler".into())
                .spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        if let Some(rss) = rss_bytes() {
                            max_rss.fetch_max(rss as usize, Ordering::Relaxed);
                        }
                        thread::sleep(SAMPLE_INTERVAL);
                    }
                })
                .expect("spawning rss sampler")
        });
        PeakMeter {
            rss_base,
            heap_base,
            stop,
            max_rss,
            sampler,
        }
    }

    /// Stops sampling and returns the peak growth in bytes.
    pub fn finish(mut self) -> u64 {
        self.halt();
        if let Some(rss) = rss_bytes() {
            self.max_rss.fetch_max(rss as usize, Ordering::Relaxed);
        }
        let rss_growth = self
            .rss_base
            .map(|base| (self.max_rss.load(Ordering::Relaxed) as u64).saturating_sub(base))
            .unwrap_or(0);
        let heap_growth = if heap_tracking_active() {
            heap_peak().saturating_sub(self.heap_base) as u64
        } else {
            0
        };
        rss_growth.max(heap_growth)
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.sampler.take() {
            let _ = h.join();
        }
    }
}

impl Drop for PeakMeter {
    fn drop(&mut self) {
        self.halt();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[cfg(target_os = "linux")]
    fn rss_is_readable() {
        assert!(rss_bytes().unwrap() > 0);
    }

    #[test]
    fn meter_sees_a_large_touched_allocation() {
        let meter = PeakMeter::start();
        let v = vec![1u8; 64 << 20];
        thread::sleep(SAMPLE_INTERVAL * 3);
        std::hint::black_box(&v);
        drop(v);
        let peak = meter.finish();
        if rss_bytes().is_some() {
            assert!(peak >= 32 << 20, "peak {peak}");
        }
    }
}
