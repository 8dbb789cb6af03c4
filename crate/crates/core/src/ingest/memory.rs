use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Δ_RSS bound under which ingestion counts as constant-memory: 500 MiB.
pub const DEFAULT_DELTA_BOUND: u64 = 500 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPhase {
    IngestStart,
    /// Timer-driven sample between checkpoints.
    Periodic,
    PostFlush,
    IngestEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySample {
    /// Milliseconds since the sampler started (monotonic clock).
    pub t_ms: u64,
    pub rss_bytes: u64,
    pub phase: MemoryPhase,
}

/// Current resident set size of this process, if the platform exposes it.
pub fn resident_bytes() -> Option<u64> {
    #[cfg(target_os = "linux")]
    {
        use std::io::Read;
        let mut buf = [0u8; 128];
        let mut f = std::fs::File::open("/proc/self/statm").ok()?;
        let n = f.read(&mut buf).ok()?;
        let text = std::str::from_utf8(&buf[..n]).ok()?;
        let pages: u64 = text.split_whitespace().nth(1)?.parse().ok()?;
        // SAFETY: sysconf has no preconditions.
        let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
        Some(pages * page.max(1) as u64)
    }
    #[cfg(not(target_os = "linux"))]
    {
        None
    }
}

/// Return freed heap pages to the OS where the allocator supports it.
pub fn trim_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: malloc_trim only releases free memory held by glibc malloc.
    unsafe {
        libc::malloc_trim(0);
    }
}

struct Ring {
    buf: Vec<MemorySample>,
    head: usize,
    full: bool,
}

impl Ring {
    fn with_capacity(cap: usize) -> Self {
        Ring {
            buf: Vec::with_capacity(cap.max(2)),
            head: 0,
            full: false,
        }
    }

    fn push(&mut self, s: MemorySample) {
        if !self.full && self.buf.len() < self.buf.capacity() {
            self.buf.push(s);
            return;
        }
        self.full = true;
        self.buf[self.head] = s;
        self.head = (self.head + 1) % self.buf.len();
    }

    fn ordered(&self) -> Vec<MemorySample> {
        let mut v = Vec::with_capacity(self.buf.len());
        v.extend_from_slice(&self.buf[self.head..]);
        v.extend_from_slice(&self.buf[..self.head]);
        v
    }
}

struct Shared {
    ring: Mutex<Ring>,
    stop: AtomicBool,
    start: Instant,
}

impl Shared {
    fn record(&self, phase: MemoryPhase) {
        let rss = resident_bytes().unwrap_or(0);
        let t_ms = self.start.elapsed().as_millis() as u64;
        self.ring.lock().push(MemorySample {
            t_ms,
            rss_bytes: rss,
            phase,
        });
    }
}

/// Background RSS sampler writing into a preallocated ring buffer.
pub struct MemorySampler {
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MemorySampler {
    pub const DEFAULT_CAPACITY: usize = 1 << 16;

    pub fn start(interval: Duration, capacity: usize) -> Self {
        let shared = Arc::new(Shared {
            ring: Mutex::new(Ring::with_capacity(capacity)),
            stop: AtomicBool::new(false),
            start: Instant::now(),
        });
        let worker = Arc::clone(&shared);
        let handle = std::thread::Builder::new()
            .name("rss-sampler".into())
            .spawn(move || {
                while !worker.stop.load(Ordering::Acquire) {
                    std::thread::park_timeout(interval);
                    if worker.stop.load(Ordering::Acquire) {
                        break;
                    }
                    worker.record(MemoryPhase::Periodic);
                }
            })
            .expect("spawn sampler thread");
        MemorySampler {
            shared,
            handle: Some(handle),
        }
    }

    pub fn checkpoint(&self, phase: MemoryPhase) {
        self.shared.record(phase);
    }

    pub fn stop(mut self) -> Vec<MemorySample> {
        self.halt();
        let mut v = self.shared.ring.lock().ordered();
        v.sort_by_key(|s| s.t_ms);
        v
    }

    fn halt(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(h) = self.handle.take() {
            h.thread().unpark();
            let _ = h.join();
        }
    }
}

impl Drop for MemorySampler {
    fn drop(&mut self) {
        self.halt();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Bounded,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub samples: Vec<MemorySample>,
    pub min: u64,
    pub max: u64,
    pub delta: u64,
    pub bound: u64,
    pub verdict: Verdict,
}

impl MemoryReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ms,rss_bytes,phase\n");
        for s in &self.samples {
            let phase = serde_json::to_value(s.phase)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", s.t_ms, s.rss_bytes, phase));
        }
        out
    }
}

/// Δ_RSS = max − min over the samples; bounded iff Δ < `bound`.
pub fn memory_report(samples: &[MemorySample], bound: u64) -> Result<MemoryReport> {
    if samples.len() < 2 {
        return Err(Error::Bench(format!(
            "memory report needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let min = samples.iter().map(|s| s.rss_bytes).min().unwrap_or(0);
    let max = samples.iter().map(|s| s.rss_bytes).max().unwrap_or(0);
    let delta = max - min;
    Ok(MemoryReport {
        samples: samples.to_vec(),
        min,
        max,
        delta,
        bound,
        verdict: if delta < bound {
            Verdict::Bounded
        } else {
            Verdict::Unbounded
        },
    })
}
