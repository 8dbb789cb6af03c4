use std::sync::{Arc, Condvar, Mutex};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct Inner {
    held: Mutex<Option<String>>,
    freed: Condvar,
}

/// Single-writer lock. Readers never touch it; they work on snapshots.
#[derive(Debug, Default)]
pub struct WriteLock {
    inner: Arc<Inner>,
}

/// Held write permission; released on drop. Owns its lock, so it can move
/// into a background job.
#[derive(Debug)]
pub struct WriteToken {
    inner: Arc<Inner>,
}

impl Drop for WriteToken {
    fn drop(&mut self) {
        *self.inner.held.lock().unwrap_or_else(|e| e.into_inner()) = None;
        self.inner.freed.notify_one();
    }
}

impl WriteLock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn try_acquire(&self, holder: &str) -> Result<WriteToken> {
        let mut held = self.inner.held.lock().unwrap_or_else(|e| e.into_inner());
        if held.is_some() {
            return Err(Error::WouldBlock);
        }
        *held = Some(holder.to_string());
        Ok(WriteToken {
            inner: Arc::clone(&self.inner),
        })
    }

    /// Wait until the current writer finishes.
    pub fn acquire(&self, holder: &str) -> WriteToken {
        let mut held = self.inner.held.lock().unwrap_or_else(|e| e.into_inner());
        while held.is_some() {
            held = self.inner.freed.wait(held).unwrap_or_else(|e| e.into_inner());
        }
        *held = Some(holder.to_string());
        WriteToken {
            inner: Arc::clone(&self.inner),
        }
    }

    pub fn holder(&self) -> Option<String> {
        self.inner.held.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn second_writer_would_block() {
        let l = WriteLock::new();
        let t = l.try_acquire("ingest-1").unwrap();
        assert!(matches!(l.try_acquire("ingest-2"), Err(Error::WouldBlock)));
        assert_eq!(l.holder().as_deref(), Some("ingest-1"));
        drop(t);
        assert!(l.try_acquire("ingest-2").is_ok());
    }

    #[test]
    fn blocking_acquire_waits_its_turn() {
        let l = Arc::new(WriteLock::new());
        let t = l.try_acquire("first").unwrap();
        let l2 = Arc::clone(&l);
        let h = std::thread::spawn(move || {
            let _t = l2.acquire("second");
            l2.holder()
        });
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(l.holder().as_deref(), Some("first"));
        drop(t);
        assert_eq!(h.join().unwrap().as_deref(), Some("second"));
        assert!(l.holder().is_none());
    }
}
