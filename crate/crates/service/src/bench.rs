use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub threads: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub frames_per_sec: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs `iterations` end-to-end `classify_frame` calls, cycling through
/// `frames`, spread over `threads` workers each handling one frame at a time.
pub fn benchmark(engine: &Engine, frames: &[Vec<u8>], iterations: usize, threads: usize) -> Result<BenchReport> {
    let threads = threads.max(1);
    if iterations == 0 || frames.is_empty() {
        return Ok(BenchReport {
            threads,
            ..BenchReport::default()
        });
    }
    let next = AtomicUsize::new(0);
    let latencies = Mutex::new(Vec::with_capacity(iterations));
    let failure = Mutex::new(None);
    let start = Instant::now();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= iterations {
                    break;
                }
                let t = Instant::now();
                if let Err(e) = engine.classify_frame(&frames[i % frames.len()]) {
                    failure.lock().unwrap().get_or_insert(e);
                    next.store(iterations, Ordering::Relaxed);
                    break;
                }
                latencies.lock().unwrap().push(t.elapsed().as_secs_f64() * 1e3);
            });
        }
    });
    let wall = start.elapsed().as_secs_f64();
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut lat = latencies.into_inner().unwrap();
    lat.sort_by(f64::total_cmp);
    Ok(BenchReport {
        iterations,
        threads,
        p50_ms: percentile(&lat, 0.50),
        p95_ms: percentile(&lat, 0.95),
        frames_per_sec: iterations as f64 / wall,
    })
}

#[cfg(test)]
mod tests {
    use super::percentile;

    #[test]
    fn nearest_rank() {
        let xs: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.5), 10.0);
        assert_eq!(percentile(&xs, 0.95), 19.0);
        assert_eq!(percentile(&[4.0], 0.95), 4.0);
    }
}
