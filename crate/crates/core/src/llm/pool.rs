use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{cached_complete, complete, Backend, Cache, LlmError, LlmRequest, LlmResponse};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub requests: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
    pub failures: usize,
}

#[derive(Debug)]
pub struct BatchOutcome {
    /// One entry per request, in request order.
    pub results: Vec<Result<LlmResponse, LlmError>>,
    pub stats: BatchStats,
}

/// Runs `requests` on at most `max_inflight` worker threads. Results come
/// back in request order regardless of completion order.
pub fn complete_all(
    backend: &Backend,
    cache: Option<&Cache>,
    requests: &[LlmRequest],
    max_inflight: usize,
) -> BatchOutcome {
    let workers = max_inflight.max(1).min(requests.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<LlmResponse, LlmError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(request) = requests.get(i) else { break };
                let result = match cache {
                    Some(c) => cached_complete(c, backend, request),
                    None => complete(backend, request),
                };
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });

    let results: Vec<_> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every request is processed"))
        .collect();
    let mut stats = BatchStats {
        requests: requests.len(),
        ..Default::default()
    };
    for r in &results {
        match r {
            Ok(resp) if resp.from_cache => stats.cache_hits += 1,
            Ok(_) => stats.backend_calls += 1,
            Err(_) => {
                stats.failures += 1;
                stats.backend_calls += 1;
            }
        }
    }
    BatchOutcome { results, stats }
}
