//! Deterministic substreams and the chunked parallel execution contract.
//!
//! Every random draw comes from a ChaCha8 generator seeded by a [`Stream`]
//! key. Keys form a tree (`root(seed).child(tag).child(node).child(chunk)`),
//! so a chunk's output depends only on its key and size, never on which
//! worker ran it or in which order chunks finished.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Node of the substream tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream(u64);

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Stream {
    pub fn root(seed: u64) -> Self {
        Stream(seed)
    }

    pub fn child(self, label: u64) -> Self {
        Stream(splitmix64(self.0 ^ splitmix64(label)))
    }

    pub fn key(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Which slice of a batch a chunk covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpec {
    pub index: usize,
    /// Offset of the chunk's first sample within the batch.
    pub start: usize,
    pub count: usize,
}

pub fn chunk_specs(n: usize, chunk_size: usize) -> Vec<ChunkSpec> {
    let chunk_size = chunk_size.max(1);
    (0..n.div_ceil(chunk_size))
        .map(|index| {
            let start = index * chunk_size;
            ChunkSpec { index, start, count: chunk_size.min(n - start) }
        })
        .collect()
}

/// Runs chunk `spec` of the batch keyed by `stream`. This is the pure unit
/// of work; any scheduler calling it yields the same per-chunk results.
pub fn run_chunk<T, F>(stream: Stream, spec: ChunkSpec, f: &F) -> T
where
    F: Fn(ChunkSpec, &mut ChaCha8Rng) -> T,
{
    let mut rng = stream.child(spec.index as u64).rng();
    f(spec, &mut rng)
}

/// Runs every chunk of an `n`-sample batch in parallel and returns the
/// per-chunk results in chunk order.
pub fn run_chunked<T, F>(stream: Stream, n: usize, chunk_size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(ChunkSpec, &mut ChaCha8Rng) -> T + Sync,
{
    chunk_specs(n, chunk_size)
        .into_par_iter()
        .map(|spec| run_chunk(stream, spec, &f))
        .collect()
}

/// Several batches at once (e.g. one per quadrature node), flattened into a
/// single parallel pass. Results come back grouped per batch, chunk order
/// preserved.
pub fn run_batches<T, F>(batches: &[(Stream, usize)], chunk_size: usize, f: F) -> Vec<Vec<T>>
where
    T: Send,
    F: Fn(usize, ChunkSpec, &mut ChaCha8Rng) -> T + Sync,
{
    let work: Vec<(usize, ChunkSpec)> = batches
        .iter()
        .enumerate()
        .flat_map(|(b, &(_, n))| chunk_specs(n, chunk_size).into_iter().map(move |s| (b, s)))
        .collect();
    let results: Vec<(usize, T)> = work
        .into_par_iter()
        .map(|(b, spec)| (b, run_chunk(batches[b].0, spec, &|s, rng| f(b, s, rng))))
        .collect();
    let mut grouped: Vec<Vec<T>> = (0..batches.len()).map(|_| Vec::new()).collect();
    for (b, r) in results {
        grouped[b].push(r);
    }
    grouped
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chunking_covers_the_batch_exactly() {
        let specs = chunk_specs(10, 4);
        assert_eq!(specs.iter().map(|s| s.count).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(specs[2].start, 8);
        assert!(chunk_specs(0, 4).is_empty());
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let f = |spec: ChunkSpec, rng: &mut ChaCha8Rng| {
            (0..spec.count).map(|_| rng.random::<f64>()).sum::<f64>()
        };
        let s = Stream::root(7).child(3);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_chunked(s, 10_000, 333, f));
        let b = four.install(|| run_chunked(s, 10_000, 333, f));
        assert_eq!(a, b);
        let serial: Vec<f64> = chunk_specs(10_000, 333).into_iter().map(|c| run_chunk(s, c, &f)).collect();
        assert_eq!(a, serial);
    }

    #[test]
    fn children_are_distinct() {
        let r = Stream::root(1);
        assert_ne!(r.child(0), r.child(1));
        assert_ne!(r.child(0).child(1), r.child(1).child(0));
        assert_ne!(Stream::root(1).child(0), Stream::root(2).child(0));
    }
}
