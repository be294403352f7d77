//! Blocked in-place transpose of a square row-major matrix.
//!
//! The matrix is walked in `block x block` tiles. For every tile `(i, j)` each
//! element strictly above the diagonal is swapped with its mirror; elements
//! whose linear index is not below the mirror's are skipped, so every pair is
//! swapped exactly once no matter which tile visits it.

use std::thread;

/// Transpose `data` (an `n x n` row-major matrix) in place on one thread.
pub fn transpose_block<T>(data: &mut [T], n: usize, block: usize) {
    assert_eq!(data.len(), n * n, "matrix storage does not match dimension");
    let block = block.max(1);
    for i in (0..n).step_by(block) {
        for j in (0..n).step_by(block) {
            for p in 0..(n - i).min(block) {
                for q in 0..(n - j).min(block) {
                    let index1 = (i + p) * n + j + q;
                    let index2 = (j + q) * n + i + p;
                    if index1 >= index2 {
                        continue;
                    }
                    data.swap(index1, index2);
                }
            }
        }
    }
}

struct SharedMut<T>(*mut T);

// SAFETY: only used to hand threads a base pointer to storage whose swap
// pairs they touch disjointly; see `transpose_block_parallel`.
unsafe impl<T: Send> Send for SharedMut<T> {}
unsafe impl<T: Send> Sync for SharedMut<T> {}

impl<T> Clone for SharedMut<T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for SharedMut<T> {}

impl<T> SharedMut<T> {
    fn get(self) -> *mut T {
        self.0
    }
}

/// Parallel form of [`transpose_block`]: tile rows are dealt round-robin to
/// `threads` workers.
pub fn transpose_block_parallel<T: Send>(data: &mut [T], n: usize, block: usize, threads: usize) {
    assert_eq!(data.len(), n * n, "matrix storage does not match dimension");
    let block = block.max(1);
    let tile_rows: Vec<usize> = (0..n).step_by(block).collect();
    let threads = threads.clamp(1, tile_rows.len().max(1));
    if threads == 1 {
        return transpose_block(data, n, block);
    }

    let base = SharedMut(data.as_mut_ptr());
    thread::scope(|scope| {
        for worker in 0..threads {
            let mine: Vec<usize> = tile_rows
                .iter()
                .copied()
                .skip(worker)
                .step_by(threads)
                .collect();
            scope.spawn(move || {
                let ptr = base.get();
                for i in mine {
                    for j in (0..n).step_by(block) {
                        for p in 0..(n - i).min(block) {
                            for q in 0..(n - j).min(block) {
                                let index1 = (i + p) * n + j + q;
                                let index2 = (j + q) * n + i + p;
                                if index1 >= index2 {
                                    continue;
                                }
                                // SAFETY: both indices are < n*n. The pair
                                // {index1, index2} is swapped only by the
                                // worker owning the tile row containing the
                                // upper-triangle element index1, so no two
                                // workers touch the same element.
                                unsafe { std::ptr::swap(ptr.add(index1), ptr.add(index2)) };
                            }
                        }
                    }
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(data: &[u32], n: usize) -> Vec<u32> {
        let mut out = vec![0; n * n];
        for r in 0..n {
            for c in 0..n {
                out[c * n + r] = data[r * n + c];
            }
        }
        out
    }

    #[test]
    fn two_by_two() {
        let mut m = vec!['a', 'b', 'c', 'd'];
        transpose_block(&mut m, 2, 64);
        assert_eq!(m, vec!['a', 'c', 'b', 'd']);
    }

    #[test]
    fn matches_reference_for_awkward_sizes() {
        for n in [1, 2, 3, 7, 64, 65, 129] {
            let original: Vec<u32> = (0..(n * n) as u32).collect();
            let expected = reference(&original, n);
            for block in [1, 3, 8, 64, 200] {
                for threads in [1, 2, 5] {
                    let mut m = original.clone();
                    transpose_block_parallel(&mut m, n, block, threads);
                    assert_eq!(m, expected, "n={n} block={block} threads={threads}");
                    transpose_block_parallel(&mut m, n, block, threads);
                    assert_eq!(m, original);
                }
            }
        }
    }
}
