//! Layer primitives: standard, depthwise and binary convolutions, batch
//! normalization with inference-time threshold folding, and max pooling.
//!
//! All operations are pure functions of immutable inputs. The `_threaded`
//! variants split work over output rows; the plain variants are the
//! single-thread case.

mod binary;
mod conv;
mod norm;
mod pool;

pub use binary::{binary_conv2d, binary_conv2d_threaded, BinaryConvWeights};
pub use conv::{
    conv2d, conv2d_threaded, depthwise_conv2d, depthwise_conv2d_threaded, ConvSpec,
    ConvWeights, DepthwiseSpec, DepthwiseWeights,
};
pub use norm::{
    batchnorm, binarize_with_thresholds, fold_bn_binarize, BatchNormParams, BinarizeThreshold,
};
pub use pool::maxpool;

/// Run `f(first_row, band)` over contiguous bands of an output buffer,
/// one band per thread. `rows * row_elems` must equal `out.len()`.
pub(crate) fn par_over_rows<T: Send>(
    out: &mut [T],
    rows: usize,
    row_elems: usize,
    threads: usize,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    debug_assert_eq!(out.len(), rows * row_elems);
    let bands = threads.max(1).min(rows);
    if bands <= 1 {
        f(0, out);
        return;
    }
    let chunk = rows.div_ceil(bands);
    std::thread::scope(|scope| {
        let mut rest = out;
        let mut row0 = 0;
        while row0 < rows {
            let take = chunk.min(rows - row0);
            let (band, tail) = rest.split_at_mut(take * row_elems);
            rest = tail;
            let f = &f;
            scope.spawn(move || f(row0, band));
            row0 += take;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_over_rows_covers_every_row_once() {
        for threads in [1, 2, 3, 7] {
            let rows = 5;
            let row_elems = 3;
            let mut buf = vec![0u32; rows * row_elems];
            par_over_rows(&mut buf, rows, row_elems, threads, |row0, band| {
                for (i, v) in band.iter_mut().enumerate() {
                    *v = (row0 + i / 3) as u32 + 1;
                }
            });
            let expect: Vec<u32> =
                (0..rows).flat_map(|r| std::iter::repeat_n(r as u32 + 1, 3)).collect();
            assert_eq!(buf, expect, "threads={threads}");
        }
    }
}
