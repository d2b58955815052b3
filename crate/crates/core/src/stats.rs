//! Batch-means error estimates for ergodic averages.

/// Sample mean and standard error of the mean (`s/√n`, `s` with `n − 1`).
/// The standard error is NaN for fewer than two samples.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Streams `K` integrands and keeps per-batch sums in a fixed order.
///
/// The running totals are the in-order sum of completed batch sums plus the
/// trailing partial batch, so the result does not depend on how the
/// caller chunks its work.
#[derive(Clone, Debug)]
pub struct BatchAccumulator<const K: usize> {
    batch_len: usize,
    in_batch: usize,
    current: [f64; K],
    batches: Vec<[f64; K]>,
}

impl<const K: usize> BatchAccumulator<K> {
    pub fn new(batch_len: usize) -> Self {
        assert!(batch_len > 0, "batch length must be positive");
        BatchAccumulator {
            batch_len,
            in_batch: 0,
            current: [0.0; K],
            batches: Vec::new(),
        }
    }

    pub fn push(&mut self, values: [f64; K]) {
        for (c, v) in self.current.iter_mut().zip(values) {
            *c += v;
        }
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            self.batches.push(self.current);
            self.current = [0.0; K];
            self.in_batch = 0;
        }
    }

    pub fn count(&self) -> usize {
        self.batches.len() * self.batch_len + self.in_batch
    }

    /// Per-component means over all pushed samples.
    pub fn means(&self) -> [f64; K] {
        let n = self.count() as f64;
        let mut tot = [0.0; K];
        for b in &self.batches {
            for (t, v) in tot.iter_mut().zip(b) {
                *t += v;
            }
        }
        for (t, v) in tot.iter_mut().zip(&self.current) {
            *t += v;
        }
        tot.map(|t| t / n)
    }

    /// Standard error of the mean of `combine(sample)` from complete batches.
    pub fn stderr_of(&self, combine: impl Fn(&[f64; K]) -> f64) -> f64 {
        let means: Vec<f64> = self
            .batches
            .iter()
            .map(|b| combine(b) / self.batch_len as f64)
            .collect();
        mean_and_stderr(&means).1
    }
}
