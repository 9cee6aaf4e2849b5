//! Timing of the LUT render path: `N` curve triples plus plain fusion.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::solution::{SolutionSet, DEFAULT_LUT_RESOLUTION};
use crate::synthetic::{random_solution_set, smooth_image};

/// Single-threaded budget for one 512×512 render, in milliseconds.
pub const BUDGET_MS: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub size: usize,
    pub repetitions: usize,
    pub threads: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
}

impl BenchReport {
    pub fn within_budget(&self) -> bool {
        self.mean_ms <= BUDGET_MS
    }
}

/// Time `repetitions` renders of a random `size × size` image through a
/// random three-solution plain set on a pool of `threads` workers
/// (`0` = one per logical core). Table construction is part of each render.
pub fn run_bench(size: usize, repetitions: usize, threads: usize, seed: u64) -> Result<BenchReport> {
    if size == 0 || repetitions == 0 {
        return Err(Error::InvalidConfig("size and repetitions must be positive".into()));
    }
    let set = random_solution_set(3, size, size, seed)?;
    let image = smooth_image(size, size, seed.wrapping_add(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let times = pool.install(|| -> Result<Vec<f64>> {
        // One untimed warm-up render.
        render_once(&set, &image)?;
        (0..repetitions)
            .map(|_| {
                let start = Instant::now();
                let out = render_once(&set, &image)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(out);
                Ok(ms)
            })
            .collect()
    })?;
    Ok(BenchReport {
        size,
        repetitions,
        threads,
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn render_once(set: &SolutionSet, image: &Image) -> Result<Image> {
    set.render_with_luts(image, &set.luts(DEFAULT_LUT_RESOLUTION))
}
