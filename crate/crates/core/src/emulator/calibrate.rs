use super::EmuError;
use serde::{Deserialize, Serialize};
use std::hint::black_box;
use std::time::Instant;

/// The number tested for primality once per work unit.
pub const KERNEL_PRIME: u64 = 1_000_003;

pub const DEFAULT_REFERENCE_UNITS: u64 = 20_000;

const SAMPLES: usize = 5;
const ATTEMPTS: usize = 3;
const TOLERANCE: f64 = 0.10;

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Spins for `units` trial-division primality tests.
pub fn burn(units: u64) -> u64 {
    let mut found = 0;
    for _ in 0..units {
        if is_prime(black_box(KERNEL_PRIME)) {
            found += 1;
        }
    }
    black_box(found)
}

/// Host throughput on the reference kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Calibration {
    pub units_per_ms: f64,
    pub reference_work_units: u64,
    #[serde(default)]
    pub samples_ms: Vec<f64>,
}

impl Calibration {
    /// A profile with a known throughput, for replaying earlier runs.
    pub fn fixed(units_per_ms: f64) -> Self {
        Self {
            units_per_ms,
            reference_work_units: DEFAULT_REFERENCE_UNITS,
            samples_ms: Vec::new(),
        }
    }

    /// Busy-work units so that `ref_delay_ms` of reference work takes
    /// `ref_delay_ms / rpi` milliseconds on this host.
    pub fn work_units(&self, ref_delay_ms: f64, rpi: f64) -> u64 {
        (ref_delay_ms / rpi * self.units_per_ms).round().max(0.0) as u64
    }
}

/// CPU seconds consumed by the calling thread, where the platform reports it.
#[cfg(unix)]
pub fn thread_cpu_s() -> Option<f64> {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    (rc == 0).then_some(ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9)
}

#[cfg(not(unix))]
pub fn thread_cpu_s() -> Option<f64> {
    None
}

/// Milliseconds of CPU time `units` of work take on this thread.
pub fn time_units_ms(units: u64) -> f64 {
    let wall = Instant::now();
    let cpu = thread_cpu_s();
    burn(units);
    match cpu.zip(thread_cpu_s()) {
        Some((a, b)) => (b - a) * 1e3,
        None => wall.elapsed().as_secs_f64() * 1e3,
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Times the kernel in thread CPU time and derives units per millisecond from the median sample.
pub fn calibrate(reference_work_units: u64) -> Result<Calibration, EmuError> {
    if reference_work_units == 0 {
        return Err(EmuError::InvalidWorkload("referenceWorkUnits must be positive".into()));
    }
    burn(reference_work_units / 4 + 1);
    let mut last = Vec::new();
    for _ in 0..ATTEMPTS {
        let samples: Vec<f64> = (0..SAMPLES)
            .map(|_| time_units_ms(reference_work_units))
            .collect();
        let m = median(&samples);
        if samples.iter().all(|s| ((s - m) / m).abs() <= TOLERANCE) {
            return Ok(Calibration {
                units_per_ms: reference_work_units as f64 / m,
                reference_work_units,
                samples_ms: samples,
            });
        }
        last = samples;
    }
    Err(EmuError::CalibrationUnstable { samples_ms: last })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_number_is_prime() {
        assert!(is_prime(KERNEL_PRIME));
        assert!(!is_prime(1_000_001));
        assert_eq!(burn(3), 3);
    }

    #[test]
    fn equal_rpi_gives_equal_work() {
        let c = Calibration::fixed(250.0);
        assert_eq!(c.work_units(20.0, 1.0), 5000);
        assert_eq!(c.work_units(20.0, 2.0), 2500);
        assert_eq!(c.work_units(7.0, 1.5), c.work_units(7.0, 1.5));
    }

    #[test]
    fn zero_units_rejected() {
        assert!(matches!(calibrate(0), Err(EmuError::InvalidWorkload(_))));
    }
}
