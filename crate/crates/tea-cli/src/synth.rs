//! Bundled synthetic dataset generator: an hourly AR(1) series with the
//! ETTh1 column schema, used by the smoke experiments when no real data is
//! present.
//!
//! Each column follows `x_{t+1} = φ·x_t + ε_t` with strong persistence
//! (φ = 0.9), plus a per-column offset and scale. Strong autocorrelation
//! makes the series learnable while keeping the persistence baseline
//! (repeat the last value over the whole horizon) clearly beatable at
//! multi-step horizons.

use std::fmt::Write as _;

use tea_core::rng::SeededRng;

pub const ETTH1_COLUMNS: [&str; 7] = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"];
pub const AR_COEFF: f64 = 0.9;

fn days_in_month(year: u32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if year % 4 == 0 && (year % 100 != 0 || year % 400 == 0) {
                29
            } else {
                28
            }
        }
        _ => unreachable!("month in 1..=12"),
    }
}

/// Hourly timestamps starting 2016-07-01 00:00:00, ETT-style format.
struct HourClock {
    year: u32,
    month: u32,
    day: u32,
    hour: u32,
}

impl HourClock {
    fn new() -> Self {
        Self {
            year: 2016,
            month: 7,
            day: 1,
            hour: 0,
        }
    }

    fn tick(&mut self) -> String {
        let s = format!(
            "{:04}-{:02}-{:02} {:02}:00:00",
            self.year, self.month, self.day, self.hour
        );
        self.hour += 1;
        if self.hour == 24 {
            self.hour = 0;
            self.day += 1;
            if self.day > days_in_month(self.year, self.month) {
                self.day = 1;
                self.month += 1;
                if self.month > 12 {
                    self.month = 1;
                    self.year += 1;
                }
            }
        }
        s
    }
}

/// Generates `rows` hourly observations as a CSV string with the ETTh1
/// header. Deterministic given the seed.
pub fn generate_csv(rows: usize, seed: u64) -> String {
    let ncols = ETTH1_COLUMNS.len();
    let mut rng = SeededRng::new(seed);
    // Per-column character: offset and scale.
    let offsets: Vec<f64> = (0..ncols).map(|j| j as f64 * 2.0 - 5.0).collect();
    let scales: Vec<f64> = (0..ncols).map(|j| 1.0 + 0.5 * j as f64).collect();
    let mut state: Vec<f64> = (0..ncols).map(|_| rng.normal()).collect();
    let mut clock = HourClock::new();
    let mut out = String::with_capacity(rows * 64);
    out.push_str("date");
    for c in ETTH1_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for _ in 0..rows {
        let ts = clock.tick();
        out.push_str(&ts);
        for j in 0..ncols {
            state[j] = AR_COEFF * state[j] + rng.normal() * (1.0 - AR_COEFF * AR_COEFF).sqrt();
            let v = offsets[j] + scales[j] * state[j];
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}
