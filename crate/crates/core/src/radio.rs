//! Radio parameters that fix every dimension and axis scaling downstream.

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Upper bound on complex matrix elements any single stage may allocate
/// (2^26, i.e. 8192 x 8192, about 1 GiB of `Complex64`).
pub const MAX_MATRIX_ELEMENTS: usize = 1 << 26;

/// Time-division duplex schedule: each period starts with `dl_symbols`
/// downlink symbols followed by uplink symbols that carry no sensing signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TddPattern {
    pub period_symbols: usize,
    pub dl_symbols: usize,
}

impl TddPattern {
    /// 104 downlink + 36 uplink symbols, repeating every 1.25 ms.
    pub const FULL_SCALE: TddPattern = TddPattern {
        period_symbols: 140,
        dl_symbols: 104,
    };

    /// 6 downlink + 2 uplink symbols: eight repetitions per 64-symbol frame,
    /// the same number of periods per frame as the full-scale pattern.
    pub const DESK: TddPattern = TddPattern {
        period_symbols: 8,
        dl_symbols: 6,
    };

    /// Every symbol is downlink.
    pub fn all_downlink(symbols: usize) -> Self {
        Self {
            period_symbols: symbols,
            dl_symbols: symbols,
        }
    }

    pub fn is_downlink(&self, symbol: usize) -> bool {
        symbol % self.period_symbols < self.dl_symbols
    }

    pub fn validate(&self, symbols: usize) -> Result<()> {
        if self.dl_symbols == 0 || self.dl_symbols > self.period_symbols {
            return Err(Error::Config(format!(
                "TDD pattern needs 0 < dl_symbols ({}) <= period_symbols ({})",
                self.dl_symbols, self.period_symbols
            )));
        }
        if !symbols.is_multiple_of(self.period_symbols) {
            return Err(Error::Config(format!(
                "{} symbols per frame is not a multiple of the TDD period {}",
                symbols, self.period_symbols
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// N
    pub subcarriers: usize,
    /// M
    pub symbols: usize,
    pub symbol_time_s: f64,
    pub cyclic_prefix_s: f64,
    /// Symbol time including the cyclic prefix; the Doppler sampling interval.
    pub total_symbol_time_s: f64,
    pub tdd: TddPattern,
}

impl RadioConfig {
    /// 5G FR2 numerology 3 proof-of-concept parameters.
    pub fn full_scale() -> Self {
        Self {
            carrier_hz: 27.4e9,
            subcarrier_spacing_hz: 120e3,
            subcarriers: 1584,
            symbols: 1120,
            symbol_time_s: 8.33e-6,
            cyclic_prefix_s: 0.59e-6,
            total_symbol_time_s: 8.92e-6,
            tdd: TddPattern::FULL_SCALE,
        }
    }

    /// 64 x 64 desk-scale grid. Every 24th subcarrier and every 16th symbol
    /// of the full-scale frame: 184 MHz span (0.81 m range bins, 52 m
    /// unambiguous range) and a 9.1 ms observation (0.6 m/s velocity bins,
    /// ±19 m/s unambiguous).
    pub fn desk() -> Self {
        Self {
            carrier_hz: 27.4e9,
            subcarrier_spacing_hz: 24.0 * 120e3,
            subcarriers: 64,
            symbols: 64,
            symbol_time_s: 16.0 * 8.33e-6,
            cyclic_prefix_s: 16.0 * 0.59e-6,
            total_symbol_time_s: 16.0 * 8.92e-6,
            tdd: TddPattern::DESK,
        }
    }

    pub fn with_dims(mut self, subcarriers: usize, symbols: usize) -> Self {
        self.subcarriers = subcarriers;
        self.symbols = symbols;
        self
    }

    pub fn with_tdd(mut self, tdd: TddPattern) -> Self {
        self.tdd = tdd;
        self
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.subcarriers as f64 * self.subcarrier_spacing_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.symbols == 0 {
            return Err(Error::Config("subcarrier and symbol counts must be at least 1".into()));
        }
        for (name, v) in [
            ("carrier", self.carrier_hz),
            ("subcarrier spacing", self.subcarrier_spacing_hz),
            ("symbol time", self.symbol_time_s),
            ("total symbol time", self.total_symbol_time_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{} must be positive, got {}", name, v)));
            }
        }
        if !(self.cyclic_prefix_s.is_finite() && self.cyclic_prefix_s >= 0.0) {
            return Err(Error::Config("cyclic prefix must be non-negative".into()));
        }
        let sum = self.symbol_time_s + self.cyclic_prefix_s;
        if ((sum - self.total_symbol_time_s) / self.total_symbol_time_s).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "total symbol time {} != symbol time {} + cyclic prefix {}",
                self.total_symbol_time_s, self.symbol_time_s, self.cyclic_prefix_s
            )));
        }
        self.tdd.validate(self.symbols)
    }

    /// Round-trip delay of a reflector at `range_m`.
    pub fn delay_s(range_m: f64) -> f64 {
        2.0 * range_m / SPEED_OF_LIGHT
    }

    /// Monostatic Doppler shift; positive velocity (receding) gives a positive shift.
    pub fn doppler_hz(&self, velocity_mps: f64) -> f64 {
        2.0 * velocity_mps * self.carrier_hz / SPEED_OF_LIGHT
    }

    /// Range spanned by one delay bin of an `rows`-point transform.
    pub fn range_per_bin_m(&self, rows: usize) -> f64 {
        SPEED_OF_LIGHT / (2.0 * rows as f64 * self.subcarrier_spacing_hz)
    }

    /// Radial velocity spanned by one Doppler bin of a `cols`-point transform.
    pub fn velocity_per_bin_mps(&self, cols: usize) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.carrier_hz * cols as f64 * self.total_symbol_time_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_preset_matches_poc_table() {
        let r = RadioConfig::full_scale();
        assert_eq!(r.carrier_hz, 27.4e9);
        assert_eq!(r.subcarrier_spacing_hz, 120e3);
        assert_eq!(r.subcarriers, 1584);
        assert_eq!(r.symbols, 1120);
        assert_eq!(r.symbol_time_s, 8.33e-6);
        assert_eq!(r.cyclic_prefix_s, 0.59e-6);
        assert_eq!(r.total_symbol_time_s, 8.92e-6);
        assert!((r.bandwidth_hz() - 190.08e6).abs() < 1.0);
        assert_eq!(r.symbols / r.tdd.period_symbols, 8);
        r.validate().unwrap();
    }

    #[test]
    fn desk_preset_is_consistent() {
        let r = RadioConfig::desk();
        r.validate().unwrap();
        assert!((r.range_per_bin_m(64) - 0.8132).abs() < 1e-3);
        assert!((r.velocity_per_bin_mps(64) - 0.599).abs() < 1e-3);
    }

    #[test]
    fn tdd_validation() {
        assert!(TddPattern { period_symbols: 4, dl_symbols: 0 }.validate(8).is_err());
        assert!(TddPattern { period_symbols: 4, dl_symbols: 5 }.validate(8).is_err());
        assert!(TddPattern { period_symbols: 3, dl_symbols: 2 }.validate(8).is_err());
        TddPattern { period_symbols: 4, dl_symbols: 2 }.validate(8).unwrap();
    }

    #[test]
    fn symbol_time_consistency_is_enforced() {
        let mut r = RadioConfig::desk();
        r.cyclic_prefix_s *= 1.01;
        assert!(matches!(r.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn doppler_sign_convention() {
        let r = RadioConfig::full_scale();
        let fd = r.doppler_hz(1.5);
        assert!((fd - 2.0 * 1.5 * 27.4e9 / 299_792_458.0).abs() < 1e-9 && (fd - 274.19).abs() < 0.01, "{}", fd);
        assert!(r.doppler_hz(-1.5) < 0.0);
    }
}
