//! Physical constants and unit conversions.

/// Magnetic flux quantum (Wb).
pub const PHI0: f64 = 2.067833848e-15;

/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380649e-23;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_round_trip() {
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
        assert!((dbm_to_watts(-30.0) - 1e-6).abs() < 1e-20);
        for dbm in [-120.0, -98.0, -3.0, 10.0] {
            assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-9);
        }
    }
}
