use nuwa::owd::KalmanConfig;

/// Hand-expanded scalar recursion of the two-state filter, written without
/// matrix code so it shares nothing with the implementation.
#[derive(Debug, Clone, Copy)]
pub struct ScalarOracle {
    pub b: f64,
    pub q: f64,
    p11: f64,
    p12: f64,
    p22: f64,
    q11: f64,
    q22: f64,
    r: f64,
}

impl ScalarOracle {
    pub fn new(cfg: &KalmanConfig) -> Self {
        ScalarOracle {
            b: cfg.inv_capacity0,
            q: 0.0,
            p11: cfg.initial_covariance[0],
            p12: 0.0,
            p22: cfg.initial_covariance[1],
            q11: cfg.process_noise[0],
            q22: cfg.process_noise[1],
            r: cfg.measurement_noise_var,
        }
    }

    pub fn step(&mut self, d_c: f64, dm: f64) -> (f64, f64) {
        let p11 = self.p11 + self.q11;
        let p12 = self.p12;
        let p22 = self.p22 + self.q22;
        // P·Hᵀ with H = [dm, 1]
        let ph1 = p11 * dm + p12;
        let ph2 = p12 * dm + p22;
        let s = dm * ph1 + ph2 + self.r;
        let k1 = ph1 / s;
        let k2 = ph2 / s;
        let innov = d_c - (dm * self.b + self.q);
        self.b += k1 * innov;
        self.q += k2 * innov;
        // P − K·(H·P)
        self.p11 = p11 - k1 * ph1;
        self.p12 = p12 - k1 * ph2;
        self.p22 = p22 - k2 * ph2;
        if self.q < 0.0 {
            self.q = 0.0;
        }
        (self.q, k2)
    }
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()) + 1e-6
}
