use serde::{Deserialize, Serialize};

/// Symmetric second-order kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Gaussian,
    /// Biweight, `15/16 (1 - u^2)^2` on `[-1, 1]`.
    Quartic,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Kernel::Quartic => {
                if u.abs() <= 1.0 {
                    let w = 1.0 - u * u;
                    0.9375 * w * w
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width of the support, `None` for unbounded kernels.
    pub fn support(self) -> Option<f64> {
        match self {
            Kernel::Epanechnikov | Kernel::Quartic => Some(1.0),
            Kernel::Gaussian => None,
        }
    }

    /// `mu_2 = int u^2 K(u) du`.
    pub fn second_moment(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.2,
            Kernel::Gaussian => 1.0,
            Kernel::Quartic => 1.0 / 7.0,
        }
    }

    /// Numerical moments `(int K, int u K, int u^2 K)` by composite Simpson on a fine grid.
    pub fn numeric_moments(self) -> (f64, f64, f64) {
        let half = self.support().unwrap_or(12.0);
        let steps = 20_000usize;
        let h = 2.0 * half / steps as f64;
        let mut m = (0.0, 0.0, 0.0);
        for i in 0..=steps {
            let u = -half + i as f64 * h;
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let k = self.eval(u) * w;
            m.0 += k;
            m.1 += u * k;
            m.2 += u * u * k;
        }
        let s = h / 3.0;
        (m.0 * s, m.1 * s, m.2 * s)
    }
}
