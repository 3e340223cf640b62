use serde::{Deserialize, Serialize};

/// Bounds applied to binomial means so logs and weights stay finite.
pub const MU_EPS: f64 = 1e-10;

/// Response distribution with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Normal response, identity link.
    #[default]
    Gaussian,
    /// Bernoulli response, logit link.
    Binomial,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
        }
    }

    /// Response function h, mu = h(eta).
    pub fn linkinv(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => {
                let e = eta.clamp(-700.0, 700.0);
                (1.0 / (1.0 + (-e).exp())).clamp(MU_EPS, 1.0 - MU_EPS)
            }
        }
    }

    /// Link function g = h^-1.
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Binomial => {
                let m = mu.clamp(MU_EPS, 1.0 - MU_EPS);
                (m / (1.0 - m)).ln()
            }
        }
    }

    /// dmu/deta evaluated at the mean.
    pub fn mu_eta(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => mu * (1.0 - mu),
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => mu * (1.0 - mu),
        }
    }

    /// Contribution of one observation to the deviance.
    pub fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Binomial => {
                let m = mu.clamp(MU_EPS, 1.0 - MU_EPS);
                2.0 * (xlogy(y, y / m) + xlogy(1.0 - y, (1.0 - y) / (1.0 - m)))
            }
        }
    }

    pub fn deviance(self, y: &[f64], mu: &[f64]) -> f64 {
        y.iter().zip(mu).map(|(&a, &b)| self.unit_deviance(a, b)).sum()
    }

    /// Log-likelihood at the fitted means. The gaussian variance is profiled
    /// out at its maximum-likelihood value RSS/n.
    pub fn log_likelihood(self, y: &[f64], mu: &[f64]) -> f64 {
        match self {
            Family::Gaussian => {
                let n = y.len() as f64;
                let rss = self.deviance(y, mu).max(f64::MIN_POSITIVE * n);
                -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0)
            }
            Family::Binomial => y
                .iter()
                .zip(mu)
                .map(|(&yi, &m)| {
                    let m = m.clamp(MU_EPS, 1.0 - MU_EPS);
                    yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
                })
                .sum(),
        }
    }

    /// Starting mean for IRLS.
    pub fn initial_mu(self, y: f64) -> f64 {
        match self {
            Family::Gaussian => y,
            Family::Binomial => (y + 0.5) / 2.0,
        }
    }

    /// Whether the dispersion parameter is estimated (gaussian) or fixed at 1.
    pub fn has_dispersion(self) -> bool {
        self == Family::Gaussian
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "binomial" | "logit" => Ok(Family::Binomial),
            other => Err(format!("unknown family '{other}' (expected gaussian or binomial)")),
        }
    }
}
