//! Robust losses ρ(h) over a non-negative residual magnitude `h`.
//!
//! Every loss behaves like `h²/2` near zero, so the IRLS weight
//! `ρ'(h)/h` tends to one there.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Squared,
    Huber,
    PseudoHuber,
    Cauchy,
    Tukey,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Squared,
        LossKind::Huber,
        LossKind::PseudoHuber,
        LossKind::Cauchy,
        LossKind::Tukey,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Huber => "huber",
            LossKind::PseudoHuber => "pseudo-huber",
            LossKind::Cauchy => "cauchy",
            LossKind::Tukey => "tukey",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossKind::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss '{s}'")))
    }
}

/// ρ(h).
pub fn robust_loss(h: f64, loss: LossKind, delta: f64) -> f64 {
    let a = h.abs();
    match loss {
        LossKind::Squared => 0.5 * h * h,
        LossKind::Huber => {
            if a <= delta {
                0.5 * h * h
            } else {
                delta * (a - 0.5 * delta)
            }
        }
        LossKind::PseudoHuber => {
            let u = h / delta;
            delta * delta * ((1.0 + u * u).sqrt() - 1.0)
        }
        LossKind::Cauchy => {
            let u = h / delta;
            0.5 * delta * delta * (u * u).ln_1p()
        }
        LossKind::Tukey => {
            let d6 = delta * delta / 6.0;
            if a <= delta {
                let u = h / delta;
                let t = 1.0 - u * u;
                d6 * (1.0 - t * t * t)
            } else {
                d6
            }
        }
    }
}

/// IRLS weight ρ'(h)/h for `h ≥ 0`, continuous at zero.
pub fn irls_weight(h: f64, loss: LossKind, delta: f64) -> f64 {
    let a = h.abs();
    match loss {
        LossKind::Squared => 1.0,
        LossKind::Huber => {
            if a <= delta {
                1.0
            } else {
                delta / a
            }
        }
        LossKind::PseudoHuber => {
            let u = h / delta;
            1.0 / (1.0 + u * u).sqrt()
        }
        LossKind::Cauchy => {
            let u = h / delta;
            1.0 / (1.0 + u * u)
        }
        LossKind::Tukey => {
            if a <= delta {
                let u = h / delta;
                let t = 1.0 - u * u;
                t * t
            } else {
                0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        assert_eq!(robust_loss(0.0, LossKind::Huber, 0.1), 0.0);
        let d = 0.1;
        let inner = 0.5 * d * d;
        let outer = d * (d - 0.5 * d);
        assert!((robust_loss(d, LossKind::Huber, d) - inner).abs() < 1e-15);
        assert!((inner - outer).abs() < 1e-15);
        assert!((robust_loss(0.2, LossKind::Huber, 0.1) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn tukey_saturates() {
        for h in [1.0, 1.5, 10.0, -3.0] {
            assert_eq!(robust_loss(h, LossKind::Tukey, 1.0), 1.0 / 6.0);
        }
    }

    #[test]
    fn pseudo_huber_at_delta() {
        let d = 0.3;
        let expect = d * d * (2f64.sqrt() - 1.0);
        assert!((robust_loss(d, LossKind::PseudoHuber, d) - expect).abs() < 1e-15);
    }

    #[test]
    fn weights_are_derivative_over_h() {
        for loss in LossKind::ALL {
            for &h in &[0.01, 0.05, 0.3, 0.9, 2.0] {
                let eps = 1e-6;
                let d = (robust_loss(h + eps, loss, 0.5) - robust_loss(h - eps, loss, 0.5)) / (2.0 * eps);
                let w = irls_weight(h, loss, 0.5);
                assert!((d - w * h).abs() < 1e-7, "{loss} h={h}: {d} vs {}", w * h);
            }
        }
    }

    #[test]
    fn parse_names() {
        for loss in LossKind::ALL {
            assert_eq!(loss.name().parse::<LossKind>().unwrap(), loss);
        }
        assert!("l1".parse::<LossKind>().is_err());
    }
}
