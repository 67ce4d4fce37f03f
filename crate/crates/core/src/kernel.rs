use core::fmt;
use core::str::FromStr;

use crate::error::Error;

/// Symmetric kernel `K(u) = k(|u|)` with `k` supported on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Kernel {
    /// `k(u) = 1 - u`
    #[default]
    Triangular,
    /// `k(u) = 1`
    Uniform,
    /// `k(u) = 3/4 (1 - u^2)`
    Epanechnikov,
}

impl Kernel {
    /// One-sided profile `k(u)` for `u >= 0`. Returns zero for `u > 1`.
    ///
    /// At `u = 1` exactly the profile value is returned, which is zero for
    /// the triangular and Epanechnikov kernels and one for the uniform.
    pub fn profile(self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        match self {
            Kernel::Triangular => 1.0 - u,
            Kernel::Uniform => 1.0,
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
        }
    }

    /// `K(u)` for the two-sided kernel.
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        self.profile(u.abs())
    }

    /// Whether `k(1) = 0`, i.e. observations exactly at the bandwidth edge
    /// carry no weight.
    pub fn vanishes_at_edge(self) -> bool {
        self.profile(1.0) == 0.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Triangular => "triangular",
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

/// Convenience free function mirroring [`Kernel::weight`].
pub fn kernel_weight(kernel: Kernel, u: f64) -> f64 {
    kernel.weight(u)
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tri" | "triangular" => Ok(Kernel::Triangular),
            "uni" | "uniform" => Ok(Kernel::Uniform),
            "epa" | "epanechnikov" => Ok(Kernel::Epanechnikov),
            other => Err(Error::Domain(alloc::format!("unknown kernel '{other}'"))),
        }
    }
}
