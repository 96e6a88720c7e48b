"""Exception types shared across the package.

Input/validation problems derive from ValueError so callers can treat
them uniformly; computation-budget failures derive from RuntimeError.
"""


class AsymmetricLaw(ValueError):
    """Some support point x has p(x) != p(-x)."""


class NotAperiodic(ValueError):
    """The lattice generated by the support is a proper sublattice of Z^d."""


class BadProbabilities(ValueError):
    """Probabilities negative or not summing to 1 within tolerance."""


class DimensionTooSmall(ValueError):
    """d < 3; the walk would be recurrent and nothing here applies."""


class RadiusTooLarge(ValueError):
    """Ball enumeration would exceed the configured point cap."""


class SpectrumDegenerate(ValueError):
    """The step law's characteristic function hits 1 away from the origin."""


class NoConvergence(RuntimeError):
    """Quadrature failed to reach the requested tolerance within budget."""


class BoxTooSmall(RuntimeError):
    """Convolution box leaked more than the allowed probability mass."""


class MissingGreenValue(KeyError):
    """A requested site is not present in the Green table."""


class OriginNotAllowed(ValueError):
    """Operation undefined at x = 0."""


class AsymptoticMismatch(RuntimeError):
    """Empirical fit of G(x)*|x|^(d-2) rejects the closed-form constant."""


class OutOfDomain(ValueError):
    """Generating-function argument outside its convergence window."""


class MemoryCap(RuntimeError):
    """A sparse structure or path buffer would exceed its configured cap."""


class MissingConstants(KeyError):
    """Per-site constants not tabulated for a point the analysis needs."""


class PackingRange(RuntimeError):
    """Walk left the coordinate range representable by packed keys."""


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""
