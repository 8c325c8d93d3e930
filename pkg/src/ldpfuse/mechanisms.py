"""Randomizers that perturb a single numerical value under epsilon-LDP.

Four mechanisms are provided:

* :class:`LaplaceMechanism` adds Laplace noise calibrated to the width of
  the input domain.  Output is unbounded.
* :class:`StochasticRounding` rounds the input to one of two atoms ``-a``
  and ``+a`` with an input-dependent probability.
* :class:`PiecewiseMechanism` returns a value from a bounded interval with
  a high-density band that tracks the input and a low-density remainder.
* :class:`SquareWaveMechanism` returns a value from ``[-b, 1 + b]`` with a
  high-density band of half-width ``b`` centred on the input.

Each satisfies the epsilon-LDP bound: for any inputs ``v, v'`` in the
mechanism's input domain and any output ``x``, the density (or mass) ratio
``rho(x | v) / rho(x | v')`` is at most ``exp(epsilon)``.

Values handled by the estimators in this package live on the canonical
domain ``[-1, 1]``.  Laplace, stochastic rounding, and the piecewise
mechanism use that domain natively.  The square-wave mechanism works on
``[0, 1]`` internally and is bridged through the affine map
``u = (v + 1) / 2``; the ``*_canonical`` methods apply the bridge so
callers never deal with per-mechanism domains.

All mechanisms are unbiased after their ``unbias`` transform:
``E[unbias(output) | v] == v`` on the native domain, and
``E[unbias_canonical(output) | v] == v`` on the canonical one.
"""

from __future__ import annotations

import math

import numpy as np

CANONICAL_DOMAIN = (-1.0, 1.0)


class DomainError(ValueError):
    """An input value lies outside the domain a mechanism accepts."""


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not math.isfinite(epsilon) or epsilon <= 0.0:
        raise ValueError(f"privacy budget must be a positive finite number, got {epsilon!r}")
    return epsilon


class Mechanism:
    """One service's randomizer at a fixed privacy budget.

    Subclasses implement the native-domain interface (``perturb``,
    ``density``, ``variance``, ``unbias``, ...).  The canonical-domain
    wrappers defined here validate against ``[-1, 1]`` and apply the
    affine bridge declared by ``to_native`` / ``from_native``.
    """

    kind: str = ""
    #: closed interval of accepted inputs, in the mechanism's own domain
    input_domain: tuple[float, float] = CANONICAL_DOMAIN

    def __init__(self, epsilon: float):
        self.epsilon = _check_epsilon(epsilon)

    # -- native-domain interface ------------------------------------------

    @property
    def output_support(self) -> tuple[float, float]:
        """Closed interval containing every possible output."""
        raise NotImplementedError

    def perturb(self, value: float, rng: np.random.Generator) -> float:
        """Perturb one value from the native input domain."""
        return float(self.perturb_batch(np.asarray([value], dtype=float), rng)[0])

    def perturb_batch(self, values, rng: np.random.Generator) -> np.ndarray:
        """Perturb an array of native-domain values independently."""
        values = np.asarray(values, dtype=float)
        self._check_native(values)
        return self._sample(values, rng)

    def density(self, x, value: float):
        """Output density (or mass, for discrete outputs) at ``x`` given input ``value``.

        ``x`` may be a scalar or an array; points outside the output
        support give 0.
        """
        raise NotImplementedError

    def variance(self, value):
        """Variance of the raw output for a native-domain input."""
        raise NotImplementedError

    def expectation(self, value):
        """Mean of the raw output for a native-domain input."""
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        return float(value) if value.ndim == 0 else value

    def unbias(self, output):
        """Transform raw output into an unbiased estimate of the native input."""
        return output

    def unbiased_variance(self, value):
        """Variance of ``unbias(output)`` for a native-domain input."""
        return self.variance(value)

    # -- canonical-domain bridge ------------------------------------------

    #: |d canonical / d native| of ``from_native``; variances scale by its square
    _from_native_scale = 1.0

    def to_native(self, value):
        """Map a canonical ``[-1, 1]`` value into the native input domain."""
        return value

    def from_native(self, value):
        """Inverse of :meth:`to_native`."""
        return value

    def perturb_canonical(self, value: float, rng: np.random.Generator) -> float:
        return float(self.perturb_canonical_batch(np.asarray([value], dtype=float), rng)[0])

    def perturb_canonical_batch(self, values, rng: np.random.Generator) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        _check_interval(values, CANONICAL_DOMAIN, "canonical value")
        return self._sample(np.asarray(self.to_native(values), dtype=float), rng)

    def unbias_canonical(self, output):
        """Unbiased canonical-domain estimate from a raw output."""
        return self.from_native(self.unbias(output))

    def canonical_unbiased_variance(self, value):
        """Variance of ``unbias_canonical(output)`` for a canonical input."""
        value = np.asarray(value, dtype=float)
        _check_interval(value, CANONICAL_DOMAIN, "canonical value")
        out = self.unbiased_variance(self.to_native(value)) * self._from_native_scale**2
        return float(out) if np.ndim(out) == 0 else out

    # -- helpers ------------------------------------------------------------

    def _sample(self, natives: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _check_native(self, values: np.ndarray) -> None:
        _check_interval(values, self.input_domain, f"{self.kind or 'mechanism'} input")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(epsilon={self.epsilon!r})"


def _check_interval(values: np.ndarray, domain: tuple[float, float], what: str) -> None:
    lo, hi = domain
    bad = (values < lo) | (values > hi) | ~np.isfinite(values)
    if np.any(bad):
        first = np.asarray(values)[bad].flat[0] if np.ndim(values) else values
        raise DomainError(f"{what} {first!r} outside [{lo}, {hi}]")


class LaplaceMechanism(Mechanism):
    """Additive Laplace noise on ``[-1, 1]``.

    The scale is ``2 / epsilon`` (domain width over budget), so the density
    ratio between any two inputs is at most ``exp(|v - v'| * epsilon / 2)
    <= exp(epsilon)``.  Output is unbiased with constant variance
    ``8 / epsilon**2`` and unbounded support.
    """

    kind = "laplace"

    def __init__(self, epsilon: float):
        super().__init__(epsilon)
        self.scale = 2.0 / self.epsilon

    @property
    def output_support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def _sample(self, natives: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        # Inverse-CDF sampling keeps the draw at one uniform per value.
        u = rng.random(natives.shape)
        w = u - 0.5
        return natives - self.scale * np.sign(w) * np.log1p(-2.0 * np.abs(w))

    def density(self, x, value: float):
        self._check_native(np.asarray(value, dtype=float))
        x = np.asarray(x, dtype=float)
        out = np.exp(-np.abs(x - value) / self.scale) / (2.0 * self.scale)
        return float(out) if out.ndim == 0 else out

    def variance(self, value):
        value = np.asarray(value, dtype=float)
        out = np.full(value.shape, 2.0 * self.scale**2)
        return float(out) if out.ndim == 0 else out


class StochasticRounding(Mechanism):
    """Randomized rounding of ``v`` in ``[-1, 1]`` to one of two atoms.

    The output is ``+a`` with probability ``p(v)`` and ``-a`` otherwise,
    where::

        a    = (exp(eps) + 1) / (exp(eps) - 1)
        p(v) = v * (exp(eps) - 1) / (2 * exp(eps) + 2) + 1/2

    This is unbiased with variance ``a**2 - v**2``.  The mass ratio between
    inputs is maximised at the domain endpoints where it equals
    ``exp(eps)`` exactly.
    """

    kind = "sr"

    def __init__(self, epsilon: float):
        super().__init__(epsilon)
        e = math.exp(self.epsilon)
        self.atom = (e + 1.0) / (e - 1.0)
        self._slope = (e - 1.0) / (2.0 * e + 2.0)

    @property
    def output_support(self) -> tuple[float, float]:
        return (-self.atom, self.atom)

    @property
    def atoms(self) -> np.ndarray:
        """The two possible outputs, ascending."""
        return np.array([-self.atom, self.atom])

    def prob_positive(self, value):
        """Probability of emitting ``+atom`` for a native input."""
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        out = self._slope * value + 0.5
        return float(out) if out.ndim == 0 else out

    def _sample(self, natives: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = self._slope * natives + 0.5
        u = rng.random(natives.shape)
        return np.where(u < p, self.atom, -self.atom)

    def density(self, x, value: float):
        """Probability mass at ``x``; 0 for anything that is not an atom."""
        p = self.prob_positive(value)
        x = np.asarray(x, dtype=float)
        tol = 1e-9 * max(1.0, self.atom)
        out = np.where(
            np.abs(x - self.atom) <= tol,
            p,
            np.where(np.abs(x + self.atom) <= tol, 1.0 - p, 0.0),
        )
        return float(out) if out.ndim == 0 else out

    def variance(self, value):
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        out = self.atom**2 - value**2
        return float(out) if out.ndim == 0 else out


class PiecewiseMechanism(Mechanism):
    """Bounded perturbation of ``v`` in ``[-1, 1]`` with a tracking band.

    Outputs lie in ``[-c, c]`` with ``c = (exp(eps/2) + 1) / (exp(eps/2) - 1)``.
    Density is ``high`` on the band ``[band_lo(v), band_lo(v) + c - 1]`` and
    ``low`` elsewhere in the support, with ``high / low == exp(eps)``::

        high = (exp(eps) - exp(eps/2)) / (2 * (exp(eps/2) + 1))
        low  = (exp(eps/2) - 1) / (2 * (exp(eps/2) + exp(eps)))

    Unbiased, with variance
    ``v**2 / (exp(eps/2) - 1) + (exp(eps/2) + 3) / (3 * (exp(eps/2) - 1)**2)``.
    """

    kind = "pm"

    def __init__(self, epsilon: float):
        super().__init__(epsilon)
        e = math.exp(self.epsilon)
        s = math.exp(self.epsilon / 2.0)
        self.cutoff = (s + 1.0) / (s - 1.0)
        self.density_high = (e - s) / (2.0 * (s + 1.0))
        self.density_low = (s - 1.0) / (2.0 * (s + e))
        # total band mass: (c - 1) * high == s / (s + 1)
        self._band_prob = s / (s + 1.0)

    @property
    def output_support(self) -> tuple[float, float]:
        return (-self.cutoff, self.cutoff)

    def band(self, value):
        """The high-density interval ``(lo, hi)`` for a native input."""
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        lo = (self.cutoff + 1.0) / 2.0 * value - (self.cutoff - 1.0) / 2.0
        return lo, lo + (self.cutoff - 1.0)

    def _sample(self, natives: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        c = self.cutoff
        lo = (c + 1.0) / 2.0 * natives - (c - 1.0) / 2.0
        hi = lo + (c - 1.0)
        pick_band = rng.random(natives.shape) < self._band_prob
        u = rng.random(natives.shape)
        in_band = lo + u * (c - 1.0)
        # The remainder splits into [-c, lo] and [hi, c]; pick a point
        # uniformly over their union (total length lo + c + c - hi).
        left_len = lo + c
        t = u * (left_len + (c - hi))
        outside = np.where(t < left_len, -c + t, hi + (t - left_len))
        return np.where(pick_band, in_band, outside)

    def density(self, x, value: float):
        lo, hi = self.band(value)
        x = np.asarray(x, dtype=float)
        c = self.cutoff
        in_support = (x >= -c) & (x <= c)
        in_band = (x >= lo) & (x <= hi)
        out = np.where(in_band, self.density_high, np.where(in_support, self.density_low, 0.0))
        return float(out) if out.ndim == 0 else out

    def variance(self, value):
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        s = math.exp(self.epsilon / 2.0)
        out = value**2 / (s - 1.0) + (s + 3.0) / (3.0 * (s - 1.0) ** 2)
        return float(out) if out.ndim == 0 else out


class SquareWaveMechanism(Mechanism):
    """Square-wave perturbation of ``v`` in ``[0, 1]``.

    Outputs lie in ``[-b, 1 + b]``.  Density is ``p`` on the band
    ``[v - b, v + b]`` and ``q`` elsewhere in the support, with
    ``p / q == exp(eps)``::

        b = (eps * exp(eps) - exp(eps) + 1) / (2 * exp(eps) * (exp(eps) - eps - 1))
        p = exp(eps) / (2 * b * exp(eps) + 1)
        q = 1 / (2 * b * exp(eps) + 1)

    The raw output is biased; ``unbias`` rescales it through the closed
    form of the conditional mean, which is affine in ``v``.  Canonical
    ``[-1, 1]`` values are bridged through ``u = (v + 1) / 2``.
    """

    kind = "sw"
    input_domain = (0.0, 1.0)
    _from_native_scale = 2.0

    def __init__(self, epsilon: float):
        super().__init__(epsilon)
        eps = self.epsilon
        e = math.exp(eps)
        # expm1 keeps the small-eps cancellation in check
        self.band_halfwidth = (eps * e - math.expm1(eps)) / (2.0 * e * (math.expm1(eps) - eps))
        b = self.band_halfwidth
        self.density_in = e / (2.0 * b * e + 1.0)
        self.density_out = 1.0 / (2.0 * b * e + 1.0)
        # E[output | v] = intercept + slope * v
        self._slope = 2.0 * b * (self.density_in - self.density_out)
        self._intercept = self.density_out / 2.0 + self.density_out * b

    @property
    def output_support(self) -> tuple[float, float]:
        b = self.band_halfwidth
        return (-b, 1.0 + b)

    def band(self, value):
        """The high-density interval ``(lo, hi)`` for a native input."""
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        b = self.band_halfwidth
        return value - b, value + b

    def _sample(self, natives: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        b = self.band_halfwidth
        in_prob = 2.0 * b * self.density_in
        pick_band = rng.random(natives.shape) < in_prob
        u = rng.random(natives.shape)
        in_band = natives - b + u * (2.0 * b)
        # Outside the band the support splits into [-b, v - b] and
        # [v + b, 1 + b] whose lengths sum to exactly 1.
        t = u
        outside = np.where(t < natives, -b + t, b + t)
        return np.where(pick_band, in_band, outside)

    def density(self, x, value: float):
        lo, hi = self.band(value)
        x = np.asarray(x, dtype=float)
        b = self.band_halfwidth
        in_support = (x >= -b) & (x <= 1.0 + b)
        in_band = (x >= lo) & (x <= hi)
        out = np.where(in_band, self.density_in, np.where(in_support, self.density_out, 0.0))
        return float(out) if out.ndim == 0 else out

    def expectation(self, value):
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        out = self._intercept + self._slope * value
        return float(out) if out.ndim == 0 else out

    def variance(self, value):
        value = np.asarray(value, dtype=float)
        self._check_native(value)
        b = self.band_halfwidth
        p, q = self.density_in, self.density_out
        second = (
            q / 3.0 * ((value - b) ** 3 + b**3 + (1.0 + b) ** 3 - (value + b) ** 3)
            + 2.0 * b * p / 3.0 * (b**2 + 3.0 * value**2)
        )
        mean = self._intercept + self._slope * value
        out = second - mean**2
        return float(out) if out.ndim == 0 else out

    def unbias(self, output):
        output = np.asarray(output, dtype=float)
        out = (output - self._intercept) / self._slope
        return float(out) if out.ndim == 0 else out

    def unbiased_variance(self, value):
        value = np.asarray(value, dtype=float)
        out = self.variance(value) / self._slope**2
        return float(out) if np.ndim(out) == 0 else out

    def to_native(self, value):
        return (np.asarray(value, dtype=float) + 1.0) / 2.0

    def from_native(self, value):
        out = 2.0 * np.asarray(value, dtype=float) - 1.0
        return float(out) if out.ndim == 0 else out


MECHANISM_KINDS = {
    "laplace": LaplaceMechanism,
    "sr": StochasticRounding,
    "pm": PiecewiseMechanism,
    "sw": SquareWaveMechanism,
}


def make_mechanism(kind: str, epsilon: float) -> Mechanism:
    """Instantiate a mechanism by kind string ("laplace", "sr", "pm", "sw")."""
    try:
        cls = MECHANISM_KINDS[kind.strip().lower()]
    except (KeyError, AttributeError):
        valid = ", ".join(sorted(MECHANISM_KINDS))
        raise ValueError(f"unknown mechanism kind {kind!r}; expected one of: {valid}") from None
    return cls(epsilon)
