"""Monte Carlo estimates with autocorrelation-aware error bars."""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

SOKAL_WINDOW = 5.0
MIN_BINS = 32


@dataclass(frozen=True)
class Estimate:
    """
    Scalar estimate from a (possibly correlated) sample series.

    stderr = std * sqrt(2 tau_int / n_samples); n_eff = n_samples / (2 tau_int).
    """

    mean: float
    stderr: float
    tau_int: float = 0.5
    n_eff: float = 0.0
    n_samples: int = 0
    diagnostics: dict = field(default_factory=dict)
    warnings: tuple = ()

    @classmethod
    def from_samples(cls, samples, independent=False):
        """
        Summarize a sample series.

        Args:
            samples: 1-D array of observations in chain order
            independent: skip the autocorrelation analysis (tau_int = 1/2)
        """
        x = np.asarray(samples, dtype=float).reshape(-1)
        n = x.size
        if n == 0:
            return cls(mean=math.nan, stderr=math.inf, tau_int=0.5, n_eff=0.0, n_samples=0)
        mean = float(x.mean())
        std = float(x.std(ddof=1)) if n > 1 else 0.0
        tau = 0.5 if independent else integrated_autocorrelation_time(x)
        stderr = std * math.sqrt(2.0 * tau / n)
        return cls(
            mean=mean,
            stderr=stderr,
            tau_int=tau,
            n_eff=n / (2.0 * tau),
            n_samples=n,
            diagnostics={"std": std, "binning_stderr": binning_error(x)},
        )

    @classmethod
    def exact(cls, value):
        """A deterministic value (zero error)."""
        return cls(mean=float(value), stderr=0.0, tau_int=0.5, n_eff=math.inf, n_samples=0)

    @property
    def relative_stderr(self):
        if self.mean == 0.0:
            return 0.0 if self.stderr == 0.0 else math.inf
        return self.stderr / abs(self.mean)

    def sigma_distance(self, value, extra_error=0.0):
        """|mean - value| in units of the combined error."""
        err = math.hypot(self.stderr, extra_error)
        diff = abs(self.mean - value)
        if err == 0.0:
            return 0.0 if diff == 0.0 else math.inf
        return diff / err

    def with_warning(self, message):
        return replace(self, warnings=self.warnings + (message,))

    def with_diagnostics(self, **extra):
        return replace(self, diagnostics={**self.diagnostics, **extra})

    def to_record(self):
        return {
            "value": self.mean,
            "stderr": self.stderr,
            "tau_int": self.tau_int,
            "n_eff": self.n_eff,
            "n_samples": self.n_samples,
            "diagnostics": dict(self.diagnostics),
            "warnings": list(self.warnings),
        }


def autocorrelation(x):
    """Normalized autocorrelation function rho(t), t = 0..n-1, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, n=size)
    acov = np.fft.irfft(f * np.conj(f), n=size)[:n]
    if acov[0] <= 0.0:
        return np.zeros(n)
    return acov / acov[0]


def integrated_autocorrelation_time(x, c=SOKAL_WINDOW):
    """
    tau_int = 1/2 + sum_{t=1}^{M} rho(t) with the automatic window M >= c tau_int(M).

    Returns 1/2 for constant or uncorrelated series.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2 or np.ptp(x) == 0.0:
        return 0.5
    rho = autocorrelation(x)
    taus = 0.5 + np.cumsum(rho[1:])
    windows = np.arange(1, taus.size + 1)
    ok = windows >= c * taus
    if not np.any(ok):
        log.debug("autocorrelation window never closed on %d samples", x.size)
        tau = taus[-1]
    else:
        tau = taus[np.argmax(ok)]
    return max(0.5, float(tau))


def binning_error(x, min_bins=MIN_BINS):
    """Largest standard error of bin means over bin sizes 1, 2, 4, ... keeping >= min_bins bins."""
    x = np.asarray(x, dtype=float)
    best = 0.0
    size = 1
    while x.size // size >= min_bins:
        nbins = x.size // size
        means = x[: nbins * size].reshape(nbins, size).mean(axis=1)
        best = max(best, float(means.std(ddof=1) / math.sqrt(nbins)))
        size *= 2
    return best


def combine(estimates):
    """
    Pool independent estimates of the same quantity (e.g. parallel chains).

    Weights are proportional to sample counts, so the result does not depend on
    the order in which the jobs finished, only on the order of the input list.
    """
    estimates = list(estimates)
    if len(estimates) == 1:
        return estimates[0]
    counts = np.array([e.n_samples for e in estimates], dtype=float)
    weights = counts / counts.sum()
    mean = float(np.sum(weights * [e.mean for e in estimates]))
    stderr = float(math.sqrt(np.sum((weights * [e.stderr for e in estimates]) ** 2)))
    tau = float(np.sum(weights * [e.tau_int for e in estimates]))
    binned = float(math.sqrt(np.sum((weights * [e.diagnostics.get("binning_stderr", 0.0)
                                                for e in estimates]) ** 2)))
    warnings = tuple(w for e in estimates for w in e.warnings)
    return Estimate(
        mean=mean,
        stderr=stderr,
        tau_int=tau,
        n_eff=float(sum(e.n_eff for e in estimates)),
        n_samples=int(counts.sum()),
        diagnostics={"binning_stderr": binned, "chains": len(estimates),
                     "chain_means": [e.mean for e in estimates]},
        warnings=warnings,
    )
