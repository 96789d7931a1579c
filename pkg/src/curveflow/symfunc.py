"""Admissible curvature functions on the positive cone.

The speed functions used by the flow are symmetric, concave, degree-one
homogeneous functions of the principal curvatures, defined on the open
positive cone.  Three families are provided:

* ``kth-root``   -- normalized k-th elementary symmetric root  H_k^(1/k)
* ``quotient``   -- curvature quotient  (H_n / H_l)^(1/(n-l))
* ``combined``   -- the average of the Gauss root and a quotient,
                    (H_n^(1/n) + (H_n/H_l)^(1/(n-l))) / 2

where H_k = sigma_k / binom(n, k).  The combined family additionally has
unbounded growth in any single curvature direction; the pure quotient with
l >= 1 does not, which ``check_structure`` detects.

All evaluation routines accept batched inputs: an array whose last axis has
length n is treated as a stack of cone points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Entries must exceed this (relative to the sup norm) to count as inside the
# open cone; below it the curvature functions degenerate.
CONE_RTOL = 1e-14

GROWTH_LADDER = (1.0, 10.0, 100.0, 1000.0, 10000.0)


class ConeViolationError(ValueError):
    """A vector left the open positive cone."""

    def __init__(self, message, min_entry=None):
        super().__init__(message)
        self.min_entry = min_entry


def _check_cone(lam: np.ndarray) -> None:
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0:
        raise ValueError("empty curvature vector")
    if not np.all(np.isfinite(lam)):
        raise ConeViolationError("non-finite curvature entry")
    sup = np.max(np.abs(lam), axis=-1, keepdims=True)
    floor = CONE_RTOL * np.maximum(1.0, sup)
    if np.any(lam <= floor):
        bad = float(np.min(lam))
        raise ConeViolationError(
            f"curvature vector leaves the positive cone (min entry {bad:.3e})",
            min_entry=bad,
        )


@dataclass(frozen=True)
class ConeVector:
    """A point in the open positive cone (principal-curvature vector)."""

    entries: tuple

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=float)
        _check_cone(arr)
        object.__setattr__(self, "entries", tuple(float(v) for v in arr))

    @property
    def n(self) -> int:
        return len(self.entries)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.entries, dtype=float)


def elementary_symmetric(lam):
    """All elementary symmetric polynomials sigma_0..sigma_n of the last axis.

    Uses the coefficient recurrence for prod_i (x + lam_i): every update adds
    products of positive entries, so no cancellation occurs inside the cone.
    Returns an array with trailing axis of length n+1.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        li = lam[..., i]
        for k in range(min(i + 1, n), 0, -1):
            e[..., k] = e[..., k] + li * e[..., k - 1]
    return e


def sigma_k(lam, k: int) -> float:
    """Raw elementary symmetric polynomial sigma_k (sigma_0 = 1)."""
    arr = lam.as_array() if isinstance(lam, ConeVector) else np.asarray(lam, float)
    n = arr.shape[-1]
    if not 0 <= k <= n:
        raise IndexError(f"k={k} out of range for n={n}")
    out = elementary_symmetric(arr)[..., k]
    return float(out) if out.ndim == 0 else out


def normalized_sigma_k(lam, k: int):
    """H_k = sigma_k / binom(n, k); equals 1 at the unit vector."""
    arr = lam.as_array() if isinstance(lam, ConeVector) else np.asarray(lam, float)
    n = arr.shape[-1]
    if not 0 <= k <= n:
        raise IndexError(f"k={k} out of range for n={n}")
    return sigma_k(arr, k) / math.comb(n, k)


def _reduced_sigma(lam, i):
    """sigma_0..sigma_{n-1} of the vector with entry i removed."""
    reduced = np.delete(lam, i, axis=-1)
    return elementary_symmetric(reduced)


@dataclass(frozen=True)
class CurvatureFunction:
    """One member of the admissible speed-function families.

    ``scale`` multiplies the value and gradient; anything other than 1.0
    deliberately breaks normalization (used to probe scaling behaviour).
    """

    family: str
    n: int
    k: int = 0
    l: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if self.family == "kth-root":
            if not 1 <= self.k <= self.n:
                raise ValueError(f"kth-root requires 1 <= k <= n, got k={self.k}")
        elif self.family in ("quotient", "combined"):
            if not 0 <= self.l < self.n:
                raise ValueError(f"family {self.family!r} requires 0 <= l < n, got l={self.l}")
        else:
            raise ValueError(f"unknown family {self.family!r}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def kth_root(cls, n, k):
        return cls(family="kth-root", n=n, k=k)

    @classmethod
    def quotient(cls, n, l):
        return cls(family="quotient", n=n, l=l)

    @classmethod
    def combined(cls, n, l):
        return cls(family="combined", n=n, l=l)

    # -- evaluation ------------------------------------------------------------

    def value(self, lam):
        """f(lam) for a cone point or a batch of cone points."""
        arr = lam.as_array() if isinstance(lam, ConeVector) else np.asarray(lam, float)
        _check_cone(arr)
        return self.scale * self._raw_value(arr)

    def gradient(self, lam):
        """(f_1, ..., f_n); strictly positive inside the cone."""
        arr = lam.as_array() if isinstance(lam, ConeVector) else np.asarray(lam, float)
        _check_cone(arr)
        return self.scale * self._raw_gradient(arr)

    def _raw_value(self, lam):
        n = self.n
        e = elementary_symmetric(lam)
        if self.family == "kth-root":
            hk = e[..., self.k] / math.comb(n, self.k)
            return hk ** (1.0 / self.k)
        if self.family == "quotient":
            return self._quotient_value(e)
        gauss = e[..., n] ** (1.0 / n)
        return 0.5 * (gauss + self._quotient_value(e))

    def _quotient_value(self, e):
        n, l = self.n, self.l
        hn = e[..., n]
        hl = e[..., l] / math.comb(n, l)
        return (hn / hl) ** (1.0 / (n - l))

    def _raw_gradient(self, lam):
        n = self.n
        e = elementary_symmetric(lam)
        # dsig[..., i, k] = sigma_k of lam with entry i removed, so that
        # d sigma_{k+1} / d lam_i = dsig[..., i, k].
        dsig = np.stack([_reduced_sigma(lam, i) for i in range(n)], axis=-2)

        def grad_log_sigma(k):
            # d log sigma_k / d lam_i
            return dsig[..., :, k - 1] / e[..., None, k]

        if self.family == "kth-root":
            k = self.k
            f = (e[..., k] / math.comb(n, k)) ** (1.0 / k)
            return f[..., None] / k * grad_log_sigma(k)

        def quotient_grad():
            l = self.l
            q = self._quotient_value(e)
            glog = grad_log_sigma(n).copy()
            if l >= 1:
                glog -= grad_log_sigma(l)
            return q[..., None] / (n - l) * glog

        if self.family == "quotient":
            return quotient_grad()

        gauss = e[..., n] ** (1.0 / n)
        ggrad = gauss[..., None] / n * grad_log_sigma(n)
        return 0.5 * (ggrad + quotient_grad())


def eval_f(f: CurvatureFunction, lam):
    return f.value(lam)


def grad_f(f: CurvatureFunction, lam):
    return f.gradient(lam)


# ---------------------------------------------------------------------------
# Structure-condition suite
# ---------------------------------------------------------------------------

CONCAVITY_SLACK = -1e-10
HOMOGENEITY_RTOL = 1e-12
EULER_RTOL = 1e-10
NORMALIZATION_TOL = 1e-12

# Boundary-decay probe: scaling the smallest entry by eps over this ladder,
# the value must keep decreasing and end below half of where it started.
DECAY_LADDER = (1e-2, 1e-4, 1e-6, 1e-8)


@dataclass
class ConditionCheck:
    name: str
    passed: bool
    worst: float
    detail: str = ""


@dataclass
class StructureReport:
    f: CurvatureFunction
    sample_count: int
    seed: int
    rows: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def row(self, name: str) -> ConditionCheck:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def summary_lines(self):
        out = [f"structure report: {describe_family(self.f)} "
               f"({self.sample_count} samples, seed {self.seed})"]
        for r in self.rows:
            mark = "PASS" if r.passed else "FAIL"
            out.append(f"  [{mark}] {r.name:<22} worst={r.worst:+.3e} {r.detail}")
        return out


def describe_family(f: CurvatureFunction) -> str:
    if f.family == "kth-root":
        base = f"kth-root(n={f.n}, k={f.k})"
    elif f.family == "quotient":
        base = f"quotient(n={f.n}, l={f.l})"
    else:
        base = f"combined(n={f.n}, l={f.l})"
    if f.scale != 1.0:
        base += f" x{f.scale:g}"
    return base


def _cone_samples(rng, count, n, lo=0.2, hi=5.0):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=(count, n)))


def check_structure(f: CurvatureFunction, sample_count: int = 1000, seed: int = 0,
                    growth_threshold: float = 5.0) -> StructureReport:
    """Run the full admissibility suite on seeded random cone samples.

    Report-valued: every condition yields a pass/fail row with its worst
    observed margin, nothing raises.  The growth probe is a finite-ladder
    proxy for the asymptotic condition: the value at lam with R added to the
    last entry must exceed ``growth_threshold`` somewhere on the ladder
    R in 1..10^4, for base points drawn from a fixed compact box.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = f.n
    report = StructureReport(f=f, sample_count=sample_count, seed=seed)

    lam = _cone_samples(rng, sample_count, n)

    # gradient positivity
    grads = f.gradient(lam)
    worst = float(grads.min())
    report.rows.append(ConditionCheck("gradient-positivity", worst > 0.0, worst))

    # midpoint concavity
    mu = _cone_samples(rng, sample_count, n)
    gap = f.value(0.5 * (lam + mu)) - 0.5 * (f.value(lam) + f.value(mu))
    worst = float(gap.min())
    report.rows.append(ConditionCheck("concavity", worst >= CONCAVITY_SLACK, worst))

    # positive inside, vanishing toward the cone boundary
    vals = f.value(lam)
    pos_ok = bool(vals.min() > 0.0)
    decay_worst = np.inf
    decay_ok = True
    probe = lam[: min(sample_count, 64)]
    for base in probe:
        imin = int(np.argmin(base))
        ladder_vals = []
        for eps in DECAY_LADDER:
            pt = base.copy()
            pt[imin] *= eps
            ladder_vals.append(float(f.value(pt)))
        monotone = all(a >= b - 1e-14 for a, b in zip(ladder_vals, ladder_vals[1:]))
        ratio = ladder_vals[-1] / ladder_vals[0]
        decay_worst = min(decay_worst, -ratio if monotone else -np.inf)
        if not (monotone and ratio <= 0.5 and min(ladder_vals) > 0.0):
            decay_ok = False
    report.rows.append(ConditionCheck(
        "boundary-vanishing", pos_ok and decay_ok, float(decay_worst),
        "value decays scaling the least entry to 0"))

    # normalization at the unit vector
    norm_gap = abs(float(f.value(np.ones(n))) - 1.0)
    report.rows.append(ConditionCheck("normalization", norm_gap <= NORMALIZATION_TOL,
                                      norm_gap))

    # degree-one homogeneity
    worst = 0.0
    for t in (0.5, 2.0, 10.0):
        gap = np.abs(f.value(t * lam) - t * vals) / (t * vals)
        worst = max(worst, float(gap.max()))
    report.rows.append(ConditionCheck("homogeneity", worst <= HOMOGENEITY_RTOL, worst))

    # Euler identity (consequence of homogeneity, checked independently)
    euler = np.abs(np.sum(grads * lam, axis=-1) - vals) / vals
    worst = float(euler.max())
    report.rows.append(ConditionCheck("euler-identity", worst <= EULER_RTOL, worst))

    # unbounded growth in the last direction, finite-ladder proxy
    base = _cone_samples(rng, min(sample_count, 64), n, lo=0.5, hi=2.0)
    grew = True
    worst_peak = np.inf
    for pt in base:
        peak = 0.0
        for r in GROWTH_LADDER:
            bumped = pt.copy()
            bumped[-1] += r
            peak = max(peak, float(f.value(bumped)))
        worst_peak = min(worst_peak, peak)
        if peak < growth_threshold:
            grew = False
    report.rows.append(ConditionCheck(
        "unbounded-growth", grew, float(worst_peak),
        f"ladder peak vs threshold {growth_threshold:g}"))

    return report
