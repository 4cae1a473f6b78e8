"""Certificate mathematics.

Two PAC-Bayes results are computed from the same budget
``B = (KL(Q||P) + ln(n/delta)) / (n - 1)``:

* the closed-form bound ``train + sqrt(B/2)`` (a Pinsker relaxation, reported
  uncapped, so values above 1 are visible), and
* the tighter certificate obtained by numerically inverting the Bernoulli KL:
  the smallest ``C >= train`` with ``kl(train || C) = B``.

A certificate is *vacuous* when even the closed form reaches 1: the inversion
then sits within rounding distance of 1 and guarantees nothing.  The reported
``pb_bound`` is capped at 1 with the flag carried separately.

Closed-form KL divergences for the supported posterior families (isotropic
Gaussian, categorical vs uniform) live here too, as does the test-set bound,
which is the same inversion with KL = 0 on held-out data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StructureError
from .posterior import CategoricalSpec, GaussianSpec

_Q_MAX = 1.0 - 1e-12  # top of the search bracket; beyond this we report 1
_NEWTON_STEPS = 100
_TOL = 1e-9


def _xlogy(x: float, y: float) -> float:
    return 0.0 if x == 0.0 else x * math.log(y)


def bernoulli_kl(p: float, q: float) -> float:
    """kl(p || q) between Bernoulli(p) and Bernoulli(q), natural log.

    Defined for p in [0,1] and q in (0,1); the endpoint q in {0,1} is only
    admitted when p equals it (where the divergence is 0 by the 0*ln(0)
    convention).
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p={p} outside [0, 1]")
    if q <= 0.0 or q >= 1.0:
        if q == p:
            return 0.0
        raise DomainError(f"q={q} incompatible with p={p}")
    return _xlogy(p, p / q) + _xlogy(1.0 - p, (1.0 - p) / (1.0 - q))


def _kl_dq(p: float, q: float) -> float:
    # d/dq kl(p||q); positive on (p, 1)
    return (1.0 - p) / (1.0 - q) - p / q


def invert_kl(p: float, budget: float) -> float:
    """Smallest C >= p with kl(p || C) = budget, to 1e-9 absolute.

    Newton iterates start at min(1 - 1e-12, p + sqrt(budget/2)) — the Pinsker
    point, an upper bound of the root, so iterates descend monotonically — and
    are safeguarded by bisection on [p, 1).  Returns exactly 1.0 when the
    budget exceeds kl(p || 1-), i.e. when no sub-1 certificate exists.
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p={p} outside [0, 1]")
    if budget < 0.0:
        raise DomainError(f"budget {budget} must be >= 0")
    if budget == 0.0 or p >= _Q_MAX:
        return min(p, 1.0) if budget == 0.0 else 1.0
    if bernoulli_kl(p, _Q_MAX) <= budget:
        return 1.0

    def within_tol(c: float) -> bool:
        # True iff the root is provably inside [c - tol, c + tol].
        if bernoulli_kl(p, c) >= budget:
            return bernoulli_kl(p, max(p, c - _TOL)) <= budget
        return bernoulli_kl(p, min(_Q_MAX, c + _TOL)) >= budget

    # kl(p||.) is convex and increasing on (p, 1), and the Pinsker point
    # p + sqrt(budget/2) sits at or above the root, so Newton descends to the
    # root monotonically.  The bracket is only a safety net.  Iterate until
    # the residual is negligible or no representable progress remains (the
    # float64-optimal root), verifying the 1e-9 window with two evaluations.
    lo, hi = p, _Q_MAX
    c = min(_Q_MAX, p + math.sqrt(budget / 2.0))
    converged = False
    for _ in range(_NEWTON_STEPS):
        gap = bernoulli_kl(p, c) - budget
        if gap > 0.0:
            hi = min(hi, c)
        else:
            lo = max(lo, c)
        slope = _kl_dq(p, c)
        if slope > 0.0 and math.isfinite(slope):
            nxt = c - gap / slope
        else:
            nxt = 0.5 * (lo + hi)
        if not (lo <= nxt <= hi):
            nxt = 0.5 * (lo + hi)
        if nxt == c or (abs(gap) < 1e-10 and abs(nxt - c) < _TOL and within_tol(c)):
            converged = True
            break
        c = nxt
    if not converged:
        while hi - lo >= 1e-12 and lo < 0.5 * (lo + hi) < hi:
            mid = 0.5 * (lo + hi)
            if bernoulli_kl(p, mid) > budget:
                hi = mid
            else:
                lo = mid
        c = 0.5 * (lo + hi)
    return min(max(c, p), 1.0)


def conventional_bound(train_error: float, kl_qp: float, n: int, delta: float) -> float:
    """Closed-form certificate ``train + sqrt(budget/2)``; NOT capped at 1."""
    return train_error + math.sqrt(BoundBudget(kl_qp, n, delta).value / 2.0)


@dataclass(frozen=True)
class BoundBudget:
    """The scalar (KL + ln(n/delta)) / (n-1) feeding both certificates."""

    kl_qp: float
    n: int
    delta: float

    def __post_init__(self):
        if self.kl_qp < 0:
            raise DomainError(f"KL must be >= 0, got {self.kl_qp}")
        if self.n < 2:
            raise DomainError(f"need n >= 2, got {self.n}")
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta {self.delta} outside (0, 1)")

    @property
    def value(self) -> float:
        return (self.kl_qp + math.log(self.n / self.delta)) / (self.n - 1)


@dataclass(frozen=True)
class BoundReport:
    """Both certificates for one (train error, KL, n, delta) quadruple."""

    train_error: float
    kl_qp: float
    n: int
    delta: float
    pb_bound: float
    upper_bound: float
    vacuous: bool


def seeger_certificate(train_error: float, kl_qp: float, n: int, delta: float) -> BoundReport:
    """Certify via KL inversion; also reports the closed form and vacuity."""
    budget = BoundBudget(kl_qp, n, delta)
    raw = invert_kl(train_error, budget.value)
    upper = train_error + math.sqrt(budget.value / 2.0)
    vacuous = upper >= 1.0 or raw >= 1.0
    return BoundReport(
        train_error=train_error,
        kl_qp=kl_qp,
        n=n,
        delta=delta,
        pb_bound=min(raw, 1.0),
        upper_bound=upper,
        vacuous=vacuous,
    )


def gaussian_kl(q: GaussianSpec, p: GaussianSpec) -> float:
    """KL between isotropic Gaussians: (d/2)(r - 1 - ln r) + ||mu_q-mu_p||^2/(2 s_p)."""
    if q.dim != p.dim:
        raise StructureError(f"dimension mismatch: {q.dim} vs {p.dim}")
    ratio = q.variance / p.variance
    d = q.dim
    mean_term = float(np.sum((q.mean - p.mean) ** 2)) / (2.0 * p.variance)
    return 0.5 * d * (ratio - 1.0 - math.log(ratio)) + mean_term


def categorical_kl(q: CategoricalSpec) -> float:
    """KL between q and the uniform distribution over its own support."""
    entropy_gap = float(sum(_xlogy(pi, pi) for pi in q.probs))
    return entropy_gap + math.log(q.atoms)


def test_set_bound(val_error: float, n_val: int, delta: float, classic: bool = False) -> float:
    """Certificate from held-out data alone (point-mass prior and posterior).

    The default budget is ln(n/delta)/(n-1), the KL=0 case of the PAC-Bayes
    machinery.  ``classic=True`` switches to the ln(1/delta)/n form of the
    standalone binomial test-set bound for comparison.
    """
    if n_val < 2:
        raise DomainError(f"need n_val >= 2, got {n_val}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta {delta} outside (0, 1)")
    if classic:
        budget = math.log(1.0 / delta) / n_val
    else:
        budget = math.log(n_val / delta) / (n_val - 1)
    return min(invert_kl(val_error, budget), 1.0)


@dataclass
class CertificateRecord:
    """Everything reported about one certified run."""

    task_id: str
    scheme: str
    objective: str
    n: int
    delta: float
    train_error: float
    kl_qp: float
    pb_bound: float
    upper_bound: float
    vacuous: bool
    test_error: float | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def certified_gap(self) -> float:
        return self.pb_bound - self.train_error

    def validate(self) -> None:
        """Re-derive both certificates from the stored inputs and compare."""
        report = seeger_certificate(self.train_error, self.kl_qp, self.n, self.delta)
        if abs(report.pb_bound - self.pb_bound) > 1e-9:
            raise AssertionError(
                f"stored pb_bound {self.pb_bound} != recomputed {report.pb_bound}"
            )
        if abs(report.upper_bound - self.upper_bound) > 1e-9:
            raise AssertionError(
                f"stored upper_bound {self.upper_bound} != recomputed {report.upper_bound}"
            )
        if report.vacuous != self.vacuous:
            raise AssertionError("stored vacuity flag disagrees with recomputation")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "scheme": self.scheme,
            "objective": self.objective,
            "n": self.n,
            "delta": self.delta,
            "train_error": self.train_error,
            "kl_qp": self.kl_qp,
            "pb_bound": self.pb_bound,
            "upper_bound": self.upper_bound,
            "vacuous": self.vacuous,
            "test_error": self.test_error,
            "certified_gap": self.certified_gap,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CertificateRecord":
        data = dict(data)
        data.pop("certified_gap", None)
        return cls(**data)
