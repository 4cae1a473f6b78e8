"""Learning the posterior mean and emitting certificates.

Two objectives are supported for fitting merge coefficients on the support
set: the randomized classifier's Monte-Carlo 0-1 train risk alone
(``train_risk``), or that risk plus the closed-form complexity term
(``pac_bayes_upper``), which trades train error against the KL to the prior.
Both are minimized with the same derivative-free search, seeded at the
uniform-merge coefficients (the prior mean), with common random numbers
across candidate evaluations so the objective is a pure function.

The data-dependent-prior protocol splits the support, fits a prior mean on
the first half with the plain objective, then bound-optimizes on the second
half; the certificate is computed on the second half only, preserving
prior/data independence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import (
    BoundBudget,
    CertificateRecord,
    conventional_bound,
    gaussian_kl,
    invert_kl,
    seeger_certificate,
)
from .cma import CmaConfig, minimize
from .errors import DomainError, StructureError
from .merging import MergeScheme, default_phi, make_scheme, realize
from .posterior import GaussianSpec, mc_risk
from .seeding import derive_seed
from .toyzoo import LabeledSet, MlpSpec, zero_one_risk

OBJECTIVE_KINDS = ("train_risk", "pac_bayes_upper")


@dataclass(frozen=True)
class Objective:
    """What the coefficient search minimizes."""

    kind: str
    prior: GaussianSpec | None = None
    n: int | None = None
    delta: float | None = None
    posterior_variance: float = 0.05
    mc_samples: int = 10

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise DomainError(f"unknown objective kind {self.kind!r}")
        if self.kind == "pac_bayes_upper":
            if self.prior is None or self.n is None or self.delta is None:
                raise DomainError("pac_bayes_upper needs prior, n, and delta")


@dataclass(frozen=True)
class DdpConfig:
    split_fraction: float = 0.5
    prior_objective: str = "train_risk"
    split_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise DomainError(f"split fraction {self.split_fraction} outside (0, 1)")
        if self.prior_objective not in OBJECTIVE_KINDS:
            raise DomainError(f"unknown prior objective {self.prior_objective!r}")


@dataclass(frozen=True)
class CertifyConfig:
    """Shared knobs for all certification entry points."""

    posterior_variance: float = 0.05
    prior_variance: float = 0.05
    mc_samples: int = 10
    delta: float = 0.05
    cma: CmaConfig = field(default_factory=CmaConfig)
    eval_seed: int = 1

    def __post_init__(self):
        if not self.posterior_variance > 0 or not self.prior_variance > 0:
            raise DomainError("variances must be positive")
        if self.mc_samples < 1:
            raise DomainError("mc_samples must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta {self.delta} outside (0, 1)")


@dataclass
class TracePoint:
    eval_index: int
    objective: float
    kl_qp: float


def _objective_fn(scheme, objective: Objective, support, model_spec, mc_seed):
    """Returns phi -> (value, kl).  Common random numbers across calls."""

    def train_part(phi):
        spec = GaussianSpec(phi, objective.posterior_variance)
        return mc_risk(spec, scheme, model_spec, support, objective.mc_samples, mc_seed)

    if objective.kind == "train_risk":
        def fn(phi):
            return train_part(phi), 0.0
        return fn

    budget_denominator = 2.0 * (objective.n - 1)
    log_term = math.log(objective.n / objective.delta)

    def fn(phi):
        spec = GaussianSpec(phi, objective.posterior_variance)
        kl = gaussian_kl(spec, objective.prior)
        value = train_part(phi) + math.sqrt((kl + log_term) / budget_denominator)
        return value, kl

    return fn


def optimize(
    scheme: MergeScheme,
    objective,
    support: LabeledSet,
    model_spec: MlpSpec | None,
    cma: CmaConfig,
) -> tuple[np.ndarray, list[TracePoint]]:
    """Search for the posterior mean; returns (best phi, evaluation trace).

    ``objective`` is an Objective, or any callable phi -> float (used by
    diagnostics and tests).  Deterministic in ``cma.seed``; the trace records
    every evaluation in index order, and the returned point never scores
    worse than the trace minimum.
    """
    if support is not None and support.n == 0:
        raise DomainError("support must be non-empty")
    if isinstance(objective, Objective):
        if objective.kind == "pac_bayes_upper" and objective.prior.dim != scheme.d_phi:
            raise StructureError(
                f"prior dimension {objective.prior.dim} != scheme d_phi {scheme.d_phi}"
            )
        mc_seed = derive_seed(cma.seed, "mc-common")
        fn = _objective_fn(scheme, objective, support, model_spec, mc_seed)
    else:
        wrapped = objective

        def fn(phi):
            return float(wrapped(phi)), 0.0

    trace: list[TracePoint] = []

    def scalar_objective(phi):
        value, kl = fn(phi)
        trace.append(TracePoint(eval_index=len(trace), objective=value, kl_qp=kl))
        return value

    result = minimize(scalar_objective, default_phi(scheme), cma)
    return result.x_best, trace


def _posterior_errors(q, scheme, model_spec, support, query, config):
    # Train risk is re-computed with the exact stream the search minimized, so
    # the certificate states the quantity that was optimized; the query-set
    # estimate uses an independent stream.
    train = mc_risk(
        q, scheme, model_spec, support, config.mc_samples,
        derive_seed(config.cma.seed, "mc-common"),
    )
    test = None
    if query is not None:
        test = mc_risk(
            q, scheme, model_spec, query, config.mc_samples,
            derive_seed(config.eval_seed, "test-eval"),
        )
    return train, test


def certify(
    scheme: MergeScheme,
    objective_kind: str,
    support: LabeledSet,
    query: LabeledSet | None,
    model_spec: MlpSpec,
    config: CertifyConfig,
    task_id: str = "",
    prior: GaussianSpec | None = None,
    objective_label: str | None = None,
) -> CertificateRecord:
    """Fit the posterior mean on the support and certify the result.

    The prior defaults to a Gaussian at the uniform-merge coefficients; any
    learned coefficients are re-interpreted as the mean of a Gaussian
    posterior with the configured variance, so even a plain train-risk fit
    gets a certificate.
    """
    n = support.n
    if n < 2:
        raise DomainError(f"need support size >= 2, got {n}")
    if prior is None:
        prior = GaussianSpec(default_phi(scheme), config.prior_variance)
    objective = Objective(
        kind=objective_kind,
        prior=prior if objective_kind == "pac_bayes_upper" else None,
        n=n if objective_kind == "pac_bayes_upper" else None,
        delta=config.delta if objective_kind == "pac_bayes_upper" else None,
        posterior_variance=config.posterior_variance,
        mc_samples=config.mc_samples,
    )
    mu_q, trace = optimize(scheme, objective, support, model_spec, config.cma)
    q = GaussianSpec(mu_q, config.posterior_variance)
    train, test = _posterior_errors(q, scheme, model_spec, support, query, config)
    kl = gaussian_kl(q, prior)
    report = seeger_certificate(train, kl, n, config.delta)
    return CertificateRecord(
        task_id=task_id,
        scheme=scheme.kind,
        objective=objective_label or objective_kind,
        n=n,
        delta=config.delta,
        train_error=train,
        kl_qp=kl,
        pb_bound=report.pb_bound,
        upper_bound=report.upper_bound,
        vacuous=report.vacuous,
        test_error=test,
        provenance={
            "cma_seed": config.cma.seed,
            "eval_seed": config.eval_seed,
            "evals": len(trace),
            "posterior_variance": config.posterior_variance,
            "prior_variance": config.prior_variance,
            "mc_samples": config.mc_samples,
        },
    )


def split_support(support: LabeledSet, ddp: DdpConfig) -> tuple[LabeledSet, LabeledSet]:
    """Disjoint (prior-fit, certify) halves of the support, seeded shuffle."""
    if support.n < 4:
        raise DomainError("DDP needs support size >= 4 so both halves have >= 2")
    from .seeding import rng_for

    order = rng_for(ddp.split_seed, "ddp-split").permutation(support.n)
    cut = int(round(ddp.split_fraction * support.n))
    cut = min(max(cut, 2), support.n - 2)
    return support.subset(np.sort(order[:cut])), support.subset(np.sort(order[cut:]))


def certify_ddp(
    scheme: MergeScheme,
    support: LabeledSet,
    ddp: DdpConfig,
    model_spec: MlpSpec,
    config: CertifyConfig,
    query: LabeledSet | None = None,
    task_id: str = "",
) -> CertificateRecord:
    """Two-stage certification with a data-dependent prior mean.

    Half A fits the prior mean with the configured prior objective; half B
    both fits the posterior under the bound objective and computes the
    certificate, with n = |B|.
    """
    half_a, half_b = split_support(support, ddp)
    prior_cma = CmaConfig(
        popsize=config.cma.popsize,
        sigma0=config.cma.sigma0,
        max_evals=config.cma.max_evals,
        seed=derive_seed(config.cma.seed, "ddp-prior"),
    )
    prior_objective = Objective(
        kind=ddp.prior_objective,
        prior=GaussianSpec(default_phi(scheme), config.prior_variance)
        if ddp.prior_objective == "pac_bayes_upper"
        else None,
        n=half_a.n if ddp.prior_objective == "pac_bayes_upper" else None,
        delta=config.delta if ddp.prior_objective == "pac_bayes_upper" else None,
        posterior_variance=config.posterior_variance,
        mc_samples=config.mc_samples,
    )
    mu_p, _ = optimize(scheme, prior_objective, half_a, model_spec, prior_cma)
    prior = GaussianSpec(mu_p, config.prior_variance)
    record = certify(
        scheme,
        "pac_bayes_upper",
        half_b,
        query,
        model_spec,
        config,
        task_id=task_id,
        prior=prior,
        objective_label="ddp",
    )
    record.provenance.update(
        {
            "ddp_split_fraction": ddp.split_fraction,
            "ddp_split_seed": ddp.split_seed,
            "ddp_prior_objective": ddp.prior_objective,
            "ddp_prior_n": half_a.n,
        }
    )
    return record


def certify_discrete(
    pool,
    grid_size: int,
    support: LabeledSet,
    model_spec: MlpSpec,
    config: CertifyConfig,
    query: LabeledSet | None = None,
    task_id: str = "",
) -> CertificateRecord:
    """Finite-class certificate over a uniform coefficient grid in [0, 1].

    The classifier is deterministic: the posterior is a point mass on the
    grid value with the lowest train error (ties toward the smaller value),
    against a uniform prior over the grid, so KL = ln(grid_size) exactly.
    """
    if grid_size < 2:
        raise DomainError(f"grid_size must be >= 2, got {grid_size}")
    n = support.n
    if n < 2:
        raise DomainError(f"need support size >= 2, got {n}")
    scheme = make_scheme("task_arith", pool)
    grid = np.linspace(0.0, 1.0, grid_size)
    risks = np.array(
        [zero_one_risk(model_spec, realize(scheme, np.array([g])), support) for g in grid]
    )
    best = int(np.argmin(risks))  # argmin takes the first (smallest) value on ties
    train = float(risks[best])
    kl = math.log(grid_size)
    budget = BoundBudget(kl, n, config.delta)
    raw = invert_kl(train, budget.value)
    upper = conventional_bound(train, kl, n, config.delta)
    test = None
    if query is not None:
        test = zero_one_risk(model_spec, realize(scheme, np.array([grid[best]])), query)
    return CertificateRecord(
        task_id=task_id,
        scheme="task_arith",
        objective="discrete",
        n=n,
        delta=config.delta,
        train_error=train,
        kl_qp=kl,
        pb_bound=min(raw, 1.0),
        upper_bound=upper,
        vacuous=upper >= 1.0 or raw >= 1.0,
        test_error=test,
        provenance={"grid_size": grid_size, "phi_star": float(grid[best])},
    )
