"""Finite-difference checks of whole MLP/loss compositions.

Every discriminator objective (with its penalty) and every valid generator
loss family x distance x target is built on small random networks and its
parameter gradients are compared against central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .losses import (
    CROSS_ENTROPY,
    LEAST_SQUARES,
    ConfigError,
    DistanceKind,
    DObjective,
    Family,
    GLossSpec,
    Sided,
    Target,
    check_pairing,
    d_objective,
    g_loss,
    labels_for,
    penalty_at,
    wgan_gp,
)
from .nets import MlpParams, MlpSpec, build_mlp, mlp_forward

EPS = 1e-5
SMOOTH_TOL = 1e-4
KINK_TOL = 1e-3
FLAT = 1e-9
OBJECTIVES = (CROSS_ENTROPY, LEAST_SQUARES, wgan_gp(10.0, Sided.ONE), wgan_gp(10.0, Sided.TWO))


@dataclass(frozen=True)
class Composition:
    name: str
    d_obj: DObjective
    g_spec: GLossSpec | None  # None: discriminator step (objective + penalty)
    seed: int
    penalty_only: bool = False

    @property
    def tolerance(self) -> float:
        """1e-3 when the loss itself has a kink (abs distances, one-sided penalty)."""
        if self.penalty_only:
            return KINK_TOL
        if self.g_spec is None:
            return KINK_TOL if self.d_obj.is_wgan and self.d_obj.sided is Sided.ONE else SMOOTH_TOL
        d = self.g_spec.distance
        return KINK_TOL if d is not None and d.has_kink else SMOOTH_TOL


@dataclass
class CheckResult:
    name: str
    tolerance: float
    max_rel_error: float
    flat: list[str] = field(default_factory=list)
    skipped_coords: int = 0
    kink_margin: float = np.inf
    resamples: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        flat = f" zero={','.join(self.flat)}" if self.flat else ""
        if self.skipped_coords:
            flat += f" skipped={self.skipped_coords}"
        return (
            f"{self.name:<52s} err={self.max_rel_error:.2e} tol={self.tolerance:.0e} "
            f"margin={self.kink_margin:.1e}{flat}  {status}"
        )


@dataclass
class SuiteReport:
    results: list[CheckResult]
    seconds: float

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    def to_text(self) -> str:
        lines = [r.line() for r in self.results]
        lines.append(
            f"{len(self.results)} compositions, {len(self.failures)} failed, "
            f"worst={max(r.max_rel_error for r in self.results):.2e}, {self.seconds:.1f}s"
        )
        return "\n".join(lines)


def generator_specs() -> list[tuple[DObjective, GLossSpec]]:
    """Every valid (objective, generator loss) pairing, in a fixed order."""
    out = []
    for d_obj in OBJECTIVES[:3]:
        for fam in Family:
            if fam.classic:
                candidates = [GLossSpec(fam)]
            elif fam.uses_target:
                candidates = [GLossSpec(fam, dk, t) for dk in DistanceKind for t in Target]
            else:
                candidates = [GLossSpec(fam, dk) for dk in DistanceKind]
            for spec in candidates:
                try:
                    check_pairing(d_obj, spec)
                except ConfigError:
                    continue
                if fam is Family.LSGAN and d_obj is not LEAST_SQUARES:
                    continue
                if fam is Family.WGAN and not d_obj.is_wgan:
                    continue
                out.append((d_obj, spec))
    return out


def compositions(repeats: int = 2) -> list[Composition]:
    comps = []
    for r in range(repeats):
        for i, d_obj in enumerate(OBJECTIVES):
            comps.append(Composition(f"D-step {d_obj.label()} #{r}", d_obj, None, 1000 * r + i))
        for i, (d_obj, spec) in enumerate(generator_specs()):
            comps.append(Composition(f"G-step {d_obj.label()} {spec.label()} #{r}", d_obj, spec, 1000 * r + 100 + i))
    return comps


# -- building blocks --------------------------------------------------------

def _random_net(spec: MlpSpec, rng: np.random.Generator, scale: float) -> MlpParams:
    params = build_mlp(spec, rng)
    weights = [w * scale for w in params.weights]
    biases = [rng.normal(0.0, 0.1, size=b.shape) for b in params.biases]
    return MlpParams(weights, biases)


def _swap(params: MlpParams, index: int, value) -> MlpParams:
    flat = params.arrays()
    flat[index] = value
    return MlpParams.from_flat(flat)


def _tensor_check(f, params: MlpParams, eps: float) -> tuple[float, list[str], int]:
    """Max relative error over all parameter coordinates.

    Coordinates whose taped and finite-difference gradients are both below
    1e-9 in magnitude are structurally zero (a final bias under a Wasserstein
    critic, a unit on the same side of its kink for every sample) and are
    skipped: their relative error is roundoff divided by roundoff.  Returns the
    error, the names of tensors that are zero throughout, and the skip count.
    """
    worst, flat, skipped = 0.0, [], 0
    for i, name in enumerate(params.names()):
        analytic, numeric = ad.gradient_pair(lambda t, i=i: f(_swap(params, i, t)), params.arrays()[i], eps)
        zero = (np.abs(analytic) < FLAT) & (np.abs(numeric) < FLAT)
        skipped += int(zero.sum())
        if zero.all():
            flat.append(name)
            continue
        worst = max(worst, float(np.max(ad.relative_error(analytic[~zero], numeric[~zero]))))
    return worst, flat, skipped


def _margin(f, params: MlpParams) -> float:
    tape = ad.Tape()
    f(params.bind(tape))
    return ad.kink_margin(tape)


def _build(comp: Composition, rng: np.random.Generator, hidden, batch: int):
    """Return (loss function of the checked params, those params, penalty value or None)."""
    d_obj = comp.d_obj
    d_spec = MlpSpec(2, hidden, 1, d_obj.sigmoid_head)
    # a larger weight scale puts some input-gradient norms above 1 so one-sided penalties are active
    d_params = _random_net(d_spec, rng, 2.5 if d_obj.is_wgan else 1.0)
    x_real = rng.normal(0.0, 1.0, size=(batch, 2))
    if comp.g_spec is None:
        x_fake = rng.normal(0.0, 1.0, size=(batch, 2))
        alpha = rng.uniform(0.0, 1.0, size=(batch, 1))
        x_hat = alpha * x_real + (1.0 - alpha) * x_fake

        def f(p):
            if comp.penalty_only:
                return penalty_at(p, d_spec, x_hat, d_obj.lam, d_obj.sided)
            obj = d_objective(d_obj, mlp_forward(p, x_real, d_spec), mlp_forward(p, x_fake, d_spec))
            loss = ad.neg(obj)
            if d_obj.is_wgan:
                loss = ad.add(loss, penalty_at(p, d_spec, x_hat, d_obj.lam, d_obj.sided))
            return loss

        penalty = None
        if d_obj.is_wgan:
            penalty = penalty_at(d_params, d_spec, x_hat, d_obj.lam, d_obj.sided).item()
        return f, d_params, penalty

    g_spec = MlpSpec(2, hidden, 2)
    g_params = _random_net(g_spec, rng, 1.0)
    z = rng.normal(0.0, 1.0, size=(batch, 2))
    labels = labels_for(d_obj)
    d_real = mlp_forward(d_params, x_real, d_spec) if comp.g_spec.family.uses_real else None

    def f(p):
        d_fake = mlp_forward(d_params, mlp_forward(p, z, g_spec), d_spec)
        return g_loss(comp.g_spec, labels, d_fake, d_real)

    return f, g_params, None


def check_composition(comp: Composition, eps: float = EPS, hidden=(5, 5, 5), batch: int = 8, tries: int = 50) -> CheckResult:
    """Gradient check of one composition.

    Samples are redrawn until every kink is more than 10*eps away and, for
    one-sided penalties, until the penalty is active (some norm above 1).
    """
    rng = np.random.default_rng(comp.seed)
    for attempt in range(tries):
        f, params, penalty = _build(comp, rng, hidden, batch)
        if penalty is not None and not penalty > 0:
            continue
        margin = _margin(f, params)
        if margin > 10 * eps:
            break
    else:
        raise RuntimeError(f"{comp.name}: no usable sample in {tries} tries")
    worst, flat, skipped = _tensor_check(f, params, eps)
    return CheckResult(comp.name, comp.tolerance, worst, flat, skipped, margin, attempt)


def run_suite(repeats: int = 2, eps: float = EPS) -> SuiteReport:
    start = time.perf_counter()
    results = [check_composition(c, eps) for c in compositions(repeats)]
    return SuiteReport(results, time.perf_counter() - start)


def penalty_suite(n: int = 20, eps: float = EPS) -> SuiteReport:
    """d(penalty)/dw against finite differences on n random discriminators, both sidings."""
    start = time.perf_counter()
    results = []
    for sided in Sided:
        d_obj = wgan_gp(10.0, sided)
        for i in range(n):
            comp = Composition(f"penalty {sided.value} #{i}", d_obj, None, 5000 + i, penalty_only=True)
            results.append(check_composition(comp, eps))
    return SuiteReport(results, time.perf_counter() - start)
