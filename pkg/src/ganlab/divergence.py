"""Exact DM/LM/EDM/ELM on discrete distributions with tabular discriminators.

Here the losses use their full two-sided forms (LM and ELM keep the real-data
term), evaluated by exact expectation over the union support of p and q.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .losses import DistanceKind, distance

FAMILIES = ("DM", "LM", "EDM", "ELM")
EQ_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        if p.size < 1:
            raise ValueError("a discrete distribution needs at least one atom")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class TabularDiscriminator:
    values: np.ndarray
    y_mid: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64).ravel())


def _probs(x) -> np.ndarray:
    return x.probs if isinstance(x, DiscreteDist) else DiscreteDist(x).probs


def union_support(p, q) -> np.ndarray:
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ValueError(f"atom counts differ: {p.size} vs {q.size}")
    return (p + q) > 0


def same_support(p, q) -> bool:
    p, q = _probs(p), _probs(q)
    return bool(np.array_equal(p > 0, q > 0))


def equal(p, q, tol: float = EQ_TOL) -> bool:
    return bool(np.max(np.abs(_probs(p) - _probs(q))) <= tol)


def optimal_discriminator(p, q, support=None) -> TabularDiscriminator:
    """D = p / (p + q) on the union support (NaN on atoms outside it)."""
    p, q = _probs(p), _probs(q)
    union = union_support(p, q)
    if support is not None:
        support = np.asarray(support, dtype=bool)
        bad = support & ~union
        if np.any(bad):
            raise ValueError(f"atoms {np.flatnonzero(bad).tolist()} have p + q = 0 inside the declared support")
    values = np.full(p.shape, np.nan)
    values[union] = p[union] / (p[union] + q[union])
    return TabularDiscriminator(values, 0.5)


def optimal_at_equilibrium(D: TabularDiscriminator, p, q, tol: float = EQ_TOL) -> bool:
    """Per-atom check of: p_i = q_i  <=>  D_i = y_mid, on the union support."""
    p, q = _probs(p), _probs(q)
    u = union_support(p, q)
    eq = np.abs(p - q) <= tol
    at_mid = np.abs(D.values - D.y_mid) <= tol
    return bool(np.all((eq == at_mid)[u]))


def is_optimal(D: TabularDiscriminator, p, q, tol: float = EQ_TOL) -> bool:
    """Optimal at equilibrium, above y_mid where p > q and below where p < q."""
    if not optimal_at_equilibrium(D, p, q, tol):
        return False
    p, q = _probs(p), _probs(q)
    u = union_support(p, q)
    above = (p - q > tol) & u
    below = (q - p > tol) & u
    return bool(np.all(D.values[above] > D.y_mid) and np.all(D.values[below] < D.y_mid))


def _d(kind, x, y) -> np.ndarray:
    return distance(kind, Tensor(np.atleast_2d(x)), Tensor(np.atleast_2d(y))).data


def exact_loss(family: str, p, q, D: TabularDiscriminator, d, y_hat: float | None = None) -> float:
    """Exact DM / LM / EDM / ELM for discrete p, q and a tabular discriminator."""
    p, q = _probs(p), _probs(q)
    u = union_support(p, q)
    p, q, v = p[u], q[u], D.values[u]
    kind = DistanceKind(d)
    if family == "DM":
        k = v.size
        pair = _d(kind, np.repeat(v, k).reshape(k, k), np.tile(v, k).reshape(k, k))
        return float(np.sum(np.outer(p, q) * pair))
    if family in ("LM", "ELM") and y_hat is None:
        raise ValueError(f"{family} needs y_hat")
    if family == "LM":
        at_target = _d(kind, v, np.full(v.shape, y_hat))[0]
        return float(p @ at_target + q @ at_target)
    e_p, e_q = float(p @ v), float(q @ v)
    if family == "EDM":
        return float(_d(kind, e_p, e_q)[0, 0])
    if family == "ELM":
        return float(_d(kind, e_q, y_hat)[0, 0] + _d(kind, e_p, y_hat)[0, 0])
    raise ValueError(f"unknown family {family!r}")


def all_losses(p, q, D: TabularDiscriminator, d, y_real: float = 1.0) -> dict[str, float]:
    """DM, EDM and LM/ELM at y_hat in (y_mid, y_real), from one distance evaluation.

    Same values as calling ``exact_loss`` six times.
    """
    p, q = _probs(p), _probs(q)
    u = union_support(p, q)
    p, q, v = p[u], q[u], D.values[u]
    k = v.size
    e_p, e_q = float(p @ v), float(q @ v)
    mid = D.y_mid
    xs = np.concatenate([np.repeat(v, k), v, v, [e_p, e_q, e_p, e_q, e_p]])
    ys = np.concatenate([np.tile(v, k), np.full(k, mid), np.full(k, y_real), [mid, mid, y_real, y_real, e_q]])
    out = _d(DistanceKind(d), xs, ys)[0]
    kk = k * k
    at_mid, at_real, tail = out[kk:kk + k], out[kk + k:kk + 2 * k], out[kk + 2 * k:]
    return {
        "DM": float(np.sum(np.outer(p, q) * out[:kk].reshape(k, k))),
        "LM_mid": float(p @ at_mid + q @ at_mid),
        "LM_real": float(p @ at_real + q @ at_real),
        "EDM": float(tail[4]),
        "ELM_mid": float(tail[1] + tail[0]),
        "ELM_real": float(tail[3] + tail[2]),
    }


# -- random instances -------------------------------------------------------

def _dirichlet_on(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(mask.size)
    out[mask] = rng.dirichlet(np.ones(int(mask.sum())))
    return out


def _random_mask(k: int, rng: np.random.Generator) -> np.ndarray:
    mask = rng.random(k) < 0.7
    if not mask.any():
        mask[rng.integers(k)] = True
    return mask


def random_pair(k: int, mode: str, rng: np.random.Generator) -> tuple[DiscreteDist, DiscreteDist]:
    p, q = _raw_pair(k, mode, rng)
    return DiscreteDist(p), DiscreteDist(q)


def _raw_pair(k: int, mode: str, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random (p, q) over k atoms; mode is equal, same_support, differing_support or independent."""
    if mode == "equal":
        p = _dirichlet_on(_random_mask(k, rng), rng)
        return p, p.copy()
    if mode == "same_support":
        mask = _random_mask(k, rng)
        return _dirichlet_on(mask, rng), _dirichlet_on(mask, rng)
    if mode == "differing_support":
        if k < 2:
            raise ValueError("differing supports need k >= 2")
        while True:
            mp, mq = _random_mask(k, rng), _random_mask(k, rng)
            if not np.array_equal(mp, mq):
                return _dirichlet_on(mp, rng), _dirichlet_on(mq, rng)
    if mode == "independent":
        return _dirichlet_on(_random_mask(k, rng), rng), _dirichlet_on(_random_mask(k, rng), rng)
    raise ValueError(f"unknown mode {mode!r}")


def random_equilibrium_discriminator(p, q, rng, y_mid: float = 0.5) -> TabularDiscriminator:
    """y_mid exactly where p = q, any other value (either side) elsewhere."""
    p, q = _probs(p), _probs(q)
    offsets = rng.uniform(1e-3, 0.5, size=p.size) * rng.choice([-1.0, 1.0], size=p.size)
    values = np.where(np.abs(p - q) <= EQ_TOL, y_mid, y_mid + offsets)
    values[~union_support(p, q)] = np.nan
    return TabularDiscriminator(values, y_mid)


def random_optimal_discriminator(p, q, rng, y_mid: float = 0.5) -> TabularDiscriminator:
    """y_mid + sign(p - q) * u with u ~ U(1e-3, 0.5) per atom."""
    p, q = _probs(p), _probs(q)
    diff = p - q
    sign = np.where(np.abs(diff) <= EQ_TOL, 0.0, np.sign(diff))
    values = y_mid + sign * rng.uniform(1e-3, 0.5, size=p.size)
    values[~union_support(p, q)] = np.nan
    return TabularDiscriminator(values, y_mid)


# -- verification -----------------------------------------------------------

@dataclass
class PropertyResult:
    name: str
    trials: int = 0
    violations: int = 0
    worst_value: float = 0.0
    examples: list = field(default_factory=list)

    def record(self, ok: bool, value: float, worse=max, example=None):
        self.trials += 1
        if self.trials == 1:
            self.worst_value = value
        else:
            self.worst_value = worse(self.worst_value, value)
        if not ok:
            self.violations += 1
            if example is not None and len(self.examples) < 5:
                self.examples.append(example)


@dataclass
class DivergenceReport:
    trials: int
    max_k: int
    properties: list[PropertyResult]
    skipped_log_domain: int = 0

    @property
    def total_violations(self) -> int:
        return sum(p.violations for p in self.properties)

    @property
    def ok(self) -> bool:
        return self.total_violations == 0

    def __getitem__(self, name: str) -> PropertyResult:
        for prop in self.properties:
            if prop.name == name:
                return prop
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"divergence properties: {self.trials} trials, k <= {self.max_k}"]
        width = max(len(p.name) for p in self.properties)
        for prop in self.properties:
            status = "ok" if prop.violations == 0 else "VIOLATED"
            lines.append(
                f"  {prop.name:<{width}}  checks={prop.trials:<7d} violations={prop.violations:<4d} "
                f"worst={prop.worst_value:.3e}  {status}"
            )
            for ex in prop.examples:
                lines.append(f"      e.g. {ex}")
        if self.skipped_log_domain:
            lines.append(f"  (log distances skipped on {self.skipped_log_domain} discriminators with zero outputs)")
        lines.append(f"total violations: {self.total_violations}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "trials", "violations", "worst_value"])
        for prop in self.properties:
            writer.writerow([prop.name, prop.trials, prop.violations, repr(prop.worst_value)])
        return buf.getvalue()


MODES = ("equal", "same_support", "differing_support", "independent")
_QUADRATIC = (DistanceKind.SQUARE, DistanceKind.SQ_LOG, DistanceKind.PSEUDO_HUBER)


def loss_magnitude(kind, value: float) -> float:
    """Loss on the scale of the discrepancy it measures.

    Square-type distances grow quadratically near zero, so a gap of 1e-5 in
    probabilities shows up as ~1e-10 in the loss.  Taking the square root puts
    every distance on a linear scale before it is compared with the 1e-9
    tolerance.
    """
    kind = DistanceKind(kind)
    return float(np.sqrt(max(value, 0.0))) if kind in _QUADRATIC else float(value)


def verify_divergence_properties(trials: int, max_k: int, rng: np.random.Generator) -> DivergenceReport:
    """Check non-negativity and identity of indiscernibles by brute enumeration.

    Properties:

    * ``a_nonnegative`` -- every loss >= 0;
    * ``b_dm_lm_zero_implies_equal`` -- DM, LM(y_mid) = 0 => p = q under any
      discriminator optimal at equilibrium;
    * ``c_edm_elm_zero_iff_equal`` -- EDM, ELM(y_mid) = 0 <=> p = q on
      same-support pairs under optimal discriminators;
    * ``d_equal_implies_zero`` -- p = q => all four vanish with y_hat = y_mid;
    * ``e_real_target_positive_at_equal`` -- LM, ELM with y_hat = y_real stay
      strictly positive at p = q.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    props = {
        name: PropertyResult(name)
        for name in (
            "a_nonnegative",
            "b_dm_lm_zero_implies_equal",
            "c_edm_elm_zero_iff_equal",
            "d_equal_implies_zero",
            "e_real_target_positive_at_equal",
        )
    }
    y_real = 1.0
    skipped = 0
    for trial in range(trials):
        k = int(rng.integers(1, max_k + 1))
        mode = MODES[trial % len(MODES)] if k > 1 else "equal"
        p, q = random_pair(k, mode, rng)
        pa, qa = p.probs, q.probs
        is_eq = equal(p, q)
        same = same_support(p, q)
        discs = {
            "canonical": optimal_discriminator(p, q),
            "equilibrium": random_equilibrium_discriminator(p, q, rng),
            "optimal": random_optimal_discriminator(p, q, rng),
        }
        for dname, D in discs.items():
            fully_optimal = is_optimal(D, p, q)
            vals = D.values[union_support(p, q)]
            for kind in DistanceKind:
                if kind.needs_positive and np.any(vals <= 0):
                    skipped += 1
                    continue
                loss = all_losses(p, q, D, kind, y_real)
                size = {name: loss_magnitude(kind, v) for name, v in loss.items()}
                ctx = f"mode={mode} D={dname} d={kind.value} p={np.round(pa, 4).tolist()} q={np.round(qa, 4).tolist()}"
                for name, value in loss.items():
                    props["a_nonnegative"].record(value >= 0.0, value, min, f"{name}={value!r} {ctx}")
                if not is_eq:
                    for name in ("DM", "LM_mid"):
                        props["b_dm_lm_zero_implies_equal"].record(
                            size[name] > EQ_TOL, size[name], min, f"{name}={loss[name]!r} {ctx}"
                        )
                if same and fully_optimal:
                    for name in ("EDM", "ELM_mid"):
                        zero = size[name] <= EQ_TOL
                        props["c_edm_elm_zero_iff_equal"].record(
                            zero == is_eq, size[name] if not is_eq else np.inf, min, f"{name}={loss[name]!r} {ctx}"
                        )
                if is_eq:
                    for name in ("DM", "LM_mid", "EDM", "ELM_mid"):
                        props["d_equal_implies_zero"].record(
                            size[name] <= EQ_TOL, loss[name], max, f"{name}={loss[name]!r} {ctx}"
                        )
                    for name in ("LM_real", "ELM_real"):
                        props["e_real_target_positive_at_equal"].record(
                            size[name] > EQ_TOL, loss[name], min, f"{name}={loss[name]!r} {ctx}"
                        )
    return DivergenceReport(trials, max_k, list(props.values()), skipped)


# -- support condition ------------------------------------------------------

@dataclass
class EdmInstance:
    p: np.ndarray
    q: np.ndarray
    discriminator: TabularDiscriminator
    edm: float


def find_edm_support_counterexample(
    rng: np.random.Generator,
    budget: int,
    same_support_only: bool = False,
    max_k: int = 6,
    distance_kind: DistanceKind | str = DistanceKind.ABS,
) -> EdmInstance | None:
    """Search for EDM = 0 with p != q under discriminators that are optimal.

    Each instance draws (p, q) with differing supports (or equal supports when
    ``same_support_only``) and free positive offsets per atom.  Besides the
    random offsets, the offset of one atom is solved from the balance equation
    sum_i (p_i - q_i) D_i = 0; the solution is kept only if it still leaves the
    discriminator optimal.  Returns the first instance with EDM <= 1e-12, or None.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    kind = DistanceKind(distance_kind)
    mode = "same_support" if same_support_only else "differing_support"
    for _ in range(budget):
        k = int(rng.integers(2, max_k + 1))
        p, q = random_pair(k, mode, rng)
        if equal(p, q):
            continue
        D = random_optimal_discriminator(p, q, rng)
        u = union_support(p, q)
        diff = np.where(u, p.probs - q.probs, 0.0)
        offsets = np.where(u, D.values - D.y_mid, 0.0)
        candidates = [D.values]
        # EDM vanishes iff sum_i (p_i - q_i) D_i = 0, i.e. sum_i (p_i - q_i) offset_i = 0.
        movable = np.flatnonzero(np.abs(diff) > EQ_TOL)
        if movable.size:
            c = movable[-1]
            rest = float(diff @ offsets - diff[c] * offsets[c])
            solved = D.values.copy()
            solved[c] = D.y_mid - rest / diff[c]
            candidates.append(solved)
        for values in candidates:
            cand = TabularDiscriminator(values, D.y_mid)
            if abs(float(diff @ np.where(u, values - D.y_mid, 0.0))) > 1e-9 or not is_optimal(cand, p, q):
                continue
            edm = exact_loss("EDM", p, q, cand, kind)
            if edm <= 1e-12:
                return EdmInstance(p.probs, q.probs, cand, edm)
    return None
