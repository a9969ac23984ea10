"""Discriminator objectives, label conventions, distances and generator losses.

Generator families:

* classic: saturating, non-saturating, LSGAN and WGAN generator losses
* ``DM``  -- mean_i d(D(x_real_i), D(x_fake_i)), index-paired in the batch
* ``LM``  -- mean_i d(D(x_fake_i), y_hat)
* ``EDM`` -- d(mean D(x_real), mean D(x_fake))
* ``ELM`` -- d(mean D(x_fake), y_hat)

The real-data terms of LM/ELM do not depend on the generator and are dropped
from the generator step.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import MlpParams, MlpSpec, mlp_forward


class ConfigError(ValueError):
    pass


class Sided(str, Enum):
    ONE = "OneSided"
    TWO = "TwoSided"


class DistanceKind(str, Enum):
    ABS_LOG = "AbsLogDiff"
    SQ_LOG = "SqLogDiff"
    ABS = "Abs"
    SQUARE = "Square"
    PSEUDO_HUBER = "PseudoHuber"

    @property
    def needs_positive(self) -> bool:
        return self in (DistanceKind.ABS_LOG, DistanceKind.SQ_LOG)

    @property
    def has_kink(self) -> bool:
        return self in (DistanceKind.ABS_LOG, DistanceKind.ABS)


class Family(str, Enum):
    SATURATING = "ClassicSaturating"
    NON_SATURATING = "ClassicNonSaturating"
    LSGAN = "ClassicLSGAN"
    WGAN = "ClassicWGAN"
    DM = "DM"
    LM = "LM"
    EDM = "EDM"
    ELM = "ELM"

    @property
    def classic(self) -> bool:
        return self.value.startswith("Classic")

    @property
    def uses_real(self) -> bool:
        return self in (Family.DM, Family.EDM)

    @property
    def uses_target(self) -> bool:
        return self in (Family.LM, Family.ELM)


class Target(str, Enum):
    MID = "Mid"
    REAL = "Real"


OBJECTIVES = ("CrossEntropy", "LeastSquares", "WassersteinGP")


@dataclass(frozen=True)
class DObjective:
    variant: str = "CrossEntropy"
    lam: float = 10.0
    sided: Sided = Sided.ONE

    def __post_init__(self):
        if self.variant not in OBJECTIVES:
            raise ConfigError(f"unknown discriminator objective {self.variant!r}")
        try:
            object.__setattr__(self, "sided", Sided(self.sided))
        except ValueError:
            raise ConfigError(f"unknown penalty siding {self.sided!r}") from None
        if self.variant == "WassersteinGP" and not self.lam > 0:
            raise ConfigError("WassersteinGP needs lambda > 0")

    @property
    def is_wgan(self) -> bool:
        return self.variant == "WassersteinGP"

    @property
    def sigmoid_head(self) -> bool:
        return self.variant == "CrossEntropy"

    def label(self) -> str:
        if self.is_wgan:
            return f"WassersteinGP({self.lam:g},{self.sided.value})"
        return self.variant

    def to_dict(self) -> dict:
        if self.is_wgan:
            return {"variant": self.variant, "lambda": self.lam, "sided": self.sided.value}
        return {"variant": self.variant}

    @classmethod
    def from_dict(cls, raw) -> "DObjective":
        if isinstance(raw, str):
            return cls(raw)
        raw = dict(raw)
        unknown = set(raw) - {"variant", "lambda", "sided"}
        if unknown:
            raise ConfigError(f"unknown d_objective keys: {sorted(unknown)}")
        return cls(raw.get("variant", "CrossEntropy"), float(raw.get("lambda", 10.0)), raw.get("sided", "OneSided"))


CROSS_ENTROPY = DObjective("CrossEntropy")
LEAST_SQUARES = DObjective("LeastSquares")


def wgan_gp(lam: float = 10.0, sided: Sided | str = Sided.ONE) -> DObjective:
    return DObjective("WassersteinGP", lam, Sided(sided))


@dataclass(frozen=True)
class LabelConvention:
    """``None`` marks an unbounded label or an undefined threshold."""

    y_real: float | None
    y_fake: float | None
    y_mid: float | None

    def target(self, which: Target | str) -> float:
        which = Target(which)
        value = self.y_mid if which is Target.MID else self.y_real
        if value is None:
            raise ConfigError(f"label target {which.value!r} is undefined for this discriminator objective")
        return value


def labels_for(kind: DObjective) -> LabelConvention:
    if kind.is_wgan:
        return LabelConvention(None, None, None)
    return LabelConvention(1.0, 0.0, 0.5)


@dataclass(frozen=True)
class GLossSpec:
    family: Family
    distance: DistanceKind | None = None
    y_hat: Target | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
            if self.distance is not None:
                object.__setattr__(self, "distance", DistanceKind(self.distance))
            if self.y_hat is not None:
                object.__setattr__(self, "y_hat", Target(self.y_hat))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.family.classic:
            if self.distance is not None or self.y_hat is not None:
                raise ConfigError(f"{self.family.value} takes no distance or target")
            return
        if self.distance is None:
            raise ConfigError(f"{self.family.value} needs a distance")
        if self.family.uses_target and self.y_hat is None:
            raise ConfigError(f"{self.family.value} needs y_hat (Mid or Real)")
        if not self.family.uses_target and self.y_hat is not None:
            raise ConfigError(f"{self.family.value} takes no y_hat")

    def label(self) -> str:
        parts = [self.family.value]
        if self.distance is not None:
            parts.append(self.distance.value)
        if self.y_hat is not None:
            parts.append(self.y_hat.value)
        return "/".join(parts)

    def to_dict(self) -> dict:
        out = {"family": self.family.value}
        if self.distance is not None:
            out["distance"] = self.distance.value
        if self.y_hat is not None:
            out["y_hat"] = self.y_hat.value
        return out

    @classmethod
    def from_dict(cls, raw) -> "GLossSpec":
        if isinstance(raw, str):
            return cls(raw)
        raw = dict(raw)
        unknown = set(raw) - {"family", "distance", "y_hat"}
        if unknown:
            raise ConfigError(f"unknown g_loss keys: {sorted(unknown)}")
        if "family" not in raw:
            raise ConfigError("g_loss needs a family")
        return cls(raw["family"], raw.get("distance"), raw.get("y_hat"))


def check_pairing(d_obj: DObjective, spec: GLossSpec) -> None:
    """Reject generator losses that are undefined under ``d_obj``."""
    labels = labels_for(d_obj)
    if spec.family in (Family.SATURATING, Family.NON_SATURATING) and not d_obj.sigmoid_head:
        raise ConfigError(f"{spec.family.value} needs a sigmoid (CrossEntropy) discriminator")
    if spec.distance is not None and spec.distance.needs_positive and not d_obj.sigmoid_head:
        raise ConfigError(f"{spec.distance.value} needs positive discriminator outputs (CrossEntropy)")
    if spec.family.uses_target:
        labels.target(spec.y_hat)


def _full(value: float, like: Tensor) -> Tensor:
    return Tensor(np.full(like.shape, float(value)))


def d_objective(kind: DObjective, d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Discriminator objective to maximise (penalty excluded)."""
    if kind.variant == "CrossEntropy":
        return ad.add(ad.mean(ad.log(d_real)), ad.mean(ad.log(ad.sub(_full(1.0, d_fake), d_fake))))
    if kind.variant == "LeastSquares":
        real_term = ad.mean(ad.square(ad.sub(d_real, _full(1.0, d_real))))
        return ad.neg(ad.add(real_term, ad.mean(ad.square(d_fake))))
    return ad.sub(ad.mean(d_real), ad.mean(d_fake))


def interpolate(x_real: np.ndarray, x_fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """x_hat = a*x_real + (1-a)*x_fake with one a ~ U(0, 1) per row."""
    if x_real.shape != x_fake.shape:
        raise ad.ShapeError("gradient_penalty", x_real.shape, x_fake.shape)
    alpha = rng.uniform(0.0, 1.0, size=(x_real.shape[0], 1))
    return alpha * x_real + (1.0 - alpha) * x_fake


def penalty_at(d_params: MlpParams, spec: MlpSpec, x_hat: np.ndarray, lam: float, sided: Sided | str) -> Tensor:
    """lam * mean(dev^2) of the input-gradient norm deviation at ``x_hat``.

    dev = ||grad_x D(x_hat)|| - 1 (two-sided) or max(0, that) (one-sided).  A zero
    gradient norm is legal and contributes (0 - 1)^2 under the two-sided form.
    """
    tape = next((p.tape for p in d_params.flat() if isinstance(p, Tensor) and p.tape is not None), None)
    if tape is None:
        tape = ad.Tape()
    xh = tape.leaf(x_hat)
    # summing over the batch leaves each row's input gradient intact
    score = ad.sum(mlp_forward(d_params, xh, spec))
    g = ad.input_gradient(score, xh)
    norms = ad.sqrt(ad.sum(ad.square(g), axis=1))
    dev = ad.sub(norms, _full(1.0, norms))
    if Sided(sided) is Sided.ONE:
        dev = ad.leaky_relu(dev, 0.0)
    return ad.scalar_mul(ad.mean(ad.square(dev)), lam)


def gradient_penalty(d_params, spec, x_real, x_fake, rng, lam: float, sided) -> Tensor:
    xr = x_real.data if isinstance(x_real, Tensor) else np.asarray(x_real, dtype=np.float64)
    xf = x_fake.data if isinstance(x_fake, Tensor) else np.asarray(x_fake, dtype=np.float64)
    return penalty_at(d_params, spec, interpolate(xr, xf, rng), lam, sided)


def distance(kind: DistanceKind | str, x: Tensor, y) -> Tensor:
    """Elementwise d(x, y); ``y`` may be a tensor of x's shape or a float."""
    kind = DistanceKind(kind)
    if not isinstance(y, Tensor):
        y = _full(y, x)
    if kind is DistanceKind.ABS_LOG:
        return ad.abs(ad.sub(ad.log(x), ad.log(y)))
    if kind is DistanceKind.SQ_LOG:
        return ad.square(ad.sub(ad.log(x), ad.log(y)))
    diff = ad.sub(x, y)
    if kind is DistanceKind.ABS:
        return ad.abs(diff)
    if kind is DistanceKind.SQUARE:
        return ad.square(diff)
    return ad.pseudo_huber_unit(diff)


def g_loss(spec: GLossSpec, labels: LabelConvention, d_fake: Tensor, d_real: Tensor | None = None) -> Tensor:
    """Generator loss to minimise.  ``d_real`` is required exactly for DM and EDM."""
    fam = spec.family
    if fam.uses_real != (d_real is not None):
        raise ConfigError(f"{fam.value}: d_real must be {'given' if fam.uses_real else 'absent'}")
    if fam is Family.SATURATING:
        return ad.mean(ad.log(ad.sub(_full(1.0, d_fake), d_fake)))
    if fam is Family.NON_SATURATING:
        return ad.neg(ad.mean(ad.log(d_fake)))
    if fam is Family.LSGAN:
        return ad.mean(ad.square(ad.sub(d_fake, _full(1.0, d_fake))))
    if fam is Family.WGAN:
        return ad.neg(ad.mean(d_fake))
    if fam is Family.DM:
        return ad.mean(distance(spec.distance, d_real, d_fake))
    if fam is Family.LM:
        return ad.mean(distance(spec.distance, d_fake, labels.target(spec.y_hat)))
    if fam is Family.EDM:
        return distance(spec.distance, ad.mean(d_real), ad.mean(d_fake))
    return distance(spec.distance, ad.mean(d_fake), labels.target(spec.y_hat))
