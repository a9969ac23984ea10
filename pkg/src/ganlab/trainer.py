"""Generator/discriminator training on the swiss roll.

Random stream
-------------
A run owns a single ``numpy.random.Generator`` seeded with ``config.seed`` and
consumes it in this fixed order:

1. generator init, then discriminator init (uniform fan-in weights);
2. every cycle, for each of the ``n_d`` discriminator updates: the real batch,
   the latent batch, then (WassersteinGP only) one interpolation weight per row;
3. the generator update: the latent batch, then a real batch for DM/EDM only;
4. on evaluation cycles: ``eval_n`` real points, then ``eval_n`` latent vectors.

Evaluation happens every ``eval_every`` cycles and always on the last cycle.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import SwissRollConfig, nnrmse, sample_swiss_roll
from .losses import (
    ConfigError,
    DObjective,
    GLossSpec,
    check_pairing,
    d_objective,
    g_loss,
    interpolate,
    labels_for,
    penalty_at,
)
from .nets import AdamState, MlpParams, MlpSpec, NonFiniteGradient, adam_step, build_mlp, mlp_forward, sample_z

log = logging.getLogger(__name__)

HIDDEN = (128, 128, 128)


def _spec_from(raw, what: str) -> MlpSpec | None:
    if raw is None or isinstance(raw, MlpSpec):
        return raw
    raw = dict(raw)
    allowed = {f.name for f in dataclasses.fields(MlpSpec)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return MlpSpec(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _data_from(raw) -> SwissRollConfig:
    if isinstance(raw, SwissRollConfig):
        return raw
    raw = dict(raw or {})
    allowed = {f.name for f in dataclasses.fields(SwissRollConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown data keys: {sorted(unknown)}")
    try:
        return SwissRollConfig(**{k: float(v) for k, v in raw.items()})
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None


@dataclass(frozen=True)
class TrainConfig:
    d_objective: DObjective = field(default_factory=DObjective)
    g_loss: GLossSpec = field(default_factory=lambda: GLossSpec("ClassicNonSaturating"))
    n_d: int | None = None
    batch_m: int = 256
    cycles: int = 5000
    lr_d: float = 5e-5
    lr_g: float = 5e-5
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gen_spec: MlpSpec | None = None
    disc_spec: MlpSpec | None = None
    data: SwissRollConfig = field(default_factory=SwissRollConfig)
    latent_dim: int = 2
    seed: int = 1
    eval_every: int = 250
    eval_n: int = 1000

    def __post_init__(self):
        # n_d, gen_spec and disc_spec default from the objective: 10 critic
        # updates for WassersteinGP, sigmoid head for CrossEntropy
        if self.n_d is None:
            object.__setattr__(self, "n_d", 10 if self.d_objective.is_wgan else 1)
        if self.gen_spec is None:
            object.__setattr__(self, "gen_spec", MlpSpec(self.latent_dim, HIDDEN, 2))
        if self.disc_spec is None:
            object.__setattr__(self, "disc_spec", MlpSpec(2, HIDDEN, 1, self.d_objective.sigmoid_head))
        for name in ("n_d", "batch_m", "cycles", "eval_every", "eval_n", "latent_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("lr_d", "lr_g", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        g, d = self.gen_spec, self.disc_spec
        if g.in_dim != self.latent_dim or g.out_dim != 2:
            raise ConfigError("gen_spec must map latent_dim -> 2")
        if d.in_dim != 2 or d.out_dim != 1:
            raise ConfigError("disc_spec must map 2 -> 1")
        if g.final_sigmoid:
            raise ConfigError("gen_spec cannot end in a sigmoid")
        if d.final_sigmoid != self.d_objective.sigmoid_head:
            raise ConfigError("disc_spec.final_sigmoid must be true exactly for CrossEntropy")
        check_pairing(self.d_objective, self.g_loss)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (DObjective, GLossSpec)):
                value = value.to_dict()
            elif isinstance(value, (MlpSpec, SwissRollConfig)):
                value = dataclasses.asdict(value)
                if "hidden_dims" in value:
                    value["hidden_dims"] = list(value["hidden_dims"])
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(raw)
        if "d_objective" in kw:
            kw["d_objective"] = DObjective.from_dict(kw["d_objective"])
        if "g_loss" in kw:
            kw["g_loss"] = GLossSpec.from_dict(kw["g_loss"])
        kw["gen_spec"] = _spec_from(kw.get("gen_spec"), "gen_spec")
        disc = kw.get("disc_spec")
        if isinstance(disc, dict) and "final_sigmoid" not in disc:
            # the head follows the objective unless set explicitly
            disc = {**disc, "final_sigmoid": kw.get("d_objective", DObjective()).sigmoid_head}
        kw["disc_spec"] = _spec_from(disc, "disc_spec")
        if "data" in kw:
            kw["data"] = _data_from(kw["data"])
        for name in ("n_d", "batch_m", "cycles", "latent_dim", "seed", "eval_every", "eval_n"):
            if kw.get(name) is not None:
                if isinstance(kw[name], bool) or int(kw[name]) != kw[name]:
                    raise ConfigError(f"{name} must be an integer")
                kw[name] = int(kw[name])
        return cls(**kw)

    def replace(self, **changes) -> "TrainConfig":
        # re-derive defaults when the objective changes
        base = self.to_dict()
        base.update({k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in changes.items()})
        if "d_objective" in changes:
            for key in ("n_d", "disc_spec"):
                if key not in changes:
                    base.pop(key)
        return TrainConfig.from_dict(base)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return TrainConfig.from_dict(raw)


@dataclass
class RunResult:
    config: dict
    seed: int
    nnrmse_trace: list = field(default_factory=list)
    final_nnrmse: float = float("nan")
    d_obj_after_d_step: list = field(default_factory=list)
    d_obj_after_g_step: list = field(default_factory=list)
    wall_time: float = 0.0
    cpu_time: float = 0.0  # CPU seconds of the training thread
    diverged: bool = False
    diverged_cycle: int | None = None
    reason: str = ""
    generator: MlpParams | None = field(default=None, repr=False)
    final_real: np.ndarray | None = field(default=None, repr=False)
    final_fake: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "nnrmse_trace": self.nnrmse_trace,
            "final_nnrmse": self.final_nnrmse,
            "d_obj_after_d_step": self.d_obj_after_d_step,
            "d_obj_after_g_step": self.d_obj_after_g_step,
            "wall_time": self.wall_time,
            "cpu_time": self.cpu_time,
            "diverged": self.diverged,
            "diverged_cycle": self.diverged_cycle,
            "reason": self.reason,
        }


class _Diverged(Exception):
    pass


@lru_cache(maxsize=8)
def _selectors(m_real: int, m_fake: int) -> tuple[Tensor, Tensor]:
    n = m_real + m_fake
    return Tensor(np.eye(m_real, n)), Tensor(np.eye(m_fake, n, k=m_real))


def discriminate(d_params: MlpParams, spec: MlpSpec, x_real: np.ndarray, x_fake: np.ndarray):
    """D on real and fake rows in one stacked pass; returns (d_real, d_fake)."""
    out = mlp_forward(d_params, np.vstack([x_real, x_fake]), spec)
    sel_real, sel_fake = _selectors(len(x_real), len(x_fake))
    return ad.matmul(sel_real, out), ad.matmul(sel_fake, out)


def d_step_loss(config: TrainConfig, d_params: MlpParams, x_real, x_fake, rng) -> tuple[Tensor, Tensor]:
    """(loss to descend, objective) for one discriminator update.

    The loss is the negated objective, plus the gradient penalty for WassersteinGP.
    """
    obj_kind = config.d_objective
    d_real, d_fake = discriminate(d_params, config.disc_spec, x_real, x_fake)
    obj = d_objective(obj_kind, d_real, d_fake)
    loss = ad.neg(obj)
    if obj_kind.is_wgan:
        x_hat = interpolate(x_real, x_fake, rng)
        loss = ad.add(loss, penalty_at(d_params, config.disc_spec, x_hat, obj_kind.lam, obj_kind.sided))
    return loss, obj


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise _Diverged(f"non-finite {what}")


def train(config: TrainConfig, observer: Callable[[str], None] | None = None) -> RunResult:
    """Run the alternating D/G loop described by ``config``.

    ``observer`` (if given) is called with one event name per step:
    ``sample_real``, ``sample_z``, ``d_update``, ``g_update``, ``eval``.
    A non-finite loss or gradient ends the run as diverged; it is not raised.
    """
    emit = observer or (lambda name: None)
    rng = np.random.default_rng(config.seed)
    gspec, dspec = config.gen_spec, config.disc_spec
    labels = labels_for(config.d_objective)
    gfam = config.g_loss.family
    m = config.batch_m

    G = build_mlp(gspec, rng)
    D = build_mlp(dspec, rng)
    g_state = AdamState.zeros_like(G)
    d_state = AdamState.zeros_like(D)
    result = RunResult(config=config.to_dict(), seed=config.seed)
    start, cpu_start = time.perf_counter(), time.thread_time()
    cycle = 0
    try:
        for cycle in range(1, config.cycles + 1):
            for _ in range(config.n_d):
                emit("sample_real")
                x_real = sample_swiss_roll(m, config.data, rng)
                emit("sample_z")
                z_d = sample_z(m, config.latent_dim, rng)
                x_fake = mlp_forward(G, z_d, gspec).data
                tape = ad.Tape()
                bound = D.bind(tape)
                loss, _ = d_step_loss(config, bound, x_real, x_fake, rng)
                _check_finite(loss.item(), "discriminator loss")
                grads = ad.grad(loss, bound.flat())
                D, d_state = adam_step(D, grads, d_state, config.lr_d, config.beta1, config.beta2, config.adam_eps)
                emit("d_update")

            evaluating = cycle % config.eval_every == 0 or cycle == config.cycles
            if evaluating:
                obj = d_objective(config.d_objective, *discriminate(D, dspec, x_real, mlp_forward(G, z_d, gspec).data))
                result.d_obj_after_d_step.append((cycle, obj.item()))

            emit("sample_z")
            z = sample_z(m, config.latent_dim, rng)
            d_real = None
            if gfam.uses_real:
                emit("sample_real")
                d_real = mlp_forward(D, sample_swiss_roll(m, config.data, rng), dspec)
            tape = ad.Tape()
            bound = G.bind(tape)
            # D enters as constants: frozen during the generator update
            d_fake = mlp_forward(D, mlp_forward(bound, z, gspec), dspec)
            loss = g_loss(config.g_loss, labels, d_fake, d_real)
            _check_finite(loss.item(), "generator loss")
            grads = ad.grad(loss, bound.flat())
            G, g_state = adam_step(G, grads, g_state, config.lr_g, config.beta1, config.beta2, config.adam_eps)
            emit("g_update")

            if evaluating:
                emit("eval")
                obj = d_objective(config.d_objective, *discriminate(D, dspec, x_real, mlp_forward(G, z_d, gspec).data))
                result.d_obj_after_g_step.append((cycle, obj.item()))
                real = sample_swiss_roll(config.eval_n, config.data, rng)
                fake = mlp_forward(G, sample_z(config.eval_n, config.latent_dim, rng), gspec).data
                if not np.all(np.isfinite(fake)):
                    raise _Diverged("non-finite generator output")
                score = nnrmse(real, fake)
                result.nnrmse_trace.append((cycle, score))
                result.final_real, result.final_fake = real, fake
                log.debug("cycle %d nnrmse %.4f", cycle, score)
    except (_Diverged, NonFiniteGradient, ad.DomainError, FloatingPointError) as exc:
        result.diverged = True
        result.diverged_cycle = cycle
        result.reason = str(exc)
        result.nnrmse_trace.append((cycle, float("inf")))
        log.info("run seed=%d diverged at cycle %d: %s", config.seed, cycle, exc)

    result.final_nnrmse = result.nnrmse_trace[-1][1]
    result.generator = G
    result.wall_time = time.perf_counter() - start
    result.cpu_time = time.thread_time() - cpu_start
    return result


def save_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(result.summary(), indent=2) + "\n", encoding="utf-8")
    if result.generator is not None:
        np.savez(out / "generator.npz", *result.generator.arrays())
    if result.final_real is not None:
        np.savez(out / "samples.npz", real=result.final_real, fake=result.final_fake)
    return out


def load_samples(run_dir) -> tuple[np.ndarray, np.ndarray]:
    path = Path(run_dir) / "samples.npz"
    if not path.exists():
        raise FileNotFoundError(f"no saved samples in {run_dir}")
    with np.load(path) as npz:
        return npz["real"], npz["fake"]
