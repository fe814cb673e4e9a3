"""Optimization drivers: per-shape fitting, dataset pre-training, aux-loss hooks."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import AdamState, NonFiniteError, Tape, Tensor, adam_step, backward
from .embedder import (
    DEFAULT_FEATURE_DIM,
    EmbedderParams,
    Embedding2D,
    embed,
    embed_cloud,
    init_params,
    repulsion_loss,
)
from .geometry import PointCloud, chamfer, coverage, hausdorff, normalize
from .pgi import Pgi, decode, from_resample
from .resampler import (
    DEFAULT_K,
    CanonicalGrid,
    ResampleOutput,
    annealing_loss,
    chamfer_loss,
    hard_resample,
    joint_loss,
    make_grid,
    soft_resample,
)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, detail: str):
        super().__init__(f"optimization diverged at iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass(frozen=True)
class FitConfig:
    m: int = 32
    iterations: int = 2000
    learning_rate: float = 1e-3
    lr_min: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 0.1
    k: int = DEFAULT_K
    tau_init: float = 1e-5
    seed: int = 0
    feature_dim: int = DEFAULT_FEATURE_DIM
    recon_weight: Optional[float] = None
    aux_warmup: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be ≥ 2")
        if self.iterations < 1:
            raise ValueError("iterations must be ≥ 1")
        if self.k < 1:
            raise ValueError("k must be ≥ 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be ≥ 1")
        if self.log_every < 1:
            raise ValueError("log_every must be ≥ 1")
        if self.aux_warmup < 0:
            raise ValueError("aux_warmup must be ≥ 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_min is not None and not 0 <= self.lr_min <= self.learning_rate:
            raise ValueError("lr_min must lie in [0, learning_rate]")

    def lr_at(self, iteration: int) -> float:
        """Step size at ``iteration``: constant, or cosine-decayed to ``lr_min``."""
        if self.lr_min is None or self.iterations == 1:
            return self.learning_rate
        progress = iteration / (self.iterations - 1)
        cos = 0.5 * (1.0 + math.cos(math.pi * progress))
        return self.lr_min + (self.learning_rate - self.lr_min) * cos

    @property
    def threshold(self) -> float:
        """Repulsion threshold, always tied to the grid spacing."""
        return 1.0 / (self.m - 1)


@dataclass(frozen=True)
class IterationLog:
    iteration: int
    rep: float
    ann: float
    aux: Optional[float]
    total: float
    tau: float


@dataclass
class FitReport:
    trace: list[IterationLog]
    coverage: float
    chamfer: float
    hausdorff: float
    tau_final: float
    initial_coverage: float
    n: int
    m: int
    wall_time: float = field(default=0.0, compare=False)

    def final_line(self) -> str:
        return (f"coverage={self.coverage:.6g} chamfer={self.chamfer:.6g} "
                f"hausdorff={self.hausdorff:.6g}")

    def to_text(self) -> str:
        """``key=value`` lines; a summary block, then one block per logged iteration."""
        head = {
            "n": self.n, "m": self.m, "coverage": self.coverage, "chamfer": self.chamfer,
            "hausdorff": self.hausdorff, "initial_coverage": self.initial_coverage,
            "tau_final": self.tau_final, "wall_time": self.wall_time,
        }
        blocks = ["\n".join(f"{k}={_fmt(v)}" for k, v in head.items())]
        for entry in self.trace:
            blocks.append("\n".join(f"{k}={_fmt(v)}" for k, v in asdict(entry).items()
                                    if v is not None))
        return "\n\n".join(blocks) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FitReport":
        blocks = [b for b in text.strip().split("\n\n") if b.strip()]
        parsed = [dict(line.split("=", 1) for line in b.splitlines()) for b in blocks]
        head, rest = parsed[0], parsed[1:]
        trace = [IterationLog(int(d["iteration"]), float(d["rep"]), float(d["ann"]),
                              float(d["aux"]) if "aux" in d else None,
                              float(d["total"]), float(d["tau"])) for d in rest]
        return cls(trace, float(head["coverage"]), float(head["chamfer"]),
                   float(head["hausdorff"]), float(head["tau_final"]),
                   float(head["initial_coverage"]), int(head["n"]), int(head["m"]),
                   float(head["wall_time"]))


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


# -- auxiliary loss hooks -------------------------------------------------------

AuxProvider = Callable[[ResampleOutput], Tensor]


@dataclass
class JointHook:
    """An auxiliary loss added to the objective once ``warmup`` steps have passed."""

    provider: AuxProvider
    warmup: int = 0

    def active(self, iteration: int) -> bool:
        return iteration >= self.warmup

    def __call__(self, out: ResampleOutput) -> Tensor:
        value = self.provider(out)
        if not isinstance(value, Tensor) or value.shape != ():
            shape = getattr(value, "shape", type(value).__name__)
            raise ValueError(f"aux loss provider must return a scalar Tensor, got {shape}")
        if value.tracked and value.tape is not out.q.tape:
            raise ValueError("aux loss provider returned a tensor from another tape")
        if not value.tracked and out.q.tracked:
            raise ValueError("aux loss provider returned a tensor that is not on the tape")
        return value


def jo_hook(provider: AuxProvider, warmup: int = 0) -> JointHook:
    return JointHook(provider, warmup)


def reconstruction_hook(weight: float = 1.0, warmup: int = 0) -> JointHook:
    """Chamfer distance between the soft-resampled grid and the source cloud."""
    def provider(out: ResampleOutput) -> Tensor:
        loss = chamfer_loss(out.q, out.source)
        return loss if weight == 1.0 else loss * weight
    return JointHook(provider, warmup)


def _hook_from(config: FitConfig, hook: Optional[JointHook]) -> Optional[JointHook]:
    if hook is not None:
        return hook
    if config.recon_weight is not None:
        return reconstruction_hook(config.recon_weight, config.aux_warmup)
    return None


# -- training ------------------------------------------------------------------

def _streams(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    init, shuffle = np.random.SeedSequence(seed).spawn(2)
    return init, shuffle


def _initial_params(config: FitConfig) -> EmbedderParams:
    init, _ = _streams(config.seed)
    return init_params(config.feature_dim, np.random.default_rng(init), config.tau_init)


def objective(points: np.ndarray, params: EmbedderParams, config: FitConfig,
              hook: Optional[JointHook] = None, iteration: int = 0,
              grid: Optional[CanonicalGrid] = None):
    """The per-shape training loss; returns ``(total, rep, ann, aux)`` tensors.

    Records on the active tape when ``params`` are tracked. ``aux`` is None
    when no hook is live at ``iteration``.
    """
    grid = grid if grid is not None else make_grid(config.m)
    emb = embed(points, params)
    rep = repulsion_loss(emb, config.threshold)
    aux = None
    # the soft grid only feeds the aux loss, so skip it when no hook is live
    if hook is not None and hook.active(iteration):
        aux = hook(soft_resample(emb, points, grid, config.k, params.tau))
    ann = annealing_loss(params.tau)
    total = joint_loss(rep, ann, config.alpha, config.beta, aux)
    return total, rep, ann, aux


class _Trainer:
    def __init__(self, config: FitConfig, hook: Optional[JointHook]):
        self.config = config
        self.hook = _hook_from(config, hook)
        self.grid = make_grid(config.m)
        self.params = _initial_params(config)
        self.state = AdamState.for_params(
            self.params.tensors(), lr=config.learning_rate, beta1=config.beta1,
            beta2=config.beta2, eps=config.adam_eps)

    def step(self, points: np.ndarray, iteration: int) -> IterationLog:
        cfg = self.config
        try:
            with Tape() as tape:
                tracked = self.params.watch(tape)
                total, rep, ann, aux = objective(points, tracked, cfg, self.hook, iteration, self.grid)
            grads = backward(tape, total)
        except NonFiniteError as exc:
            raise DivergenceError(iteration, str(exc)) from None
        if not math.isfinite(total.item()):
            raise DivergenceError(iteration, "non-finite loss")
        leaves = tape.leaves
        self.state = replace(self.state, lr=cfg.lr_at(iteration))
        new, self.state = adam_step(self.params.tensors(), [grads[i] for i in leaves], self.state)
        if not all(np.all(np.isfinite(p)) for p in new):
            raise DivergenceError(iteration, "non-finite parameters after update")
        entry = IterationLog(iteration, rep.item(), ann.item(),
                             None if aux is None else aux.item(), total.item(),
                             float(self.params.tau))
        self.params = EmbedderParams.from_tensors(new, cfg.feature_dim)
        return entry

    def should_log(self, iteration: int) -> bool:
        cfg = self.config
        return iteration % cfg.log_every == 0 or iteration == cfg.iterations - 1


def encode(cloud: PointCloud, params: EmbedderParams, m: int) -> tuple[Pgi, Embedding2D]:
    """Hard-resampled PGI of ``cloud`` under frozen ``params``."""
    norm = normalize(cloud)
    emb = embed_cloud(norm.points, params)
    grid = make_grid(m)
    out = hard_resample(emb, norm, grid)
    return from_resample(out, grid, norm.meta, len(cloud)), emb


def _finish(cloud: PointCloud, params: EmbedderParams, config: FitConfig,
            trace: list[IterationLog], initial_coverage: float, started: float) -> tuple[Pgi, FitReport]:
    pgi, _ = encode(cloud, params, config.m)
    decoded = decode(pgi)
    source = cloud.denormalized()
    report = FitReport(
        trace=trace,
        coverage=pgi.coverage,
        chamfer=chamfer(decoded, source),
        hausdorff=hausdorff(decoded, source),
        tau_final=float(params.tau),
        initial_coverage=initial_coverage,
        n=len(cloud),
        m=config.m,
        wall_time=time.perf_counter() - started,
    )
    return pgi, report


def _log_entry(entry: IterationLog) -> None:
    aux = "" if entry.aux is None else f" aux={entry.aux:.6g}"
    log.info("iter %d rep=%.6g ann=%.6g%s total=%.6g", entry.iteration, entry.rep,
             entry.ann, aux, entry.total)


def fit_on_io(cloud: PointCloud, config: FitConfig,
              hook: Optional[JointHook] = None) -> tuple[Pgi, EmbedderParams, FitReport]:
    """Optimize a fresh embedder for one shape, then hard-resample it.

    ``hook`` overrides the reconstruction loss implied by
    ``config.recon_weight``.
    """
    if len(cloud) < 2:
        raise ValueError("fitting needs at least two points")
    started = time.perf_counter()
    trainer = _Trainer(config, hook)
    points = normalize(cloud).points
    initial_coverage = encode(cloud, trainer.params, config.m)[0].coverage
    trace = []
    for it in range(config.iterations):
        entry = trainer.step(points, it)
        if trainer.should_log(it):
            trace.append(entry)
            _log_entry(entry)
    pgi, report = _finish(cloud, trainer.params, config, trace, initial_coverage, started)
    log.info("final %s", report.final_line())
    return pgi, trainer.params, report


def fit_off_io(clouds: Sequence[PointCloud], config: FitConfig,
               hook: Optional[JointHook] = None
               ) -> tuple[EmbedderParams, list[FitReport], list[Pgi]]:
    """Train one shared embedder over a dataset, one shape per step.

    Shapes are visited in a freshly shuffled order each epoch;
    ``config.iterations`` counts optimizer steps. Afterwards every cloud is
    encoded with the frozen parameters.
    """
    if not clouds:
        raise ValueError("fit_off_io needs at least one cloud")
    if any(len(c) < 2 for c in clouds):
        raise ValueError("fitting needs at least two points per cloud")
    started = time.perf_counter()
    trainer = _Trainer(config, hook)
    _, shuffle_seq = _streams(config.seed)
    rng = np.random.default_rng(shuffle_seq)
    normalized = [normalize(c).points for c in clouds]
    initial = [encode(c, trainer.params, config.m)[0].coverage for c in clouds]
    traces: list[list[IterationLog]] = [[] for _ in clouds]
    order: list[int] = []
    for it in range(config.iterations):
        if not order:
            order = list(rng.permutation(len(clouds)))
        which = int(order.pop(0))
        entry = trainer.step(normalized[which], it)
        if trainer.should_log(it):
            traces[which].append(entry)
            _log_entry(entry)
    reports, pgis = [], []
    for cloud, trace, init_cov in zip(clouds, traces, initial):
        pgi, report = _finish(cloud, trainer.params, config, trace, init_cov, started)
        reports.append(report)
        pgis.append(pgi)
    return trainer.params, reports, pgis


def config_fields() -> list[str]:
    return [f.name for f in fields(FitConfig)]


def _fit_one(args: tuple[PointCloud, FitConfig]) -> tuple[Pgi, EmbedderParams, FitReport]:
    return fit_on_io(*args)


def fit_batch(clouds: Sequence[PointCloud], config: FitConfig, workers: int = 1
              ) -> list[tuple[Pgi, EmbedderParams, FitReport]]:
    """Independent On-IO fits, optionally spread over worker processes.

    Results come back in input order and match sequential ``fit_on_io``
    calls exactly. Custom hooks are not supported here because they would
    have to be pickled; use ``config.recon_weight`` instead.
    """
    jobs = [(c, config) for c in clouds]
    if workers <= 1 or len(jobs) <= 1:
        return [_fit_one(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fit_one, jobs))
