"""Adam refinement of both hands' rotations and wrist translations."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from handshadow.metrics import TAU_SEMANTIC, iou, mask_metrics
from handshadow.objective import TERMS, ObjectiveWeights, Problem
from handshadow.render import SceneConfig, binarize
from handshadow.rig import HandPose, HandRig

TERMINATIONS = ("max_iterations", "metric_threshold", "plateau")


class NumericalError(RuntimeError):
    def __init__(self, iteration: int, term: str):
        super().__init__(f"non-finite {term} at iteration {iteration}")
        self.iteration = iteration
        self.term = term


@dataclass(frozen=True)
class RefineConfig:
    learning_rate: float = 1e-3
    decay_factor: float = 0.5
    decay_at_iteration: int = 3000
    max_iterations: int = 6000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    stop_metric_threshold: Optional[float] = None
    plateau_window: int = 500
    plateau_epsilon: float = 1e-6
    rng_seed: int = 0
    trace_every: int = 10
    # Coarse-to-fine start: gradients of the first warmup_iterations steps come
    # from a render whose edge softness starts warmup_softness_factor times wider
    # and shrinks geometrically to the scene value. Losses, best-so-far and
    # stopping always use the scene's own softness.
    warmup_iterations: int = 500
    warmup_softness_factor: float = 4.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.decay_at_iteration <= self.max_iterations:
            raise ValueError("decay_at_iteration must lie in (0, max_iterations]")
        if self.plateau_window < 1 or self.trace_every < 1:
            raise ValueError("plateau_window and trace_every must be >= 1")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be >= 0")
        if not self.warmup_softness_factor >= 1.0:
            raise ValueError("warmup_softness_factor must be >= 1")

    def learning_rate_at(self, iteration: int) -> float:
        """Rate used by the step taken at (0-based) ``iteration``."""
        if iteration < self.decay_at_iteration:
            return self.learning_rate
        return self.learning_rate * self.decay_factor

    def softness_factor_at(self, iteration: int) -> float:
        """Edge-softness multiplier for the gradient of the step at ``iteration``."""
        if iteration >= self.warmup_iterations or self.warmup_softness_factor == 1.0:
            return 1.0
        return self.warmup_softness_factor ** (1.0 - iteration / self.warmup_iterations)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RefineConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


class Adam:
    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, x, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return x - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class OptimizationResult:
    poses: list
    trace: list  # decimated rows: iteration, learning_rate, total, per-term values
    loss_history: np.ndarray  # total loss at every evaluated iterate
    iterations: int
    termination: str
    best_iteration: int
    initial_loss: float
    final_loss: float
    final_terms: dict
    soft: np.ndarray
    mask: np.ndarray
    metrics: dict = field(default_factory=dict)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "learning_rate", "softness_factor", "total", *TERMS])
        for row in self.trace:
            writer.writerow([row["iteration"], repr(row["learning_rate"]), repr(row["softness_factor"]), repr(row["total"]),
                             *(repr(row[t]) for t in TERMS)])
        return buf.getvalue()


def refine(
    scene: SceneConfig,
    rig: HandRig,
    init: Sequence[HandPose],
    target,
    saliency=None,
    weights: ObjectiveWeights | None = None,
    config: RefineConfig | None = None,
    tau_semantic: float = TAU_SEMANTIC,
) -> OptimizationResult:
    """Minimize the weighted objective over (theta_l, t_l, theta_r, t_r); shapes stay fixed.

    Returns the best iterate seen, so the reported loss never exceeds the
    loss at ``init``.
    """
    config = config or RefineConfig()
    weights = weights or ObjectiveWeights()
    target = np.asarray(target)
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("target must be a binary mask")
    problem = Problem(scene, rig, list(init), target, saliency, weights)
    x = problem.initial_vector()
    adam = Adam(x.size, config.adam_beta1, config.adam_beta2, config.adam_epsilon)

    history, best_history, trace = [], [], []
    best_x, best_eval, best_it = None, None, -1
    termination = "max_iterations"
    steps = 0
    for it in range(config.max_iterations + 1):
        factor = config.softness_factor_at(it)
        ev = problem.evaluate(x, need_grad=factor == 1.0)
        _check_finite(ev, it)
        history.append(ev.total)
        if best_eval is None or ev.total < best_eval.total:
            best_x, best_eval, best_it = x.copy(), ev, it
        best_history.append(best_eval.total)
        if it % config.trace_every == 0:
            row = {"iteration": it, "learning_rate": config.learning_rate_at(it), "softness_factor": factor,
                   "total": ev.total}
            row.update(ev.terms)
            trace.append(row)

        if config.stop_metric_threshold is not None:
            if iou(binarize(ev.soft, scene.binarize_threshold), target) >= config.stop_metric_threshold:
                termination = "metric_threshold"
                break
        if it - config.warmup_iterations >= config.plateau_window:
            before = best_history[it - config.plateau_window]
            if before - best_eval.total <= config.plateau_epsilon * max(abs(before), 1e-300):
                termination = "plateau"
                break
        if it == config.max_iterations:
            break
        grad = ev.grad
        if grad is None:
            coarse = replace(scene, softness=scene.softness * factor)
            grad = problem.evaluate(x, scene=coarse).grad
            if not np.all(np.isfinite(grad)):
                raise NumericalError(it, "gradient")
        x = adam.step(x, grad, config.learning_rate_at(it))
        steps += 1

    poses = problem.poses_from(best_x)
    mask = binarize(best_eval.soft, scene.binarize_threshold)
    return OptimizationResult(
        poses=poses,
        trace=trace,
        loss_history=np.array(history),
        iterations=steps,
        termination=termination,
        best_iteration=best_it,
        initial_loss=history[0],
        final_loss=best_eval.total,
        final_terms=dict(best_eval.terms),
        soft=best_eval.soft,
        mask=mask,
        metrics=mask_metrics(mask, target, saliency, tau_semantic),
    )


def _check_finite(ev, it):
    for name, value in ev.terms.items():
        if not np.isfinite(value):
            raise NumericalError(it, name)
    if not np.isfinite(ev.total):
        raise NumericalError(it, "total")
    if ev.grad is not None and not np.all(np.isfinite(ev.grad)):
        raise NumericalError(it, "gradient")
