"""Finite-difference verification of the analytic loss gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._seeding import substream
from .matching import VARIANTS, GroupSample, MatchConfig, NegativeSet, PackedGroups
from .model import GradBuffer, ModelParams
from .tasks import TaskSpec

STEP = 1e-5
TOLERANCE = 1e-4
GROUP_SIZES = (1, 2, 5)
# variants whose loss depends on which object is selected
SELECTING = ("max-matching", "maximizing")
TASKS = ("mil", "pll", "rs")


@dataclass
class Problem:
    task: str
    K: int
    params: ModelParams
    packed: PackedGroups
    cfg: MatchConfig
    negs: Optional[list]


@dataclass
class ConfigResult:
    variant: str
    task: str
    K: int
    sampled: bool
    rel_error: float
    worst: tuple  # (block, flat index, analytic, numeric)


@dataclass
class GradcheckReport:
    tolerance: float
    results: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)

    def max_error(self) -> dict:
        out = {}
        for r in self.results:
            out[r.variant] = max(out.get(r.variant, 0.0), r.rel_error)
        return out

    def counts(self) -> dict:
        out = {}
        for r in self.results:
            out[r.variant] = out.get(r.variant, 0) + 1
        return out

    def failures(self) -> list:
        return [r for r in self.results if not r.rel_error < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failures()


def _problem(task: str, K: int, variant: str, rng: np.random.Generator,
             sampled: bool) -> Problem:
    n_groups = 2
    if task == "mil":
        spec = TaskSpec.mil(n_features=4, n_classes=3)
        groups = [GroupSample(rng.normal(size=(K, 4)), int(rng.integers(3)))
                  for _ in range(n_groups)]
        pool = None
    elif task == "pll":
        spec = TaskSpec.pll(n_classes=6, n_features=3, dim=3)
        pool = rng.normal(size=(7, 3))
        groups = [GroupSample(rng.choice(6, size=K, replace=False), pool[i], target_index=i)
                  for i in range(n_groups)]
    else:
        spec = TaskSpec.rs(n_items=9, dim=3)
        groups = [GroupSample(rng.integers(9, size=K), int(rng.integers(9)))
                  for _ in range(n_groups)]
        pool = None
    params = ModelParams(spec.spec_f, spec.spec_g)
    for _, arr in params.blocks():
        arr[...] = rng.normal(size=arr.shape)
    lam = float(rng.uniform(0.25, 2.0))
    cfg = spec.match_config(lam=lam, variant=variant)
    packed = PackedGroups.build(params, groups, pool=pool)
    negs = None
    if sampled:
        negs = [NegativeSet.sample(packed.universe, int(t), 4, rng) for t in packed.targets]
    return Problem(task, K, params, packed, cfg, negs)


def _losses(problem: Problem, backend, grad=None):
    idx = np.arange(len(problem.packed))
    return problem.packed.loss_grad(problem.params, idx, problem.cfg, grad,
                                    negs=problem.negs, backend=backend)


def check_problem(problem: Problem, backend=None, step: float = STEP):
    """Relative error of the analytic gradient, or ``None`` at a selection kink.

    For the selecting variants a kink is detected when a perturbation changes
    any group's selected object.
    """
    grad = GradBuffer.zeros_like(problem.params)
    _, selected = _losses(problem, backend, grad)
    worst = ("", -1, 0.0, 0.0)
    diff_max = 0.0
    scale = 0.0
    for name, arr in problem.params.blocks():
        analytic = getattr(grad, name).ravel()
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up, sel_up = _losses(problem, backend)
            flat[j] = orig - step
            down, sel_down = _losses(problem, backend)
            flat[j] = orig
            kinked = np.any(sel_up != selected) or np.any(sel_down != selected)
            if kinked and problem.cfg.variant in SELECTING:
                return None
            numeric = (up.sum() - down.sum()) / (2.0 * step)
            err = abs(analytic[j] - numeric)
            scale = max(scale, abs(analytic[j]), abs(numeric))
            if err >= diff_max:
                diff_max = err
                worst = (name, j, float(analytic[j]), float(numeric))
    return diff_max / max(scale, 1e-8), worst


def run_gradcheck(seed: int = 0, per_cell: int = 6, group_sizes=GROUP_SIZES,
                  variants=tuple(VARIANTS), tasks=TASKS, backend: Optional[Callable] = None,
                  step: float = STEP, tolerance: float = TOLERANCE,
                  max_redraws: int = 50) -> GradcheckReport:
    """Check every variant on ``per_cell`` random problems per (task, K) cell.

    Half of the draws use sampled negative sets instead of the full universe.
    """
    report = GradcheckReport(tolerance)
    for variant in variants:
        skipped = 0
        for task in tasks:
            for K in group_sizes:
                rng = substream(seed, "gradcheck", VARIANTS[variant], TASKS.index(task), K)
                done = 0
                redraws = 0
                while done < per_cell:
                    sampled = done % 2 == 1
                    problem = _problem(task, K, variant, rng, sampled)
                    res = check_problem(problem, backend, step)
                    if res is None:
                        skipped += 1
                        redraws += 1
                        if redraws > max_redraws:
                            raise RuntimeError(f"no kink-free draw for {variant}/{task}/K={K}")
                        continue
                    report.results.append(ConfigResult(variant, task, K, sampled, *res))
                    done += 1
        report.skipped[variant] = skipped
    return report


def format_report(report: GradcheckReport) -> str:
    lines = [f"{'variant':<14} {'configs':>7} {'skipped':>7} {'max rel err':>12}"]
    counts = report.counts()
    for variant, err in report.max_error().items():
        lines.append(f"{variant:<14} {counts[variant]:>7} {report.skipped.get(variant, 0):>7} "
                     f"{err:>12.3e}")
    for r in report.failures():
        block, j, a, n = r.worst
        lines.append(f"FAIL {r.variant} task={r.task} K={r.K} sampled={r.sampled} "
                     f"coord={block}[{j}] analytic={a!r} numeric={n!r} rel={r.rel_error:.3e}")
    lines.append("PASS" if report.ok else "FAIL")
    return "\n".join(lines)
