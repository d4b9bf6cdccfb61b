"""Finite-difference audit of every parameter group on one scene."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng as rngmod
from . import synthdata as sd
from . import tensor as T
from .config import RunConfig
from .model import OccRobNet, SceneTargets

TOLERANCE = 1e-3
TARGET = 1e-4
FLOOR = 1e-2

# (group, parameter-name prefixes); checked in this order
GROUPS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("backbone", ("backbone.",)),
    ("heatmap_head", ("heatmap_head.",)),
    ("segmentation_head", ("segmentation_head.",)),
    ("ciet_hand", ("ciet_hand.",)),
    ("ciet_object", ("ciet_object.",)),
    ("token_embedding", ("hand_embed.", "object_embed.")),
    ("encoder", ("transformer.encoder",)),
    ("decoder", ("transformer.decoder", "transformer.queries")),
    ("identity_head", ("transformer.identity_",)),
    ("pose_heads", ("transformer.joint_head.", "transformer.translation_head.", "transformer.object_head.")),
)


@dataclass
class GroupResult:
    group: str
    n_params: int
    n_checked: int
    max_rel_error: float
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> np.ndarray:
    a, b = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def group_of(name: str) -> str | None:
    for group, prefixes in GROUPS:
        if name.startswith(prefixes):
            return group
    return None


def audit_scene(config: RunConfig) -> sd.Scene:
    """A two-hand scene so every loss term is active."""
    return sd.generate_scene(rngmod.derive_seed(config.seed, rngmod.SCENE, 0),
                             sd.SceneConfig(two_hand=True, occlusion_level=config.occlusion_level))


def run_gradcheck(config: RunConfig, samples: int = 4, step: float = 1e-5,
                  corrupt: Callable[[str, np.ndarray], None] | None = None,
                  model: OccRobNet | None = None, scene: sd.Scene | None = None) -> list[GroupResult]:
    """Compare backprop with central differences, group by group.

    Per group, ``samples`` random entries plus the entry with the largest
    analytic gradient are probed.  The token plan is fixed from the first
    forward pass so peak extraction cannot change between probes.
    ``corrupt(name, grad)`` may edit analytic gradients in place before the
    comparison (used to prove the audit can fail).
    """
    model = model or OccRobNet(config)
    scene = scene or audit_scene(config)
    targets = SceneTargets(scene, config.sigma)
    seed = rngmod.derive_seed(config.seed, rngmod.SAMPLING, 0)
    params = model.parameters()
    T.zero_grads(params)
    total, _, plan = model.loss(targets, seed, return_plan=True)
    T.backward(total)
    analytic = {name: p.grad.copy() for name, p in model.named_parameters()}
    if corrupt is not None:
        for name, grad in analytic.items():
            corrupt(name, grad)

    def f():
        return model.loss(targets, seed, plan=plan)[0]

    pick = rngmod.stream(config.seed, rngmod.SAMPLING, 2)
    named = list(model.named_parameters())
    results = []
    for group, _ in GROUPS:
        members = [(n, p) for n, p in named if group_of(n) == group]
        if not members:
            continue
        sizes = np.array([p.data.size for _, p in members])
        probes: list[tuple[int, int]] = []
        flat_max = [(float(np.abs(analytic[n]).max()), i) for i, (n, _) in enumerate(members)]
        best = max(flat_max)[1]
        probes.append((best, int(np.abs(analytic[members[best][0]]).argmax())))
        for _ in range(samples):
            i = int(pick.choice(len(members), p=sizes / sizes.sum()))
            probes.append((i, int(pick.integers(sizes[i]))))
        worst, worst_name = 0.0, ""
        for i, flat in probes:
            name, p = members[i]
            idx = np.unravel_index(flat, p.data.shape)
            numeric = T.finite_difference_grad(f, p, step, [idx])[0]
            err = float(relative_error(analytic[name][idx], numeric))
            if err >= worst:
                worst, worst_name = err, f"{name}{list(map(int, idx))}"
        results.append(GroupResult(group, int(sizes.sum()), len(probes), worst, worst_name))
    return results


def format_report(results: list[GroupResult]) -> str:
    lines = ["group,n_params,n_checked,max_rel_error,worst_entry,status"]
    for r in results:
        lines.append(f"{r.group},{r.n_params},{r.n_checked},{r.max_rel_error:.3e},{r.worst},"
                     f"{'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
