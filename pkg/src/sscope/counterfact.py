"""Lockstep counterfactual training.

An anchor network trains on its own dataset role while intervened partners
train alongside it: each partner consumes the opposite role's batches, has
its gradients computed through the whole network, applies updates only to
its intervention set A, and then has the remaining blocks overwritten with
the anchor's values. Everything draws batches from one shared index stream,
so every model gets equal exposure and the whole procedure is a pure
function of (spec, data, plan, A).

Applying updates to A only and then overwriting the complement is
arithmetically identical to updating all blocks and overwriting, because the
optimizers are elementwise; the debug mode verifies the overwritten blocks
were indeed never touched.

Two degenerate equivalences hold bit-exactly and are used as oracles: A = {}
reproduces the anchor, and A = [m] reproduces a direct training run on the
opposite role with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, TrainingDiverged, UsageError
from .netcore import BlockNet, NetSpec, build_net, loss_and_grad, sync_blocks
from .optim import Optimizer, OptimizerConfig, ScheduleConfig
from .rng import subseed
from .skewlab import PairedDataset, paired_batches

__all__ = [
    "InterventionSet",
    "TrainPlan",
    "PairOutcome",
    "FamilyOutcome",
    "train_single",
    "train_pair",
    "train_family",
]

ROLES = ("clean", "skewed")


# --------------------------------------------------------------------------
# intervention sets

@dataclass(frozen=True)
class InterventionSet:
    """A subset of the m block indices, with the standard constructors."""

    m: int
    members: frozenset

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(i) for i in self.members))
        if any(not 0 <= i < self.m for i in self.members):
            raise UsageError(f"members {sorted(self.members)} outside [0, {self.m})")

    @classmethod
    def empty(cls, m):
        return cls(m, frozenset())

    @classmethod
    def full(cls, m):
        return cls(m, frozenset(range(m)))

    @classmethod
    def single_complement(cls, m, i):
        if not 0 <= i < m:
            raise UsageError(f"block {i} outside [0, {m})")
        return cls(m, frozenset(range(m)) - {i})

    @classmethod
    def suffix(cls, m, i):
        if not 0 <= i <= m:
            raise UsageError(f"suffix start {i} outside [0, {m}]")
        return cls(m, frozenset(range(i, m)))

    @property
    def complement(self):
        return InterventionSet(self.m, frozenset(range(self.m)) - self.members)

    @property
    def is_empty(self):
        return not self.members

    @property
    def is_full(self):
        return len(self.members) == self.m

    def sorted(self):
        return sorted(self.members)

    def canonical(self) -> str:
        if self.is_empty:
            return "{}"
        mem = self.sorted()
        if mem == list(range(mem[0], self.m)):
            return f"{mem[0]}:{self.m}"
        missing = sorted(set(range(self.m)) - self.members)
        if len(missing) == 1:
            return f"-{{{missing[0]}}}"
        return "{" + ",".join(map(str, mem)) + "}"

    @staticmethod
    def parse(text: str, m: int) -> "InterventionSet":
        text = text.strip()
        if text == "{}":
            return InterventionSet.empty(m)
        if text.startswith("-{") and text.endswith("}"):
            return InterventionSet.single_complement(m, int(text[2:-1]))
        if ":" in text:
            lo, hi = text.split(":")
            if int(hi) != m:
                raise UsageError(f"suffix set {text} must end at m={m}")
            return InterventionSet.suffix(m, int(lo))
        if text.startswith("{") and text.endswith("}"):
            return InterventionSet(m, frozenset(int(x) for x in text[1:-1].split(",")))
        raise UsageError(f"cannot parse intervention set {text!r}")


# --------------------------------------------------------------------------
# plans

@dataclass(frozen=True)
class TrainPlan:
    anchor_role: str
    steps: int
    batch_size: int
    master_seed: int
    optimizer: OptimizerConfig
    schedule: ScheduleConfig

    def validate(self):
        if self.anchor_role not in ROLES:
            raise UsageError(f"anchor_role must be one of {ROLES}")
        if self.steps <= 0 or self.batch_size <= 0:
            raise UsageError("steps and batch_size must be positive")
        if self.schedule.total_steps != self.steps:
            raise UsageError("schedule.total_steps must equal plan steps")
        self.optimizer.validate()
        self.schedule.validate(self.optimizer.peak_lr)
        return self


def _other_role(role):
    return "skewed" if role == "clean" else "clean"


# --------------------------------------------------------------------------
# trainees

@dataclass
class _Trainee:
    name: str
    net: BlockNet
    data_role: str
    update_blocks: list
    sync_from: str | None = None  # anchor name
    sync_blocks: list = field(default_factory=list)
    optimizer: Optimizer | None = None
    updates: int = 0
    skip_compute: bool = False


def _initial_net(spec, plan, dtype, init_from):
    if init_from is not None:
        if init_from.spec != spec:
            raise UsageError("warmstart checkpoint spec differs from requested spec")
        return BlockNet(
            spec, {k: v.copy() for k, v in init_from.params.items()}, dtype
        )
    return build_net(spec, seed=plan.master_seed, dtype=dtype)


def _lockstep(pd, plan, trainees, debug_sync=False, lr_scales=None, wd_scales=None,
              phase_blocks=None, on_step_end=None):
    """Run the shared training loop; trainees share one batch index stream.

    phase_blocks: optional callable t -> {name: block list} overriding each
    trainee's update set per step (used by the freezing protocol).
    on_step_end: optional callable (t, {name: trainee}) invoked after the
    step's updates and synchronization.
    """
    by_name = {tr.name: tr for tr in trainees}
    for tr in trainees:
        tr.optimizer = Optimizer(
            plan.optimizer,
            plan.schedule,
            lr_block_scale=dict(lr_scales or {}) if tr.sync_from is None else {},
            wd_block_scale=dict(wd_scales or {}) if tr.sync_from is None else {},
        )
    t = 0
    epoch = 0
    while t < plan.steps:
        eseed = subseed(plan.master_seed, "shuffle", epoch)
        for batch in paired_batches(pd, plan.batch_size, eseed):
            if t >= plan.steps:
                break
            views = {"clean": batch.clean_x, "skewed": batch.skew_x}
            grads = {}
            for tr in trainees:
                if tr.skip_compute:
                    continue
                try:
                    _, g = loss_and_grad(tr.net, views[tr.data_role], batch.labels)
                except NumericError as exc:
                    raise TrainingDiverged(
                        f"{tr.name}: {exc} at step {t}", step=t
                    ) from exc
                grads[tr.name] = g
            snapshots = {}
            if debug_sync:
                for tr in trainees:
                    if tr.sync_from:
                        anchor = by_name[tr.sync_from]
                        snapshots[tr.name] = {
                            b: anchor.net.block_bytes(b) for b in tr.sync_blocks
                        }
            for tr in trainees:
                if tr.skip_compute:
                    continue
                blocks = tr.update_blocks
                if phase_blocks is not None:
                    blocks = phase_blocks(t).get(tr.name, blocks)
                keys = []
                for b in blocks:
                    keys.extend(tr.net.block_keys(b))
                if keys:
                    tr.optimizer.step(
                        {k: tr.net.params[k] for k in keys},
                        {k: grads[tr.name][k] for k in keys},
                        t,
                    )
                tr.updates += 1
            for tr in trainees:
                if tr.sync_from is None:
                    continue
                anchor = by_name[tr.sync_from]
                if debug_sync:
                    for b in tr.sync_blocks:
                        if tr.net.block_bytes(b) != snapshots[tr.name][b]:
                            raise AssertionError(
                                f"sync invariant broken: {tr.name} block {b} "
                                f"drifted from {tr.sync_from} at step {t}"
                            )
                sync_blocks(tr.net, anchor.net, tr.sync_blocks)
            if on_step_end is not None:
                on_step_end(t, by_name)
            t += 1
        epoch += 1
    # the synchronization invariant is always verified at the final step
    for tr in trainees:
        if tr.sync_from is not None:
            anchor = by_name[tr.sync_from]
            for b in tr.sync_blocks:
                assert tr.net.block_bytes(b) == anchor.net.block_bytes(b), (
                    f"final sync check failed for {tr.name} block {b}"
                )
    return {tr.name: tr for tr in trainees}


# --------------------------------------------------------------------------
# public training entry points

def train_single(spec: NetSpec, pd: PairedDataset, plan: TrainPlan,
                 dtype=np.float32, init_from=None, lr_scales=None,
                 wd_scales=None, phase_blocks=None, on_step_end=None) -> BlockNet:
    """Direct training of one network on its plan's dataset role."""
    plan.validate()
    net = _initial_net(spec, plan, dtype, init_from)
    anchor = _Trainee(
        name="anchor",
        net=net,
        data_role=plan.anchor_role,
        update_blocks=list(range(spec.m)),
    )
    _lockstep(pd, plan, [anchor], lr_scales=lr_scales, wd_scales=wd_scales,
              phase_blocks=phase_blocks, on_step_end=on_step_end)
    return net


@dataclass(frozen=True)
class PairOutcome:
    anchor: BlockNet
    intervened: BlockNet
    A: InterventionSet
    steps: int
    master_seed: int
    update_counts: dict


def train_pair(spec: NetSpec, pd: PairedDataset, plan: TrainPlan,
               A: InterventionSet, dtype=np.float32, debug_sync=False,
               init_from=None) -> PairOutcome:
    """Train an anchor and one counterfactually intervened partner in lockstep."""
    plan.validate()
    if A.m != spec.m:
        raise UsageError(f"intervention set has m={A.m}, spec has m={spec.m}")
    anchor_net = _initial_net(spec, plan, dtype, init_from)
    intervened_net = anchor_net.copy()  # shared initial weights
    anchor = _Trainee(
        name="anchor",
        net=anchor_net,
        data_role=plan.anchor_role,
        update_blocks=list(range(spec.m)),
    )
    partner = _Trainee(
        name="intervened",
        net=intervened_net,
        data_role=_other_role(plan.anchor_role),
        update_blocks=A.sorted(),
        sync_from="anchor",
        sync_blocks=A.complement.sorted(),
        skip_compute=A.is_empty,
    )
    done = _lockstep(pd, plan, [anchor, partner], debug_sync=debug_sync)
    return PairOutcome(
        anchor=anchor_net,
        intervened=intervened_net,
        A=A,
        steps=plan.steps,
        master_seed=plan.master_seed,
        update_counts={name: tr.updates for name, tr in done.items()},
    )


@dataclass(frozen=True)
class FamilyOutcome:
    anchors: dict  # role -> BlockNet
    intervened: dict  # (direction role, canonical set) -> BlockNet
    sets: list
    steps: int
    update_counts: dict


def train_family(spec: NetSpec, pd: PairedDataset, plan_clean: TrainPlan,
                 plan_skewed: TrainPlan, sets, dtype=np.float32,
                 debug_sync=False, init_from=None) -> FamilyOutcome:
    """Both anchors plus one intervened model per (direction, set), trained in
    a single lockstep pass so each anchor is trained exactly once."""
    plan_clean.validate()
    plan_skewed.validate()
    if plan_clean.anchor_role != "clean" or plan_skewed.anchor_role != "skewed":
        raise UsageError("plans must carry their own anchor roles")
    for attr in ("steps", "batch_size", "master_seed", "optimizer", "schedule"):
        if getattr(plan_clean, attr) != getattr(plan_skewed, attr):
            raise UsageError(f"mirror-image plans must share {attr}")
    sets = list(sets)
    for A in sets:
        if A.m != spec.m:
            raise UsageError(f"intervention set has m={A.m}, spec has m={spec.m}")
    init = _initial_net(spec, plan_clean, dtype, init_from)
    trainees = []
    for role in ROLES:
        trainees.append(
            _Trainee(
                name=f"anchor:{role}",
                net=init.copy(),
                data_role=role,
                update_blocks=list(range(spec.m)),
            )
        )
    seen = set()
    for A in sets:
        key = A.canonical()
        if key in seen:
            continue
        seen.add(key)
        for role in ROLES:
            trainees.append(
                _Trainee(
                    name=f"intervened:{role}:{key}",
                    net=init.copy(),
                    data_role=_other_role(role),
                    update_blocks=A.sorted(),
                    sync_from=f"anchor:{role}",
                    sync_blocks=A.complement.sorted(),
                    skip_compute=A.is_empty,
                )
            )
    done = _lockstep(pd, plan_clean, trainees, debug_sync=debug_sync)
    anchors = {role: done[f"anchor:{role}"].net for role in ROLES}
    intervened = {}
    for A in sets:
        key = A.canonical()
        for role in ROLES:
            intervened[(role, key)] = done[f"intervened:{role}:{key}"].net
    return FamilyOutcome(
        anchors=anchors,
        intervened=intervened,
        sets=sets,
        steps=plan_clean.steps,
        update_counts={name: tr.updates for name, tr in done.items()},
    )
