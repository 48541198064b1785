"""Grid execution: dataset construction, training, evaluation, persistence.

A trial is one (config cell, seed label): it builds its own train/test data
from a trial-split seed, trains whatever the subcommand asks for (anchors
only, a counterfactual family, or mitigation retrainings), evaluates every
model on the clean and fully-skewed test views, flags divergence, and emits
RunRecords. Trials are independent, so they can run in a process pool;
records are appended by the parent only.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from ..counterfact import InterventionSet, TrainPlan, train_family
from ..errors import ConfigError, UsageError
from ..interventions import (
    FREEZE,
    LR_DOWN,
    LR_UP,
    WD_DOWN,
    WD_UP,
    TargetBlocks,
    freeze_protocol,
    retrain_with_intervention,
)
from ..metrics import contributions, detect_divergence, increase_rates
from ..netcore import evaluate, load_checkpoint, save_checkpoint
from ..rng import subseed
from ..skewlab import SamplingSkewSpec, apply_frequency, gen_clean_synthetic, make_fully_skewed
from ..stats import mean_se
from . import presets
from .config import ExperimentConfig, run_id, trial_id, trial_seed
from .store import ResultsStore, RunRecord

__all__ = [
    "intervention_sets",
    "build_trial_data",
    "run_counterfactual_trial",
    "run_mitigation_trial",
    "run_grid",
    "aggregate",
    "contribution_rows",
    "localization_profiles",
]

MITIGATION_KINDS = (LR_UP, LR_DOWN, WD_UP, WD_DOWN, FREEZE)


def intervention_sets(config: ExperimentConfig, m: int):
    if config.family == "single":
        return [InterventionSet.single_complement(m, i) for i in range(m)]
    if config.family == "suffix":
        return [InterventionSet.suffix(m, i) for i in range(m + 1)]
    return [InterventionSet.parse(s, m) for s in config.explicit_sets]


def build_trial_data(config: ExperimentConfig, seed: int):
    """Train PairedDataset plus the clean/fully-skewed test views."""
    tseed = trial_seed(config, seed)
    task = config.task_spec()
    if config.skew_kind == "watermark":
        skew = config.watermark()
    else:
        skew = SamplingSkewSpec(num_groups=task.attribute_groups or 2)
    train_clean = gen_clean_synthetic(task, config.train_n, subseed(tseed, "data-train"))
    train_full = make_fully_skewed(train_clean, skew)
    pd = apply_frequency(
        train_clean, train_full, config.frequency(), subseed(tseed, "mask-train")
    )
    test_clean = gen_clean_synthetic(task, config.test_n, subseed(tseed, "data-test"))
    test_full = make_fully_skewed(test_clean, skew)
    return pd, test_clean, test_full


def _plans(config: ExperimentConfig, seed: int):
    opt = presets.optimizer_config(config.optimizer, config.optimizer_overrides)
    schedule = presets.schedule_config(config.steps, config.mode, opt.peak_lr)
    tseed = trial_seed(config, seed)

    def mk(role):
        return TrainPlan(
            anchor_role=role,
            steps=config.steps,
            batch_size=config.batch_size,
            master_seed=tseed,
            optimizer=opt,
            schedule=schedule,
        ).validate()

    return mk("clean"), mk("skewed")


def _dtype(config):
    return np.float64 if config.precision == 64 else np.float32


def _warmstart_net(config):
    if config.mode != "warmstart":
        return None
    net = load_checkpoint(config.warmstart_checkpoint, dtype=_dtype(config))
    if net.spec != config.net_spec():
        raise ConfigError(
            "warmstart checkpoint architecture differs from the configured net"
        )
    return net


def _base_record_fields(config: ExperimentConfig, seed: int):
    f = config.frequency()
    return dict(
        trial_id=trial_id(config, seed),
        seed=seed,
        task=config.task,
        skew_kind=config.skew_kind,
        skew_strength=config.skew_strength,
        skew_frequency=f"{f.numerator}/{f.denominator}",
        net=config.net,
        optimizer=config.optimizer,
        mode=config.mode,
        family=config.family,
        steps=config.steps,
        batch_size=config.batch_size,
        train_n=config.train_n,
        test_n=config.test_n,
        master_seed=config.master_seed,
    )


def _record(config, seed, role, set_repr, err_clean, err_skew, diverged=False,
            status="ok", wall_time=0.0, **extra):
    return RunRecord(
        run_id=run_id(config, seed, role, set_repr),
        role=role,
        set=set_repr,
        err_clean_num=err_clean.mispredictions,
        err_clean_den=err_clean.n_examples,
        err_skewfull_num=err_skew.mispredictions,
        err_skewfull_den=err_skew.n_examples,
        diverged=diverged,
        status=status,
        wall_time=wall_time,
        **_base_record_fields(config, seed),
        **extra,
    )


def run_counterfactual_trial(config: ExperimentConfig, seed: int,
                             anchors_only=False):
    """Train the family for one seed; returns (records, nets by run id)."""
    started = time.monotonic()
    spec = config.net_spec()
    pd, test_clean, test_full = build_trial_data(config, seed)
    plan_c, plan_s = _plans(config, seed)
    sets = [] if anchors_only else intervention_sets(config, spec.m)
    fam = train_family(
        spec, pd, plan_c, plan_s, sets,
        dtype=_dtype(config),
        debug_sync=config.debug_sync,
        init_from=_warmstart_net(config),
    )
    wall = time.monotonic() - started

    def both(net):
        return evaluate(net, test_clean), evaluate(net, test_full)

    records = []
    nets = {}
    anchor_eval = {role: both(net) for role, net in fam.anchors.items()}
    for role_name, role in (("clean_anchor", "clean"), ("skewed_anchor", "skewed")):
        ec, es = anchor_eval[role]
        rec = _record(config, seed, role_name, "", ec, es, wall_time=wall)
        records.append(rec)
        nets[rec.run_id] = fam.anchors[role]
    err_clean_of_skewed = anchor_eval["skewed"][0].error_fraction
    err_skewfull_of_clean = anchor_eval["clean"][1].error_fraction
    for A in sets:
        if A.is_empty:
            continue  # the anchor record already covers the degenerate set
        key = A.canonical()
        for direction, role_name in (
            ("clean", "intervened_c"), ("skewed", "intervened_s")
        ):
            net = fam.intervened[(direction, key)]
            ec, es = both(net)
            flag = detect_divergence(
                ec.error_fraction, es.error_fraction,
                err_clean_of_skewed, err_skewfull_of_clean,
            )
            rec = _record(
                config, seed, role_name, key, ec, es, diverged=flag.diverged,
                wall_time=wall,
            )
            records.append(rec)
            nets[rec.run_id] = net
    return records, nets


def mitigation_targets(m: int):
    singles = [TargetBlocks((i,)) for i in range(m)]
    doubles = [TargetBlocks((i, i + 1)) for i in range(m - 1)]
    return singles + doubles


def run_mitigation_trial(config: ExperimentConfig, seed: int):
    """Anchors plus one retraining per (intervention kind, target)."""
    started = time.monotonic()
    spec = config.net_spec()
    pd, test_clean, test_full = build_trial_data(config, seed)
    plan_c, plan_s = _plans(config, seed)
    fam = train_family(
        spec, pd, plan_c, plan_s, [], dtype=_dtype(config),
        init_from=_warmstart_net(config),
    )
    records = []
    nets = {}
    anchor_eval = {role: (evaluate(net, test_clean), evaluate(net, test_full))
                   for role, net in fam.anchors.items()}
    wall = time.monotonic() - started
    for role_name, role in (("clean_anchor", "clean"), ("skewed_anchor", "skewed")):
        ec, es = anchor_eval[role]
        rec = _record(config, seed, role_name, "", ec, es, wall_time=wall)
        records.append(rec)
        nets[rec.run_id] = fam.anchors[role]
    err_c = anchor_eval["clean"][0].error_fraction
    err_s = anchor_eval["skewed"][0].error_fraction
    for kind in MITIGATION_KINDS:
        for target in mitigation_targets(spec.m):
            if kind.variant == "freeze" and target.is_double:
                continue  # freezing keeps a single block
            t0 = time.monotonic()
            if kind.variant == "freeze":
                res = freeze_protocol(
                    spec, pd, plan_s, target.blocks[0], test_clean, err_c, err_s,
                    dtype=_dtype(config),
                )
            else:
                res = retrain_with_intervention(
                    spec, pd, plan_s, kind, target, test_clean, err_c, err_s,
                    dtype=_dtype(config),
                )
            es_i = evaluate(res.network, test_full)
            ec_i = evaluate(res.network, test_clean)
            set_repr = f"{kind.label()}@{target.label()}"
            records.append(
                _record(
                    config, seed, "mitigation", set_repr, ec_i, es_i,
                    wall_time=time.monotonic() - t0,
                    interv_kind=kind.label(),
                    interv_factor="" if kind.variant == "freeze" else repr(kind.factor),
                    interv_targets=target.label(),
                    extent="" if res.extent is None else repr(res.extent),
                )
            )
    return records, nets


def _probe_run_id(config: ExperimentConfig, seed: int, kind: str) -> str:
    """Run id of the last record a trial of this kind writes (idempotence probe)."""
    if kind == "mitigation":
        target = mitigation_targets(config.net_spec().m)[-2]  # last single block
        return run_id(config, seed, "mitigation", f"{FREEZE.label()}@{target.label()}")
    if kind == "family":
        sets = [A for A in intervention_sets(config, config.net_spec().m)
                if not A.is_empty]
        if sets:
            return run_id(config, seed, "intervened_s", sets[-1].canonical())
    return run_id(config, seed, "skewed_anchor", "")


def _trial_worker(args):
    kind, config_dict, seed = args
    config = ExperimentConfig.from_dict(config_dict)
    if kind == "mitigation":
        return run_mitigation_trial(config, seed)
    return run_counterfactual_trial(config, seed, anchors_only=(kind == "anchors"))


def run_grid(config: ExperimentConfig, store: ResultsStore, kind="family",
             log=print) -> int:
    """Run every seed of the grid, skipping trials already in the store."""
    if kind not in ("family", "anchors", "mitigation"):
        raise UsageError(f"unknown grid kind {kind!r}")
    existing = store.existing_run_ids()
    cfg_dict = config.to_dict()
    pending = []
    for seed in config.seeds:
        if _probe_run_id(config, seed, kind) in existing:
            log(f"seed {seed}: already in store (idempotent skip)")
        else:
            pending.append(seed)
    if not pending:
        return 0
    args = [(kind, cfg_dict, seed) for seed in pending]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outs = list(pool.map(_trial_worker, args))
    else:
        outs = [_trial_worker(a) for a in args]
    written = 0
    for seed, (records, nets) in zip(pending, outs):
        for rec in records:
            if rec.run_id in existing:
                continue
            if rec.role.endswith("_anchor") and rec.run_id in nets:
                save_checkpoint(nets[rec.run_id], store.checkpoint_path(rec.run_id))
            store.append(rec, manifest=_manifest(config, rec))
            existing.add(rec.run_id)
            written += 1
        log(f"seed {seed}: {len(records)} records")
    return written


def _manifest(config: ExperimentConfig, rec: RunRecord) -> dict:
    return {
        "run_id": rec.run_id,
        "trial_id": rec.trial_id,
        "role": rec.role,
        "set": rec.set,
        "seed": rec.seed,
        "config": config.cell_dict(),
        "status": rec.status,
        "diverged": rec.diverged,
    }


# --------------------------------------------------------------------------
# pure transformations of the store

def _err(rec: RunRecord, view: str) -> Fraction:
    if view == "clean":
        return Fraction(rec.err_clean_num, rec.err_clean_den)
    return Fraction(rec.err_skewfull_num, rec.err_skewfull_den)


def _m_of(rec: RunRecord) -> int:
    t = presets.TASK_PRESETS.get(rec.task)
    if t is None or rec.net not in presets.NET_PRESETS:
        raise ConfigError(f"cannot resolve presets for record {rec.run_id}")
    spec = presets.NET_PRESETS[rec.net](t["channels"], t["size"], t["class_count"])
    return spec.m


def contribution_rows(records):
    """(trial, anchor record, ContributionRecord, diverged) per stored set."""
    by_trial = {}
    for rec in records:
        by_trial.setdefault(rec.trial_id, []).append(rec)
    out = []
    for tid, recs in sorted(by_trial.items()):
        anchors = {r.role: r for r in recs if r.role.endswith("_anchor")}
        if len(anchors) != 2:
            continue
        err_c = _err(anchors["clean_anchor"], "clean")
        err_s = _err(anchors["skewed_anchor"], "clean")
        m = _m_of(anchors["clean_anchor"])
        sets = sorted({r.set for r in recs if r.role.startswith("intervened")})
        for key in sets:
            pair = {
                r.role: r
                for r in recs
                if r.set == key and r.role.startswith("intervened")
            }
            if set(pair) != {"intervened_c", "intervened_s"}:
                continue
            record = contributions(
                err_c, err_s,
                _err(pair["intervened_c"], "clean"),
                _err(pair["intervened_s"], "clean"),
                InterventionSet.parse(key, m),
            )
            diverged = pair["intervened_c"].diverged or pair["intervened_s"].diverged
            out.append((tid, anchors["clean_anchor"], record, diverged))
    return out


def localization_profiles(records):
    """Per-trial LocalizationProfiles for complete suffix-family runs."""
    rows = contribution_rows(records)
    by_trial = {}
    meta = {}
    for tid, anchor_rec, record, diverged in rows:
        if diverged:
            continue
        by_trial.setdefault(tid, []).append(record)
        meta[tid] = anchor_rec
    profiles = {}
    for tid, contribs in sorted(by_trial.items()):
        m = contribs[0].A.m
        full_list = list(contribs)
        if not any(c.A.is_empty for c in full_list):
            # the anchors stand in for the empty set's degenerate record
            c0 = contribs[0]
            full_list.append(
                contributions(c0.err_c, c0.err_s, c0.err_c, c0.err_s,
                              InterventionSet.empty(m))
            )
        try:
            profiles[tid] = (meta[tid], increase_rates(full_list))
        except UsageError:
            continue  # incomplete suffix family or zero gap
    return profiles


def aggregate(values_by_cell: dict):
    """mean +- SE per cell; cells with < 2 surviving values marked insufficient."""
    out = {}
    for cell, entries in sorted(values_by_cell.items()):
        kept = [v for v, diverged in entries if not diverged]
        excluded = len(entries) - len(kept)
        if len(kept) < 2:
            out[cell] = {"insufficient": True, "n": len(kept), "excluded": excluded}
            continue
        mean, se = mean_se(kept)
        out[cell] = {
            "mean": mean, "se": se, "n": len(kept), "excluded": excluded,
            "insufficient": False,
        }
    return out
