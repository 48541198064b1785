from fractions import Fraction

import numpy as np
import pytest

from conftest import make_paired, mlp4_spec, net_bytes, quick_plan, watermark_task
from sscope import skewlab as sl
from sscope.counterfact import train_single
from sscope.errors import ConfigError, UsageError
from sscope.interventions import (
    LR_UP,
    WD_DOWN,
    InterventionKind,
    TargetBlocks,
    build_mitigation_regression,
    freeze_protocol,
    mitigation_extent,
    retrain_with_intervention,
)
from sscope.metrics import LocalizationProfile
from sscope.netcore import evaluate
from sscope.stats import ols_fit

F = Fraction


@pytest.fixture(scope="module")
def setting():
    task = watermark_task()
    pd = make_paired(task, n=128, seed=33)
    test = sl.gen_clean_synthetic(task, 64, seed=34)
    return mlp4_spec(), pd, test


def test_target_validation():
    TargetBlocks((1,)).validate(4)
    TargetBlocks((2, 3)).validate(4)
    with pytest.raises(UsageError):
        TargetBlocks((1, 3)).validate(4)
    with pytest.raises(UsageError):
        TargetBlocks((5,)).validate(4)
    with pytest.raises(UsageError):
        InterventionKind("momentum", 2.0).validate()


def test_identity_intervention_reproduces_anchor(setting):
    spec, pd, test = setting
    plan = quick_plan("skewed", steps=30, master_seed=12)
    anchor = train_single(spec, pd, plan)
    res = retrain_with_intervention(
        spec, pd, plan, InterventionKind("lr_scale", 1.0), TargetBlocks((2,)),
        test, err_c=F(1, 10), err_s=F(3, 10),
    )
    assert net_bytes(res.network) == net_bytes(anchor)
    anchor_err = evaluate(anchor, test).error_fraction
    assert res.extent == pytest.approx(
        mitigation_extent(anchor_err, F(1, 10), F(3, 10))
    )


def test_intervened_run_differs_and_is_deterministic(setting):
    spec, pd, test = setting
    plan = quick_plan("skewed", steps=30, master_seed=12)
    anchor = train_single(spec, pd, plan)
    runs = [
        retrain_with_intervention(
            spec, pd, plan, LR_UP, TargetBlocks((3,)),
            test, err_c=F(1, 10), err_s=F(3, 10),
        )
        for _ in range(2)
    ]
    assert net_bytes(runs[0].network) != net_bytes(anchor)
    assert net_bytes(runs[0].network) == net_bytes(runs[1].network)
    assert round(runs[0].extent, 6) == round(runs[1].extent, 6)


def test_extent_endpoints():
    # intervened at the clean anchor's accuracy -> extent 1; at the skewed -> 0
    assert mitigation_extent(F(1, 10), F(1, 10), F(3, 10)) == pytest.approx(1.0)
    assert mitigation_extent(F(3, 10), F(1, 10), F(3, 10)) == pytest.approx(0.0)


def test_extent_invariant_under_error_accuracy_exchange():
    err_i, err_c, err_s = F(17, 100), F(8, 100), F(33, 100)
    direct = mitigation_extent(err_i, err_c, err_s)
    acc = (
        ((1 - err_i) - (1 - err_s)) / ((1 - err_c) - (1 - err_s))
    )
    assert direct == pytest.approx(float(acc))


def test_extent_undefined_below_gap_floor():
    assert mitigation_extent(F(1, 10), F(1, 10), F(1, 10) + F(1, 1000)) is None


def test_wd_intervention_runs(setting):
    spec, pd, test = setting
    plan = quick_plan("skewed", steps=20, master_seed=8)
    res = retrain_with_intervention(
        spec, pd, plan, WD_DOWN, TargetBlocks((0, 1)),
        test, err_c=F(1, 10), err_s=F(3, 10),
    )
    assert res.extent_defined
    assert res.provenance["targets"] == "0+1"


def test_freeze_protocol_contract(setting):
    # external oracle: rerun the same three phases, capture the frozen blocks'
    # bytes at the start of phase 3, and require the protocol's final network
    # to still hold exactly those bytes
    spec, pd, test = setting
    plan = quick_plan("skewed", steps=40, master_seed=15)
    t1 = t2 = 4
    keep = spec.m - 1
    res = freeze_protocol(
        spec, pd, plan, keep_block=keep, clean_test=test,
        err_c=F(1, 10), err_s=F(3, 10), t1=t1, t2=t2,
    )
    assert res.provenance["frozen_blocks_verified"]

    def phases(t):
        if t < t1:
            return {"anchor": [spec.m - 1]}
        if t < t1 + t2:
            return {"anchor": list(range(spec.m))}
        return {"anchor": [keep]}

    snapshot = {}

    def capture(t, by_name):
        if t == t1 + t2 - 1:
            net = by_name["anchor"].net
            snapshot.update(
                {b: net.block_bytes(b) for b in range(spec.m) if b != keep}
            )

    replay = train_single(spec, pd, plan, phase_blocks=phases, on_step_end=capture)
    assert net_bytes(replay) == net_bytes(res.network)
    for b in range(spec.m):
        if b != keep:
            assert res.network.block_bytes(b) == snapshot[b]
    assert res.network.block_bytes(keep) != snapshot.get(keep, b"")
    assert res.extent_defined


def test_freeze_protocol_deterministic(setting):
    spec, pd, test = setting
    plan = quick_plan("skewed", steps=40, master_seed=16)
    runs = [
        freeze_protocol(
            spec, pd, plan, keep_block=1, clean_test=test,
            err_c=F(1, 10), err_s=F(3, 10), t1=3, t2=3,
        )
        for _ in range(2)
    ]
    assert net_bytes(runs[0].network) == net_bytes(runs[1].network)
    assert runs[0].extent == runs[1].extent


def test_freeze_phase_validation(setting):
    spec, pd, test = setting
    plan = quick_plan("skewed", steps=40, master_seed=16)
    with pytest.raises(ConfigError):
        freeze_protocol(spec, pd, plan, 0, test, F(1, 10), F(3, 10), t1=0, t2=0)
    with pytest.raises(ConfigError):
        freeze_protocol(spec, pd, plan, 0, test, F(1, 10), F(3, 10), t1=30, t2=30)


def test_regression_dummy_coding():
    prof = LocalizationProfile(
        enc_rates=tuple(F(i, 10) for i in range(6)),
        fgt_rates=tuple(F(1, 20) for _ in range(6)),
        gap=F(1, 5),
    )
    y, X = build_mitigation_regression(
        {"s": prof},
        [
            ("s", TargetBlocks((0,)), 0.3),
            ("s", TargetBlocks((5,)), 0.1),
            ("s", TargetBlocks((2, 3)), 0.7),
        ],
    )
    assert X["first"].tolist() == [1.0, 0.0, 0.0]
    assert X["last"].tolist() == [0.0, 1.0, 0.0]
    assert X["double"].tolist() == [0.0, 0.0, 1.0]
    # double target sums the pair's rates
    assert X["enc"][2] == pytest.approx(0.2 + 0.3)
    assert X["enc_x_fgt"][2] == pytest.approx(0.5 * 0.1)
    assert X["enc_sq"][2] == pytest.approx(0.25)


def test_regression_interaction_arithmetic():
    prof = LocalizationProfile(
        enc_rates=(F(1, 5), F(0)), fgt_rates=(F(1, 2), F(0)), gap=F(1, 5)
    )
    _, X = build_mitigation_regression(
        {"s": prof}, [("s", TargetBlocks((0,)), 0.0)]
    )
    assert X["enc_x_fgt"][0] == pytest.approx(0.10)
    assert X["enc_sq"][0] == pytest.approx(0.04)
    assert X["fgt_sq"][0] == pytest.approx(0.25)


def test_regression_missing_profile():
    with pytest.raises(UsageError, match="no localization profile"):
        build_mitigation_regression({}, [("s", TargetBlocks((0,)), 0.0)])


def test_planted_relationship_recovered_end_to_end():
    rng = np.random.default_rng(77)
    profiles = {}
    rows = []
    beta = {"enc": 0.6, "fgt": -0.3, "enc_x_fgt": 0.2, "enc_sq": 0.05,
            "fgt_sq": -0.1, "first": 0.04, "last": -0.07, "double": 0.02,
            "const": 0.15}
    m = 6
    for s in range(40):
        enc = tuple(F(int(v), 1000) for v in rng.integers(-100, 400, size=m))
        fgt = tuple(F(int(v), 1000) for v in rng.integers(-100, 400, size=m))
        profiles[s] = LocalizationProfile(enc, fgt, F(1, 5))
        targets = [TargetBlocks((int(b),)) for b in rng.integers(0, m, size=2)]
        targets.append(TargetBlocks((2, 3)))
        for tgt in targets:
            e = float(sum(profiles[s].enc_rates[b] for b in tgt.blocks))
            f = float(sum(profiles[s].fgt_rates[b] for b in tgt.blocks))
            extent = (
                beta["enc"] * e + beta["fgt"] * f + beta["enc_x_fgt"] * e * f
                + beta["enc_sq"] * e * e + beta["fgt_sq"] * f * f
                + beta["first"] * tgt.includes_first()
                + beta["last"] * tgt.includes_last(m)
                + beta["double"] * tgt.is_double + beta["const"]
            )
            rows.append((s, tgt, extent))
    y, X = build_mitigation_regression(profiles, rows)
    fit = ols_fit(y, X)
    for name, want in beta.items():
        assert fit.coefficients[name] == pytest.approx(want, abs=1e-6)
