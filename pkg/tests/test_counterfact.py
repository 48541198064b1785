import pytest

from conftest import mlp4_spec, net_bytes, quick_plan
from sscope import netcore as nc
from sscope.counterfact import (
    InterventionSet,
    train_family,
    train_pair,
    train_single,
)
from sscope.errors import UsageError


def test_intervention_set_constructors():
    m = 6
    assert InterventionSet.suffix(m, 0) == InterventionSet.full(m)
    assert InterventionSet.suffix(m, m) == InterventionSet.empty(m)
    assert InterventionSet.single_complement(m, 2).sorted() == [0, 1, 3, 4, 5]
    with pytest.raises(UsageError):
        InterventionSet(m, frozenset({7}))


def test_intervention_set_canonical_roundtrip():
    m = 6
    cases = [
        InterventionSet.empty(m),
        InterventionSet.full(m),
        InterventionSet.suffix(m, 2),
        InterventionSet.single_complement(m, 3),
        InterventionSet(m, frozenset({0, 2})),
    ]
    assert [a.canonical() for a in cases] == ["{}", "0:6", "2:6", "-{3}", "{0,2}"]
    for a in cases:
        assert InterventionSet.parse(a.canonical(), m) == a


def test_empty_set_reproduces_anchor(small_paired):
    spec = mlp4_spec()
    plan = quick_plan("clean", steps=40)
    out = train_pair(spec, small_paired, plan, InterventionSet.empty(spec.m))
    assert net_bytes(out.intervened) == net_bytes(out.anchor)


def test_full_set_reproduces_direct_opposite_run(small_paired):
    spec = mlp4_spec()
    plan = quick_plan("clean", steps=40, master_seed=3)
    out = train_pair(spec, small_paired, plan, InterventionSet.full(spec.m))
    direct = train_single(
        spec, small_paired, quick_plan("skewed", steps=40, master_seed=3)
    )
    assert net_bytes(out.intervened) == net_bytes(direct)


def test_suffix_set_sync_contract(small_paired):
    spec = mlp4_spec()
    plan = quick_plan("clean", steps=30, master_seed=5)
    A = InterventionSet.suffix(spec.m, 2)
    out = train_pair(spec, small_paired, plan, A, debug_sync=True)
    for b in (0, 1):
        assert out.intervened.block_bytes(b) == out.anchor.block_bytes(b)
    assert any(
        out.intervened.block_bytes(b) != out.anchor.block_bytes(b) for b in (2, 3)
    )


def test_pair_outcome_deterministic(small_paired):
    spec = mlp4_spec()
    A = InterventionSet.single_complement(spec.m, 1)
    runs = [
        train_pair(spec, small_paired, quick_plan("clean", steps=25, master_seed=9), A)
        for _ in range(2)
    ]
    assert net_bytes(runs[0].intervened) == net_bytes(runs[1].intervened)
    assert net_bytes(runs[0].anchor) == net_bytes(runs[1].anchor)


def test_skewed_anchor_direction(small_paired):
    # mirrored direction: anchor on skewed data, partner consumes clean batches
    spec = mlp4_spec()
    plan = quick_plan("skewed", steps=30, master_seed=4)
    out = train_pair(spec, small_paired, plan, InterventionSet.full(spec.m))
    direct_clean = train_single(
        spec, small_paired, quick_plan("clean", steps=30, master_seed=4)
    )
    assert net_bytes(out.intervened) == net_bytes(direct_clean)


def test_family_anchors_match_pair_and_counts(small_paired):
    spec = mlp4_spec()
    m = spec.m
    steps = 24
    sets = [InterventionSet.suffix(m, i) for i in range(m + 1)]
    fam = train_family(
        spec,
        small_paired,
        quick_plan("clean", steps=steps, master_seed=7),
        quick_plan("skewed", steps=steps, master_seed=7),
        sets,
    )
    pair = train_pair(
        spec,
        small_paired,
        quick_plan("clean", steps=steps, master_seed=7),
        InterventionSet.empty(m),
    )
    assert net_bytes(fam.anchors["clean"]) == net_bytes(pair.anchor)
    # anchors train exactly once, for exactly `steps` updates
    assert fam.update_counts["anchor:clean"] == steps
    assert fam.update_counts["anchor:skewed"] == steps
    anchor_count = sum(1 for k in fam.update_counts if k.startswith("anchor:"))
    assert anchor_count == 2
    # empty-set partners never update
    assert fam.update_counts["intervened:clean:{}"] == 0


def test_family_full_set_crosses_to_other_anchor(small_paired):
    spec = mlp4_spec()
    fam = train_family(
        spec,
        small_paired,
        quick_plan("clean", steps=30, master_seed=11),
        quick_plan("skewed", steps=30, master_seed=11),
        [InterventionSet.full(spec.m)],
    )
    key = InterventionSet.full(spec.m).canonical()
    assert net_bytes(fam.intervened[("clean", key)]) == net_bytes(
        fam.anchors["skewed"]
    )
    assert net_bytes(fam.intervened[("skewed", key)]) == net_bytes(
        fam.anchors["clean"]
    )


def test_family_empty_set_returns_trivial_copies(small_paired):
    spec = mlp4_spec()
    fam = train_family(
        spec,
        small_paired,
        quick_plan("clean", steps=20, master_seed=2),
        quick_plan("skewed", steps=20, master_seed=2),
        [InterventionSet.empty(spec.m)],
    )
    assert net_bytes(fam.intervened[("clean", "{}")]) == net_bytes(
        fam.anchors["clean"]
    )
    assert net_bytes(fam.intervened[("skewed", "{}")]) == net_bytes(
        fam.anchors["skewed"]
    )


def test_family_requires_mirror_image_plans(small_paired):
    spec = mlp4_spec()
    with pytest.raises(UsageError, match="master_seed"):
        train_family(
            spec,
            small_paired,
            quick_plan("clean", steps=20, master_seed=1),
            quick_plan("skewed", steps=20, master_seed=2),
            [],
        )


def test_mismatched_m_rejected(small_paired):
    spec = mlp4_spec()
    with pytest.raises(UsageError, match="m="):
        train_pair(
            spec, small_paired, quick_plan("clean"), InterventionSet.empty(5)
        )


def test_warmstart_shares_initial_weights(small_paired):
    spec = mlp4_spec()
    donor = nc.build_net(spec, seed=404)
    plan = quick_plan("clean", steps=1, master_seed=6)
    out = train_pair(
        spec, small_paired, plan, InterventionSet.empty(spec.m), init_from=donor
    )
    # one step from the donor weights, not from the seed-derived init
    fresh = nc.build_net(spec, seed=plan.master_seed)
    assert net_bytes(out.anchor) != net_bytes(fresh)
