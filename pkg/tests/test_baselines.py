import numpy as np
import pytest

from curator.baselines import (
    FlatIVFBloom,
    FlatIVFBloomShortlist,
    IvfParams,
    IvfSearchParams,
    IvfSearchStats,
    MetadataFilterIVF,
    PerTenantIVF,
    train_centroids,
)
from curator.core import AccessError, DimensionMismatch, DuplicateLabel, UnknownLabel

from helpers import VARIANTS, Driver, build_variant, oracle, random_index, random_vectors, search

IVF_KINDS = ("mf_ivf", "flat_ivf_bf", "flat_ivf_bf_sl", "pt_ivf")


@pytest.mark.parametrize("kind", VARIANTS)
def test_empty_tenant_returns_nothing(kind):
    drv = random_index(0, kind, n_ops=100)
    assert search(drv.index, kind, np.zeros(8), 999, 5, exhaustive=True, n_total=1000) == []


@pytest.mark.parametrize("kind", IVF_KINDS)
def test_exhaustive_nprobe_matches_oracle(kind):
    drv = random_index(1, kind, n_ops=600)
    rng = np.random.default_rng(5)
    for _ in range(80):
        x = rng.normal(size=8).astype(np.float32)
        t = int(rng.integers(6))
        k = int(rng.integers(1, 12))
        assert search(drv.index, kind, x, t, k, exhaustive=True) == oracle(drv.model, x, t, k)


def _same_cells_trio(seed):
    rng = np.random.default_rng(seed)
    pool = random_vectors(rng, 3000, 6)
    cents = train_centroids(pool[:1000], 16, IvfParams(16))
    p = IvfParams(16, 4)
    trio = [MetadataFilterIVF(cents, p), FlatIVFBloom(cents, p), FlatIVFBloomShortlist(cents, p)]
    drivers = [Driver(ix, 6, 12, np.random.default_rng(seed), pool) for ix in trio]
    for d in drivers:
        d.populate(800, 1200)
        for _ in range(400):
            d.step()
    return trio, rng


def test_ablation_ladder_returns_identical_results_at_every_nprobe():
    (mf, bf, sl), rng = _same_cells_trio(2)
    for _ in range(100):
        x = rng.normal(size=6)
        t = int(rng.integers(14))
        for nprobe in (1, 3, 16):
            a = mf.search(x, t, 10, nprobe)
            assert a == bf.search(x, t, 10, nprobe) == sl.search(x, t, 10, nprobe)


def test_counters_predicates_and_skips():
    (mf, bf, sl), rng = _same_cells_trio(3)
    s_mf, s_bf, s_sl = IvfSearchStats(), IvfSearchStats(), IvfSearchStats()
    for _ in range(50):
        x = rng.normal(size=6)
        t = int(rng.integers(12))
        mf.search(x, t, 10, 8, s_mf)
        bf.search(x, t, 10, 8, s_bf)
        sl.search(x, t, 10, 8, s_sl)
    assert s_sl.predicate_evals == 0
    assert s_bf.predicate_evals <= s_mf.predicate_evals
    assert s_mf.vectors_scanned == s_bf.vectors_scanned == s_sl.vectors_scanned
    assert s_mf.cells_skipped == 0


def test_mf_predicate_evaluations_dwarf_k_at_low_selectivity():
    rng = np.random.default_rng(4)
    pool = random_vectors(rng, 5000, 8)
    mf = MetadataFilterIVF.train(pool[:2000], IvfParams(32, 8))
    for i, x in enumerate(pool):
        mf.insert_vector(x, i, 1 if i % 100 == 0 else 0)  # tenant 1 sees 1%
    stats = IvfSearchStats()
    for x in rng.normal(size=(20, 8)):
        mf.search(x, 1, 10, 8, stats)
    assert stats.predicate_evals / 20 > 50 * 10


def test_per_tenant_single_tenant_matches_mf():
    rng = np.random.default_rng(6)
    pool = random_vectors(rng, 1500, 5)
    p = IvfParams(12, 3)
    cents = train_centroids(pool, 12, p)
    mf = MetadataFilterIVF(cents, p)
    pt = PerTenantIVF(5, p)
    pt.create_tenant_index(0, centroids=cents)
    for i, x in enumerate(pool):
        mf.insert_vector(x, i, 0)
        pt.insert_vector(x, i, 0)
    for x in rng.normal(size=(50, 5)):
        for nprobe in (1, 4, 12):
            assert pt.search(x, 0, 7, nprobe) == mf.search(x, 0, 7, nprobe)
    assert pt.knn_search(pool[0], 0, IvfSearchParams(1, 1)) == [(0, 0.0)]


def test_per_tenant_duplicates_vectors_by_sharing_degree():
    rng = np.random.default_rng(7)
    pool = random_vectors(rng, 600, 4)
    mf = MetadataFilterIVF.train(pool, IvfParams(8))
    pt = PerTenantIVF(4, IvfParams(8))
    for i, x in enumerate(pool):
        for ix in (mf, pt):
            ix.insert_vector(x, i, 0)
            ix.grant_access(i, 1)
            ix.grant_access(i, 2)
    assert pt.memory_usage()["vector_data"] == 3 * mf.memory_usage()["vector_data"]
    for i in range(0, 600, 2):
        pt.revoke_access(i, 2)
    assert pt.memory_usage()["vector_data"] == int(2.5 * mf.memory_usage()["vector_data"])


def test_per_tenant_training_uses_tenant_vectors():
    rng = np.random.default_rng(8)
    pt = PerTenantIVF(3, IvfParams(16), min_points_per_cluster=10)
    pts = rng.normal(size=(95, 3)).astype(np.float32)
    pt.create_tenant_index(4, pts)
    assert len(pt.indexes[4].cells) == pt.n_clusters_for(95) == 9
    with pytest.raises(ValueError):
        pt.create_tenant_index(4, pts)
    assert pt.search(pts[0], 12, 3) == []


@pytest.mark.parametrize("kind", IVF_KINDS)
def test_api_errors(kind):
    drv = random_index(9, kind, n_ops=40)
    ix = drv.index
    lab = next(iter(drv.model.vectors))
    owner = drv.model.owner[lab]
    with pytest.raises(DuplicateLabel):
        ix.insert_vector(np.zeros(8), lab, owner)
    with pytest.raises(DimensionMismatch):
        ix.insert_vector(np.zeros(7), 10**6, owner)
    with pytest.raises(AccessError):
        ix.grant_access(lab, owner)
    with pytest.raises(AccessError):
        ix.revoke_access(lab, owner)
    with pytest.raises(AccessError):
        ix.revoke_access(lab, 10**5)
    with pytest.raises(UnknownLabel):
        ix.delete_vector(10**7)
    with pytest.raises(UnknownLabel):
        ix.grant_access(10**7, 1)
    assert ix.has_ownership(lab, owner) and ix.has_access(lab, owner)
    assert not ix.has_access(10**7, owner)


@pytest.mark.parametrize("kind", IVF_KINDS)
def test_deleted_labels_never_returned(kind):
    drv = random_index(10, kind, n_ops=400)
    gone = list(drv.model.vectors)[::3]
    for lab in gone:
        drv.index.delete_vector(lab)
        drv.model.vectors.pop(lab), drv.model.owner.pop(lab), drv.model.access.pop(lab)
    rng = np.random.default_rng(0)
    for _ in range(40):
        x, t = rng.normal(size=8), int(rng.integers(6))
        res = search(drv.index, kind, x, t, 10, exhaustive=True)
        assert not set(gone) & {lab for lab, _ in res}
        assert res == oracle(drv.model, x, t, 10)


def test_ivf_params_validation():
    with pytest.raises(ValueError):
        IvfParams(n_clusters=4, nprobe=5)
    with pytest.raises(ValueError):
        IvfParams(n_clusters=0)


def test_memory_breakdowns_add_up():
    for kind in IVF_KINDS:
        mem = random_index(11, kind, n_ops=200).index.memory_usage()
        assert mem["total"] == sum(v for k, v in mem.items() if k != "total")
