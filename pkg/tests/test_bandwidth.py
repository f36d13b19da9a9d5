import numpy as np
import pytest

from sqfc import bandwidth as bw
from sqfc.bandwidth import (CvConfig, cv_score, held_out_predictions, leave_out_blocks,
                            parse_range, select_bandwidth)
from sqfc.dataset import from_arrays
from sqfc.errors import AllCandidatesFailed, InvalidConfig, NoEvaluableSites
from sqfc.loss import Quantile, Squared
from sqfc.simulate import DgpConfig, generate


def _lattice(n1, n2, rng, noise=1.0, constant_beta=False):
    coords = np.array([(i, j) for i in range(1, n1 + 1) for j in range(1, n2 + 1)])
    n = coords.shape[0]
    U = rng.uniform(size=n)
    x = rng.standard_normal(n)
    if constant_beta:
        y = 2.0 - 1.5 * x
    else:
        y = np.sin(2 * np.pi * U) + (1 + U) * x + noise * rng.standard_normal(n)
    return from_arrays(y, x[:, None], U, coords=coords, shape=(n1, n2))


def test_parse_range():
    assert parse_range("0.15:0.30:0.05") == (0.15, 0.2, 0.25, 0.3)
    assert len(parse_range("0.15:0.30:0.01")) == 16
    for bad in ("0.3:0.1:0.1", "a:b:c", "0.1:0.2"):
        with pytest.raises(InvalidConfig):
            parse_range(bad)


def test_config_validation():
    for grid in ((), (0.2, 0.1), (0.0, 0.1), (0.1, 0.1)):
        with pytest.raises(InvalidConfig):
            CvConfig(grid)
    with pytest.raises(InvalidConfig):
        CvConfig((0.1,), leave_out=0)


def test_noiseless_squared_scores_zero():
    ds = _lattice(8, 8, np.random.default_rng(0), constant_beta=True)
    for h in (0.3, 0.6):
        score, fails = cv_score(ds, h, CvConfig((h,), loss=Squared()))
        assert fails == 0
        assert score <= 1e-10


def test_tiny_bandwidth_has_no_evaluable_sites():
    ds = _lattice(6, 6, np.random.default_rng(1))
    with pytest.raises(NoEvaluableSites):
        cv_score(ds, 1e-6, CvConfig((1e-6,)))


def test_selection_filters_failures_and_singleton():
    ds = _lattice(8, 8, np.random.default_rng(2))
    rep = select_bandwidth(ds, CvConfig((1e-6, 0.4)))
    assert rep.selected == 0.4
    assert rep.failures[0] == ds.n_effective and np.isnan(rep.scores[0])
    assert select_bandwidth(ds, CvConfig((0.5,))).selected == 0.5
    with pytest.raises(AllCandidatesFailed):
        select_bandwidth(ds, CvConfig((1e-6, 2e-6)))


def test_ties_prefer_larger_h(monkeypatch):
    ds = _lattice(5, 5, np.random.default_rng(3))
    monkeypatch.setattr(bw, "cv_score", lambda ds, h, cfg, threads=None, blocks=None: (1.0, 0))
    assert select_bandwidth(ds, CvConfig((0.2, 0.3, 0.4))).selected == 0.4


def test_argmin_not_worse_than_endpoints_and_deterministic():
    ds, _ = generate(DgpConfig(shape=(15, 15), seed=4))
    cfg = CvConfig(tuple(np.geomspace(0.08, 0.8, 10)))
    rep = select_bandwidth(ds, cfg)
    best = rep.scores[rep.h_grid.index(rep.selected)]
    assert best <= rep.scores[0] and best <= rep.scores[-1]
    assert rep.selected in rep.h_grid
    again = select_bandwidth(ds, cfg, threads=3)
    assert again.scores == rep.scores and again.selected == rep.selected


def test_failures_non_increasing_in_h():
    ds = _lattice(10, 10, np.random.default_rng(5))
    rep = select_bandwidth(ds, CvConfig((0.02, 0.04, 0.06, 0.1, 0.2, 0.5)))
    assert all(a >= b for a, b in zip(rep.failures, rep.failures[1:]))


def test_leave_one_out_zero_influence():
    rng = np.random.default_rng(6)
    ds = _lattice(9, 9, rng)
    cfg = CvConfig((0.3,), loss=Quantile(0.5))
    base = held_out_predictions(ds, 0.3, cfg)
    for i in rng.choice(ds.n_effective, 8, replace=False):
        y = ds.columns["y"].copy()
        y[i] = y[i] + 1e6 * rng.standard_normal()
        pert = held_out_predictions(ds.with_columns(y=y), 0.3, CvConfig((0.3,), sites=(int(i),)))
        assert pert[0] == base[i]


def test_block_shapes():
    ds = _lattice(6, 6, np.random.default_rng(7))
    lookup = {tuple(s): r for r, s in enumerate(ds.sites)}
    blocks = leave_out_blocks(ds, 5)
    interior = blocks[lookup[(3, 3)]]
    assert sorted(map(tuple, ds.sites[interior])) == [(2, 3), (3, 2), (3, 3), (3, 4), (4, 3)]
    corner = blocks[lookup[(1, 1)]]
    assert [tuple(s) for s in ds.sites[corner]] == [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3)]
    assert all(len(b) == 1 for b in leave_out_blocks(ds, 1))


def test_leave_out_block_excluded():
    # a block prediction must ignore every member of the block
    rng = np.random.default_rng(8)
    ds = _lattice(8, 8, rng)
    cfg = CvConfig((0.4,), leave_out=5, sites=(27,))
    block = leave_out_blocks(ds, 5, [27])[0]
    base = held_out_predictions(ds, 0.4, cfg)
    y = ds.columns["y"].copy()
    y[block] += 1e3
    assert held_out_predictions(ds.with_columns(y=y), 0.4, cfg)[0] == base[0]


@pytest.mark.slow
def test_selected_h_shrinks_with_n():
    grid = tuple(np.round(np.geomspace(0.06, 0.6, 9), 4))
    med = {}
    for shape in ((20, 20), (50, 50)):
        # score both sizes on 400 evaluation sites to keep the cost flat
        sites = tuple(np.linspace(0, shape[0] * shape[1] - 1, 400).astype(int))
        hs = [select_bandwidth(generate(DgpConfig(shape=shape, seed=100 + r))[0],
                               CvConfig(grid, sites=sites)).selected for r in range(3)]
        med[shape] = np.median(hs)
    assert med[(50, 50)] < med[(20, 20)]
