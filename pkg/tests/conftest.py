"""Shared fixtures: a realistic five-state world and small helper builders."""

from __future__ import annotations

import numpy as np
import pytest

import flowcast as fc

#: quarterly transition matrix with realistic persistence and no microscopic
#: cells (smallest entry 2%), so every cell has healthy per-quarter counts
BASELINE = np.array([
    [0.90, 0.02, 0.03, 0.02, 0.03],
    [0.02, 0.74, 0.10, 0.06, 0.08],
    [0.02, 0.02, 0.90, 0.02, 0.04],
    [0.02, 0.12, 0.08, 0.53, 0.25],
    [0.02, 0.03, 0.03, 0.05, 0.87],
])

INITIAL_SHARES = np.array([0.125, 0.085, 0.375, 0.060, 0.355])

Q = fc.QuarterId.parse


@pytest.fixture(scope="session")
def space():
    return fc.FIVE_STATES


def make_world(seed=0, n_persons=20000, start="2016Q1", n_quarters=12,
               baseline=None, intervention=None, **kwargs):
    return fc.WorldConfig(
        space=fc.FIVE_STATES,
        start=Q(start),
        n_quarters=n_quarters,
        n_persons=n_persons,
        seed=seed,
        baseline=BASELINE if baseline is None else baseline,
        initial_shares=INITIAL_SHARES,
        intervention=intervention,
        **kwargs,
    )


@pytest.fixture(scope="session")
def small_panel():
    """A 20k-person stationary world, generated once per session."""
    cfg = make_world(seed=11, n_persons=20000, n_quarters=12)
    panel, truth = fc.generate_arrays(cfg)
    return cfg, panel, truth
