"""Shared fixtures: step laws and Green tables for d = 3, 4, 5.

The tables cover the Euclidean 5-ball and are built once per session
through the on-disk cache (tests/_cache unless HEAVYPOINTS_CACHE is
already set), so the first run pays the quadrature cost and later runs
are warm.
"""

import os
from pathlib import Path

_CACHE = Path(__file__).resolve().parent / "_cache"
os.environ.setdefault("HEAVYPOINTS_CACHE", str(_CACHE))

import pytest

from heavypoints.lattice import build_distribution, euclid_ball
from heavypoints.green import build_green_table, derive_constants

BOX_RADIUS = 5.0
QUAD_TOL = {3: 1e-6, 4: 1e-5, 5: 1e-5}


def _bundle(d):
    dist = build_distribution(d, "simple")
    sites = euclid_ball(BOX_RADIUS, d)
    gt = build_green_table(dist, sites, tol=QUAD_TOL[d])
    dc = derive_constants(gt, sites, cov=dist.cov)
    return dist, gt, dc, sites


@pytest.fixture(scope="session")
def bundle3():
    return _bundle(3)


@pytest.fixture(scope="session")
def bundle4():
    return _bundle(4)


@pytest.fixture(scope="session")
def bundle5():
    return _bundle(5)


@pytest.fixture(scope="session")
def dist3(bundle3):
    return bundle3[0]


@pytest.fixture(scope="session")
def gt3(bundle3):
    return bundle3[1]


@pytest.fixture(scope="session")
def dc3(bundle3):
    return bundle3[2]


@pytest.fixture(scope="session")
def dist4(bundle4):
    return bundle4[0]


@pytest.fixture(scope="session")
def gt4(bundle4):
    return bundle4[1]


@pytest.fixture(scope="session")
def dc4(bundle4):
    return bundle4[2]


@pytest.fixture(scope="session")
def dist5(bundle5):
    return bundle5[0]


@pytest.fixture(scope="session")
def gt5(bundle5):
    return bundle5[2 - 1]


@pytest.fixture(scope="session")
def dc5(bundle5):
    return bundle5[2]


def table_slack(gt, x):
    """Certified numerical slack for inequalities between G(x)/G(0)
    ratios: the bounds are attained with equality at unit vectors, so a
    margin can sit below zero by a few times the quadrature error."""
    origin = (0,) * gt.dim
    e0 = gt.lookup(origin).abs_error
    ex = gt.lookup(x).abs_error
    return 4.0 * (ex + e0) / gt.value(origin)
