import numpy as np
import pytest

from vppfra.datagen import generate_history
from vppfra.dispatch import build_lp
from vppfra.inverse import ParameterVector, derive_kkt
from vppfra.synthetic import default_vpp, tiny_fixture


@pytest.fixture(scope="session")
def tiny():
    return tiny_fixture()


@pytest.fixture(scope="session")
def default():
    return default_vpp()


@pytest.fixture(scope="session")
def tiny_data(tiny):
    return generate_history(tiny, n=6, seed=3, spread=0.5)


@pytest.fixture(scope="session")
def tiny_truth(tiny):
    return ParameterVector.from_vpp(tiny)


@pytest.fixture(scope="session")
def tiny_kkt(tiny, tiny_truth):
    mine = tiny.mines[0]
    return derive_kkt(build_lp(mine), tiny_truth.lo, tiny_truth.hi)


def mine_record(ds, r, mine_id):
    from vppfra.inverse import MineRecord

    rec = ds.records[r]
    return MineRecord(np.asarray(rec.price), rec.bc_total_obs[mine_id], rec.grid_obs[mine_id])
