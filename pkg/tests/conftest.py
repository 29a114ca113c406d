"""Shared fixtures and builders for the test suite."""
from pathlib import Path

import pytest

from asymmap.model import BlockSpec, PenaltySpec, SignalModel

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "configs"


def two_block_model(rho0=0.1, rho1=0.01, f0=0.2, c0=1.0, c1=1.0, lam0=0.01):
    return SignalModel(
        blocks=(
            BlockSpec(fraction=f0, rho=rho0, c=c0),
            BlockSpec(fraction=1.0 - f0, rho=rho1, c=c1),
        ),
        lam0=lam0,
    )


def one_block_model(rho=0.1, c=1.0, lam0=0.01):
    return SignalModel(blocks=(BlockSpec(fraction=1.0, rho=rho, c=c),), lam0=lam0)


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR


ZERO_NORM_TABLE = (PenaltySpec("zero_norm"),)
L1_TABLE = (PenaltySpec("l1"),)
L2_TABLE = (PenaltySpec("l2"),)
