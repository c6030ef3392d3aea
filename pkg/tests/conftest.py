import pytest

from lhbp import (Example2Model, ExplicitModel, TableLaw, TridiagonalModel,
                  extinction_ladder)

LADDER_SCHEDULE = tuple(4 * 2 ** i for i in range(11))  # 4 .. 4096


def ex2(gamma):
    return Example2Model(gamma=gamma)


def tridiag(a, b, c, u=1.0):
    return TridiagonalModel(a=a, b=b, c=c, u=u)


def all_die_model():
    """Every individual dies childless; bypasses strict loading on purpose."""
    return ExplicitModel(head=(TableLaw((((), 1.0),)),))


@pytest.fixture(scope="session")
def ladder_ex2_03():
    """Shared ladder for gamma = 0.3 up to level 4096 (several tests reuse it)."""
    return extinction_ladder(ex2(0.3), LADDER_SCHEDULE, window=4)


@pytest.fixture(scope="session")
def top_level_03(ladder_ex2_03):
    q = ladder_ex2_03.q_results[-1].vector
    qt = ladder_ex2_03.qtilde_results[-1].vector
    return q, qt
