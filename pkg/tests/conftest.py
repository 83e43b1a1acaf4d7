import numpy as np
import pytest

from siselab import LinearSystem


def make_s1(**kw):
    base = dict(A=[[0.5, 1.0], [0.0, 0.3]], G=[[1.0], [1.0]], C=[[1.0, 0.0]],
                Q=0.01 * np.eye(2), R=[[0.01]])
    base.update(kw)
    return LinearSystem(**base)


def make_s2(**kw):
    return make_s1(G=[[1.0], [2.0]], **kw)


def make_s4(**kw):
    base = dict(A=[[0.5, 1.0], [0.0, 1.4]], G=[[1.0], [0.0]], C=np.eye(2),
                Q=0.01 * np.eye(2), R=0.01 * np.eye(2))
    base.update(kw)
    return LinearSystem(**base)


def scalar(A=0.5, G=1.0, C=1.0, H=0.0, Q=0.01, R=0.01):
    return LinearSystem(A=[[A]], G=[[G]], C=[[C]], H=[[H]], Q=[[Q]], R=[[R]])


@pytest.fixture
def s1():
    return make_s1()


@pytest.fixture
def s2():
    return make_s2()


@pytest.fixture
def s4():
    return make_s4()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
