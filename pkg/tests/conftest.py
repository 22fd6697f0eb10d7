import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from twostage.game_core import GameSpec, Supertype, TypeSpace, reference_game

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def g1():
    return reference_game()


def prob_vectors(k):
    """Random probability vectors of length ``k`` (zeros allowed, never all zero)."""
    raw = st.lists(st.integers(0, 8), min_size=k, max_size=k).filter(lambda w: sum(w) > 0)
    return raw.map(lambda w: tuple(x / sum(w) for x in w))


@st.composite
def small_games(draw, max_n=3, max_k=3, max_o1=2, max_o2=3, nonneg=False, integral=False):
    n = draw(st.integers(1, max_n))
    k = draw(st.integers(1, max_k))
    m1 = draw(st.integers(1, max_o1))
    m2 = draw(st.integers(1, max_o2))
    if integral:
        vals = st.integers(0 if nonneg else -5, 5).map(float)
    else:
        vals = st.floats(0 if nonneg else -10, 10, allow_nan=False, allow_subnormal=False)
    v = np.array(draw(st.lists(vals, min_size=n * k * m1 * m2, max_size=n * k * m1 * m2)))
    c = np.array(draw(st.lists(vals, min_size=m1 * m2, max_size=m1 * m2)))
    types = TypeSpace(tuple(range(k)))
    spec = GameSpec(n, types, tuple(f"a{j}" for j in range(m1)),
                    tuple(f"b{j}" for j in range(m2)),
                    v.reshape(n, k, m1, m2), c.reshape(m1, m2))
    sts = [Supertype(types, draw(prob_vectors(k))) for _ in range(n)]
    return spec, sts
