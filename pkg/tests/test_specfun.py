import math

import mpmath
import numpy as np
import pytest
import scipy.special as sp
from hypothesis import given, settings, strategies as st

from hrtfkit.specfun import bessel_j1, struve_h1


def j1_series_oracle(x, terms=30):
    return sum((-1) ** k * (x / 2) ** (2 * k + 1) / (math.factorial(k) * math.factorial(k + 1))
               for k in range(terms))


def h1_series_oracle(x, terms=40):
    mpmath.mp.dps = 40
    x = mpmath.mpf(x)
    s = sum((-1) ** k * (x / 2) ** (2 * k + 2) / (mpmath.gamma(k + 1.5) * mpmath.gamma(k + 2.5))
            for k in range(terms))
    return float(s)


def test_j1_zero():
    assert bessel_j1(0.0) == 0.0


def test_j1_first_maximum():
    assert bessel_j1(1.8412) == pytest.approx(j1_series_oracle(1.8412), abs=1e-12)
    assert bessel_j1(1.8412) == pytest.approx(0.58187, abs=1e-5)


def test_j1_small_argument():
    assert abs(bessel_j1(1e-4) / 1e-4 - 0.5) < 1e-8


def test_h1_zero():
    assert struve_h1(0.0) == 0.0


def test_h1_small_argument():
    x = 0.01
    assert abs(struve_h1(x) - 2 * x * x / (3 * math.pi)) < 1e-9


def test_h1_series_oracle_at_5():
    assert abs(struve_h1(5.0) - h1_series_oracle(5.0)) < 1e-6


@pytest.mark.parametrize("fn", [bessel_j1, struve_h1])
def test_negative_rejected(fn):
    with pytest.raises(ValueError):
        fn(-1.0)


def test_vectorized_shape():
    x = np.linspace(0, 30, 12).reshape(3, 4)
    assert bessel_j1(x).shape == (3, 4)
    assert struve_h1(x).shape == (3, 4)


@pytest.mark.parametrize("x", [11.9, 12.0, 12.1, 19.9, 20.0, 20.1])
def test_continuous_across_crossovers(x):
    assert bessel_j1(x) == pytest.approx(sp.j1(x), abs=1e-8)
    assert struve_h1(x) == pytest.approx(sp.struve(1, x), abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 200, allow_nan=False))
def test_j1_matches_reference(x):
    assert abs(bessel_j1(x) - sp.j1(x)) < 1e-8


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 200, allow_nan=False))
def test_h1_matches_reference(x):
    assert abs(struve_h1(x) - sp.struve(1, x)) < 1e-6
