import logging
import math

import pytest
from pydantic import ValidationError

from smoothing import SmoothingSpec, dpsi_dd, on_band, psi

LINEAR = SmoothingSpec(kind="linear", delta=0.01)


def _gaussian(gamma=1.0, delta=0.2):
    return SmoothingSpec(kind="gaussian_band", delta=delta, gamma=gamma)


@pytest.mark.parametrize("d, expected", [(0.5, 1.0), (-0.005, 0.5), (-0.02, 0.0), (0.0, 1.0)])
def test_linear_psi(d, expected):
    assert psi(LINEAR, d) == pytest.approx(expected)


def test_gaussian_psi():
    assert psi(_gaussian(), -0.1) == pytest.approx(math.exp(-0.01))
    assert psi(_gaussian(), -0.3) == 0.0
    assert psi(_gaussian(), 0.1) == 1.0


def test_derivatives():
    assert dpsi_dd(LINEAR, -0.005) == pytest.approx(100.0)
    assert dpsi_dd(LINEAR, 0.5) == 0.0
    assert dpsi_dd(LINEAR, -0.5) == 0.0
    assert dpsi_dd(_gaussian(), -0.1) == pytest.approx(0.2 * math.exp(-0.01))


@pytest.mark.parametrize("spec, d", [
    (LINEAR, -0.0031),
    (LINEAR, -0.0087),
    (_gaussian(), -0.05),
    (_gaussian(), -0.17),
    (_gaussian(gamma=200.0), -0.1),
])
def test_derivative_matches_finite_difference(spec, d):
    h = 1e-7
    fd = (psi(spec, d + h) - psi(spec, d - h)) / (2 * h)
    exact = dpsi_dd(spec, d)
    assert abs(fd - exact) <= 1e-4 * max(1.0, abs(exact))


def test_band_membership_is_closed():
    assert on_band(LINEAR, 0.0)
    assert on_band(LINEAR, -0.01)
    assert not on_band(LINEAR, 1e-9)
    assert not on_band(LINEAR, -0.0100001)


def test_shrinking_delta_approaches_indicator():
    narrow = SmoothingSpec(kind="linear", delta=1e-9)
    wide = SmoothingSpec(kind="linear", delta=1e-6)
    assert psi(narrow, -1e-12) < psi(wide, -1e-12)
    assert psi(SmoothingSpec(kind="linear", delta=1e-6), -1e-3) == 0.0


# --- validation ---

def test_gaussian_requires_gamma():
    with pytest.raises(ValidationError):
        SmoothingSpec(kind="gaussian_band", delta=0.2)


def test_linear_rejects_gamma():
    with pytest.raises(ValidationError):
        SmoothingSpec(kind="linear", delta=0.2, gamma=3.0)


@pytest.mark.parametrize("delta", [0.0, -0.1])
def test_delta_must_be_positive(delta):
    with pytest.raises(ValidationError):
        SmoothingSpec(kind="linear", delta=delta)


def test_wide_gaussian_edge_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="smoothing"):
        _gaussian(gamma=1.0, delta=0.2)
    assert "discontinuous" in caplog.text


def test_sharp_gaussian_edge_is_quiet(caplog):
    with caplog.at_level(logging.WARNING, logger="smoothing"):
        _gaussian(gamma=200.0, delta=0.2)
    assert caplog.text == ""
