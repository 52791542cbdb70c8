"""Shared fixtures for the GeoFlow test suite."""

import os
import sys

import numpy as np
import pytest

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_ROOT)

from model.hamiltonian import PhaseBatch, harmonic_oscillator, random_batch  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def oscillator():
    return harmonic_oscillator(1.0)


@pytest.fixture
def unit_point():
    """Single sample at q = 1, p = 0.5 in one dimension."""
    return PhaseBatch(np.array([[1.0]]), np.array([[0.5]]))


@pytest.fixture
def small_batch(rng):
    """N = 4, d = 2 batch small enough for the control fixed points to contract."""
    return random_batch(rng, 4, 2, scale=0.3)


@pytest.fixture
def runs_dir(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("GEOFLOW_RUNS", str(root))
    return root
