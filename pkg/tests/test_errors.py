import numpy as np
import pytest

from utils.errors import (
    ConvergenceError,
    GeoFlowError,
    NumericalDomainError,
    PositivityError,
    SchemaError,
    UsageError,
    require_finite,
)


def test_hierarchy():
    assert issubclass(SchemaError, UsageError)
    assert issubclass(UsageError, ValueError)
    assert issubclass(PositivityError, NumericalDomainError)
    assert issubclass(ConvergenceError, GeoFlowError)


def test_convergence_error_tagging():
    err = ConvergenceError("solve failed", 1e-3, 100, module="generating_function")
    tagged = err.at(17, "peakon.run_peakons")
    assert tagged.step == 17
    assert tagged.module == "peakon.run_peakons"
    assert tagged.iterations == 100
    assert "step 17" in str(tagged)
    assert err.at(3).module == "generating_function"


def test_schema_error_lists_keys():
    err = SchemaError("invalid", ["b", "a", "b"])
    assert err.keys == ["a", "b"]
    assert "a, b" in str(err)


def test_positivity_error_index():
    assert PositivityError("lost", 12).index == 12


def test_require_finite():
    require_finite(np.ones(3), "x")
    with pytest.raises(NumericalDomainError, match="dH/dp"):
        require_finite([1.0, np.nan], "dH/dp")
