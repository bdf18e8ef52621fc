import numpy as np
import pytest

from volunc.claims import BUNDLED_CLAIMS, make_claim, with_dates
from volunc.errors import ArgumentError, DomainError
from volunc.paths import simulate
from volunc.scenarios import constant


def test_registry_and_algebra():
    sq, lin = make_claim({"name": "square"}), make_claim({"name": "linear"})
    x = np.linspace(-2, 2, 9)
    assert np.allclose((sq + lin).terminal(x), x * x + x)
    assert np.allclose((sq - 1.0).terminal(x), x * x - 1)
    assert np.allclose((3 * sq).terminal(x), 3 * x * x)
    assert np.allclose((-sq).terminal(x), -x * x)
    assert (-sq).to_dict() == {"name": "neg", "of": {"name": "square"}}
    assert make_claim((-sq).to_dict()).terminal(2.0) == -4.0
    assert np.allclose(lin.abs_pow(1.5).terminal(x), np.abs(x) ** 1.5)


def test_bundled_claims_build():
    assert len(BUNDLED_CLAIMS) == 10
    for spec in BUNDLED_CLAIMS:
        c = make_claim(spec)
        assert np.isfinite(c.terminal(np.linspace(-3, 3, 7))).all()
    assert make_claim({"name": "digital"}).terminal(0.0) == 0.5


def test_bad_specs():
    with pytest.raises(ArgumentError):
        make_claim({"name": "nope"})
    with pytest.raises(ArgumentError):
        make_claim({"name": "call", "bogus": 1})
    with pytest.raises(DomainError):
        make_claim({"name": "table", "xs": [0.0, 1.0], "ys": [0.0, float("inf")]})
    with pytest.raises(DomainError):
        make_claim({"name": "linear", "slope": float("nan")}).terminal(np.array([0.5]))


def test_multi_date_evaluation(grid):
    c = make_claim({"name": "increment_square", "t1": 0.5, "t2": 1.0})
    b = simulate(constant(grid, 1.0), grid, 10, 0)
    assert np.allclose(c.evaluate(b), (b.x[:, 50] - b.x[:, 25]) ** 2)
    with pytest.raises(ArgumentError):
        c.terminal(np.zeros(3))
    d = with_dates(make_claim({"name": "square"}), [0.5])
    assert np.allclose(d.evaluate(b), b.x[:, 25] ** 2)
    assert not d.is_terminal(1.0)
