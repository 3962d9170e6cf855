import pytest
from hypothesis import given
from hypothesis import strategies as st

from hapf.hysteresis import HysteresisBand, Leg, SwitchCommand, update

BAND = HysteresisBand(0.5)
H, L = Leg.HIGH, Leg.LOW


@pytest.mark.parametrize(
    "i_actual, prev, expected",
    [(10.6, H, L), (9.3, L, H), (10.2, H, H), (10.2, L, L), (9.6, H, H)],
)
def test_examples(i_actual, prev, expected):
    out = update(BAND, (i_actual,) * 3, (10.0,) * 3, SwitchCommand(prev, prev, prev))
    assert out == (expected,) * 3


def test_phases_are_independent():
    out = update(BAND, (10.6, 9.3, 10.0), (10.0, 10.0, 10.0), SwitchCommand(H, L, L))
    assert out == (L, H, L)


def test_band_must_be_positive():
    with pytest.raises(ValueError):
        HysteresisBand(0.0)


legs = st.sampled_from([H, L])
err = st.floats(-5, 5, allow_nan=False)


@given(st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)),
       st.tuples(legs, legs, legs))
def test_hold_inside_band(errors, prev):
    prev = SwitchCommand(*prev)
    assert update(BAND, errors, (0.0, 0.0, 0.0), prev) == prev


@given(err, err, legs)
def test_monotone_in_error(e1, e2, prev):
    lo, hi = sorted((e1, e2))
    out_lo = update(BAND, (lo,) * 3, (0.0,) * 3, SwitchCommand(prev, prev, prev))[0]
    out_hi = update(BAND, (hi,) * 3, (0.0,) * 3, SwitchCommand(prev, prev, prev))[0]
    # a larger positive error never selects a higher leg state
    assert out_hi <= out_lo
