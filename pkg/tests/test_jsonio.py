import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilatio import channels as ch
from dilatio import fixtures as fx
from dilatio import jsonio
from dilatio import selftest as sf
from dilatio import tensor_core as tc
from dilatio.channels import Interface, Port
from dilatio.dilation import stinespring_minimal

Q = ch.QUANTUM


def through_text(obj):
    return json.loads(jsonio.dumps(obj))


def same_bits(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


@given(seed=st.integers(0, 2**32 - 1), din=st.integers(1, 3), dout=st.integers(1, 3), quantum=st.booleans())
@settings(max_examples=30, deadline=None)
def test_channel_round_trip_is_bit_exact(seed, din, dout, quantum):
    rng = np.random.default_rng(seed)
    kind = Q if quantum else ch.CLASSICAL
    inp, out = Interface([Port("x", din, kind)]), Interface([Port("y", dout, kind)])
    c = ch.random_quantum(inp, out, rng) if quantum else ch.random_classical(inp, out, rng)
    back = jsonio.channel_from_json(through_text(jsonio.channel_to_json(c)))
    assert back.input == c.input and back.output == c.output
    assert same_bits(back.choi if quantum else back.table, c.choi if quantum else c.table)


def test_extreme_floats_survive():
    vals = np.array([[5e-324, 1 - 2**-53], [-0.0, 0.1 + 0.2], [1.7976931348623157e308, -1e-300]])
    back = jsonio.complex_from_json(through_text(jsonio.complex_to_json(vals + 1j * vals[::-1])))
    assert same_bits(back, vals + 1j * vals[::-1])


def test_causal_channel_round_trip():
    for cc in (fx.pr_box_causal(), fx.bit_refresh(), fx.generic_channel(4)):
        back = jsonio.causal_from_json(through_text(jsonio.causal_to_json(cc)))
        assert back.spec == cc.spec and same_bits(back.channel.table, cc.channel.table)


def test_stencil_round_trip():
    g, f = fx.generic_stencil(6)
    g2, f2 = jsonio.stencil_from_json(through_text(jsonio.stencil_to_json(g, f)))
    assert g2.to_json() == g.to_json()
    for b in g.boxes:
        assert same_bits(f2[b].channel.table, f[b].channel.table)


def test_filling_from_files(tmp_path):
    g, f = fx.one_time_pad()
    for b, cc in f.boxes.items():
        jsonio.write(tmp_path / f"{b}.json", jsonio.causal_to_json(cc))
    doc = {**g.to_json(), "filling": {b: f"{b}.json" for b in f.boxes}}
    g2, f2 = jsonio.stencil_from_json(doc, tmp_path)
    assert set(f2.boxes) == set(f.boxes)


def test_dilation_round_trip(rng):
    c = ch.random_quantum(Interface([Port("x", 2, Q)]), Interface([Port("y", 2, Q)]), rng)
    d = stinespring_minimal(c).dilation()
    back = jsonio.dilation_from_json(through_text(jsonio.dilation_to_json(d)))
    assert back.hidden_out == d.hidden_out and same_bits(back.total.choi, d.total.choi)


def test_strategy_and_reduction_round_trip(rng):
    canon = sf.canonical_chsh()
    s, r = sf.with_auxiliary(canon, tc.random_isometry(4, 1, rng).reshape(-1), (2, 2))
    s2 = jsonio.strategy_from_json(through_text(jsonio.strategy_to_json(s)))
    assert same_bits(s2.state, s.state) and same_bits(s2.vector, s.vector)
    for site in ("A", "B"):
        assert same_bits(s2.effect_array(site), s.effect_array(site))
    r2 = jsonio.reduction_from_json(through_text(jsonio.reduction_to_json(r)))
    assert same_bits(r2.psi, r.psi) and r2.res_dims == r.res_dims
    assert sf.verify_reduction(s2, canon, r2)


def test_behaviour_round_trip():
    b = sf.behaviour_of(sf.canonical_chsh())
    assert same_bits(jsonio.behaviour_from_json(through_text(jsonio.behaviour_to_json(b))).table, b.table)
    via_channel = jsonio.behaviour_from_json(jsonio.channel_to_json(b.to_channel()))
    assert same_bits(via_channel.table, b.table)


def test_malformed_documents(tmp_path):
    with pytest.raises(jsonio.FormatError):
        jsonio.channel_from_json({"kind": "classical"})
    with pytest.raises(jsonio.FormatError):
        jsonio.channel_from_json({"kind": "fuzzy", "input": [], "output": [], "data": []})
    with pytest.raises(jsonio.FormatError):
        jsonio.complex_from_json([1.0, 2.0, 3.0])
    with pytest.raises(jsonio.FormatError):
        jsonio.strategy_from_json({"state": [[[1, 0]]]})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(jsonio.FormatError):
        jsonio.read(bad)
