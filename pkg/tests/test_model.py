import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lhbp import (ExplicitModel, G_value, ModelError, ProductLaw,
                  TableLaw, load_model, moment_tables, validate)
from lhbp.model import TailModel, marginalize_law, shift_law

from conftest import all_die_model, ex2, tridiag


def enumerate_support(law):
    """Brute-force enumeration of (offspring vector, prob) pairs."""
    if isinstance(law, TableLaw):
        return [(dict(counts), p) for counts, p in law.entries]
    out = [({}, 1.0)]
    for t, pmf in law.coords:
        out = [({**vec, t: int(c)} if c else vec, w * p)
               for vec, w in out for c, p in pmf]
    return out


def brute_means(law):
    m = {}
    for vec, p in enumerate_support(law):
        for t, c in vec.items():
            m[t] = m.get(t, 0.0) + p * c
    return m


def brute_second(law, t1, t2):
    tot = 0.0
    for vec, p in enumerate_support(law):
        c1, c2 = vec.get(t1, 0), vec.get(t2, 0)
        tot += p * (c1 * (c1 - 1) if t1 == t2 else c1 * c2)
    return tot


# ---------------------------------------------------------------------------
# loading


def test_load_example2_means():
    m = load_model('{"family": "example2", "gamma": 0.3}')
    row = m.mean_row(1)
    assert row[0] == pytest.approx(0.6, abs=1e-15)
    assert row[2] == pytest.approx(1.4, abs=1e-15)


def test_load_normalization_error():
    doc = {"family": "explicit", "tail_from": 0,
           "head": [{"type": 0,
                     "law": {"kind": "table",
                             "entries": [{"counts": {"1": 1}, "prob": 0.9}]}}]}
    with pytest.raises(ModelError, match="sum"):
        load_model(json.dumps(doc))


def test_load_hessenberg_violation():
    doc = {"family": "explicit", "tail_from": 0,
           "head": [{"type": 0,
                     "law": {"kind": "table",
                             "entries": [{"counts": {"2": 1}, "prob": 0.5},
                                         {"counts": {}, "prob": 0.5}]}}]}
    with pytest.raises(ModelError, match="Hessenberg"):
        load_model(json.dumps(doc))


def test_load_parse_error():
    with pytest.raises(ModelError, match="parse"):
        load_model("{not json")


def test_load_tridiagonal_mean_rows():
    m = load_model('{"family": "tridiagonal", "a": 0.25, "b": 0.25, "c": 0.5, "u": 1}')
    assert m.mean_row(0) == {0: 0.25, 1: 0.5}
    for i in (1, 3, 7):
        assert m.mean_row(i) == {i - 1: 0.25, i: 0.25, i + 1: 0.5}


def test_load_tridiagonal_c_zero_rejected():
    with pytest.raises(ModelError, match="i,i\\+1"):
        load_model('{"family": "tridiagonal", "a": 0.25, "b": 0.25, "c": 0.0}')


def test_load_example2_gamma_one_strictness():
    with pytest.raises(ModelError):
        load_model('{"family": "example2", "gamma": 1.0}')
    m = load_model('{"family": "example2", "gamma": 1.0}', strict=False)
    assert m.gamma == 1.0


def test_tridiagonal_mean_row_5():
    m = tridiag(0.1, 0.2, 0.8)
    assert m.mean_row(5) == {4: 0.1, 5: 0.2, 6: 0.8}


# ---------------------------------------------------------------------------
# moments


def test_example2_second_moment_value():
    # G_1 = (1/2)(g s_0 + (1-g) s_2)^4 + 1/2 has d2/ds0^2 = 6 g^2 at s = 1
    m = ex2(0.3)
    assert m.a_entries(1)[(0, 0)] == pytest.approx(0.54, abs=1e-15)
    assert brute_second(m.law(1), 0, 0) == pytest.approx(0.54, abs=1e-15)


def test_example2_p1_zero():
    m = ex2(0.3)
    for k in range(6):
        assert m.p_single(k) == 0.0
        assert m.law(k).p_total_one() == 0.0


def test_moment_tables_match_brute_force():
    models = [ex2(0.0), ex2(0.3), tridiag(0.25, 0.25, 0.5),
              tridiag(0.1, 0.2, 0.8, u=2.0)]
    for model in models:
        for i in range(8):
            law = model.law(i)
            bm = brute_means(law)
            row = model.mean_row(i)
            for t in set(bm) | set(row):
                assert row.get(t, 0.0) == pytest.approx(bm.get(t, 0.0), abs=1e-12)
            for (t1, t2), v in model.a_entries(i).items():
                assert v == pytest.approx(brute_second(law, t1, t2), rel=1e-12, abs=1e-12)


def test_mean_total_offspring_identity():
    # row sums of the mean matrix equal the brute-force mean total offspring
    for model in (ex2(0.2), tridiag(0.3, 0.1, 0.7)):
        tables = moment_tables(model, 6)
        for i in range(7):
            total = sum(p * sum(vec.values())
                        for vec, p in enumerate_support(model.law(i)))
            assert sum(tables.M_row(i).values()) == pytest.approx(total, abs=1e-12)


def test_a_block_symmetric_nonnegative():
    tables = moment_tables(ex2(0.4), 5)
    for k in range(6):
        A = tables.A_block(k)
        assert np.array_equal(A, A.T)
        assert np.all(A >= 0)


def test_tridiagonal_u_preserves_means():
    base = tridiag(0.1, 0.2, 0.8)
    mod = tridiag(0.1, 0.2, 0.8, u=2.0)
    for i in range(12):
        assert base.mean_row(i) == mod.mean_row(i)
    # second moment of the upward coordinate grows by the scale factor
    s = 2.0 ** 5
    f2_base = base.a_entries(5).get((6, 6), 0.0)  # zero: mean <= 1 two-point
    assert mod.a_entries(5)[(6, 6)] == pytest.approx(s * (f2_base + 0.8) - 0.8)


def test_tail_rule_consistency():
    law0 = TableLaw(((((1, 1),), 0.6), ((), 0.4)))
    law1 = TableLaw(((((0, 1),), 0.15), (((2, 2),), 0.3), ((), 0.55)))
    m = ExplicitModel(head=(law0, law1))
    for i, j in itertools.product((2, 5, 9), repeat=2):
        ri = m.mean_row(i)
        rj = m.mean_row(j)
        assert {t - i: v for t, v in ri.items()} == {t - j: v for t, v in rj.items()}


def test_explicit_json_roundtrip_product():
    doc = {"family": "explicit", "tail_from": 1, "bandwidth": 1,
           "head": [
               {"type": 0, "law": {"kind": "table",
                                   "entries": [{"counts": {"1": 1}, "prob": 0.5},
                                               {"counts": {}, "prob": 0.5}]}},
               {"type": 1, "law": {"kind": "product",
                                   "coords": {"0": {"0": 0.8, "1": 0.2},
                                              "2": {"0": 0.5, "1": 0.3, "2": 0.2}}}}]}
    m = load_model(json.dumps(doc))
    assert isinstance(m.law(1), ProductLaw)
    assert m.mean_row(1) == pytest.approx({0: 0.2, 2: 0.7})
    assert m.mean_row(4) == pytest.approx({3: 0.2, 5: 0.7})
    assert m.bandwidth == 1


# ---------------------------------------------------------------------------
# validation reports


def test_validate_example2_passes():
    rep = validate(ex2(0.3), K=32)
    assert rep.passed
    assert rep.divergence_flag == "plausible"
    assert rep.min_one_minus_p1 == 1.0
    assert rep.back_edge_seen


def test_validate_single_child_chain_fails_divergence():
    # every individual has exactly one child of its own type
    law = TableLaw(((((0, 1),), 1.0),))
    m = ExplicitModel(head=(law,))
    rep = validate(m, K=8)
    assert rep.divergence_flag == "fails"
    assert not rep.upward_ok


def test_validate_all_die():
    rep = validate(all_die_model(), K=4)
    assert not rep.upward_ok
    assert rep.hessenberg_ok


# ---------------------------------------------------------------------------
# law utilities


def test_shift_and_marginalize():
    law = TableLaw(((((0, 1), (2, 2)), 0.3), ((), 0.7)))
    shifted = shift_law(law, 3)
    assert shifted.entries[0][0] == ((3, 1), (5, 2))
    marg = marginalize_law(law, 1)
    assert sorted(marg.entries) == [((), 0.7), (((0, 2),), 0.3)]


def test_tail_model_moments_match_marginal_laws():
    base = ex2(0.3)
    tail = TailModel(base, 3)
    for j in range(4):
        assert tail.mean_row(j) == pytest.approx(brute_means(tail.law(j)), abs=1e-12)
        for (t1, t2), v in tail.a_entries(j).items():
            assert v == pytest.approx(brute_second(tail.law(j), t1, t2), abs=1e-12)


# ---------------------------------------------------------------------------
# property: random table laws have consistent moments and G values


@st.composite
def table_laws(draw, owner=2):
    n = draw(st.integers(1, 4))
    entries = []
    weights = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    total = sum(weights) / (1.0 - 0.1)  # leave mass for the empty vector
    for w in weights:
        n_types = draw(st.integers(0, 2))
        types = draw(st.lists(st.integers(0, owner + 1), min_size=n_types,
                              max_size=n_types, unique=True))
        counts = tuple(sorted((t, draw(st.integers(1, 3))) for t in types))
        entries.append((counts, w / total))
    entries.append(((), 1.0 - sum(p for _, p in entries)))
    return TableLaw(tuple(entries))


@settings(max_examples=30, deadline=None)
@given(table_laws())
def test_law_moment_identities(law):
    bm = brute_means(law)
    assert law.means() == pytest.approx(bm, abs=1e-12)
    for (t1, t2), v in law.second_factorials().items():
        assert v == pytest.approx(brute_second(law, t1, t2), abs=1e-12)
    # G at the all-ones point is the total mass
    m = ExplicitModel(head=(TableLaw(((((1, 1),), 1.0),)),
                            TableLaw(((((2, 1),), 1.0),)), law))
    assert G_value(m, 2, np.ones(8)) == pytest.approx(law.prob_sum(), abs=1e-12)
