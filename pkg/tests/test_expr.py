import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from pseudopar.errors import EvalError, ParseError
from pseudopar.expr import parse_expr

mpmath.mp.dps = 50
UNIT = 2.0 ** -53
TINY = 2.0 ** -1074     # absolute rounding error of a subnormal result


def test_examples():
    assert parse_expr("0")(0.3, 0.7, 1.0) == 0.0
    X = np.linspace(0, 1, 5)
    assert not np.any(parse_expr("0")(X, X, 0.0))
    assert parse_expr("sin(3.14159265*x)*t")(0.5, 0.0, 2.0) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ParseError) as exc:
        parse_expr("x +* y")
    assert exc.value.offset == 3


@pytest.mark.parametrize("text,value", [
    ("-2^2", -4.0), ("2^-1", 0.5), ("2^3^2", 512.0), ("8/4/2", 1.0), ("7-2-1", 4.0),
    ("1+2*3", 7.0), ("(1+2)*3", 9.0), ("--3", 3.0), ("2*-3", -6.0), ("  1 +\t2 ", 3.0),
    ("1e-3*1e3", 1.0), (".5+.5", 1.0), ("cos(pi)", -1.0), ("exp(0)", 1.0),
])
def test_precedence(text, value):
    assert parse_expr(text)() == value


@pytest.mark.parametrize("text,offset", [
    ("foo", 0), ("x + bar", 4), ("(x", 2), ("x)", 1), ("", 0), ("sin x", 4), ("2 ** 3", 3),
    ("x # y", 2), ("é+x", 0), ("1+é", 2), ("\u00a0x+*", 4),
])
def test_parse_errors(text, offset):
    with pytest.raises(ParseError) as exc:
        parse_expr(text)
    assert exc.value.offset == offset


@pytest.mark.parametrize("text", ["1/x", "1/(x-x)", "0^-1", "exp(1000)", "(-1)^0.5"])
def test_eval_errors(text):
    with pytest.raises(EvalError):
        parse_expr(text)(0.0, 0.0, 0.0)


def test_broadcast_and_variables():
    e = parse_expr("x*y + t")
    assert e.variables() == {"x", "y", "t"}
    out = e(np.array([1.0, 2.0]), np.array([3.0, 4.0]), 0.5)
    assert np.array_equal(out, [3.5, 8.5])
    assert parse_expr("pi").variables() == set()


# ---------------------------------------------------------------- random corpus
leaf = st.one_of(
    st.sampled_from(["x", "y", "t", "pi"]),
    st.integers(0, 9).map(str),
    st.sampled_from(["0.5", "1.25", "3e-1", "2.5e1"]),
)


def _grow(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*/"), children, children),
        st.tuples(st.just("^"), children, st.integers(-2, 3)),
        st.tuples(st.just("neg"), children),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), children),
    )


trees = st.recursive(leaf, _grow, max_leaves=12)


def render(tree):
    if isinstance(tree, str):
        return tree
    op = tree[0]
    if op == "neg":
        return f"-({render(tree[1])})"
    if op in ("sin", "cos", "exp"):
        return f"{op}({render(tree[1])})"
    if op == "^":
        return f"({render(tree[1])})^{tree[2]}"
    return f"({render(tree[1])}){op}({render(tree[2])})"


def reference(tree, env):
    """Extended-precision value and a running bound on the float64 rounding error."""
    if isinstance(tree, str):
        if tree in env:
            return env[tree], mpmath.mpf(0)
        if tree == "pi":
            return mpmath.mpf(math.pi), mpmath.mpf(0)
        return mpmath.mpf(float(tree)), mpmath.mpf(0)
    op = tree[0]
    if op == "neg":
        v, e = reference(tree[1], env)
        return -v, e
    if op in ("sin", "cos", "exp"):
        a, e = reference(tree[1], env)
        assume(abs(a) < 1e6)             # keeps the extended-precision side cheap
        v = getattr(mpmath, op)(a)
        if op == "exp":
            return v, abs(v) * (mpmath.exp(e) - 1) + (UNIT * abs(v) + TINY)
        return v, e + UNIT + TINY
    if op == "^":
        a, e = reference(tree[1], env)
        p = tree[2]
        assume(abs(a) < 1e100)
        assume(not (a == 0 and p < 0))
        v = a ** p
        if p == 0:
            return v, mpmath.mpf(0)
        assume(p > 0 or abs(a) > 2 * e)
        lo = min(abs(a) - e, abs(a) + e) if p > 0 else abs(a) - e
        deriv = abs(p) * max(abs(a) + e, lo) ** (p - 1) if p > 0 else abs(p) * lo ** (p - 1)
        return v, deriv * e + 4 * (UNIT * abs(v) + TINY)
    a, ea = reference(tree[1], env)
    b, eb = reference(tree[2], env)
    if op == "+":
        v = a + b
        return v, ea + eb + (UNIT * abs(v) + TINY)
    if op == "-":
        v = a - b
        return v, ea + eb + (UNIT * abs(v) + TINY)
    if op == "*":
        v = a * b
        return v, abs(a) * eb + abs(b) * ea + ea * eb + (UNIT * abs(v) + TINY)
    assume(abs(b) > 2 * eb and b != 0)
    v = a / b
    return v, (ea + abs(v) * eb) / (abs(b) - eb) + (UNIT * abs(v) + TINY)


@given(trees, st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 2))
def test_matches_extended_precision(tree, x, y, t):
    env = {"x": mpmath.mpf(x), "y": mpmath.mpf(y), "t": mpmath.mpf(t)}
    ref, bound = reference(tree, env)
    assume(mpmath.isfinite(ref) and abs(ref) < 1e300 and bound < 1e-3 * max(1, abs(ref)))
    try:
        got = parse_expr(render(tree))(x, y, t)
    except EvalError:
        # only legitimate when float64 overflows or divides by an exact zero
        assume(False)
    err = abs(mpmath.mpf(got) - ref)
    assert err <= max(1e-12 * abs(ref), 8 * bound)


@given(trees)
def test_parse_is_deterministic_and_whitespace_insensitive(tree):
    text = render(tree)
    spaced = " ".join(text)        # every token boundary gets a space; names get split
    a = parse_expr(text)
    assert parse_expr(text).tree == a.tree
    no_names = text.replace("sin", "S").replace("cos", "C").replace("exp", "E").replace("pi", "P")
    if not any(c in no_names for c in "SCEP") and "e" not in text and "." not in text:
        assert parse_expr(spaced).tree == a.tree
