import numpy as np
import pytest
from hypothesis import given, strategies as st

from gconv.payoff_dsl import (BinOp, Call, Num, PayoffSyntaxError, Var, arity, envelope, evaluate,
                              parse, to_payoff, to_text)

CORPUS = [
    "x1*x1",
    "max(x1-1,0)",
    "sin(x1)+0.3*x1*x1",
    "-x1*x1",
    "abs(x1)^3",
    "call(x1+x2, 1.5) - put(x2, -0.5)",
    "min(x1, x2) * cos(x3)",
    "exp(x1) - exp(-x1)",
    "pow(x1 - x2, 2) + 1e-3",
    "-(x1*x2)^2 + 2.5*x3",
    "max(max(x1,x2),x3) - min(min(x1,x2),x3)",
    "x1**2 - .5",
]


def test_examples():
    e = parse("x1*x1")
    assert envelope(e).m_growth == 2
    assert evaluate(e, 3.0) == 9.0
    assert parse("max(x1-1,0)") == Call("max", (BinOp("-", Var(1), Num(1.0)), Num(0.0)))
    assert evaluate(parse("max(x1-1,0)"), 2.5) == 1.5
    assert evaluate(parse("abs(x1)"), -2.0) == 2.0
    assert evaluate(parse("min(x1,x2)"), 1.0, -1.0) == -1.0
    e = parse("sin(x1)+0.3*x1*x1")
    assert evaluate(e, 1.0) == pytest.approx(np.sin(1.0) + 0.3)


def test_precedence():
    assert evaluate(parse("1+2*3"), 0.0) == 7.0
    assert evaluate(parse("2*3^2"), 0.0) == 18.0
    assert evaluate(parse("(1+2)*3"), 0.0) == 9.0
    assert evaluate(parse("1-2-3"), 0.0) == -4.0
    # unary binds tighter than the power
    assert evaluate(parse("-x1^2"), 3.0) == 9.0
    assert evaluate(parse("-(x1^2)"), 3.0) == -9.0
    assert evaluate(parse("x1^2^2"), 2.0) == 16.0


def test_call_and_put_sugar():
    x = np.linspace(-3, 3, 13)
    np.testing.assert_array_equal(evaluate(parse("call(x1,1)"), x), np.maximum(x - 1, 0))
    np.testing.assert_array_equal(evaluate(parse("put(x1,1)"), x), np.maximum(1 - x, 0))


def test_exp_clamped():
    assert evaluate(parse("exp(x1)"), 1000.0) == pytest.approx(np.exp(40.0))
    assert np.isfinite(evaluate(parse("exp(x1*x1)"), 1e4))


def test_vectorized_and_arity():
    e = parse("x1 + 2*x3")
    assert arity(e) == 3
    out = evaluate(e, np.array([1.0, 2.0]), 0.0, np.array([0.5, -1.0]))
    np.testing.assert_array_equal(out, [2.0, 0.0])
    with pytest.raises(ValueError):
        evaluate(e, 1.0, 2.0)
    assert arity(parse("2.5")) == 0


@pytest.mark.parametrize("src,pos", [
    ("x1/2", 2),
    ("y + 1", 0),
    ("max(x1)", 0),
    ("sin(x1, x2)", 0),
    ("x1^1.5", 3),
    ("(x1", 3),
    ("x1 x2", 3),
    ("x4", 0),
    ("x1^7", 2),
    ("foo(x1)", 0),
    ("", 0),
    ("1 +", 3),
    ("x1*x1*x1*x1*x1*x1*x1", None),
])
def test_errors_carry_offsets(src, pos):
    with pytest.raises(PayoffSyntaxError) as info:
        parse(src)
    if pos is not None:
        assert info.value.pos == pos
    assert "offset" in str(info.value)


@pytest.mark.parametrize("src", CORPUS)
def test_print_parse_idempotent(src):
    e = parse(src)
    text = to_text(e)
    assert parse(text) == e
    assert to_text(parse(text)) == text


@pytest.mark.parametrize("src", CORPUS)
def test_deterministic(src):
    e = parse(src)
    x = np.linspace(-2, 2, 7)
    np.testing.assert_array_equal(evaluate(e, x, x[::-1], 0.5 * x), evaluate(parse(src), x, x[::-1], 0.5 * x))


point = st.tuples(*[st.floats(-30, 30)] * 3)


@pytest.mark.parametrize("src", CORPUS)
@given(point, point)
def test_envelope_sound(src, x, y):
    e = parse(src)
    C, m = envelope(e)
    x, y = np.array(x), np.array(y)
    lhs = abs(evaluate(e, *x) - evaluate(e, *y))
    rhs = C * (1 + np.linalg.norm(x) ** m + np.linalg.norm(y) ** m) * np.linalg.norm(x - y)
    assert lhs <= rhs * (1 + 1e-9) + 1e-9


def test_to_payoff():
    X = to_payoff("x1*x2", (0.5, 1.0))
    assert X.m == 2 and X.label == "(x1 * x2)"
    assert X(np.array(2.0), np.array(3.0)) == 6.0
    c = to_payoff("1.5", (1.0,))
    assert np.all(c(np.zeros(4)) == 1.5)
    with pytest.raises(ValueError):
        to_payoff("x1+x2", (1.0,))
