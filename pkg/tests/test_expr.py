import random
from fractions import Fraction

import pytest

from costpy.errors import ConfigError, ExpressionSyntaxError
from costpy.expr import (
    CostFormula, exact_log2, parse_cost_formula, parse_expression, tokenize
)


def evaluate(text, **env):
    return parse_expression(text).evaluate(env)


@pytest.mark.parametrize('text,env,expected', [
    ("3*k*size", {'k': 64, 'size': 2}, 384),
    ("(kappa+18)*k", {'kappa': 128, 'k': 60}, 8760),
    ("slice_sum(mod, 0, -1)", {'mod': (59, 55, 49, 49)}, 163),
    ("slice_sum(mod, 0, -2)", {'mod': (59, 55, 49, 49)}, 114),
    ("slice_sum(mod, 1)", {'mod': (59, 55, 49, 49)}, 153),
    ("ceil(log2(k))+2", {'k': 64}, 8),
    ("ceil(log2(k))", {'k': 65}, 7),
    ("floor(7/2)", {}, 3),
    ("7.425*k", {'k': 64}, Fraction('475.2')),
    ("k - -f", {'k': 64, 'f': 16}, 80),
    ("min(p, q, r) + max(p, q)", {'p': 2, 'q': 3, 'r': 4}, 5),
    ("if(knownmsb, 1, 2)", {'knownmsb': 0}, 2),
    ("if(knownmsb, 1, 2)", {'knownmsb': 1}, 1),
    ("2 + 3 * 4 - 6 / 3", {}, 12),
])
def test_evaluate(text, env, expected):
    assert evaluate(text, **env) == expected


def test_exact_log2():
    assert exact_log2(1024) == 10
    assert exact_log2(Fraction(1, 4)) == -2
    assert 6 < exact_log2(100) < 7
    with pytest.raises(ConfigError):
        exact_log2(0)


@pytest.mark.parametrize('text', [
    "3*", "(k+1", "k)", "foo", "mod", "sqrt(k)", "min(k)", "k $ 2",
    "slice_sum(k, 0)", "if(k, 1)",
])
def test_syntax_errors(text):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression(text)
    assert 0 <= info.value.position <= len(text)


def test_syntax_error_points_at_token():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression("k + foo")
    assert info.value.position == 4
    assert "^" in str(info.value)


def test_evaluation_errors():
    with pytest.raises(ConfigError):
        evaluate("k / (f - f)", k=64, f=16)
    with pytest.raises(ConfigError, match="'kappa'"):
        evaluate("kappa + 1", k=64)


def test_tokenize_skips_whitespace():
    kinds = [t.kind for t in tokenize(" k *  2 ")]
    assert kinds == ['ident', 'op', 'number', 'end']


def test_cost_formula_from_text():
    formula = parse_cost_formula("9*k; ceil(log2(k))+2; 0; 0")
    assert formula.parameters == {'k'}
    assert formula.evaluate({'k': 64}) == (576, 8, 0, 0)
    assert parse_cost_formula(["3*p*r*k", 1, 0, 0]).parameters == {
        'p', 'r', 'k'
    }
    with pytest.raises(ConfigError):
        parse_cost_formula("k; 1; 0")


def test_cost_formula_from_callable():
    formula = CostFormula.from_callable(lambda k, size: (k * size, 1, 0, 0))
    assert formula.parameters == {'k', 'size'}
    assert formula.evaluate({'k': 4, 'size': 3, 'f': 1}) == (12, 1, 0, 0)
    with pytest.raises(ConfigError):
        formula.evaluate({'k': 4})


def _random_expression(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.5:
            value = rng.randint(1, 50)
            return str(value), Fraction(value)
        name = rng.choice(['k', 'f', 'size'])
        return name, Fraction(ENV[name])
    op = rng.choice('+-*/')
    left, lval = _random_expression(rng, depth - 1)
    right, rval = _random_expression(rng, depth - 1)
    text = f"({left} {op} {right})"
    if op == '+':
        return text, lval + rval
    if op == '-':
        return text, lval - rval
    if op == '*':
        return text, lval * rval
    if rval == 0:
        return f"({left} + {right})", lval + rval
    return text, lval / rval


ENV = {'k': 64, 'f': 16, 'size': 7}


def test_random_expressions_match_exact_arithmetic():
    rng = random.Random(1234)
    for _ in range(200):
        text, expected = _random_expression(rng, 4)
        assert parse_expression(text).evaluate(ENV) == expected, text
