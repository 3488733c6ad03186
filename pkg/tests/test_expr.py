import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfilter.errors import ParseError
from qfilter.expr import parse_operator_expr, parse_scalar_expr

I2 = np.eye(2)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0, -1.0]).astype(complex)
SP = np.array([[0, 1], [0, 0]], dtype=complex)
SM = SP.T.copy()
A3 = np.diag([1, np.sqrt(2)], k=1).astype(complex)
A4 = np.diag([1, np.sqrt(2), np.sqrt(3)], k=1).astype(complex)
N3 = np.diag([0, 1, 2]).astype(complex)
kron = np.kron

# (expression, dims, expected matrix built by hand)
GOLDEN = [
    ("identity", 2, I2),
    ("sigma_x", 2, SX),
    ("sigma_y", 2, SY),
    ("sigma_z", 2, SZ),
    ("sigma_plus", 2, SP),
    ("sigma_minus", 2, SM),
    ("0.5*(sigma_plus + sigma_minus)", 2, SX / 2),
    ("i*sigma_z", 2, np.diag([1j, -1j])),
    ("2i*sigma_x", 2, 2j * SX),
    ("1j", 2, 1j * I2),
    ("sigma_x'", 2, SX),
    ("sigma_plus'", 2, SM),
    ("(i*sigma_plus)'", 2, -1j * SM),
    ("sigma_x*sigma_y", 2, 1j * SZ),
    ("sigma_y*sigma_x", 2, -1j * SZ),
    ("sigma_x*sigma_y - sigma_y*sigma_x", 2, 2j * SZ),
    ("sigma_plus*sigma_minus", 2, np.diag([1, 0])),
    ("sigma_minus*sigma_plus", 2, np.diag([0, 1])),
    ("proj(0)", 2, np.diag([1, 0])),
    ("proj(1)", 2, np.diag([0, 1])),
    ("0.5*(identity + sigma_z)", 2, np.diag([1, 0])),
    ("sigma_z^2", 2, I2),
    ("sigma_x^3", 2, SX),
    ("sigma_x^0", 2, I2),
    ("-sigma_z", 2, -SZ),
    ("--sigma_z", 2, SZ),
    ("+sigma_z", 2, SZ),
    ("sigma_z/2", 2, SZ / 2),
    ("1 + sigma_z", 2, I2 + SZ),
    ("sqrt(2)*sigma_x", 2, np.sqrt(2) * SX),
    ("exp(i*pi)*sigma_x", 2, -SX),
    ("cos(pi/3)*sigma_z + sin(pi/3)*sigma_x", 2, 0.5 * SZ + np.sqrt(3) / 2 * SX),
    ("2^3*identity", 2, 8 * I2),
    ("2^-1*identity", 2, 0.5 * I2),
    ("1e-3*sigma_z", 2, 1e-3 * SZ),
    ("annihilator", 3, A3),
    ("creator", 3, A3.T),
    ("number", 3, N3),
    ("(annihilator')*annihilator", 3, N3),
    ("annihilator*creator - creator*annihilator", 3, np.diag([1, 1, -2])),
    ("annihilator^2", 3, A3 @ A3),
    ("number + 0.5", 3, N3 + 0.5 * np.eye(3)),
    ("annihilator", 4, A4),
    ("proj(2)", 3, np.diag([0, 0, 1])),
    ("sigma_z[0]", [2, 3], kron(SZ, np.eye(3))),
    ("annihilator[1]", [2, 3], kron(I2, A3)),
    ("sigma_plus[0]*annihilator[1]", [2, 3], kron(SP, A3)),
    ("sigma_minus[0]*creator[1] + sigma_plus[0]*annihilator[1]", [2, 3], kron(SM, A3.T) + kron(SP, A3)),
    ("proj(0)[0]*proj(1)[1]", [2, 3], kron(np.diag([1, 0]), np.diag([0, 1, 0]))),
    ("sigma_x[1]", [2, 2], kron(I2, SX)),
    ("identity", [2, 3], np.eye(6)),
    ("(sigma_z[0] + sigma_z[1])/2", [2, 2], (kron(SZ, I2) + kron(I2, SZ)) / 2),
]


def test_golden_table_size():
    assert len(GOLDEN) >= 50


@pytest.mark.parametrize("text, dims, expected", GOLDEN, ids=[g[0] for g in GOLDEN])
def test_golden(text, dims, expected):
    got = parse_operator_expr(text, dims)
    assert got.shape == expected.shape
    assert np.allclose(got, expected, atol=1e-14)


@pytest.mark.parametrize("text, dims, expected", GOLDEN[:30], ids=[g[0] for g in GOLDEN[:30]])
def test_double_adjoint(text, dims, expected):
    once = parse_operator_expr(f"({text})'", dims)
    twice = parse_operator_expr(f"(({text})')'", dims)
    assert np.allclose(once, expected.conj().T, atol=1e-14)
    assert np.array_equal(twice, parse_operator_expr(text, dims))


@pytest.mark.parametrize(
    "text, dims, column",
    [
        ("sigma_x +", 2, 10),
        ("sigma_q", 2, 1),
        ("sigma_x * (sigma_y", 2, 19),
        ("sigma_x $ 2", 2, 9),
        ("sigma_x^1.5", 2, 9),
        ("sigma_x^100", 2, 9),
        ("1/0", 2, 2),
        ("sigma_x/sigma_y", 2, 8),
        ("annihilator", [2, 3], 1),
        ("sigma_x[0]", [3, 2], 1),
        ("annihilator[2]", [2, 3], 13),
        ("sqrt(sigma_x)", 2, 1),
        ("proj(5)", 2, 1),
        ("sigma_x )", 2, 9),
        ("", 2, 1),
    ],
)
def test_errors_carry_column(text, dims, column):
    with pytest.raises(ParseError) as info:
        parse_operator_expr(text, dims)
    assert info.value.column == column


def test_annihilator_needs_two_levels():
    with pytest.raises(ParseError):
        parse_operator_expr("annihilator", 1)


def test_deep_nesting_is_a_diagnostic():
    with pytest.raises(ParseError, match="deeply"):
        parse_operator_expr("(" * 5000 + "1" + ")" * 5000, 2)
    with pytest.raises(ParseError, match="deeply"):
        parse_operator_expr("-" * 5000 + "1", 2)


def test_scalar_expressions():
    assert parse_scalar_expr("0.5+0.2i") == 0.5 + 0.2j
    assert parse_scalar_expr("exp(i*pi/2)") == pytest.approx(1j)
    assert parse_scalar_expr("1e-3") == 1e-3
    with pytest.raises(ParseError):
        parse_scalar_expr("sigma_x")
    with pytest.raises(ParseError):
        parse_scalar_expr("exp(1000)")


def test_ladder_subsystems_reported():
    _, lad = parse_operator_expr("sigma_z[0] + number[1]", [2, 3], with_info=True)
    assert lad == [1]


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="sigmaxyzpluno_ proj()[]0123456789+-*/^'.ei", max_size=40))
def test_totality(text):
    try:
        out = parse_operator_expr(text, [2, 2])
    except ParseError:
        return
    assert out.shape == (4, 4)
