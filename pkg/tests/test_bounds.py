import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cslearn.bounds import GapCertificate, parameterization_gap, total_gap_certificate, v_n
from cslearn.core import DomainError, DualState


def naive_v_n(B, N, d, delta):
    return 2 * B * math.sqrt((1 + math.log(4 * (2 * N) ** d / delta)) / N)


def test_v_n_reference_values():
    assert v_n(1.0, 1, 1, 0.5) == pytest.approx(2 * math.sqrt(1 + math.log(16)), rel=1e-14)
    assert v_n(1.0, 1, 1, 0.5) == pytest.approx(3.8846305987775884, rel=1e-14)
    assert v_n(1.0, 10000, 10, 0.5) == pytest.approx(0.20210325783325822, rel=1e-14)


def test_v_n_huge_exponent_stays_finite():
    # (2N)^d overflows a double here; the log form does not.
    val = v_n(1.0, 10 ** 6, 500, 0.05)
    assert math.isfinite(val) and val > 0


@pytest.mark.parametrize("args", [
    (1.0, 0, 1, 0.5), (1.0, 10, 0, 0.5), (1.0, 10, 1, 0.0), (1.0, 10, 1, 1.0),
    (0.0, 10, 1, 0.5), (1.0, 2.5, 1, 0.5),
])
def test_v_n_domain(args):
    with pytest.raises(DomainError):
        v_n(*args)


@given(st.floats(0.1, 10), st.integers(1, 10 ** 5), st.integers(1, 5), st.floats(0.001, 0.9))
def test_v_n_matches_naive(B, N, d, delta):
    assert v_n(B, N, d, delta) == pytest.approx(naive_v_n(B, N, d, delta), rel=1e-10)


@given(st.integers(1, 10 ** 5), st.integers(1, 20), st.floats(0.001, 0.5))
def test_v_n_monotone(N, d, delta):
    # Nonincreasing in N beyond the first few samples, increasing in d and as delta shrinks.
    if N >= 3:
        assert v_n(1.0, N * 2, d, delta) < v_n(1.0, N, d, delta)
    assert v_n(1.0, N, d + 1, delta) > v_n(1.0, N, d, delta)
    assert v_n(1.0, N, d, delta / 2) > v_n(1.0, N, d, delta)


def test_parameterization_gap():
    assert parameterization_gap(2.0, 0.1, 3.0) == pytest.approx(0.8)
    with pytest.raises(DomainError):
        parameterization_gap(1.0, -0.1, 0.0)
    with pytest.raises(DomainError):
        parameterization_gap(1.0, 0.1, math.inf)


def test_certificate_total_is_exact_sum():
    cert = total_gap_certificate(2.0, 500, 7, 0.05, 3.0, 0.01, DualState([0.5, 1.25]))
    assert cert.lambda_l1 == 1.75
    assert cert.v_n == v_n(2.0, 500, 7, 0.05)
    assert cert.parameterization_gap == (1 + 1.75) * 3.0 * 0.01
    assert cert.total_bound == cert.parameterization_gap + cert.v_n
    assert cert.lambda_source == "empirical"


def test_certificate_rejects_negative_duals():
    with pytest.raises(DomainError):
        total_gap_certificate(1.0, 10, 1, 0.1, 1.0, 0.1, DualState([-1.0]))


def test_certificate_text_round_trip(tmp_path):
    cert = total_gap_certificate(16.1, 2000, 17, 0.05, 1e7, 1e-9, DualState([1.9]), "user")
    path = tmp_path / "cert.txt"
    cert.write(path)
    text = path.read_text()
    assert "total_bound = " in text and "lambda_source = user" in text
    back = GapCertificate.from_text(text)
    # 15 significant digits: the text is stable, values agree to that precision.
    assert back.to_text() == text
    assert back.total_bound == pytest.approx(cert.total_bound, rel=1e-14)
    assert (back.vc_dim, back.n_samples, back.lambda_source) == (17, 2000, "user")


def test_parameterization_gap_examples():
    assert parameterization_gap(1.0, 0.1, 0.65) == pytest.approx(0.165, abs=1e-15)
    assert parameterization_gap(3.0, 0.0, 2.0) == 0.0
    assert parameterization_gap(2.0, 0.5, 0.0) == 1.0


def test_v_n_linear_in_B():
    assert v_n(2.0, 50, 3, 0.1) == 2 * v_n(1.0, 50, 3, 0.1)


def test_v_n_decreases_along_doubling_N():
    vals = [v_n(1.0, N, 4, 0.1) for N in (10, 20, 40)]
    assert vals[0] > vals[1] > vals[2]


def test_zero_epsilon_certificate_is_v_n():
    cert = total_gap_certificate(1.0, 10000, 10, 0.5, 1.0, 0.0, DualState([0.0]))
    assert cert.lambda_l1 == 0.0
    assert cert.total_bound == cert.v_n == pytest.approx(0.20210325783325822, rel=1e-14)


def test_certificate_is_pure():
    args = (2.0, 300, 5, 0.05, 1.5, 0.02, DualState([0.4, 0.1]))
    assert total_gap_certificate(*args).to_text() == total_gap_certificate(*args).to_text()
