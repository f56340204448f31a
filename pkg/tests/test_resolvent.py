import cmath
import math

import numpy as np
import pytest
import scipy.linalg as sla

from heatwave.fem import ComplexField, NormKind, build_space
from heatwave.mesh import generate_unit_square
from heatwave.resolvent import (
    ResolventError,
    SectorSpec,
    complex_lemma_sample,
    sector_scan,
    shifted_solve,
    weighted_operator_norm,
)
from heatwave.singular import WeightSpec


def dense_spectrum(space):
    A = space.stiffness().toarray()
    M = space.mass().toarray()
    return sla.eigh(A, M)


def test_sector_spec_validation():
    SectorSpec()
    with pytest.raises(ResolventError):
        SectorSpec(gamma=2.0)
    with pytest.raises(ResolventError):
        SectorSpec(rays=(0.1,))
    with pytest.raises(ResolventError):
        SectorSpec(radii=(1.0, -2.0))


def test_shifted_solve_on_eigenfield():
    s = build_space(generate_unit_square(4), 1)
    lam, vecs = dense_spectrum(s)
    z = 10.0 * cmath.exp(1j * 3.0 * math.pi / 4.0)
    for j in (0, 3):
        chi = ComplexField(s, vecs[:, j])
        u = shifted_solve(s, z, chi)
        assert np.allclose(u.coeffs, vecs[:, j] / (z - lam[j]), atol=1e-12)


def test_shifted_solve_real_data_gives_real_field():
    s = build_space(generate_unit_square(4), 1)
    chi = ComplexField(s, np.ones(s.n_interior))
    u = shifted_solve(s, -3.0, chi)
    assert np.abs(u.coeffs.imag).max() == 0.0


def test_shifted_solve_round_trip():
    s = build_space(generate_unit_square(6), 2)
    rng = np.random.default_rng(5)
    chi = ComplexField(s, rng.standard_normal(s.n_interior) + 1j * rng.standard_normal(s.n_interior))
    z = complex(-2.0, 7.0)
    u = shifted_solve(s, z, chi)
    M = s.mass().matrix
    A = s.stiffness().matrix
    resid = z * (M @ u.coeffs) - A @ u.coeffs - M @ chi.coeffs
    assert np.linalg.norm(resid) <= 1e-9 * np.linalg.norm(M @ chi.coeffs)


def test_identity_map_has_unit_norm_in_any_gram():
    s = build_space(generate_unit_square(4), 1)
    w = WeightSpec(x0=(0.6, 0.4), K=4.0, h=s.mesh.h)
    for kind in (NormKind.l2(), NormKind.weighted_l2(w, 2.0), NormKind.weighted_hm1(w)):
        val = weighted_operator_norm(s, 1.0 + 0.0j, kind, "identity")
        assert val == pytest.approx(1.0, abs=1e-7)


def test_l2_opnorm_matches_dense_spectral_formula():
    s = build_space(generate_unit_square(4), 1)
    lam, _ = dense_spectrum(s)
    for z in (-1.0 + 0.0j, 2.0j, 10.0 * cmath.exp(1j * 3 * math.pi / 4)):
        want = np.max(1.0 / np.abs(z - lam))
        got = weighted_operator_norm(s, z, NormKind.l2())
        assert got == pytest.approx(want, rel=1e-6)


def test_l2_far_field_scaled_norm_approaches_one():
    s = build_space(generate_unit_square(4), 1)
    lam, _ = dense_spectrum(s)
    z = complex(-lam[0] * 1e6, 0.0)
    val = weighted_operator_norm(s, z, NormKind.l2())
    assert abs(z) * val == pytest.approx(1.0, rel=0.05)


def test_opnorm_symmetric_under_conjugation():
    s = build_space(generate_unit_square(4), 1)
    z = 5.0 * cmath.exp(1j * 3 * math.pi / 4)
    a = weighted_operator_norm(s, z, NormKind.l2())
    b = weighted_operator_norm(s, np.conj(z), NormKind.l2())
    assert a == pytest.approx(b, rel=1e-8)


def test_conjugated_route_agrees_with_gram_conjugation():
    # The same operator norm computed through the dual-weighted Gram and
    # through the commuted weighted-gradient Gram.
    s = build_space(generate_unit_square(8), 1)
    w = WeightSpec(x0=(0.55, 0.45), K=4.0, h=s.mesh.h)
    kind = NormKind.weighted_hm1(w)
    z = 10.0 * cmath.exp(1j * 3 * math.pi / 4)
    a = weighted_operator_norm(s, z, kind, "resolvent")
    b = weighted_operator_norm(s, z, kind, "hm1_conjugated_resolvent")
    assert a == pytest.approx(b, rel=1e-5)


def test_sector_scan_rows_against_spectral_oracle():
    s = build_space(generate_unit_square(4), 1)
    lam, _ = dense_spectrum(s)
    spec = SectorSpec()
    rows = sector_scan(s, spec, [NormKind.l2()])
    assert len(rows) == 24
    for row in rows:
        assert row.error is None
        want = np.max(1.0 / np.abs(row.z - lam))
        assert row.opnorm == pytest.approx(want, rel=1e-6)
        assert row.scaled == pytest.approx(abs(row.z) * want, rel=1e-6)


def test_sector_scan_sup_stable_under_radius_doubling():
    # Extending the radius range must not grow the scaled envelope.
    s = build_space(generate_unit_square(4), 1)
    sups = []
    maxr = []
    for extra in (1.0, 2.0, 4.0, 8.0):
        spec = SectorSpec(radii=tuple(np.geomspace(1e-1, 1e4 * extra, 12)))
        rows = sector_scan(s, spec, [NormKind.l2()])
        sups.append(max(r.scaled for r in rows))
        maxr.append(1e4 * extra)
    slope = np.polyfit(np.log(maxr), np.log(sups), 1)[0]
    assert -0.1 <= slope <= 0.1


def test_weighted_scan_rows_finite():
    s = build_space(generate_unit_square(4), 1)
    w = WeightSpec(x0=(0.5, 0.5), K=4.0, h=s.mesh.h)
    spec = SectorSpec(radii=(1.0, 10.0, 100.0))
    rows = sector_scan(s, spec, [NormKind.weighted_l2(w, 2.0), NormKind.weighted_hm1(w)])
    assert len(rows) == 12
    for row in rows:
        assert row.error is None
        assert np.isfinite(row.scaled)
        assert row.scaled > 0.0


def test_lemma_examples():
    # z=-1, alpha=1, beta=0: both sides equal 1.
    z, alpha, beta = -1.0 + 0.0j, 1.0, 0.0
    lhs = abs(z) * alpha**2 + beta**2
    assert lhs == pytest.approx(abs(-z * alpha**2 + beta**2))
    # z=2i, alpha=beta=1 at gamma=pi/4.
    z = 2.0j
    lhs = abs(z) + 1.0
    denom = abs(-z + 1.0)
    assert lhs == pytest.approx(3.0)
    assert denom == pytest.approx(math.sqrt(5.0))
    assert lhs / denom == pytest.approx(1.3416407865, rel=1e-9)
    assert lhs / denom <= 1.0 / math.sin(math.pi / 8.0)


def test_lemma_holds_on_mass_sampling():
    violations, max_ratio = complex_lemma_sample(math.pi / 4.0, 100000, seed=42)
    assert violations == 0
    assert max_ratio <= 1.0 / math.sin(math.pi / 8.0) + 1e-9


def test_lemma_sample_respects_gamma_domain():
    with pytest.raises(ResolventError):
        complex_lemma_sample(0.0, 10)
    with pytest.raises(ResolventError):
        complex_lemma_sample(math.pi, 10)
