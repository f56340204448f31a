import math

import numpy as np
import pytest

from heatwave.fem import NodalField, build_space, evaluate
from heatwave.mesh import generate_unit_square
from heatwave.timestepping import (
    ProblemSpec,
    SeparableForcing,
    SpaceTimeField,
    TimesteppingError,
    build_partition,
    dg_residual,
    dg_solve,
    eval_spacetime,
    scalar_solve,
    slab_tableau,
    stability_function,
)


def q1_rational(z):
    return (1.0 - z / 3.0) / (1.0 + 2.0 * z / 3.0 + z * z / 6.0)


def test_uniform_partition_invariants():
    tp = build_partition(1.0, 8)
    assert tp.k == pytest.approx(0.125)
    assert tp.k_min == pytest.approx(0.125)
    assert tp.kappa == pytest.approx(1.0)
    assert tp.T == 1.0
    assert tp.n_slabs == 8
    assert tp.beta_ratio(1.0) == pytest.approx(1.0)


def test_partition_max_step_guard():
    with pytest.raises(TimesteppingError):
        build_partition(1.0, 2)
    build_partition(1.0, 4)


def test_geometric_partition():
    tp = build_partition(1.0, 10, kind="geometric", ratio=1.2)
    assert tp.kappa == pytest.approx(1.2, rel=1e-12)
    assert tp.points[-1] == pytest.approx(1.0)
    assert tp.k == pytest.approx(tp.steps[-1])


def test_slab_lookup_is_left_continuous():
    tp = build_partition(1.0, 4)
    assert tp.slab_of(0.25) == 1
    assert tp.slab_of(0.2500001) == 2
    assert tp.slab_of(1.0) == 4
    with pytest.raises(TimesteppingError):
        tp.slab_of(0.0)
    with pytest.raises(TimesteppingError):
        tp.slab_of(1.1)


def test_tableau_q0():
    tab = slab_tableau(0)
    assert tab.C == pytest.approx(np.array([[1.0]]))
    assert tab.G == pytest.approx(np.array([[1.0]]))
    assert tab.psi0 == pytest.approx(np.array([1.0]))


def test_tableau_q1_hand_values():
    tab = slab_tableau(1)
    assert tab.C == pytest.approx(np.array([[9 / 8, 3 / 8], [-9 / 8, 5 / 8]]), abs=1e-13)
    assert tab.G == pytest.approx(np.diag([0.75, 0.25]), abs=1e-14)
    assert tab.psi0 == pytest.approx(np.array([1.5, -0.5]), abs=1e-13)
    assert tab.psi1 == pytest.approx(np.array([0.0, 1.0]), abs=1e-13)
    ev = np.sort_complex(tab.eigvals)
    assert ev == pytest.approx(np.array([2 - 1j * math.sqrt(2), 2 + 1j * math.sqrt(2)]))


def test_tableau_mass_is_diagonal_radau_weights():
    for q in (0, 1, 2):
        tab = slab_tableau(q)
        assert tab.G == pytest.approx(np.diag(tab.weights), abs=1e-13)
        assert tab.weights.sum() == pytest.approx(1.0)


def test_stability_function_q0_q1():
    for z in (0.1, 1.0, 3.0 + 2.0j):
        assert stability_function(0, z) == pytest.approx(1.0 / (1.0 + z), rel=1e-13)
        assert stability_function(1, z) == pytest.approx(q1_rational(z), rel=1e-12)


def test_stability_function_q2_approximates_decay():
    # One step of the degree-2 scheme matches e^{-z} to high order.
    z = 0.1
    assert abs(stability_function(2, z) - math.exp(-z)) < 1e-9


def scalar_space():
    s = build_space(generate_unit_square(2), 1)
    assert s.n_interior == 1
    m = s.mass().matrix.toarray()[0, 0]
    a = s.stiffness().matrix.toarray()[0, 0]
    return s, a / m


def test_dg0_single_dof_matches_recurrence():
    s, lam = scalar_space()
    tp = build_partition(0.4, 4)
    u = dg_solve(s, tp, 0, ProblemSpec(u0=NodalField(s, np.array([1.0]))))
    for m in range(1, 5):
        want = (1.0 + 0.1 * lam) ** (-m)
        assert u.left_limit(m).coeffs[0] == pytest.approx(want, rel=1e-11)


def test_dg1_single_dof_matches_rational_step():
    s, lam = scalar_space()
    tp = build_partition(0.4, 4)
    u = dg_solve(s, tp, 1, ProblemSpec(u0=NodalField(s, np.array([1.0]))))
    z = 0.1 * lam
    assert u.left_limit(1).coeffs[0] == pytest.approx(q1_rational(z), rel=1e-11)
    assert u.left_limit(4).coeffs[0] == pytest.approx(q1_rational(z) ** 4, rel=1e-10)


def test_scalar_solve_forced_q0_exact_ramp():
    # u' = 1 with u(0) = 0 is reproduced at breakpoints by dG(0).
    vals = scalar_solve(0, 0.0, 1.0, 5, 0.0, theta=lambda t: 1.0)
    assert vals == pytest.approx(np.linspace(0.0, 1.0, 6), abs=1e-13)


@pytest.mark.parametrize("q", [0, 1])
def test_scalar_nodal_superconvergence(q):
    errs = []
    ks = []
    for M in (8, 16, 32, 64):
        vals = scalar_solve(q, 1.0, 1.0, M, 1.0)
        errs.append(abs(vals[-1] - math.exp(-1.0)))
        ks.append(1.0 / M)
    slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
    assert abs(slope - (2 * q + 1)) < 0.3


@pytest.mark.parametrize("q,r", [(0, 1), (1, 1), (2, 1), (1, 2)])
def test_discrete_invariance(q, r):
    # Data whose exact solution lies in the discrete space is reproduced.
    s = build_space(generate_unit_square(4), r)
    rng = np.random.default_rng(7)
    v = rng.standard_normal(s.n_interior)
    cs = [1.0, -0.7, 0.4][: q + 1]

    def phi(t):
        return sum(c * t**i for i, c in enumerate(cs))

    def dphi(t):
        return sum(i * c * t ** (i - 1) for i, c in enumerate(cs) if i >= 1)

    w = s.mass().solve(s.stiffness().matrix @ v)
    f = SeparableForcing(
        s, [(dphi, NodalField(s, v.copy())), (phi, NodalField(s, w))]
    )
    tp = build_partition(1.0, 5)
    u = dg_solve(s, tp, q, ProblemSpec(f=f, u0=NodalField(s, phi(0.0) * v)))
    tab = slab_tableau(q)
    worst = 0.0
    for m in range(tp.n_slabs):
        tg = tp.points[m] + tp.steps[m] * tab.nodes
        want = np.asarray([phi(t) for t in tg])[:, None] * v[None, :]
        worst = max(worst, np.abs(u.blocks[m] - want).max())
    assert worst <= 1e-9 * max(1.0, np.abs(v).max())


def test_energy_dissipation_unforced():
    s = build_space(generate_unit_square(4), 1)
    rng = np.random.default_rng(11)
    u0 = NodalField(s, rng.standard_normal(s.n_interior))
    tp = build_partition(0.5, 6)
    M = s.mass().matrix
    for q in (0, 1, 2):
        u = dg_solve(s, tp, q, ProblemSpec(u0=u0))
        norms = [
            math.sqrt(u.left_limit(m).coeffs @ (M @ u.left_limit(m).coeffs))
            for m in range(tp.n_slabs + 1)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_causality_of_forcing_tail():
    s = build_space(generate_unit_square(3), 1)
    tp = build_partition(1.0, 6)

    def f(t, p):
        return math.sin(3.0 * t) * (p[..., 0] + p[..., 1])

    def f_trunc(t, p):
        if t > 0.5:
            return np.zeros(p.shape[:-1])
        return f(t, p)

    u0 = NodalField(s, np.ones(s.n_interior))
    ua = dg_solve(s, tp, 1, ProblemSpec(f=f, u0=u0))
    ub = dg_solve(s, tp, 1, ProblemSpec(f=f_trunc, u0=u0))
    for m in range(3):
        assert np.abs(ua.blocks[m] - ub.blocks[m]).max() <= 1e-14


def test_eval_spacetime_limits_and_jumps():
    s = build_space(generate_unit_square(3), 1)
    tp = build_partition(1.0, 4)
    rng = np.random.default_rng(3)
    u0 = NodalField(s, rng.standard_normal(s.n_interior))
    u = dg_solve(s, tp, 1, ProblemSpec(u0=u0))
    for m in range(4):
        jump = u.jump(m).coeffs
        alg = u.right_limit(m).coeffs - u.left_limit(m).coeffs
        assert np.abs(jump - alg).max() <= 1e-13
    left = eval_spacetime(u, 0.5, mode="left_limit")
    assert np.allclose(left.coeffs, u.left_limit(2).coeffs)
    p = (0.4, 0.55)
    assert eval_spacetime(u, 0.5, p) == pytest.approx(
        evaluate(s, u.left_limit(2), p), abs=1e-13
    )
    g = eval_spacetime(u, 0.3, p, mode="gradient")
    assert g.shape == (2,)
    with pytest.raises(TimesteppingError):
        eval_spacetime(u, 1.5, p)
    with pytest.raises(TimesteppingError):
        eval_spacetime(u, 0.0, p)
    with pytest.raises(TimesteppingError):
        eval_spacetime(u, 0.31, mode="left_limit")


def test_dg0_field_constant_per_slab():
    s = build_space(generate_unit_square(3), 1)
    tp = build_partition(1.0, 4)
    u0 = NodalField(s, np.ones(s.n_interior))
    u = dg_solve(s, tp, 0, ProblemSpec(u0=u0))
    p = (0.35, 0.6)
    assert eval_spacetime(u, 0.26, p) == pytest.approx(eval_spacetime(u, 0.5, p), abs=1e-14)


def test_residual_of_solver_output_small():
    s = build_space(generate_unit_square(4), 2)

    def f(t, p):
        return np.exp(-t) * np.sin(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])

    prob = ProblemSpec(f=f, u0=lambda p: p[..., 0] * (1 - p[..., 0]) * p[..., 1] * (1 - p[..., 1]))
    tp = build_partition(1.0, 5)
    u = dg_solve(s, tp, 2, prob)
    assert dg_residual(u, prob) <= 1e-9


def test_residual_detects_perturbation():
    s = build_space(generate_unit_square(4), 1)
    tp = build_partition(1.0, 4)
    u0 = NodalField(s, np.ones(s.n_interior))
    prob = ProblemSpec(u0=u0)
    u = dg_solve(s, tp, 1, prob)
    assert dg_residual(u, prob) <= 1e-9
    u.blocks[2][0, 3] += 1e-3
    assert dg_residual(u, prob) > 1e-6


def test_residual_forms_agree_on_random_fields():
    # The two assembly variants coincide through summation by parts even
    # far from a solution, so random blocks exercise the agreement guard.
    s = build_space(generate_unit_square(3), 1)
    tp = build_partition(1.0, 4)
    rng = np.random.default_rng(19)
    for q in (0, 1, 2):
        blocks = [rng.standard_normal((q + 1, s.n_interior)) for _ in range(4)]
        u = SpaceTimeField(
            space=s,
            partition=tp,
            q=q,
            blocks=blocks,
            initial=rng.standard_normal(s.n_interior),
        )
        r = dg_residual(u, ProblemSpec())
        assert r > 1e-3


def test_unsupported_degree_rejected():
    s = build_space(generate_unit_square(2), 1)
    tp = build_partition(1.0, 4)
    with pytest.raises(TimesteppingError):
        dg_solve(s, tp, 3, ProblemSpec())


def test_problem_residual_check_flags_wrong_forcing():
    def exact(t, p):
        return math.exp(-t) * math.sin(math.pi * p[0]) * math.sin(math.pi * p[1])

    good = ProblemSpec(
        f=lambda t, p: (2.0 * math.pi**2 - 1.0) * exact(t, p), exact=exact
    )
    bad = ProblemSpec(
        f=lambda t, p: (2.0 * math.pi**2 + 1.0) * exact(t, p), exact=exact
    )
    assert good.residual_check(T=1.0) < 1e-5
    assert bad.residual_check(T=1.0) > 0.1
