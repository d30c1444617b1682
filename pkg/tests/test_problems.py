import numpy as np
import pytest

from bvbox import (Bounds, Denoising, LinearTracking, SemilinearTracking, SolverFailure,
                   build_mesh, indicator_target, linearized_objective, make_problem)
from bvbox.formula import Formula, FormulaError

from test_grid_fem import POISSON_CENTER

SQUARE = (-1.0, 1.0, -1.0, 1.0)
FAMILIES = ["linear", "semilinear", "denoising"]


def smooth_field(mesh, a=1.0):
    x, y = mesh.nodes.T
    return a * (np.sin(2 * x + 0.3) * np.cos(y) + 0.5 * x * y)


@pytest.fixture(scope="module")
def mesh8():
    return build_mesh(SQUARE, 8)


def problem(family, mesh, **kw):
    kw.setdefault("beta", 1e-3)
    kw.setdefault("y_d", indicator_target(mesh))
    kw.setdefault("bounds", Bounds(-10.0, 10.0))
    return make_problem(family, mesh, **kw)


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_control_gives_zero_state(family, mesh8):
    pb = problem(family, mesh8)
    y = pb.solve_state(np.zeros(mesh8.num_nodes))
    assert np.all(y == 0.0)


def test_semilinear_zero_is_exact_root(mesh8):
    pb = problem("semilinear", mesh8)
    pb.solve_state(np.zeros(mesh8.num_nodes))
    assert pb.last_state_iterations <= 1


def test_poisson_state_and_adjoint():
    mesh = build_mesh(SQUARE, 128)
    pb = LinearTracking(mesh, 1e-4, y_d=0.0)
    one = np.ones(mesh.num_nodes)
    y = pb.solve_state(one)
    assert abs(y.max() - POISSON_CENTER) <= 0.02 * POISSON_CENTER
    # y - y_d == 1 drives the adjoint with the same load
    pb2 = LinearTracking(mesh, 1e-4, y_d=-1.0)
    p = pb2.solve_adjoint(np.zeros(mesh.num_nodes))
    assert abs(p.max() - POISSON_CENTER) <= 0.02 * POISSON_CENTER


@pytest.mark.parametrize("family", ["linear", "semilinear"])
def test_adjoint_vanishes_on_target(family, mesh8):
    pb = problem(family, mesh8)
    u = smooth_field(mesh8, 5.0)
    y = pb.solve_state(u)
    pb2 = problem(family, mesh8, y_d=y)
    assert np.abs(pb2.solve_adjoint(y)).max() < 1e-13
    assert np.abs(pb2.reduced_gradient(pb2.triple(u))).max() < 1e-10


def test_denoising_gradient_vanishes_at_target(mesh8):
    g = smooth_field(mesh8)
    pb = Denoising(mesh8, 1e-3, y_d=g)
    assert np.all(pb.reduced_gradient(pb.triple(g)) == 0.0)


def test_semilinear_adjoint_equals_linear_at_zero_state(mesh8):
    lin = problem("linear", mesh8)
    semi = problem("semilinear", mesh8)
    y0 = np.zeros(mesh8.num_nodes)
    assert np.allclose(lin.solve_adjoint(y0), semi.solve_adjoint(y0), rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("family", ["linear", "semilinear"])
def test_boundary_values_are_zero(family, mesh8):
    pb = problem(family, mesh8)
    t = pb.triple(smooth_field(mesh8, 30.0))
    assert np.all(t.y[mesh8.boundary] == 0.0)
    assert np.all(t.p[mesh8.boundary] == 0.0)


def test_semilinear_residual_tolerance(mesh8):
    pb = problem("semilinear", mesh8)
    u = smooth_field(mesh8, 80.0)
    y = pb.solve_state(u)
    r = pb.state_residual(y, u)
    assert np.sqrt(np.sum(r * r / mesh8.lumped_mass[mesh8.interior])) <= 1e-11
    assert pb.last_state_iterations >= 2


def test_semilinear_failure_is_reported(mesh8):
    pb = problem("semilinear", mesh8)
    pb.max_iter = 1
    with pytest.raises(SolverFailure) as info:
        pb.solve_state(smooth_field(mesh8, 500.0))
    assert info.value.residual > 0


@pytest.mark.parametrize("family", FAMILIES)
def test_gradient_against_central_differences(family, mesh8):
    rng = np.random.default_rng(11)
    pb = problem(family, mesh8)
    u = smooth_field(mesh8, 3.0) + rng.standard_normal(mesh8.num_nodes)
    grad = mesh8.mass @ pb.reduced_gradient(pb.triple(u))
    h = 1e-5
    for _ in range(5):
        v = rng.standard_normal(mesh8.num_nodes)
        fd = (pb.f_value(u + h * v) - pb.f_value(u - h * v)) / (2 * h)
        assert grad @ v == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("family", FAMILIES)
def test_f_difference_matches_direct(family, mesh8):
    pb = problem(family, mesh8)
    u0 = smooth_field(mesh8, 2.0)
    u1 = u0 + 0.1 * smooth_field(mesh8, 1.0) ** 2
    y0, y1 = pb.solve_state(u0), pb.solve_state(u1)
    assert pb.f_difference(u0, y0, u1, y1) == pytest.approx(
        pb.f_value(u1, y1) - pb.f_value(u0, y0), rel=1e-10, abs=1e-14)


def test_semilinear_blocks_reduce_to_linear(mesh8):
    lin = problem("linear", mesh8)
    semi = problem("semilinear", mesh8)
    z = np.zeros(mesh8.num_nodes)
    t = semi.triple(z)
    a, b = lin.hessian_terms(t), semi.hessian_terms(t)
    for name in ("state_op", "adjoint_cross", "control_to_state"):
        assert (getattr(a, name) != getattr(b, name)).nnz == 0


def reduced_hessian(pb, triple, drop_cross=False):
    """Dense reduced Hessian of f: B^T A^-T C A^-1 B."""
    blk = pb.hessian_terms(triple)
    A = blk.state_op.toarray()
    C = blk.adjoint_cross.toarray()
    if drop_cross:
        C = pb.mesh.mass[pb.mesh.interior][:, pb.mesh.interior].toarray()
    B = blk.control_to_state.toarray()
    S = np.linalg.solve(A, B)
    return S.T @ C @ S


@pytest.mark.parametrize("family", ["linear", "semilinear"])
def test_gauss_newton_is_psd(family, mesh8):
    rng = np.random.default_rng(4)
    pb = problem(family, mesh8)
    t = pb.triple(smooth_field(mesh8, 40.0))
    H = reduced_hessian(pb, t, drop_cross=True)
    for _ in range(20):
        v = rng.standard_normal(mesh8.num_nodes)
        assert v @ H @ v >= -1e-12 * (v @ v)


def test_semilinear_reduced_hessian_matches_gradient_fd(mesh8):
    rng = np.random.default_rng(5)
    pb = problem("semilinear", mesh8)
    u = smooth_field(mesh8, 30.0)
    H = reduced_hessian(pb, pb.triple(u))
    v = rng.standard_normal(mesh8.num_nodes)
    h = 1e-5

    def grad(w):
        return mesh8.mass @ pb.reduced_gradient(pb.triple(w))

    fd = (grad(u + h * v) - grad(u - h * v)) / (2 * h)
    assert np.allclose(H @ v, fd, rtol=1e-5, atol=1e-9 * np.abs(fd).max())


def test_reaction_matrix_is_psd(mesh8):
    rng = np.random.default_rng(6)
    pb = problem("semilinear", mesh8)
    lin = problem("linear", mesh8)
    t = pb.triple(rng.standard_normal(mesh8.num_nodes) * 20)
    R = pb.hessian_terms(t).state_op - lin.hessian_terms(t).state_op
    assert np.linalg.eigvalsh(R.toarray()).min() >= 0.0


def test_linearized_objective(mesh8):
    pb = problem("semilinear", mesh8)
    u_bar = smooth_field(mesh8, 4.0)
    lin = linearized_objective(pb, u_bar)
    grad_bar = pb.reduced_gradient(pb.triple(u_bar))
    assert np.allclose(lin.reduced_gradient(lin.triple(u_bar)), grad_bar, atol=1e-14)
    # completing the square
    u_min = u_bar - grad_bar
    assert np.abs(lin.reduced_gradient(lin.triple(u_min))).max() < 1e-14
    rng = np.random.default_rng(7)
    v = rng.standard_normal(mesh8.num_nodes)
    assert lin.f_value(u_min + 1e-3 * v) > lin.f_value(u_min)
    assert lin.hessian_terms(None).curvature is mesh8.mass


def test_problem_validation(mesh8):
    with pytest.raises(ValueError):
        make_problem("parabolic", mesh8, 1e-4)
    with pytest.raises(ValueError):
        make_problem("linear", mesh8, -1.0)
    with pytest.raises(ValueError):
        make_problem("linear", mesh8, 1e-4, bounds=Bounds(1.0, 1.0))
    with pytest.raises(ValueError):
        make_problem("linear", mesh8, 1e-4, y_d=np.full(mesh8.num_nodes, np.nan))
    with pytest.raises(ValueError):
        make_problem("linear", mesh8, 1e-4, y_d=np.zeros(3))


def test_formula_bounds(mesh8):
    b = Bounds(-100.0, "-4*(x1-0.5)**2 - 4*x2**2 + 10")
    a, ub = b.at_nodes(mesh8)
    x, y = mesh8.nodes.T
    assert np.allclose(ub, -4 * (x - 0.5) ** 2 - 4 * y ** 2 + 10)
    assert not b.is_constant
    assert Bounds(-1.0, 1.0).is_constant
    with pytest.raises(ValueError):
        Bounds(0.0, "8*sin(pi*x1)*sin(pi*x2)").at_nodes(mesh8)


@pytest.mark.parametrize("text", ["__import__('os')", "x1.real", "lambda: 1", "sqrt(x1)",
                                  "x1 if x2 else 0", "'a'", "[1]", "x1 +"])
def test_formula_rejects(text):
    with pytest.raises(FormulaError):
        Formula(text)


def test_formula_evaluation():
    f = Formula("8*sin(pi*x1)*sin(pi*x2)")
    assert f(np.array([0.5]), np.array([0.5]))[0] == pytest.approx(8.0)
    assert Formula("-x**2 + exp(0)*abs(y)")(np.array(2.0), np.array(-3.0)) == pytest.approx(-1.0)
    assert Formula("x1") == Formula(" x1 ")


def test_indicator_target():
    mesh = build_mesh(SQUARE, 4)
    open_sq = indicator_target(mesh)
    closed_sq = indicator_target(mesh, closed=True)
    # nodes at 0 and +-0.5 per axis: only the centre is strictly inside
    assert open_sq.sum() == 1
    assert closed_sq.sum() == 9


def test_poisson_symmetry_of_solution():
    mesh = build_mesh(SQUARE, 16)
    pb = SemilinearTracking(mesh, 1e-4, y_d=0.0)
    y = pb.solve_state(np.full(mesh.num_nodes, 5.0))
    grid = y.reshape(17, 17)
    assert np.allclose(grid, grid.T, atol=1e-12)
    assert np.allclose(grid, grid[::-1, ::-1], atol=1e-12)
    lin = LinearTracking(mesh, 1e-4, y_d=0.0)
    assert y.max() < lin.solve_state(np.full(mesh.num_nodes, 5.0)).max()
