import numpy as np
import pytest

from tfmbe.spectral import SpectralGrid


@pytest.fixture(scope="module")
def g16():
    return SpectralGrid(16)


def band_limited(grid, rng, kmax=4):
    """Random real field with modes only up to kmax in each direction."""
    u = np.zeros((grid.M, grid.M))
    for _ in range(6):
        a, b = rng.integers(-kmax, kmax + 1, size=2)
        u += rng.standard_normal() * np.cos(a * grid.X + b * grid.Y + rng.uniform(0, 7))
    return u


def test_grad_resolved_modes(g16):
    ux, uy = g16.grad(np.sin(g16.X))
    assert np.abs(ux - np.cos(g16.X)).max() < 1e-12
    assert np.abs(uy).max() < 1e-12


def test_grad_constant_is_zero(g16):
    ux, uy = g16.grad(np.full((16, 16), 2.5))
    assert np.abs(ux).max() < 1e-13 and np.abs(uy).max() < 1e-13


def test_grad_analytic_oracle(g16):
    u = np.sin(3 * g16.X) * np.sin(2 * g16.Y)
    ux, uy = g16.grad(u)
    assert np.abs(ux - 3 * np.cos(3 * g16.X) * np.sin(2 * g16.Y)).max() < 1e-12
    assert np.abs(uy - 2 * np.sin(3 * g16.X) * np.cos(2 * g16.Y)).max() < 1e-12


def test_laplacian_eigenfunction(g16):
    s = np.sin(g16.X) * np.sin(g16.Y)
    assert np.abs(g16.laplacian(s) + 2 * s).max() < 1e-12
    assert np.abs(g16.bilaplacian(s) - 4 * s).max() < 1e-12


def test_bilaplacian_is_laplacian_squared(g16):
    rng = np.random.default_rng(3)
    u = band_limited(g16, rng)
    assert np.abs(g16.bilaplacian(u) - g16.laplacian(g16.laplacian(u))).max() < 1e-11


def test_div_grad_is_laplacian(g16):
    rng = np.random.default_rng(4)
    u = band_limited(g16, rng)
    ux, uy = g16.grad(u)
    assert np.abs(g16.div(ux, uy) - g16.laplacian(u)).max() < 1e-11


def test_operators_linear_and_commuting(g16):
    rng = np.random.default_rng(5)
    u, v = band_limited(g16, rng), band_limited(g16, rng)
    a, b = 0.7, -1.9
    assert np.abs(g16.laplacian(a * u + b * v)
                  - a * g16.laplacian(u) - b * g16.laplacian(v)).max() < 1e-11
    lx, _ = g16.grad(g16.laplacian(u))
    xl = g16.laplacian(g16.grad(u)[0])
    assert np.abs(lx - xl).max() < 1e-11


def test_inner_constant(g16):
    one = np.ones((16, 16))
    assert g16.inner(one, one) == pytest.approx(g16.L**2, rel=1e-14)
    assert g16.volume == pytest.approx((2 * np.pi) ** 2)


def test_norm_sin(g16):
    # integral of sin^2 over the box is L^2/2, exact under grid quadrature
    u = np.sin(g16.X)
    assert g16.norm(u) ** 2 == pytest.approx(g16.L**2 / 2, rel=1e-12)


def test_parseval(g16):
    rng = np.random.default_rng(6)
    u = band_limited(g16, rng)
    assert g16.hat_norm(g16.fft(u)) == pytest.approx(g16.norm(u), rel=1e-12)


def test_norms_dict(g16):
    u = np.sin(g16.X) * np.sin(g16.Y)
    n = g16.norms(u, p=4)
    l2sq = g16.L**2 / 4
    assert n["l2"] ** 2 == pytest.approx(l2sq, rel=1e-12)
    assert n["h1"] ** 2 == pytest.approx(l2sq + 2 * l2sq, rel=1e-12)
    assert n["h2"] ** 2 == pytest.approx(l2sq + 2 * l2sq + 4 * l2sq, rel=1e-12)
    # lp oracle by direct summation
    assert n["lp"] == pytest.approx((g16.h**2 * np.sum(u**4)) ** 0.25, rel=1e-13)


def test_greens_formulas():
    g = SpectralGrid(32)
    rng = np.random.default_rng(7)
    u, v = band_limited(g, rng), band_limited(g, rng)
    ux, uy = g.grad(u)
    vx, vy = g.grad(v)
    lhs = g.inner(-g.laplacian(u), v)
    rhs = g.inner(ux, vx) + g.inner(uy, vy)
    assert lhs == pytest.approx(rhs, rel=1e-10)
    assert g.inner(g.bilaplacian(u), v) == pytest.approx(
        g.inner(g.laplacian(u), g.laplacian(v)), rel=1e-10)


def test_transform_roundtrip(g16):
    rng = np.random.default_rng(8)
    u = rng.standard_normal((16, 16))
    assert np.abs(g16.ifft(g16.fft(u)) - u).max() < 1e-13


def test_nyquist_mode_handling():
    g = SpectralGrid(8)
    u = np.cos((g.M // 2) * g.X)  # pure Nyquist column
    ux, _ = g.grad(u)
    assert np.abs(ux).max() < 1e-12  # odd derivative zeroed
    assert np.abs(g.laplacian(u) + (g.M // 2) ** 2 * u).max() < 1e-11  # even kept


def test_project_initial():
    g = SpectralGrid(128)
    f = g.project_initial(lambda x, y: 0.1 * (np.sin(3 * x) * np.sin(2 * y)
                                              + np.sin(5 * x) * np.sin(5 * y)))
    assert np.array_equal(f, 0.1 * (np.sin(3 * g.X) * np.sin(2 * g.Y)
                                    + np.sin(5 * g.X) * np.sin(5 * g.Y)))
    s = g.project_initial(lambda x, y: np.sin(x) * np.sin(y))
    assert np.array_equal(s, np.sin(g.X) * np.sin(g.Y))
    c = g.project_initial(lambda x, y: 3.0)
    assert np.all(c == 3.0)
    with pytest.raises(ValueError):
        g.project_initial(lambda x, y: x / (y - y))


def test_grid_validation():
    with pytest.raises(ValueError):
        SpectralGrid(7)
    with pytest.raises(ValueError):
        SpectralGrid(2)
    g = SpectralGrid(16)
    with pytest.raises(ValueError):
        g.inner(np.ones((8, 8)), np.ones((8, 8)))


def test_dealias_flag():
    g = SpectralGrid(16, dealias=True)
    rng = np.random.default_rng(9)
    u = band_limited(g, rng, kmax=2)
    ux, uy = g.grad(u)
    # low modes untouched by the 2/3 mask
    ref = SpectralGrid(16)
    assert np.abs(g.div(ux, uy) - ref.div(ux, uy)).max() < 1e-11
    # content beyond the mask is removed
    hi = np.cos(7 * g.X)
    assert np.abs(g.div(hi, np.zeros_like(hi))).max() < 1e-12
