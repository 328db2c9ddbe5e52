import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcsb import glass
from qcsb.glass import K_B, GlassMaterial, TlsMicro

SILICA = glass.silica()


def test_material_loading_and_validation(tmp_path):
    assert SILICA.gamma_L == pytest.approx(1.6 * glass.EV)
    assert SILICA.name == "vitreous silica"
    good = dict(Pbar=1e44, gamma_L=1e-19, gamma_T=1e-19, v_L=5000, v_T=3000, rho=2000)
    assert GlassMaterial.from_mapping(good).Pbar == 1e44
    with pytest.raises(ValueError, match="unknown"):
        GlassMaterial.from_mapping(dict(good, colour="blue"))
    with pytest.raises(ValueError, match="missing"):
        GlassMaterial.from_mapping({k: v for k, v in good.items() if k != "rho"})
    with pytest.raises(ValueError):
        GlassMaterial.from_mapping(dict(good, v_T=-1))
    with pytest.raises(ValueError):
        GlassMaterial.from_mapping(dict(good, gamma_unit="erg"))
    f = tmp_path / "m.yaml"
    f.write_text("Pbar: 1.0e44\ngamma_L: 1.0\ngamma_T: 0.5\ngamma_unit: eV\nv_L: 5000\nv_T: 3000\nrho: 2000\n")
    assert GlassMaterial.from_file(f).gamma_T == pytest.approx(0.5 * glass.EV)


def test_map_tls_to_qcsb():
    sym = glass.map_tls_to_qcsb(TlsMicro(0.0, 2.0, 1.5))
    assert sym.g_z == 0 and sym.g_x == pytest.approx(-1.5)
    frozen = glass.map_tls_to_qcsb(TlsMicro(1.0, 1e-12, 1.0))
    assert abs(frozen.g_x) < 1e-11
    c = glass.map_tls_to_qcsb(TlsMicro(1.0, 1.0, 1.0))
    assert c.eps == pytest.approx(math.sqrt(2))
    assert c.g_x == pytest.approx(-1 / math.sqrt(2))
    assert c.spring_weight == pytest.approx(1.41421, abs=1e-5)
    with pytest.raises(ValueError):
        TlsMicro(1.0, 0.0, 1.0)


def test_relaxation_rate():
    eps, T = 0.7 * K_B, 0.5
    assert glass.tls_relaxation_rate(SILICA, eps, eps, T) == pytest.approx(glass.gamma_max(SILICA, eps, T), rel=1e-14)
    full = glass.tls_relaxation_rate(SILICA, eps, 0.4 * eps, T)
    assert glass.tls_relaxation_rate(SILICA, eps, 0.2 * eps, T) == pytest.approx(full / 4, rel=1e-14)
    with pytest.raises(ValueError):
        glass.tls_relaxation_rate(SILICA, eps, 1.1 * eps, T)
    with pytest.raises(ValueError):
        glass.tls_relaxation_rate(SILICA, eps, eps, 0.0)


@given(eps_k=st.floats(1e-4, 2.0), frac=st.floats(1e-3, 1.0), T=st.floats(1e-3, 2.0))
@settings(max_examples=60, deadline=None)
def test_gamma_max_is_maximal(eps_k, frac, T):
    eps = eps_k * K_B
    assert glass.tls_relaxation_rate(SILICA, eps, frac * eps, T) <= glass.gamma_max(SILICA, eps, T) * (1 + 1e-14)


def test_boundary_calibration():
    b = glass.boundary_frequency(SILICA, 1.0)
    assert 2.86e8 / 2 <= b <= 2.86e8 * 2
    # Gamma_max(k_B T, T) scales exactly as T^3
    np.testing.assert_allclose(glass.boundary_frequency(SILICA, np.array([0.1, 0.5])), b * np.array([1e-3, 0.125]),
                               rtol=1e-12)


def test_eps_min():
    T = 1.0
    top = glass.boundary_frequency(SILICA, T)
    assert glass.eps_min(SILICA, top * 1.0000001, T) is None
    assert glass.eps_min(SILICA, top * (1 - 1e-10), T) == pytest.approx(K_B * T, rel=1e-8)
    small = [glass.eps_min(SILICA, w, T) for w in (1e-2, 1e-6, 1e-10)]
    assert small[0] > small[1] > small[2] > 0
    e = glass.eps_min(SILICA, 2.86e5, T)
    assert glass.gamma_max(SILICA, e, T) == pytest.approx(2.86e5, rel=1e-11)
    # coth makes Gamma_max quadratic in eps for eps << k_B T:
    # Gamma_max(x k_B T) ~ Gamma_max(k_B T) 2 x^2 / coth(1/2)
    x_asym = math.sqrt(2.86e5 * (1 / math.tanh(0.5)) / (2 * top))
    assert e / (K_B * T) == pytest.approx(x_asym, rel=0.03)
    with pytest.raises(ValueError):
        glass.eps_min(SILICA, -1.0, T)


def test_weights():
    assert glass.entropic_weight(0.0) == 0.0
    assert glass.entropic_weight(1.0) == pytest.approx(math.e / (1 + math.e) ** 2)
    assert glass.entropic_weight(800.0) == pytest.approx(800 * math.exp(-800), rel=1e-12, abs=0)
    assert glass.softening_weight(1.0) == pytest.approx(0.5 * math.tanh(0.5))


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@given(ratio=st.floats(1e-9, 0.999999))
@settings(max_examples=40, deadline=None)
def test_inner_integral_and_tls_count_closed_forms(ratio):
    gmax = 1e8
    wp = ratio * gmax
    assert glass.inner_gamma_integral_quad(wp, gmax) == pytest.approx(glass.inner_gamma_integral(wp, gmax), rel=1e-8)
    assert glass.tls_count_quad(SILICA, wp, gmax) == pytest.approx(glass.tls_count(SILICA, wp, gmax), rel=1e-8)


def test_empty_domain_is_zero():
    T = 0.3
    top = glass.boundary_frequency(SILICA, T)
    assert glass.rs_integral(SILICA, top * 1.001, T) == 0.0
    assert glass.rs_integral(SILICA, top * 100, T) == 0.0
    assert glass.inner_gamma_integral(2.0, 1.0) == 0.0 and glass.tls_count(SILICA, 2.0, 1.0) == 0.0


def test_continuity_at_boundary():
    T = 0.5
    top = glass.boundary_frequency(SILICA, T)
    vals = [glass.rs_integral(SILICA, top * (1 - d), T) for d in (1e-2, 1e-4, 1e-6)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] < 1e-3 * vals[0]


def test_closed_form_matches_direct_2d_quadrature():
    rng = np.random.default_rng(7)
    for _ in range(10):
        T = 10 ** rng.uniform(-2, 0)
        wp = glass.boundary_frequency(SILICA, T) * 10 ** rng.uniform(-5, -0.01)
        fast = glass.rs_sums(SILICA, wp, T, epsrel=1e-10).numerator
        slow = glass.rs_numerator_direct(SILICA, wp, T)
        assert slow == pytest.approx(fast, rel=1e-6)


def test_rs_depends_on_omega_over_T_cubed():
    a = glass.rs_integral(SILICA, 1e6, 0.2)
    b = glass.rs_integral(SILICA, 1e6 * 8, 0.4)
    assert b == pytest.approx(a, rel=1e-7)


def test_rs_monotone_in_frequency():
    for T in (0.05, 0.2, 1.0):
        freqs = np.geomspace(1e4, glass.boundary_frequency(SILICA, T) * 0.99, 12)
        vals = [glass.rs_integral(SILICA, w, T) for w in freqs]
        assert np.all(np.diff(vals) < 0)


def test_instability_is_reported():
    soft = GlassMaterial(Pbar=1e50, gamma_L=SILICA.gamma_L, gamma_T=SILICA.gamma_T, v_L=SILICA.v_L,
                         v_T=SILICA.v_T, rho=SILICA.rho)
    assert glass.rs_sums(soft, 1e3, 1.0).denominator > 1
    with pytest.raises(glass.InstabilityError):
        glass.rs_integral(soft, 1e3, 1.0)


def test_rs_grid_small():
    g = glass.rs_grid(SILICA, (1e5, 1e10), (0.01, 1.0), (6, 5))
    assert g.values.shape == (5, 6)
    assert g.computed_fraction == 1.0
    above = g.freqs[None, :] >= g.boundary[:, None]
    assert np.all(g.values[above] == 0)
    assert np.all(g.values[~above] > 0)
    with pytest.raises(ValueError):
        glass.rs_grid(SILICA, (0, 1e10), (0.01, 1.0), (3, 3))


def test_rs_grid_flags_failing_cells():
    soft = GlassMaterial(Pbar=1e50, gamma_L=SILICA.gamma_L, gamma_T=SILICA.gamma_T, v_L=SILICA.v_L,
                         v_T=SILICA.v_T, rho=SILICA.rho)
    g = glass.rs_grid(soft, (1e3, 1e4), (0.5, 1.0), (2, 2))
    assert g.computed_fraction == 0.0
    assert set(g.flags.ravel()) == {"InstabilityError"}
    assert len(g.messages) == 4 and np.all(np.isnan(g.values))
