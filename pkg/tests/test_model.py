"""Model layer: Fourier blocks, leads, drive builders."""

import numpy as np
import pytest

from floqdot.model import (
    FourierHamiltonian,
    Lead,
    build_circular_model,
    build_cosine_model,
    build_spinful_model,
    fermi,
    hamiltonian_at_time,
)


def test_fermi_limits():
    assert fermi(-50.0, 0.0, 0.01) == pytest.approx(1.0, abs=1e-12)
    assert fermi(50.0, 0.0, 0.01) == pytest.approx(0.0, abs=1e-12)
    assert fermi(0.3, 0.3, 0.0036) == pytest.approx(0.5, abs=1e-14)


def test_fermi_overflow_clamped():
    with np.errstate(over="raise"):
        assert fermi(1e6, 0.0, 0.001) < 1e-200
        assert fermi(-1e6, 0.0, 0.001) == pytest.approx(1.0, abs=1e-15)


def test_fermi_rejects_bad_temperature():
    with pytest.raises(ValueError):
        fermi(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        fermi(0.0, 0.0, -1.0)


def test_fermi_array_shape():
    e = np.linspace(-1, 1, 7)
    out = fermi(e, 0.1, 0.05)
    assert out.shape == e.shape
    assert np.all(np.diff(out) < 0)


def test_fourier_hamiltonian_validation():
    eye = np.eye(2)
    with pytest.raises(ValueError):
        FourierHamiltonian(dim=2, omega=-0.1, blocks={0: eye})
    with pytest.raises(ValueError):
        FourierHamiltonian(dim=2, omega=0.2, blocks={0: np.ones((2, 3))})
    # conjugate pair violating h^(-n) = adjoint(h^(n))
    with pytest.raises(ValueError):
        FourierHamiltonian(
            dim=2, omega=0.2,
            blocks={0: eye, 1: eye, -1: 2.0 * eye},
        )


def test_fourier_hamiltonian_block_access():
    m = build_cosine_model(-0.1, 0.1, 0.1, 0.2)
    assert m.cutoff == 1
    assert np.allclose(m.block(1), 0.05 * np.array([[0, 1], [1, 0]]))
    assert np.allclose(m.block(5), 0.0)
    np.testing.assert_allclose(m.block(-1), m.block(1).conj().T)


def test_cosine_model_time_dependence():
    a, w = 0.1, 0.2
    m = build_cosine_model(-0.1, 0.1, a, w)
    for t in (0.0, 0.3, 1.7):
        h = hamiltonian_at_time(m, t)
        np.testing.assert_allclose(h, h.conj().T, atol=1e-14)
        assert h[0, 1] == pytest.approx(a * np.cos(w * t), abs=1e-14)
    period = 2.0 * np.pi / w
    np.testing.assert_allclose(
        hamiltonian_at_time(m, 0.4), hamiltonian_at_time(m, 0.4 + period), atol=1e-13
    )


def test_circular_model_chirality():
    a, w = 0.1, 0.2
    for chi in (1, -1):
        m = build_circular_model(-0.1, 0.1, a, w, chirality=chi)
        h = hamiltonian_at_time(m, 0.7)
        expect = a * np.exp(1j * chi * w * 0.7)
        assert h[0, 1] == pytest.approx(expect, abs=1e-14)
        np.testing.assert_allclose(h, h.conj().T, atol=1e-14)
    with pytest.raises(ValueError):
        build_circular_model(-0.1, 0.1, a, w, chirality=2)


def test_lead_validation():
    with pytest.raises(ValueError):
        Lead(gamma=np.array([[1.0, 2.0], [0.0, 1.0]]), mu=0.0, kT=0.01)
    with pytest.raises(ValueError):
        Lead(gamma=-np.eye(2), mu=0.0, kT=0.01)
    with pytest.raises(ValueError):
        Lead(gamma=np.eye(2), mu=0.0, kT=0.0)
    l = Lead(gamma=0.0025 * np.eye(2), mu=0.3, kT=0.0036, name="L")
    assert l.dim == 2
    assert l.occupation(0.3) == pytest.approx(0.5)


def test_spinful_model_shared_cosine_drive():
    sm = build_spinful_model(-0.1, 0.1, 0.1, 0.2, u=0.3)
    assert sm.n_sites == 2
    assert sm.omega == pytest.approx(0.2)
    np.testing.assert_allclose(sm.hubbard_u, [0.3, 0.3])
    for t in (0.0, 0.9):
        np.testing.assert_allclose(
            hamiltonian_at_time(sm.sector("up"), t),
            hamiltonian_at_time(sm.sector("down"), t),
        )


def test_spinful_model_conjugated_circular_drive():
    sm = build_spinful_model(
        -0.1, 0.1, 0.1, 0.2, u=0.1, driving="circular", conjugate_down=True
    )
    hu = hamiltonian_at_time(sm.sector(0), 0.7)
    hd = hamiltonian_at_time(sm.sector(1), 0.7)
    np.testing.assert_allclose(hd, hu.conj(), atol=1e-14)
    assert hu[0, 1] != pytest.approx(hd[0, 1])


def test_spinful_model_rejects_negative_u():
    with pytest.raises(ValueError):
        build_spinful_model(-0.1, 0.1, 0.1, 0.2, u=-0.5)
