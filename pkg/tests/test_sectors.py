import numpy as np
import pytest

from dwmelt import (
    CouplingSet,
    DenseState,
    ParameterError,
    ShapeError,
    SiteBasis,
    SymmetrySector,
    build_bh,
    build_tj,
    build_xxz,
    domain_wall,
    local_charges,
    local_operator,
    sector_space,
)
from dwmelt._sectors import enumerate_configs


def test_enumerate_configs_order():
    configs = enumerate_configs(SiteBasis.spin_half(), 4, SymmetrySector(2, 2))
    assert configs.dtype == np.int8
    assert configs.tolist() == [
        [0, 0, 1, 1],
        [0, 1, 0, 1],
        [0, 1, 1, 0],
        [1, 0, 0, 1],
        [1, 0, 1, 0],
        [1, 1, 0, 0],
    ]


@pytest.mark.parametrize(
    "basis, L, sector, dim",
    [
        (SiteBasis.spin_half(), 8, SymmetrySector(4, 4), 70),
        (SiteBasis.tj(), 4, SymmetrySector(1, 1), 12),
        (SiteBasis.tj(), 6, SymmetrySector(3, 2), 60),
        # two bosons of each species on three sites, at most two per species and site
        (SiteBasis.boson2(2), 3, SymmetrySector(2, 2), 36),
    ],
)
def test_sector_dims(basis: SiteBasis, L: int, sector: SymmetrySector, dim: int):
    space = sector_space(basis, L, sector)
    assert space.dim == len(space) == dim
    # Every configuration carries the sector's particle numbers
    totals = local_charges(basis)[space.configs].sum(axis=1)
    assert (totals == [sector.n_up, sector.n_down]).all()


def test_empty_sector():
    with pytest.raises(ParameterError):
        sector_space(SiteBasis.tj(), 3, SymmetrySector(3, 1))


def test_find():
    space = sector_space(SiteBasis.tj(), 4, SymmetrySector(2, 1))
    idx = space.find(space.configs[::-1])
    assert idx.tolist() == list(range(space.dim))[::-1]
    # (up, up, up, up) is in another sector
    assert space.find(np.array([1, 1, 1, 1])).tolist() == [-1]
    assert space.find(np.array([[2, 2, 2, 2], [1, 1, 2, 0]])).tolist() == [
        -1,
        space.find(np.array([1, 1, 2, 0]))[0],
    ]


def test_sector_matrix_matches_full_space():
    H = build_tj(4, CouplingSet(t_up=1.0, t_down=0.5, U_up=9, U_down=12, V=10))
    sector = SymmetrySector(2, 1)
    codes = sector_space(H.basis, H.L, sector).full_codes()
    full = H.to_sparse().toarray()
    assert np.allclose(H.sector_matrix(sector).toarray(), full[np.ix_(codes, codes)])


def test_bh_sector_matrix_is_hermitian():
    H = build_bh(4, CouplingSet(), n_max=2)
    M = H.sector_matrix(SymmetrySector(2, 2))
    assert abs(M - M.conj().T).max() < 1e-12


def test_dense_state_basics():
    basis = SiteBasis.spin_half()
    sector = SymmetrySector(2, 2)
    with pytest.raises(ShapeError, match="Expected 6 amplitudes"):
        DenseState(basis, 4, sector, np.ones(5))

    psi = DenseState(basis, 4, sector, np.ones(6))
    assert psi.norm == pytest.approx(np.sqrt(6))
    assert psi.normalized().norm == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        DenseState(basis, 4, sector, np.zeros(6)).normalized()


def test_full_vector_of_wall():
    wall = domain_wall(SiteBasis.tj(), 4, "dense")
    assert isinstance(wall, DenseState)
    up = np.array([0, 1, 0])
    down = np.array([0, 0, 1])
    expected = np.kron(np.kron(up, up), np.kron(down, down))
    assert np.allclose(wall.full_vector(), expected)


def test_dense_expectation():
    basis = SiteBasis.spin_half()
    wall = domain_wall(basis, 4, "dense")
    Sz = local_operator(basis, "Sz")
    Sp = local_operator(basis, "Sp")
    Sm = local_operator(basis, "Sm")
    assert isinstance(wall, DenseState)
    assert wall.expectation([(0, Sz)]) == pytest.approx(0.5)
    assert wall.expectation([(3, Sz)]) == pytest.approx(-0.5)
    assert wall.expectation([(1, Sz), (2, Sz)]) == pytest.approx(-0.25)
    assert wall.expectation([(1, Sp), (2, Sm)]) == pytest.approx(0.0)

    # Singlet on the middle bond
    sector = SymmetrySector(2, 2)
    space = sector_space(basis, 4, sector)
    amps = np.zeros(space.dim, dtype=complex)
    amps[space.find(np.array([0, 0, 1, 1]))] = 1 / np.sqrt(2)
    amps[space.find(np.array([0, 1, 0, 1]))] = -1 / np.sqrt(2)
    singlet = DenseState(basis, 4, sector, amps)
    assert singlet.expectation([(1, Sp), (2, Sm)]) == pytest.approx(-0.5)
    assert singlet.expectation([(1, Sz), (2, Sz)]) == pytest.approx(-0.25)

    with pytest.raises(ShapeError):
        singlet.expectation([(4, Sz)])


def test_schmidt_values():
    basis = SiteBasis.spin_half()
    wall = domain_wall(basis, 6, "dense")
    assert isinstance(wall, DenseState)
    assert np.allclose(wall.schmidt_values(3), [1.0])

    H = build_xxz(6, 1.0, 0.5)
    sector = SymmetrySector(3, 3)
    _, v = np.linalg.eigh(H.sector_matrix(sector).toarray())
    ground = DenseState(basis, 6, sector, v[:, 0])
    full = ground.full_vector().reshape(2**3, 2**3)
    expected = np.linalg.svd(full, compute_uv=False)
    s = ground.schmidt_values(3)
    assert np.allclose(s[: expected.size], expected[: s.size])
    assert np.sum(s**2) == pytest.approx(1.0)

    for bond in (0, 6):
        with pytest.raises(ShapeError):
            ground.schmidt_values(bond)
