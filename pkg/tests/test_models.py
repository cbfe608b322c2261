import dataclasses

import numpy as np
import pytest

from dwmelt import (
    MPO,
    BasisKind,
    CouplingSet,
    HamiltonianRep,
    OperatorLookupError,
    ParameterError,
    Preparation,
    ShapeError,
    SiteBasis,
    SymmetrySector,
    build_bh,
    build_tj,
    build_xxz,
    charge_change,
    effective_couplings,
    local_charges,
    local_operator,
    sector_space,
)
from dwmelt._models import LocalTerm


def test_effective_couplings():
    J_perp, J_z, h = effective_couplings(1, 1, 15, 15, 15)
    assert J_perp == pytest.approx(-4 / 15)
    assert J_z == pytest.approx(-4 / 15)
    assert h == 0
    # Isotropic point is exact, not just close
    assert J_perp == J_z

    J_perp, J_z, h = effective_couplings(1, 0.5, 10, 20, 15)
    assert J_perp == pytest.approx(-4 * 0.5 / 15)
    assert J_z == pytest.approx(2 * 1.25 / 15 - 4 / 10 - 4 * 0.25 / 20)
    assert h == pytest.approx(4 / 10 - 4 * 0.25 / 20)


@pytest.mark.parametrize("bad", [(0, 15, 15), (15, -1, 15), (15, 15, 0)])
def test_effective_couplings_nonpositive(bad: tuple[float, float, float]):
    with pytest.raises(ParameterError, match="positive"):
        effective_couplings(1, 1, *bad)


def test_coupling_set():
    c = CouplingSet()
    assert (c.J_perp, c.J_z, c.h) == effective_couplings(1, 1, 15, 15, 15)
    assert c.delta_V == 0

    # Derived values follow a modified copy
    c2 = dataclasses.replace(c, V=10.0)
    assert c2.J_perp == pytest.approx(-0.4)
    assert c2.delta_V == pytest.approx(5.0)

    iso = CouplingSet.isotropic(t=0.5, U=8)
    assert (iso.t_up, iso.t_down, iso.U_up, iso.U_down, iso.V) == (0.5, 0.5, 8, 8, 8)


def test_site_basis_dims():
    assert SiteBasis.spin_half().dim == 2
    assert SiteBasis.tj().dim == 3
    assert SiteBasis.boson2(2).dim == 9
    assert SiteBasis.boson2(3).dim == 16
    # n_max is only meaningful for bosons
    assert SiteBasis(BasisKind.TJ, 5).n_max == 1
    assert SiteBasis("tj") == SiteBasis.tj()

    with pytest.raises(ParameterError):
        SiteBasis.boson2(0)


def test_site_basis_labels(snapshot):
    assert SiteBasis.tj().labels == ("empty", "up", "down")
    assert SiteBasis.spin_half().index("down") == 1
    b = SiteBasis.boson2(2)
    assert b.index("(1,2)") == 1 * 3 + 2
    assert ", ".join(SiteBasis.boson2(1).labels) == snapshot

    with pytest.raises(OperatorLookupError, match="`sideways`"):
        SiteBasis.spin_half().index("sideways")


def test_local_charges():
    q = local_charges(SiteBasis.boson2(2))
    assert q.shape == (9, 2)
    assert tuple(q[5]) == (1, 2)
    assert not q.flags.writeable


@pytest.mark.parametrize("basis", [SiteBasis.spin_half(), SiteBasis.tj()])
def test_spin_algebra(basis: SiteBasis):
    Sp = local_operator(basis, "Sp")
    Sm = local_operator(basis, "Sm")
    Sz = local_operator(basis, "Sz")
    Sx = local_operator(basis, "Sx")
    Sy = local_operator(basis, "Sy")
    assert np.allclose(Sp @ Sm - Sm @ Sp, 2 * Sz)
    assert np.allclose(Sx @ Sy - Sy @ Sx, 1j * Sz)
    assert np.allclose(Sm, Sp.conj().T)


def test_boson_operators():
    basis = SiteBasis.boson2(2)
    b_up = local_operator(basis, "b_up")
    n_up = local_operator(basis, "n_up")
    assert np.allclose(b_up.conj().T @ b_up, n_up)
    assert np.allclose(
        local_operator(basis, "nn_up"), n_up @ (n_up - np.eye(basis.dim))
    )
    # Sz = (n_up - n_down) / 2 holds exactly on every state
    Sz = local_operator(basis, "Sz")
    assert np.allclose(Sz, 0.5 * (n_up - local_operator(basis, "n_down")))


def test_operator_aliases():
    basis = SiteBasis.tj()
    assert local_operator(basis, "S^+") is local_operator(basis, "Sp")
    assert local_operator(basis, "S^z") is local_operator(basis, "Sz")
    assert local_operator(basis, "n_↑") is local_operator(basis, "n_up")


def test_operator_lookup():
    with pytest.raises(OperatorLookupError, match="`b_up`"):
        local_operator(SiteBasis.tj(), "b_up")
    with pytest.raises(OperatorLookupError):
        local_operator(SiteBasis.spin_half(), "a_up")
    # Also usable as a plain KeyError
    with pytest.raises(KeyError):
        local_operator(SiteBasis.boson2(), "a_down")


def test_operators_are_read_only():
    op = local_operator(SiteBasis.spin_half(), "Sz")
    with pytest.raises(ValueError):
        op[0, 0] = 3.0


def test_charge_change():
    tj = SiteBasis.tj()
    assert charge_change(tj, local_operator(tj, "a_up")) == (-1, 0)
    assert charge_change(tj, local_operator(tj, "Sp")) == (1, -1)
    assert charge_change(tj, local_operator(tj, "Sz")) == (0, 0)
    bos = SiteBasis.boson2()
    assert charge_change(bos, local_operator(bos, "b_up_dag")) == (1, 0)
    assert charge_change(bos, local_operator(bos, "Sx")) is None
    assert charge_change(tj, np.zeros((3, 3))) == (0, 0)


def test_xxz_two_sites():
    H = build_xxz(2, J_perp=1.0, J_z=0.5).to_sparse().toarray()
    expected = np.array(
        [
            [0.125, 0, 0, 0],
            [0, -0.125, 0.5, 0],
            [0, 0.5, -0.125, 0],
            [0, 0, 0, 0.125],
        ]
    )
    assert np.allclose(H, expected)

    with pytest.raises(ParameterError):
        build_xxz(1, 1.0, 1.0)


def test_bh_terms():
    c = CouplingSet()
    H = build_bh(4, c, n_max=2)
    assert H.model == "bh"
    assert len(H.windows(2)) == 12
    assert len(H.windows(1)) == 12

    prepped = build_bh(4, c, n_max=2, prep=Preparation(mu=10.0))
    assert prepped.model == "bh_prep"
    assert len(prepped.windows(1)) == 16
    potentials = [t for t in prepped.windows(1) if t.coef == -10.0]
    assert [t.names for t in potentials] == [("n_up",)] * 2 + [("n_down",)] * 2

    with pytest.raises(ParameterError, match="even"):
        build_bh(5, c, prep=Preparation())


def test_preparation_species():
    with pytest.raises(ParameterError, match="`left`"):
        Preparation(left_species="left")  # type: ignore[arg-type]


@pytest.mark.parametrize(
    "H",
    [
        build_bh(3, CouplingSet(t_up=1.0, t_down=0.7, U_up=12, U_down=9, V=10), n_max=1),
        build_tj(4, CouplingSet(t_up=1.0, t_down=0.7, U_up=12, U_down=9, V=10)),
        build_xxz(5, -0.3, 0.2),
    ],
    ids=["bh", "tj", "xxz"],
)
def test_hamiltonians_are_hermitian(H: HamiltonianRep):
    M = H.to_sparse()
    assert abs(M - M.conj().T).max() < 1e-12


def test_tj_needs_three_sites():
    with pytest.raises(ParameterError):
        build_tj(2, CouplingSet())
    assert build_tj(2, CouplingSet(), include_three_site=False).L == 2


def test_tj_without_holes_is_xxz():
    c = CouplingSet(t_up=1.0, t_down=0.8, U_up=14, U_down=11, V=12)
    L = 6
    sector = SymmetrySector.for_spins(L, 3)
    tj = build_tj(L, c).sector_matrix(sector).toarray()
    xxz = build_xxz(L, c.J_perp, c.J_z).sector_matrix(sector).toarray()
    assert tj.shape == xxz.shape == (20, 20)
    assert np.allclose(tj, xxz)


def test_tj_exchange_switch():
    c = CouplingSet()
    full = build_tj(4, c)
    bare = build_tj(4, c, include_exchange=False, include_three_site=False)
    assert all("Sz" not in t.names for t in bare.terms)
    assert len(full.terms) > len(bare.terms)


def test_symmetry_sector():
    s = SymmetrySector.for_spins(8, 5)
    assert (s.n_up, s.n_down) == (5, 3)
    assert s.magnetization() == 1.0

    with pytest.raises(ParameterError):
        SymmetrySector(-1, 2)
    with pytest.raises(ParameterError, match="empty"):
        SymmetrySector(3, 2).check(SiteBasis.tj(), 4)
    # Hard-core bosons: too few particles is fine, spins must fill every site
    SymmetrySector(1, 1).check(SiteBasis.tj(), 4)
    with pytest.raises(ParameterError):
        SymmetrySector(1, 1).check(SiteBasis.spin_half(), 4)

    assert sector_space(SiteBasis.tj(), 4, SymmetrySector(1, 1)).dim == 12


def test_terms_must_fit():
    basis = SiteBasis.spin_half()
    Sz = local_operator(basis, "Sz")
    term = LocalTerm(2, ("Sz", "Sz"), 1.0, (Sz, Sz))
    with pytest.raises(ShapeError, match="L=3"):
        HamiltonianRep(basis, 3, (term,))


@pytest.mark.parametrize(
    "H",
    [
        build_xxz(4, 0.7, -0.4),
        build_tj(4, CouplingSet(t_up=1.0, t_down=0.6, U_up=10, U_down=13, V=9)),
        build_bh(3, CouplingSet(), n_max=1, prep=None),
    ],
    ids=["xxz", "tj", "bh"],
)
def test_mpo_matches_sparse(H: HamiltonianRep):
    assert isinstance(H.mpo, MPO)
    assert np.allclose(H.mpo.to_dense(), H.to_sparse().toarray())


def test_identity_mpo():
    basis = SiteBasis.tj()
    assert np.allclose(MPO.identity(basis, 3).to_dense(), np.eye(27))
