import numpy as np
import pytest

from dwmelt import (
    AnnihilationError,
    CouplingSet,
    DenseState,
    GroundStateConfig,
    KrylovConfig,
    MPSState,
    ObserverSchedule,
    ParameterError,
    Preparation,
    SiteBasis,
    SymmetrySector,
    UnsupportedBasisError,
    apply_defects,
    apply_hole,
    apply_spin_flip,
    boson_cutoff_check,
    build_bh,
    build_xxz,
    density_profile,
    domain_wall,
    energy,
    evolve_trajectory,
    magnetization_profile,
    product_state,
    to_dense,
    to_mps,
)
from dwmelt._states import prepare_bh_ground


@pytest.mark.parametrize("representation", ["dense", "mps"])
def test_domain_wall(representation: str):
    wall = domain_wall(SiteBasis.tj(), 6, representation)  # type: ignore[arg-type]
    cls = DenseState if representation == "dense" else MPSState
    assert isinstance(wall, cls)
    assert wall.sector == SymmetrySector(3, 3)
    assert np.allclose(magnetization_profile(wall), [0.5] * 3 + [-0.5] * 3)

    with pytest.raises(ParameterError, match="even"):
        domain_wall(SiteBasis.tj(), 5)


def test_product_state_labels():
    basis = SiteBasis.boson2(2)
    psi = product_state(basis, ["up", "hole", "(2,1)", "down"], "dense")
    assert psi.sector == SymmetrySector(3, 2)
    assert np.allclose(density_profile(psi), [1, 0, 3, 1])

    # Raw indices work too
    tj = product_state(SiteBasis.tj(), [1, 0, 2])
    assert tj.sector == SymmetrySector(1, 1)


@pytest.mark.parametrize("representation", ["dense", "mps"])
def test_apply_hole(representation: str):
    wall = domain_wall(SiteBasis.tj(), 6, representation)  # type: ignore[arg-type]
    holed = apply_hole(wall, 1)
    assert holed.sector == SymmetrySector(2, 3)
    assert np.allclose(magnetization_profile(holed), [0.5, 0, 0.5, -0.5, -0.5, -0.5])
    assert np.allclose(density_profile(holed), [1, 0, 1, 1, 1, 1])

    with pytest.raises(AnnihilationError, match="site 1"):
        apply_hole(holed, 1)
    # No up boson on the right half
    with pytest.raises(AnnihilationError):
        apply_hole(wall, 4)
    assert apply_hole(wall, 4, species="down").sector == SymmetrySector(3, 2)


@pytest.mark.parametrize("representation", ["dense", "mps"])
def test_apply_spin_flip(representation: str):
    wall = domain_wall(SiteBasis.tj(), 6, representation)  # type: ignore[arg-type]
    flipped = apply_spin_flip(wall, 2)
    assert flipped.sector == SymmetrySector(2, 4)
    assert np.allclose(magnetization_profile(flipped), [0.5, 0.5] + [-0.5] * 4)

    with pytest.raises(AnnihilationError):
        apply_spin_flip(wall, 3)


def test_holes_on_bosons():
    wall = domain_wall(SiteBasis.boson2(2), 4, "dense")
    holed = apply_hole(wall, 0)
    assert holed.sector == SymmetrySector(1, 2)
    assert np.allclose(density_profile(holed), [0, 1, 1, 1])


def test_holes_need_an_empty_state():
    wall = domain_wall(SiteBasis.spin_half(), 4)
    with pytest.raises(UnsupportedBasisError):
        apply_hole(wall, 1)
    with pytest.raises(ParameterError):
        apply_hole(domain_wall(SiteBasis.tj(), 4), 1, species="left")
    with pytest.raises(ParameterError, match="out of range"):
        apply_spin_flip(wall, 4)


def test_apply_defects():
    wall = domain_wall(SiteBasis.tj(), 8)
    state = apply_defects(wall, [("hole", 1), ("flip", 2)])
    assert np.allclose(
        magnetization_profile(state), [0.5, 0, -0.5, 0.5, -0.5, -0.5, -0.5, -0.5]
    )
    with pytest.raises(ParameterError, match="`twist`"):
        apply_defects(wall, [("twist", 1)])


def test_representation_conversion():
    wall = apply_hole(domain_wall(SiteBasis.tj(), 6, "dense"), 2)
    assert isinstance(wall, DenseState)
    mps = to_mps(wall)
    assert isinstance(mps, MPSState)
    assert to_mps(mps) is mps
    back = to_dense(mps)
    assert back.sector == wall.sector
    assert np.allclose(back.amplitudes, wall.amplitudes)
    assert to_dense(back) is back


def test_prepare_bh_ground_dense():
    c = CouplingSet()
    H = build_bh(4, c, n_max=2, prep=Preparation(mu=10.0))
    ground = prepare_bh_ground(H)
    assert isinstance(ground, DenseState)
    assert ground.sector == SymmetrySector(2, 2)
    assert ground.norm == pytest.approx(1.0)

    M = H.sector_matrix(ground.sector).toarray()
    exact = np.linalg.eigvalsh(M)[0]
    assert energy(ground, H) == pytest.approx(exact)

    # A strong potential pins a wall
    sz = magnetization_profile(ground)
    assert sz[0] > 0.4 and sz[-1] < -0.4
    assert np.allclose(sz, -sz[::-1], atol=1e-8)

    with pytest.raises(UnsupportedBasisError):
        prepare_bh_ground(build_xxz(4, 1.0, 1.0))
    with pytest.raises(ParameterError, match="`annealed`"):
        prepare_bh_ground(H, method="annealed")  # type: ignore[arg-type]


def test_prepare_bh_ground_variational():
    c = CouplingSet()
    H = build_bh(4, c, n_max=2, prep=Preparation(mu=10.0))
    dense = prepare_bh_ground(H)
    variational = prepare_bh_ground(
        H, method="variational", config=GroundStateConfig(max_sweeps=30)
    )
    assert isinstance(variational, MPSState)
    assert energy(variational, H) == pytest.approx(energy(dense, H), abs=1e-8)
    assert np.allclose(
        magnetization_profile(variational), magnetization_profile(dense), atol=1e-6
    )

    with pytest.raises(ParameterError, match="n_up \\+ n_down = L"):
        prepare_bh_ground(H, SymmetrySector(2, 1), method="variational")


def test_boson_cutoff_check():
    report = boson_cutoff_check(CouplingSet(), 4, (2, 3))
    assert set(report) == {"sz_profile", "density", "energy"}
    # Two bosons per species never reach a third level
    assert report["sz_profile"] < 1e-2
    assert report["density"] < 1e-2
    assert 0 <= report["energy"] < 1e-2


def test_prepared_ground_state_is_stationary():
    H = build_bh(6, CouplingSet(), n_max=2, prep=Preparation(mu=10.0))
    ground = prepare_bh_ground(H)
    schedule = ObserverSchedule(keys=("sz_profile", "density"), stride=25)
    record = evolve_trajectory(ground, H, KrylovConfig.for_model("bh_prep"), 1.0, schedule)
    assert record.complete
    assert record.times[-1] == pytest.approx(1.0)
    for key in ("sz_profile", "density"):
        start = record.at(0.0, key)
        for t in record.times[1:]:
            assert np.allclose(record.at(t, key), start, atol=1e-8)


@pytest.mark.slow
def test_prepared_wall_at_eight_sites():
    H = build_bh(8, CouplingSet(), n_max=2, prep=Preparation(mu=10.0))
    dense = prepare_bh_ground(H)
    assert isinstance(dense, DenseState)
    assert dense.sector == SymmetrySector(4, 4)

    wall = domain_wall(H.basis, 8, "dense")
    assert isinstance(wall, DenseState)
    assert abs(np.vdot(wall.amplitudes, dense.amplitudes)) ** 2 > 0.9

    variational = prepare_bh_ground(
        H, method="variational", config=GroundStateConfig(max_sweeps=30)
    )
    assert energy(variational, H) == pytest.approx(energy(dense, H), abs=1e-8)
