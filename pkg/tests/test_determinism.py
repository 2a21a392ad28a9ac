import numpy as np

from spacetime_carreau.kkt import _split, _stack, assemble_kkt_jacobian, assemble_kkt_residual, solve_kkt
from spacetime_carreau.model import assemble_state_jacobian

from conftest import small_problem


def test_serial_reruns_are_bitwise_identical():
    a = solve_kkt(small_problem(d=2, N=6))
    b = solve_kkt(small_problem(d=2, N=6))
    for name in ("y", "p", "u"):
        assert getattr(a, name).values.tobytes() == getattr(b, name).values.tobytes()
    assert a.stats.residual_norms == b.stats.residual_norms


def test_parallel_assembly_agrees_with_serial(rng):
    serial, parallel = small_problem(d=2, N=6), small_problem(d=2, N=6, workers=3)
    x = _stack(serial, rng.standard_normal(serial.mesh.n_vertices),
               rng.standard_normal(serial.mesh.n_vertices))
    K1 = assemble_kkt_jacobian(serial, *_split(serial, x))
    K3 = assemble_kkt_jacobian(parallel, *_split(parallel, x))
    assert abs(K1 - K3).max() <= 1e-13 * abs(K1).max()
    r1 = assemble_kkt_residual(serial, *_split(serial, x))
    r3 = assemble_kkt_residual(parallel, *_split(parallel, x))
    assert np.max(np.abs(r1 - r3)) <= 1e-13 * np.max(np.abs(r1))
    y = serial.mesh.vertices[:, 0] ** 2
    B1 = assemble_state_jacobian(serial.mesh, serial.params, y, workers=1)
    B4 = assemble_state_jacobian(serial.mesh, serial.params, y, workers=4)
    assert abs(B1 - B4).max() <= 1e-13 * abs(B1).max()


def test_parallel_solution_close_to_serial():
    a = solve_kkt(small_problem(d=2, N=6))
    b = solve_kkt(small_problem(d=2, N=6, workers=2))
    assert np.max(np.abs(a.u.values - b.u.values)) <= 1e-10 * np.max(np.abs(a.u.values))
