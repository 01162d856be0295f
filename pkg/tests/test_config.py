"""Config parsing: grammar, defaults, sources, reference runs, round trip."""

import textwrap

import numpy as np
import pytest

from caginalp_control import (
    ConfigurationError,
    Field,
    Grid,
    SpaceTimeField,
    TimeGrid,
    load_config,
    solve_state,
    write_field_csv,
    write_space_time_csv,
)

MINIMAL = """\
[grid]
n = 9
length = 1.0

[time]
t_final = 0.2

[model]
ell = 0.5
lambda_big = 0.7
chi = 0.3

[solver]
nt = 4
theta0 = zero
phi0 = constant:0.5
sigma0 = constant:1.0
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, MINIMAL))
    assert cfg.grid == Grid(9, 1.0)
    assert cfg.time_grid == TimeGrid(0.2, 4)
    assert cfg.params.ell == 0.5
    assert cfg.params.tau == 0.0
    assert cfg.params.sigma_b == 1.0
    assert np.all(cfg.init.theta0.values == 0.0)
    assert np.all(cfg.init.phi0.values == 0.5)
    assert np.all(cfg.control.values == 0.0)
    assert cfg.cost is None
    assert cfg.admissible is None
    assert cfg.optimizer.max_iters == 100
    assert cfg.optimizer.stationarity_tol == 1e-8
    assert cfg.verify.seed == 1729
    assert cfg.verify.suites is None
    assert cfg.output_dir == str(tmp_path / "out")
    assert cfg.output_slices == (4,)


def test_missing_file_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(str(tmp_path / "absent.cfg"))


def test_nt_and_dt_are_mutually_exclusive(tmp_path):
    both = MINIMAL.replace("nt = 4", "nt = 4\ndt = 0.05")
    with pytest.raises(ConfigurationError, match="exactly one"):
        load_config(_write(tmp_path, both))
    neither = MINIMAL.replace("nt = 4\n", "")
    with pytest.raises(ConfigurationError, match="exactly one"):
        load_config(_write(tmp_path, neither, "neither.cfg"))


def test_dt_must_divide_the_horizon(tmp_path):
    bad = MINIMAL.replace("nt = 4", "dt = 0.03")
    with pytest.raises(ConfigurationError, match="does not divide"):
        load_config(_write(tmp_path, bad))


def test_dt_is_converted_to_steps(tmp_path):
    good = MINIMAL.replace("nt = 4", "dt = 0.05")
    cfg = load_config(_write(tmp_path, good))
    assert cfg.time_grid.nt == 4


def test_unknown_section_and_key_are_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="unknown section"):
        load_config(_write(tmp_path, MINIMAL + "\n[plotting]\nstyle = x\n"))
    with pytest.raises(ConfigurationError, match="unknown key"):
        load_config(_write(tmp_path,
                           MINIMAL.replace("nt = 4", "nt = 4\ncolor = red"),
                           "key.cfg"))


def test_missing_required_key_is_named(tmp_path):
    broken = MINIMAL.replace("ell = 0.5\n", "")
    with pytest.raises(ConfigurationError,
                       match=r"missing required key \[model\].ell"):
        load_config(_write(tmp_path, broken))


def test_missing_required_section_is_named(tmp_path):
    broken = MINIMAL.split("[model]")[0] + "[solver]\nnt = 4\n" \
        "theta0 = zero\nphi0 = zero\nsigma0 = zero\n"
    with pytest.raises(ConfigurationError,
                       match=r"missing required section \[model\]"):
        load_config(_write(tmp_path, broken))


def test_cosine_source_matches_closed_form(tmp_path):
    text = MINIMAL.replace("theta0 = zero",
                           "theta0 = cosine:0.25,2,0.1")
    cfg = load_config(_write(tmp_path, text))
    x = cfg.grid.coords(0)
    expected = 0.1 + 0.25 * np.cos(2 * np.pi * x / 1.0)
    assert np.array_equal(cfg.init.theta0.values, expected)


def test_cosine_source_arity_errors(tmp_path):
    for body in ("cosine:0.25", "cosine:1,2,3,4", "cosine:a,1"):
        text = MINIMAL.replace("theta0 = zero", f"theta0 = {body}")
        with pytest.raises(ConfigurationError, match=r"\[solver\].theta0"):
            load_config(_write(tmp_path, text, f"{len(body)}.cfg"))


def test_file_source_round_trips(tmp_path):
    grid = Grid(9, 1.0)
    rng = np.random.default_rng(3)
    field = Field(grid, rng.normal(size=grid.shape))
    csv_path = tmp_path / "theta0.csv"
    write_field_csv(field, str(csv_path))
    text = MINIMAL.replace("theta0 = zero", "theta0 = file:theta0.csv")
    cfg = load_config(_write(tmp_path, text))
    assert np.array_equal(cfg.init.theta0.values, field.values)


def test_file_source_grid_mismatch(tmp_path):
    other = Grid(7, 1.0)
    field = Field(other, np.zeros(other.shape))
    write_field_csv(field, str(tmp_path / "theta0.csv"))
    text = MINIMAL.replace("theta0 = zero", "theta0 = file:theta0.csv")
    with pytest.raises(ConfigurationError, match="does not match"):
        load_config(_write(tmp_path, text))


def test_space_time_file_source_round_trips(tmp_path):
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 4)
    rng = np.random.default_rng(5)
    control = SpaceTimeField(
        time_grid, grid, rng.normal(size=(5,) + grid.shape))
    write_space_time_csv(control, str(tmp_path / "u.csv"))
    text = MINIMAL.replace("sigma0 = constant:1.0",
                           "sigma0 = constant:1.0\ncontrol = file:u.csv")
    cfg = load_config(_write(tmp_path, text))
    assert np.array_equal(cfg.control.values, control.values)


def test_unrecognized_source_is_rejected(tmp_path):
    text = MINIMAL.replace("theta0 = zero", "theta0 = gaussian:1.0")
    with pytest.raises(ConfigurationError, match="unrecognized"):
        load_config(_write(tmp_path, text))


def test_reference_run_only_valid_for_targets(tmp_path):
    ref_path = _write(tmp_path, MINIMAL, "ref.cfg")
    text = MINIMAL.replace("theta0 = zero",
                           "theta0 = from_reference_run:ref.cfg")
    with pytest.raises(ConfigurationError, match="tracking targets"):
        load_config(_write(tmp_path, text))
    assert ref_path  # the reference itself stays untouched


def test_reference_run_builds_targets(tmp_path):
    _write(tmp_path, MINIMAL, "ref.cfg")
    text = MINIMAL + textwrap.dedent("""\

        [cost]
        b1 = 1.0
        b5 = 0.5
        theta_q = from_reference_run:ref.cfg
        phi_omega = from_reference_run:ref.cfg

        [admissible]
        u_min = -1.0
        u_max = 1.0
        """)
    cfg = load_config(_write(tmp_path, text))
    ref = load_config(str(tmp_path / "ref.cfg"))
    traj = solve_state(ref.init, ref.control, ref.solver, ref.params,
                       ref.nonlinearities, ref.potential)
    expected = traj.field_array("theta")
    got = cfg.cost.theta_q.values.reshape(expected.shape)
    assert np.array_equal(got, expected)
    assert np.array_equal(cfg.cost.phi_omega.flat,
                          traj.field_array("phi")[-1])


def test_reference_run_cycle_is_detected(tmp_path):
    text = MINIMAL + textwrap.dedent("""\

        [cost]
        b1 = 1.0
        theta_q = from_reference_run:loop.cfg

        [admissible]
        u_min = -1.0
        u_max = 1.0
        """)
    with pytest.raises(ConfigurationError, match="cycle"):
        load_config(_write(tmp_path, text, "loop.cfg"))


def test_reference_run_grid_mismatch(tmp_path):
    _write(tmp_path, MINIMAL.replace("n = 9", "n = 7"), "ref.cfg")
    text = MINIMAL + textwrap.dedent("""\

        [cost]
        b1 = 1.0
        theta_q = from_reference_run:ref.cfg

        [admissible]
        u_min = -1.0
        u_max = 1.0
        """)
    with pytest.raises(ConfigurationError, match="does not match"):
        load_config(_write(tmp_path, text))


def test_sigma_b_space_time_file(tmp_path):
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 4)
    values = np.linspace(0.5, 1.5, 5)[:, None] * np.ones((1,) + grid.shape)
    supply = SpaceTimeField(time_grid, grid, values)
    write_space_time_csv(supply, str(tmp_path / "supply.csv"))
    text = MINIMAL.replace("chi = 0.3", "chi = 0.3\nsigma_b = supply.csv")
    cfg = load_config(_write(tmp_path, text))
    assert np.array_equal(cfg.params.sigma_b.values, supply.values)


def test_sigma_b_bad_file_is_a_config_error(tmp_path):
    text = MINIMAL.replace("chi = 0.3", "chi = 0.3\nsigma_b = missing.csv")
    with pytest.raises(ConfigurationError, match="could not read"):
        load_config(_write(tmp_path, text))


def test_custom_nonlinearity_file(tmp_path):
    (tmp_path / "gates.py").write_text(textwrap.dedent("""\
        import numpy as np

        from caginalp_control import Nonlinearities


        def make_nonlinearities():
            return Nonlinearities(
                H_gate=lambda s: 0.5 * (1.0 + np.tanh(4.0 * np.asarray(s))),
                H_gate_prime=lambda s: 2.0 / np.cosh(
                    4.0 * np.asarray(s)) ** 2,
                H_gate_second=lambda s: -16.0 * np.tanh(4.0 * np.asarray(s))
                / np.cosh(4.0 * np.asarray(s)) ** 2 / 2.0,
                K_temp=lambda s: 0.5 * (1.0 + np.tanh(np.asarray(s))),
                K_temp_prime=lambda s: 0.5 / np.cosh(np.asarray(s)) ** 2,
                K_temp_second=lambda s: -np.tanh(np.asarray(s))
                / np.cosh(np.asarray(s)) ** 2,
            )
        """))
    text = MINIMAL.replace("chi = 0.3",
                           "chi = 0.3\nnonlinearity = custom:gates.py")
    cfg = load_config(_write(tmp_path, text))
    assert cfg.nonlinearities.H_gate(0.0) == 0.5
    assert cfg.nonlinearities.H_gate(1.0) == pytest.approx(
        0.5 * (1.0 + np.tanh(4.0)))


def test_custom_nonlinearity_missing_factory(tmp_path):
    (tmp_path / "gates.py").write_text("x = 1\n")
    text = MINIMAL.replace("chi = 0.3",
                           "chi = 0.3\nnonlinearity = custom:gates.py")
    with pytest.raises(ConfigurationError,
                       match="must define make_nonlinearities"):
        load_config(_write(tmp_path, text))


def test_only_quartic_potential_is_available(tmp_path):
    text = MINIMAL.replace("chi = 0.3", "chi = 0.3\npotential = sextic")
    with pytest.raises(ConfigurationError, match="quartic"):
        load_config(_write(tmp_path, text))


def test_verify_problem_requires_cost_and_admissible(tmp_path):
    cfg = load_config(_write(tmp_path, MINIMAL))
    with pytest.raises(ConfigurationError, match=r"\[cost\]"):
        cfg.verify_problem()


def test_output_slices_parsing_and_bounds(tmp_path):
    text = MINIMAL + "\n[output]\nslices = 0, 2, 4\n"
    cfg = load_config(_write(tmp_path, text))
    assert cfg.output_slices == (0, 2, 4)
    bad = MINIMAL + "\n[output]\nslices = 5\n"
    with pytest.raises(ConfigurationError, match="outside"):
        load_config(_write(tmp_path, bad, "bad.cfg"))


def test_effective_config_round_trips_bitwise(tmp_path):
    text = MINIMAL.replace("theta0 = zero",
                           "theta0 = cosine:0.05,1") + textwrap.dedent("""\

        [cost]
        b1 = 1.0
        b5 = 0.5
        theta_q = constant:0.1

        [admissible]
        u_min = -1.0
        u_max = 1.0
        """)
    first = load_config(_write(tmp_path, text))
    emitted = first.effective_config()
    second = load_config(_write(tmp_path, emitted, "effective.cfg"))
    assert second.grid == first.grid
    assert second.time_grid == first.time_grid
    assert second.params == first.params
    assert np.array_equal(second.init.theta0.values,
                          first.init.theta0.values)
    assert np.array_equal(second.control.values, first.control.values)
    assert np.array_equal(second.cost.theta_q.values,
                          first.cost.theta_q.values)
    assert second.cost.b1 == first.cost.b1
    assert second.admissible == first.admissible
    assert second.optimizer == first.optimizer
    assert second.verify.seed == first.verify.seed
    assert second.output_slices == first.output_slices
    # The effective text is explicit: defaults appear as concrete keys.
    assert "stabilization_s" in emitted
    assert "nt = 4" in emitted
    assert "dt" not in emitted.split("[solver]")[1].split("[")[0].replace(
        "dt = ", "dt_absent")


def test_shipped_desk_config_loads(tmp_path):
    cfg = load_config("configs/desk.cfg")
    problem = cfg.verify_problem()
    assert problem.grid == Grid(33, 2.0)
    assert problem.time_grid == TimeGrid(0.5, 50)
    assert problem.cost.b5 == 0.5
