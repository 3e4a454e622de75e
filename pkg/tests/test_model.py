import json

import numpy as np
import pytest

from lqteam.model import (
    BUILTIN_INSTANCES,
    ConfigError,
    CostSpec,
    InfoPattern,
    MultiAgentInstance,
    NoiseTrace,
    SystemParams,
    classify_scenario,
    instance_from_config,
    instance_to_config,
    instantaneous_cost,
    load_instance,
    make_benchmark_instance,
    make_four_system_benchmark,
    make_tracking_instance,
    make_two_way_benchmark,
    random_instance,
    save_instance,
    step_dynamics,
)
from lqteam.numerics import SeedStream


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------

def test_system_params_validation():
    with pytest.raises(ConfigError):
        SystemParams(A=np.ones((2, 3)), B=np.ones((2, 1)))
    with pytest.raises(ConfigError):
        SystemParams(A=np.eye(2), B=np.ones((3, 1)))
    s = SystemParams(A=np.eye(2), B=np.ones((2, 1)))
    assert (s.dx, s.du) == (2, 1)
    np.testing.assert_array_equal(s.theta, np.hstack([np.eye(2), np.ones((2, 1))]))


def test_cost_spec_requires_psd_q():
    with pytest.raises(ConfigError):
        CostSpec(Q=np.array([[-1.0]]), R=np.eye(1), state_dims=(1,), input_dims=(1,))


def test_cost_spec_allows_singular_psd_r():
    # The tracking pair's R is rank-1 PSD; it must construct fine.
    R = np.array([[1.0, -0.5], [-0.5, 0.25]])
    cost = CostSpec(Q=np.eye(2), R=R, state_dims=(1, 1), input_dims=(1, 1))
    np.testing.assert_array_equal(cost.r_block(1), [[0.25]])
    np.testing.assert_array_equal(cost.q_block(0, 1), [[0.0]])


def test_info_pattern_flags():
    with pytest.raises(ConfigError):
        InfoPattern(gamma=(0, 2))
    p = InfoPattern(gamma=(1, 0))
    assert p.shared(0) and not p.shared(1)
    assert len(p) == 2


@pytest.mark.parametrize("known,gamma,expected", [
    ((False, False), (0, 0), "marl1"),
    ((False, True), (1, 0), "marl2"),
    ((True, False), (0, 1), "marl3"),   # two systems, roles swapped
    ((False, False, True), (1, 1, 0), "marl3"),
    ((False, False), (1, 1), "marl4"),
])
def test_classify_scenario_table(known, gamma, expected):
    assert classify_scenario(known, gamma) == expected


def test_classify_scenario_rejects_mixed_patterns():
    # an unknown system that does not broadcast (and isn't the all-private
    # case) has no protocol
    with pytest.raises(ConfigError):
        classify_scenario((False, False), (1, 0))
    with pytest.raises(ConfigError):
        classify_scenario((True, True), (0, 0))


def test_instance_dimension_mismatches_raise():
    sys1 = SystemParams(A=np.eye(2), B=np.eye(2))
    cost = CostSpec(Q=np.eye(2), R=np.eye(2), state_dims=(2,), input_dims=(2,))
    with pytest.raises(ConfigError):
        MultiAgentInstance(systems=(sys1,), known=(False,), cost=cost,
                           info=InfoPattern(gamma=(1,)), x0=(np.zeros(3),))


# ---------------------------------------------------------------------------
# builtin instances
# ---------------------------------------------------------------------------

def test_benchmark_structure(benchmark):
    assert benchmark.scenario == "marl2"
    assert benchmark.state_dims == (3, 3)
    assert benchmark.known == (False, True)
    assert benchmark.info.gamma == (1, 0)
    np.testing.assert_array_equal(benchmark.systems[0].A,
                                  [[1.01, 0.01, 0.0],
                                   [0.01, 1.01, 0.01],
                                   [0.0, 0.01, 1.01]])
    np.testing.assert_array_equal(benchmark.cost.Q, 1e-3 * np.eye(6))
    np.testing.assert_array_equal(benchmark.cost.R, np.eye(6))
    assert benchmark.aux_noise_mask() == (True, False)
    # the open-loop system is genuinely unstable, so control is non-optional
    assert np.max(np.abs(np.linalg.eigvals(benchmark.systems[0].A))) > 1.0


def test_two_way_and_four_system_variants(two_way):
    assert two_way.scenario == "marl4"
    assert two_way.aux_noise_mask() == (True, True)
    four = make_four_system_benchmark()
    assert four.scenario == "marl3"
    assert four.n_systems == 4
    assert four.aux_noise_mask() == (True, True, False, False)


def test_tracking_instance_structure():
    inst = make_tracking_instance(0.5)
    assert inst.scenario == "marl1"
    assert inst.noise == (False, False)
    np.testing.assert_array_equal(inst.x0_full, [1.0, 1.0])
    # cost really is (x1-x2)^2 + (u1 - u2/2)^2
    assert instantaneous_cost(inst.cost, np.array([2.0, 1.0]),
                              np.array([3.0, 2.0])) == pytest.approx(1.0 + 4.0)
    with pytest.raises(ConfigError):
        make_tracking_instance(1.0)


def test_tracking_instance_optimal_play_costs_nothing():
    a2 = 0.7
    inst = make_tracking_instance(a2)
    x = inst.x0_full
    total = 0.0
    for t in range(200):
        u = np.array([a2 ** (t + 1), 2.0 * a2 ** (t + 1)])
        total += instantaneous_cost(inst.cost, x, u)
        x = step_dynamics(inst, x, u, np.zeros(2))
    assert total <= 1e-25


# ---------------------------------------------------------------------------
# noise traces
# ---------------------------------------------------------------------------

def test_noise_trace_reproducible(benchmark):
    t1 = NoiseTrace.generate(benchmark, 50, seed=4)
    t2 = NoiseTrace.generate(benchmark, 50, seed=4)
    for a, b in zip(t1.arrays, t2.arrays):
        np.testing.assert_array_equal(a, b)
    t3 = NoiseTrace.generate(benchmark, 50, seed=5)
    assert not np.array_equal(t1.arrays[0], t3.arrays[0])


def test_noise_trace_masking_shares_kept_arrays(benchmark):
    full = NoiseTrace.generate(benchmark, 32, seed=0)
    aux = full.masked(benchmark.aux_noise_mask())
    assert aux.arrays[0] is full.arrays[0]          # shared system kept, same memory
    np.testing.assert_array_equal(aux.arrays[1], 0.0)
    assert full.arrays[1].std() > 0.5               # original untouched


def test_noiseless_systems_draw_nothing():
    inst = make_tracking_instance(0.3)
    trace = NoiseTrace.generate(inst, 10, seed=0)
    for arr in trace.arrays:
        np.testing.assert_array_equal(arr, 0.0)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def test_step_dynamics_matches_joint_matrix_form(benchmark):
    rng = np.random.default_rng(8)
    A, B = benchmark.A, benchmark.B
    for _ in range(10):
        x = rng.standard_normal(6)
        u = rng.standard_normal(6)
        w = rng.standard_normal(6)
        np.testing.assert_allclose(step_dynamics(benchmark, x, u, w),
                                   A @ x + B @ u + w, rtol=0, atol=1e-12)


def test_instantaneous_cost_validates_dims(benchmark):
    with pytest.raises(ConfigError):
        instantaneous_cost(benchmark.cost, np.zeros(5), np.zeros(6))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_config_roundtrip(benchmark):
    cfg = instance_to_config(benchmark, horizon=500, seed=9)
    rebuilt, extras = instance_from_config(cfg)
    assert extras == {"T": 500, "seed": 9}
    assert rebuilt.known == benchmark.known
    assert rebuilt.info.gamma == benchmark.info.gamma
    np.testing.assert_array_equal(rebuilt.cost.Q, benchmark.cost.Q)
    for a, b in zip(rebuilt.systems, benchmark.systems):
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.B, b.B)


def test_save_and_load_file(tmp_path, benchmark):
    path = tmp_path / "instance.json"
    save_instance(benchmark, path, horizon=100)
    loaded, extras = load_instance(path)
    assert extras["T"] == 100
    np.testing.assert_array_equal(loaded.systems[0].A, benchmark.systems[0].A)


def test_load_builtin_names():
    for name in BUILTIN_INSTANCES:
        inst, extras = load_instance(name)
        assert inst.name == name
        assert extras == {}


def test_load_missing_file_mentions_builtins():
    with pytest.raises(ConfigError, match="appendix-j"):
        load_instance("no-such-instance.json")


def test_load_bad_json_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"systems": [}', encoding="utf-8")
    with pytest.raises(ConfigError, match="line 1"):
        load_instance(path)


def test_missing_field_is_named(tmp_path):
    cfg = {"systems": [{"A": [[1.0]], "B": [[1.0]]}]}  # missing "known"
    with pytest.raises(ConfigError, match="known"):
        instance_from_config(cfg)
    with pytest.raises(ConfigError, match="'Q'"):
        instance_from_config({"systems": [{"A": [[0.0]], "B": [[1.0]], "known": False}]})


def test_config_rejects_non_object_root():
    with pytest.raises(ConfigError):
        instance_from_config([1, 2, 3])


def test_json_file_is_plain_nested_lists(tmp_path, benchmark):
    path = tmp_path / "inst.json"
    save_instance(benchmark, path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    assert isinstance(raw["systems"][0]["A"][0][0], float)
    assert raw["gamma"] == [1, 0]
    assert [len(v) for v in raw["x0"]] == [3, 3]


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------

def test_random_instances_are_solvable_and_classified():
    for i in range(10):
        inst = random_instance(SeedStream(i, "t"), scenario="marl2")
        assert inst.scenario == "marl2"
        inst.certify()  # joint problem must be stabilizable
    inst4 = random_instance(SeedStream(0, "t4"), scenario="marl4")
    assert inst4.scenario == "marl4"


def test_random_instance_deterministic():
    a = random_instance(SeedStream(3, "x"))
    b = random_instance(SeedStream(3, "x"))
    np.testing.assert_array_equal(a.systems[0].A, b.systems[0].A)
    np.testing.assert_array_equal(a.cost.Q, b.cost.Q)
