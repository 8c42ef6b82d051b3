import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamdeq.cell import make_random_cell
from streamdeq.readout import make_readout_head
from streamdeq.sequence import SequenceSpec, generate_sequence
from streamdeq.solver import SolverConfig, reference_solve, solve
from streamdeq.stream import (
    BudgetSchedule,
    StreamError,
    WarmStartPolicy,
    reference_states,
    replay_recursion_diagnostic,
    stream_infer,
)

PICARD = SolverConfig("picard", 1, 0.0)
BROYDEN = SolverConfig("broyden", 1, 0.0)
POLICIES = list(WarmStartPolicy)


def setup(seed=0, dz=32, length=12, eps=0.05, **cell_kw):
    cell = make_random_cell(seed, dz, 16, **cell_kw)
    frames = generate_sequence(SequenceSpec(length=length, dx=16, epsilon=eps, seed=seed + 1000))
    return cell, frames


def dists(records):
    return np.sqrt([r.sq_dist_to_reference for r in records])


# -- schedule and policy parsing --------------------------------------------


def test_schedule_variants():
    assert BudgetSchedule.of(3)(7) == 3
    s = BudgetSchedule.frames([4, 0, 2])
    assert [s(t) for t in range(3)] == [4, 0, 2]
    with pytest.raises(ValueError):
        BudgetSchedule()
    with pytest.raises(ValueError):
        BudgetSchedule(constant=2, per_frame=(1,))
    with pytest.raises(ValueError):
        BudgetSchedule.of(0)
    with pytest.raises(ValueError):
        BudgetSchedule.frames([1, -1])


def test_policy_parse():
    assert WarmStartPolicy.parse("stream-zero") is WarmStartPolicy.STREAM_FROM_ZERO
    with pytest.raises(ValueError, match="cold"):
        WarmStartPolicy.parse("hot")


def test_schedule_length_mismatch():
    cell, frames = setup(length=5)
    with pytest.raises(ValueError, match="4 entries"):
        stream_infer(cell, frames, "cold", BudgetSchedule.frames([1, 1, 1, 1]), PICARD)


def test_frame_shape_mismatch():
    cell, frames = setup(length=3)
    frames[1] = np.zeros(5)
    with pytest.raises(ValueError, match="frame 1"):
        stream_infer(cell, frames, "cold", 1, PICARD)


# -- policy semantics -------------------------------------------------------


def test_cold_start_matches_independent_solves():
    cell, frames = setup()
    recs = stream_infer(cell, frames, "cold", 3, PICARD, keep_states=True)
    for rec, x in zip(recs, frames):
        alone = solve(cell, x, np.zeros(cell.dz), PICARD.with_iters(3))
        assert np.array_equal(rec.z_final, alone.z)


def test_cold_start_ignores_frame_order():
    cell, frames = setup()
    a = stream_infer(cell, frames, "cold", 2, BROYDEN, keep_states=True)
    b = stream_infer(cell, frames[::-1], "cold", 2, BROYDEN, keep_states=True)
    for ra, rb in zip(a, b[::-1]):
        assert np.array_equal(ra.z_final, rb.z_final)


def test_stream_from_zero_chains_estimates():
    cell, frames = setup()
    recs = stream_infer(cell, frames, "stream-zero", 2, PICARD, keep_states=True)
    z = np.zeros(cell.dz)
    for rec, x in zip(recs, frames):
        z = solve(cell, x, z, PICARD.with_iters(2)).z
        assert np.array_equal(rec.z_final, z)


def test_reference_chain_starts_from_previous_reference():
    cell, frames = setup()
    refs = reference_states(cell, frames)
    recs = stream_infer(cell, frames, "ref-chain", 1, PICARD, keep_states=True)
    assert np.array_equal(recs[0].z_final, solve(cell, frames[0], np.zeros(cell.dz), PICARD).z)
    for t in range(1, len(frames)):
        assert np.array_equal(recs[t].z_final, solve(cell, frames[t], refs[t - 1], PICARD).z)


def test_stream_from_reference_frame_zero_is_reference():
    cell, frames = setup()
    recs = stream_infer(cell, frames, "stream-ref", 1, PICARD, compute_references=True, keep_states=True)
    ref = reference_solve(cell, frames[0])
    assert np.array_equal(recs[0].z_final, ref.z)
    assert recs[0].iterations_used == ref.iterations
    assert recs[0].sq_dist_to_reference == 0.0
    assert np.array_equal(recs[1].z_final, solve(cell, frames[1], ref.z, PICARD).z)


def test_zero_budget_frame_carries_state():
    cell, frames = setup(length=4)
    recs = stream_infer(cell, frames, "stream-zero", BudgetSchedule.frames([3, 0, 0, 2]), PICARD,
                        keep_states=True)
    assert recs[1].iterations_used == 0
    assert np.array_equal(recs[1].z_final, recs[0].z_final)
    assert np.isfinite(recs[1].residual_norm)


def test_records_without_references():
    cell, frames = setup(length=4)
    recs = stream_infer(cell, frames, "stream-zero", 2, PICARD)
    assert [r.t for r in recs] == [0, 1, 2, 3]
    assert all(r.sq_dist_to_reference is None and r.z_final is None for r in recs)
    assert all(r.iterations_used == 2 and r.seconds >= 0 for r in recs)


def test_label_agreement_recorded():
    cell, frames = setup(length=4)
    head = make_readout_head(0, 10, cell)
    recs = stream_infer(cell, frames, "stream-zero", 30, BROYDEN, True, head=head)
    assert all(r.label_agreement == 1.0 for r in recs)


def test_precomputed_references_must_match_length():
    cell, frames = setup(length=4)
    with pytest.raises(ValueError):
        stream_infer(cell, frames, "cold", 1, PICARD, True, references=[np.zeros(cell.dz)])


@pytest.mark.parametrize("policy", POLICIES)
def test_causality(policy):
    cell, frames = setup(length=10)
    full = stream_infer(cell, frames, policy, 2, BROYDEN, True, keep_states=True)
    part = stream_infer(cell, frames[:6], policy, 2, BROYDEN, True, keep_states=True)
    for a, b in zip(full, part):
        assert np.array_equal(a.z_final, b.z_final)
        assert a.sq_dist_to_reference == b.sq_dist_to_reference


def test_static_stream_is_one_long_solve():
    cell, frames = setup(length=7, eps=0.0)
    recs = stream_infer(cell, frames, "stream-zero", 3, PICARD, keep_states=True)
    long = solve(cell, frames[0], np.zeros(cell.dz), PICARD.with_iters(21))
    assert np.array_equal(recs[-1].z_final, long.z)


def test_static_diagnostic_starts_at_fixed_point():
    cell, frames = setup(length=5, eps=0.0)
    recs = replay_recursion_diagnostic(cell, frames, 1, PICARD)
    assert all(r.sq_dist_to_reference <= 1e-18 for r in recs[1:])


def test_converged_frames_are_near_reference():
    # for a gamma-contraction ||z - z*|| <= ||f(z) - z|| / (1 - gamma)
    cell, frames = setup(length=5)
    recs = replay_recursion_diagnostic(cell, frames, 40, SolverConfig("broyden", 1, 1e-9))
    for r in recs:
        assert r.residual_norm <= 1e-7
        assert r.sq_dist_to_reference <= (r.residual_norm / (1 - cell.gamma)) ** 2


# -- errors -----------------------------------------------------------------


def test_divergent_frame_reports_index():
    cell = make_random_cell(0, 4, 2, activation="identity")
    frames = [np.zeros(2), np.zeros(2), np.array([1e300, 0.0])]
    with pytest.raises(StreamError) as info:
        stream_infer(cell, frames, "stream-zero", 2, PICARD)
    assert info.value.t == 2


def test_reference_failure_reports_index():
    cell = make_random_cell(0, 4, 2, activation="identity")
    frames = [np.zeros(2), np.array([np.inf, 0.0])]
    with pytest.raises(StreamError) as info:
        reference_states(cell, frames)
    assert info.value.t == 1


# -- properties -------------------------------------------------------------


@given(seed=st.integers(0, 5000), M=st.sampled_from([1, 2, 4, 8]),
       policy=st.sampled_from(["stream-zero", "stream-ref", "ref-chain"]),
       eps=st.sampled_from([0.01, 0.05, 0.2]), act=st.sampled_from(["tanh", "identity"]))
def test_picard_error_recursion(seed, M, policy, eps, act):
    cell, frames = setup(seed, dz=16, length=15, eps=eps, activation=act)
    refs = reference_states(cell, frames)
    recs = stream_infer(cell, frames, policy, M, PICARD, True, references=refs)
    d = dists(recs)
    g = cell.gamma ** M
    assert d[0] <= g * np.linalg.norm(refs[0]) + 1e-9 or policy == "stream-ref"
    for t in range(1, len(frames)):
        delta = np.linalg.norm(refs[t] - refs[t - 1])
        prev = 0.0 if policy == "ref-chain" else d[t - 1]
        assert d[t] <= g * (prev + delta) + 1e-9


@given(seed=st.integers(0, 5000), M=st.sampled_from([1, 2, 4, 8]), eps=st.sampled_from([0.01, 0.05, 0.2]))
def test_plateau_bound_with_transient(seed, M, eps):
    # unrolling the recursion from z = 0: d_t <= g^(t+1) ||z*_0|| + g delta_max / (1 - g)
    cell, frames = setup(seed, dz=16, length=30, eps=eps)
    refs = reference_states(cell, frames)
    d = dists(stream_infer(cell, frames, "stream-zero", M, PICARD, True, references=refs))
    delta_max = max(np.linalg.norm(b - a) for a, b in zip(refs, refs[1:]))
    g = cell.gamma ** M
    t = np.arange(len(frames))
    assert np.all(d <= g ** (t + 1) * np.linalg.norm(refs[0]) + g * delta_max / (1 - g) + 1e-9)


def _plateau_excess(M, seeds=20):
    worst = 0.0
    for seed in range(seeds):
        cell, frames = setup(seed, dz=64, length=40)
        refs = reference_states(cell, frames)
        d = dists(stream_infer(cell, frames, "stream-zero", M, PICARD, True, references=refs))
        delta_max = max(np.linalg.norm(b - a) for a, b in zip(refs, refs[1:]))
        g = cell.gamma ** M
        worst = max(worst, float(np.max(d[20:] - g * delta_max / (1 - g))))
    return worst


@pytest.mark.parametrize("M", [2, 4, 8])
def test_plateau_bound_after_burn_in(M):
    assert _plateau_excess(M) <= 1e-6


@pytest.mark.xfail(strict=True, reason="with M=1 the start-up error still carries 0.9**20 of its size at t=20")
def test_plateau_bound_after_burn_in_single_step():
    assert _plateau_excess(1) <= 1e-6


def _converged_states(cell, frames, policy, tol):
    cfg = SolverConfig("broyden", 1, tol)
    recs = stream_infer(cell, frames, policy, 200, cfg, keep_states=True)
    assert all(r.residual_norm <= tol for r in recs)
    return [r.z_final for r in recs]


@pytest.mark.parametrize("seed", range(5))
def test_policies_agree_at_convergence(seed):
    # residual <= tol implies ||z - z*|| <= tol / (1 - gamma) for a gamma-contraction,
    # so two policies can differ by at most twice that
    tol = 1e-8
    cell, frames = setup(seed, dz=32, length=8)
    states = {p: _converged_states(cell, frames, p, tol) for p in POLICIES}
    bound = 2 * tol / (1 - cell.gamma)
    for p in POLICIES:
        for a, b in zip(states[p], states[WarmStartPolicy.COLD_START]):
            assert np.linalg.norm(a - b) <= bound


@pytest.mark.xfail(strict=True, reason="2*tol is tighter than the tol/(1-gamma) error a residual test can certify")
def test_policies_agree_within_twice_tol():
    tol = 1e-8
    worst = 0.0
    for seed in range(5):
        cell, frames = setup(seed, dz=32, length=8)
        states = {p: _converged_states(cell, frames, p, tol) for p in POLICIES}
        for p in POLICIES:
            for a, b in zip(states[p], states[WarmStartPolicy.COLD_START]):
                worst = max(worst, float(np.linalg.norm(a - b)))
    assert worst <= 2 * tol
