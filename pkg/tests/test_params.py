import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainopt.params import (
    PENALTY,
    Candidate,
    ConfigError,
    Constraint,
    Direction,
    MissingObjectiveError,
    ObjectiveSet,
    ObjectiveSpec,
    ParameterSpace,
    ParameterSpec,
    Role,
    ShapeError,
    SimResult,
    assemble_arguments,
    scalarize,
)

MB, KB = 1e6, 1e3


class TestParameterSpec:
    def test_indicator_follows_role(self):
        assert ParameterSpec.optimization("a", 0, 1).indicator == 1
        assert ParameterSpec.fixed("b", 3).indicator == 0

    def test_optimization_needs_increasing_range(self):
        with pytest.raises(ConfigError):
            ParameterSpec.optimization("a", 2, 2)
        with pytest.raises(ConfigError):
            ParameterSpec("a", Role.OPTIMIZATION, range=(0, 1), fixed_value=0.5)

    def test_fixed_needs_value_and_no_range(self):
        with pytest.raises(ConfigError):
            ParameterSpec("b", Role.FIXED)
        with pytest.raises(ConfigError):
            ParameterSpec("b", Role.FIXED, range=(0, 1), fixed_value=0.5)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            ParameterSpace((ParameterSpec.fixed("a", 1), ParameterSpec.fixed("a", 2)))

    def test_all_fixed_space_is_not_optimizable(self):
        space = ParameterSpace((ParameterSpec.fixed("a", 1),))
        with pytest.raises(ConfigError, match="no optimization parameters"):
            space.require_optimizable()


class TestCandidate:
    space = ParameterSpace((ParameterSpec.optimization("a", 0, 1), ParameterSpec.optimization("b", -5, 5)))

    def test_values_are_clamped_into_range(self):
        assert Candidate.clamped([2.0, -9.0], self.space).values == (1.0, -5.0)

    def test_wrong_length_is_a_shape_error(self):
        with pytest.raises(ShapeError):
            Candidate.clamped([0.5], self.space)


class TestAssembleArguments:
    def test_all_fixed_space_reduces_to_fixed_values(self):
        space = ParameterSpace((ParameterSpec.fixed("blockSize", 1 * MB), ParameterSpec.fixed("interval", 600)))
        assert assemble_arguments(Candidate(()), space).values == (1 * MB, 600.0)

    def test_block_size_optimized_at_default_interval(self):
        space = ParameterSpace(
            (ParameterSpec.optimization("blockSize", 1 * KB, 50 * MB), ParameterSpec.fixed("interval", 600))
        )
        args = assemble_arguments(Candidate((25 * MB,)), space)
        assert args.values == (25 * MB, 600.0)
        assert args["interval"] == 600.0

    def test_mixed_roles_interleave_in_space_order(self):
        space = ParameterSpace(
            (ParameterSpec.optimization("a", 0, 10), ParameterSpec.fixed("b", 7), ParameterSpec.optimization("c", 0, 10))
        )
        args = assemble_arguments((2.0, 3.0), space)
        assert args.values == (2.0, 7.0, 3.0)
        assert args.names == ("a", "b", "c")

    def test_dimension_mismatch_is_a_shape_error(self):
        space = ParameterSpace((ParameterSpec.optimization("a", 0, 1), ParameterSpec.fixed("b", 7)))
        with pytest.raises(ShapeError):
            assemble_arguments((0.1, 0.2), space)


@st.composite
def space_and_candidate(draw):
    n = draw(st.integers(1, 6))
    roles = draw(st.lists(st.booleans(), min_size=n, max_size=n).filter(any))
    finite = st.floats(-1e9, 1e9, allow_nan=False)
    specs, cand = [], []
    for i, is_opt in enumerate(roles):
        if is_opt:
            lo = draw(finite)
            hi = lo + draw(st.floats(1e-3, 1e9))
            specs.append(ParameterSpec.optimization(f"p{i}", lo, hi))
            cand.append(draw(st.floats(lo, hi)))
        else:
            specs.append(ParameterSpec.fixed(f"p{i}", draw(finite)))
    return ParameterSpace(tuple(specs)), Candidate(tuple(cand))


def _assemble_oracle(space, candidate):
    # Walk optimization names separately instead of using the indicator formula.
    proposed = dict(zip([p.name for p in space.optimization_params], candidate.values))
    return tuple(proposed[p.name] if p.name in proposed else p.fixed_value for p in space)


@given(space_and_candidate())
def test_assembly_matches_role_lookup_oracle(sc):
    space, cand = sc
    assert assemble_arguments(cand, space).values == _assemble_oracle(space, cand)


@given(space_and_candidate())
def test_assembly_is_idempotent_and_keeps_fixed_values(sc):
    space, cand = sc
    first, second = assemble_arguments(cand, space), assemble_arguments(cand, space)
    assert first == second
    for p, v in zip(space, first.values):
        if p.role is Role.FIXED:
            assert v == p.fixed_value


class TestScalarize:
    def test_all_inactive_gives_zero(self):
        objs = ObjectiveSet((ObjectiveSpec("fork_rate", active=False), ObjectiveSpec("tps", active=False)))
        assert scalarize(SimResult({"fork_rate": 0.3, "tps": 10.0}), objs) == 0.0
        with pytest.raises(ConfigError):
            objs.require_active()

    def test_single_minimized_fork_rate(self):
        objs = ObjectiveSet((ObjectiveSpec("fork_rate"),))
        assert scalarize(SimResult({"fork_rate": 0.0998}), objs) == pytest.approx(0.0998, abs=1e-15)

    def test_maximized_term_is_negated(self):
        objs = ObjectiveSet(
            (ObjectiveSpec("tps", 1.0, direction=Direction.MAXIMIZE), ObjectiveSpec("fork_rate", 2.0))
        )
        assert scalarize(SimResult({"tps": 83.0, "fork_rate": 0.05}), objs) == pytest.approx(-82.9, abs=1e-12)

    def test_inactive_objective_may_be_missing(self):
        objs = ObjectiveSet((ObjectiveSpec("a"), ObjectiveSpec("b", active=False)))
        assert scalarize(SimResult({"a": 1.5}), objs) == 1.5

    def test_missing_active_value_names_the_objective(self):
        objs = ObjectiveSet((ObjectiveSpec("fork_rate"),))
        with pytest.raises(MissingObjectiveError, match="fork_rate"):
            scalarize(SimResult({"tps": 1.0}), objs)

    def test_violated_constraint_adds_relative_penalty(self):
        objs = ObjectiveSet(
            (ObjectiveSpec("tps", direction=Direction.MAXIMIZE),), (Constraint("fork_rate", 0.10, "<="),)
        )
        ok = scalarize(SimResult({"tps": 50.0, "fork_rate": 0.10}), objs)
        bad = scalarize(SimResult({"tps": 50.0, "fork_rate": 0.12}), objs)
        assert ok == -50.0
        assert bad == pytest.approx(-50.0 + PENALTY * 0.02 / 0.10)
        assert math.isfinite(bad)

    def test_lower_bound_constraint(self):
        objs = ObjectiveSet((ObjectiveSpec("a"),), (Constraint("b", 2.0, ">="),))
        assert scalarize(SimResult({"a": 0.0, "b": 1.0}), objs) == pytest.approx(PENALTY * 0.5)
        assert objs.is_feasible(SimResult({"a": 0.0, "b": 2.0}))

    def test_weight_must_be_positive(self):
        with pytest.raises(ConfigError):
            ObjectiveSpec("a", weight=0.0)

    def test_signature_lists_active_names_sorted(self):
        objs = ObjectiveSet((ObjectiveSpec("z"), ObjectiveSpec("a"), ObjectiveSpec("m", active=False)))
        assert objs.signature() == ("a", "z")


values = st.floats(-1e6, 1e6, allow_nan=False)
weights = st.floats(1e-3, 1e3)


@given(st.lists(st.tuples(values, weights, st.booleans()), min_size=1, max_size=5))
def test_scalarize_matches_weighted_sum_oracle(terms):
    objs = ObjectiveSet(tuple(
        ObjectiveSpec(f"m{i}", w, direction=Direction.MAXIMIZE if mx else Direction.MINIMIZE)
        for i, (_, w, mx) in enumerate(terms)
    ))
    result = SimResult({f"m{i}": v for i, (v, _, _) in enumerate(terms)})
    expected = math.fsum(w * (-v if mx else v) for v, w, mx in terms)
    assert scalarize(result, objs) == pytest.approx(expected, rel=1e-9, abs=1e-6)


@given(values, values, weights)
def test_doubling_a_weight_doubles_its_contribution(v1, v2, w):
    def u(weight):
        objs = ObjectiveSet((ObjectiveSpec("a", weight), ObjectiveSpec("b", 1.0)))
        return scalarize(SimResult({"a": v1, "b": v2}), objs)

    assert u(2 * w) - v2 == pytest.approx(2 * (u(w) - v2), rel=1e-9, abs=1e-6)


@settings(max_examples=50)
@given(st.lists(st.tuples(values, values), min_size=2, max_size=8), st.floats(0.01, 100))
def test_uniform_weight_scaling_preserves_candidate_order(results, k):
    def order(scale):
        objs = ObjectiveSet((ObjectiveSpec("a", 1.0 * scale), ObjectiveSpec("b", 3.0 * scale, direction="maximize")))
        us = [scalarize(SimResult({"a": a, "b": b}), objs) for a, b in results]
        return np.argsort(us, kind="stable"), us

    base_idx, base_u = order(1.0)
    scaled_idx, scaled_u = order(k)
    # Ties after rounding may reorder; compare the sorted U sequences scaled back.
    assert np.allclose(np.sort(scaled_u) / k, np.sort(base_u), rtol=1e-9, atol=1e-6)
    assert np.allclose(np.asarray(base_u)[scaled_idx], np.sort(base_u), rtol=1e-9, atol=1e-6)
