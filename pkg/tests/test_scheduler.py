"""Estimation, ranking/greedy placement, NSGA-II and the policy registry."""
from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from fogkit.appmodel import build_application
from fogkit.profiling import HostProfile
from fogkit.scheduler import (
    Decision,
    ExecTimeModel,
    NSGA2Scheduler,
    PlaceholderScheduler,
    RankingBasedScheduler,
    SaturatedHostError,
    SchedulerError,
    SchedulerUnavailableError,
    crowding_distance,
    dominates,
    estimate_cost,
    genome_objectives,
    get_best_master,
    init_scheduler_by_name,
    non_dominated_sort,
    rank_tasks,
    schedule_nsga2,
    tasks_assignment,
)


def profile(cores=8, mhz=2400.0, util=0.052) -> HostProfile:
    return HostProfile(cores=cores, frequency_mhz=mhz, cpu_utilization=util)


def uniform_model(hosts, est_work=100.0, cores=2, mhz=1000.0, util=0.0, work=None):
    """All hosts identical: estimate = est_work / (cores * GHz)."""
    return ExecTimeModel(
        profiles={h: profile(cores, mhz, util) for h in hosts},
        default_work=est_work,
        work=work,
    )


class TestExecTimeModel:
    def test_capability_formula(self):
        model = ExecTimeModel({"h": profile(8, 2400.0, 0.052)}, default_work=100.0)
        # 100 / (8 cores * 2.4 GHz * 0.948 idle)
        assert model.estimate("anything", "h") == pytest.approx(
            5.494022503516175, abs=1e-12
        )

    def test_second_formula_point(self):
        model = ExecTimeModel({"h": profile(4, 1500.0, 0.25)}, default_work=100.0)
        assert model.estimate("anything", "h") == pytest.approx(
            22.22222222222222, abs=1e-11
        )

    def test_registry_work_applies(self):
        model = ExecTimeModel({"h": profile(8, 2400.0, 0.052)})
        # GameOfLife0 works an 8x8 grid: 64 units
        assert model.estimate("GameOfLife0", "h") == pytest.approx(
            3.5161744022503516, abs=1e-12
        )

    def test_explicit_work_overrides_registry(self):
        model = ExecTimeModel(
            {"h": profile(1, 1000.0, 0.0)}, work={"GameOfLife0": 7.0}
        )
        assert model.estimate("GameOfLife0", "h") == 7.0

    def test_history_mean_overrides_formula(self):
        model = ExecTimeModel({"h": profile()})
        for duration in (4.0, 6.0, 8.0):
            model.observe("t", "h", duration)
        assert model.estimate("t", "h") == 6.0
        assert model.observations("t", "h") == (4.0, 6.0, 8.0)
        # other (task, host) pairs still use the formula
        assert model.estimate("other", "h") == pytest.approx(5.494022503516175)

    def test_saturated_host_raises(self):
        model = ExecTimeModel({"h": profile(util=1.0)})
        with pytest.raises(SaturatedHostError):
            model.estimate("t", "h")

    def test_unknown_host_raises(self):
        with pytest.raises(SchedulerError):
            ExecTimeModel({}).estimate("t", "ghost")

    def test_negative_observation_rejected(self):
        with pytest.raises(ValueError):
            ExecTimeModel({}).observe("t", "h", -1.0)

    def test_usable_hosts_drops_saturated_and_unknown(self):
        model = ExecTimeModel({
            "busy": profile(util=1.0),
            "b": profile(),
            "a": profile(),
        })
        assert model.usable_hosts(["busy", "b", "a", "ghost"]) == ["a", "b"]


class TestRanking:
    def test_layers_are_preserved(self):
        app = build_application("NaiveFormulaSerialized")
        model = uniform_model(["h"])
        assert rank_tasks(app, model, ["h"]) == [
            "NaiveFormula0", "NaiveFormula1", "NaiveFormula2", "NaiveFormula3"
        ]

    def test_heavier_tasks_rank_first_within_a_layer(self):
        app = build_application("GameOfLifeParallelized", task_count=3)
        model = uniform_model(["h"])
        # grid areas: 64, 144, 256 work units
        assert rank_tasks(app, model, ["h"]) == [
            "GameOfLife2", "GameOfLife1", "GameOfLife0"
        ]

    def test_equal_estimates_tie_alphabetically(self):
        app = build_application("NaiveFormulaParallelized")
        model = uniform_model(["h"])
        assert rank_tasks(app, model, ["h"]) == [
            "NaiveFormula0", "NaiveFormula1", "NaiveFormula2"
        ]

    def test_no_hosts_rejected(self):
        app = build_application("NaiveFormulaParallelized")
        with pytest.raises(SchedulerError):
            rank_tasks(app, uniform_model([]), [])


class TestGreedyAssignment:
    def test_parallel_tasks_spread_over_equal_hosts(self):
        app = build_application("NaiveFormulaParallelized")
        model = uniform_model(["hostA", "hostB"])  # same estimate everywhere
        decision = tasks_assignment(app, model)
        assert decision.assignment == (
            ("NaiveFormula0", "hostA"),
            ("NaiveFormula1", "hostB"),
            ("NaiveFormula2", "hostA"),
        )
        assert decision.scheduler == "RankingBased"

    def test_chain_stays_on_one_host(self):
        app = build_application("NaiveFormulaSerialized")
        model = uniform_model(["hostA", "hostB"])
        decision = tasks_assignment(app, model)
        assert decision.hosts_used() == {"hostA"}

    def test_fast_host_takes_two_of_three(self):
        app = build_application("NaiveFormulaParallelized")
        model = ExecTimeModel({
            "fast": profile(cores=2, mhz=1000.0, util=0.0),   # est 50
            "slow": profile(cores=1, mhz=1000.0, util=0.0),   # est 100
        })
        decision = tasks_assignment(app, model)
        mapping = decision.mapping
        hosts = sorted(mapping.values())
        assert hosts == ["fast", "fast", "slow"]
        # resulting makespan is the brute-force optimum for this instance
        assert max(
            sum(100.0 for t in mapping if mapping[t] == "fast") / 2,
            sum(100.0 for t in mapping if mapping[t] == "slow"),
        ) == 100.0

    def test_saturated_hosts_are_skipped(self):
        app = build_application("NaiveFormulaParallelized")
        model = ExecTimeModel({
            "busy": profile(util=1.0),
            "calm": profile(),
        })
        decision = tasks_assignment(app, model)
        assert decision.hosts_used() == {"calm"}

    def test_all_saturated_raises(self):
        app = build_application("NaiveFormulaParallelized")
        model = ExecTimeModel({"busy": profile(util=1.0)})
        with pytest.raises(SaturatedHostError):
            tasks_assignment(app, model)

    def test_assignment_is_deterministic(self):
        app = build_application("GameOfLifePyramid", task_count=7)
        model = ExecTimeModel({
            "h1": profile(4, 2000.0, 0.1),
            "h2": profile(8, 2400.0, 0.3),
            "h3": profile(2, 3000.0, 0.0),
        })
        assert tasks_assignment(app, model) == tasks_assignment(app, model)

    @given(
        st.integers(min_value=1, max_value=8),
        st.integers(min_value=1, max_value=4),
    )
    def test_every_task_placed_exactly_once_on_a_candidate(self, tasks, hosts):
        app = build_application("GameOfLifeParallelized", task_count=tasks)
        names = [f"host{i}" for i in range(hosts)]
        decision = tasks_assignment(app, uniform_model(names))
        assert sorted(n for n, _ in decision.assignment) == sorted(app.task_names)
        assert decision.hosts_used() <= set(names)


class TestEstimateCost:
    def test_chain_with_user_edges(self):
        app = build_application("GameOfLifeSerialized", task_count=2)
        model = uniform_model(["h"], work={"GameOfLife0": 10.0, "GameOfLife1": 10.0})
        # est = work / (2 cores * 1 GHz) = 5.0 per task
        decision = Decision(app.name, (("GameOfLife0", "h"), ("GameOfLife1", "h")))
        cost = estimate_cost(
            decision, app, model, latency={("user", "h"): 1.0}, user_host="user"
        )
        assert cost == 12.0

    def test_parallel_exits_take_the_longest_branch(self):
        app = build_application("NaiveFormulaParallelized")
        model = uniform_model(
            ["h"], work={t: 20.0 for t in ("NaiveFormula0", "NaiveFormula1", "NaiveFormula2")}
        )  # est 10 each
        decision = Decision(app.name, tuple((t, "h") for t in app.task_names))
        cost = estimate_cost(
            decision, app, model, latency={("user", "h"): 2.0}, user_host="user"
        )
        assert cost == 14.0

    def test_cross_host_edges_count(self):
        app = build_application("GameOfLifePyramid", task_count=3)
        # graph: grid1 and grid2 feed grid0; put the feeders on different hosts
        model = uniform_model(
            ["h1", "h2"],
            work={"GameOfLife0": 4.0, "GameOfLife1": 6.0, "GameOfLife2": 8.0},
        )  # ests: 2, 3, 4
        decision = Decision(
            app.name,
            (("GameOfLife0", "h1"), ("GameOfLife1", "h1"), ("GameOfLife2", "h2")),
        )
        cost = estimate_cost(
            decision, app, model, latency={("h1", "h2"): 5.0}, user_host="h1"
        )
        # entry GameOfLife2 on h2: 5 + 4 = 9; +5 to reach h1, +2 = 16; exit edge 0
        assert cost == 16.0

    def test_no_user_host_means_free_virtual_edges(self):
        app = build_application("NaiveFormulaParallelized")
        model = uniform_model(
            ["h"], work={t: 20.0 for t in ("NaiveFormula0", "NaiveFormula1", "NaiveFormula2")}
        )
        decision = Decision(app.name, tuple((t, "h") for t in app.task_names))
        assert estimate_cost(decision, app, model) == 10.0

    def test_incomplete_decision_rejected(self):
        app = build_application("NaiveFormulaParallelized")
        model = uniform_model(["h"])
        decision = Decision(app.name, (("NaiveFormula0", "h"),))
        with pytest.raises(SchedulerError):
            estimate_cost(decision, app, model)


class TestDominance:
    def test_strict_and_partial(self):
        assert dominates((1, 1), (2, 2))
        assert dominates((1, 2), (1, 3))
        assert not dominates((1, 3), (3, 1))
        assert not dominates((2, 2), (2, 2))

    def test_hand_worked_fronts(self):
        objectives = [(1, 5), (2, 3), (4, 1), (3, 4), (5, 5)]
        assert non_dominated_sort(objectives) == [[0, 1, 2], [3], [4]]

    def test_identical_points_share_a_front(self):
        assert non_dominated_sort([(1, 1), (1, 1), (2, 2)]) == [[0, 1], [2]]

    def test_single_point(self):
        assert non_dominated_sort([(7, 7)]) == [[0]]

    def test_empty(self):
        assert non_dominated_sort([]) == []

    @staticmethod
    def _peel_fronts(objectives):
        """Reference partition: repeatedly remove the non-dominated set."""
        remaining = list(range(len(objectives)))
        fronts = []
        while remaining:
            front = [
                i for i in remaining
                if not any(
                    dominates(objectives[j], objectives[i])
                    for j in remaining if j != i
                )
            ]
            fronts.append(front)
            remaining = [i for i in remaining if i not in front]
        return fronts

    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=0, max_value=6),
                st.integers(min_value=0, max_value=6),
            ),
            max_size=16,
        )
    )
    def test_matches_peeling_reference(self, objectives):
        assert non_dominated_sort(objectives) == self._peel_fronts(objectives)


class TestCrowdingDistance:
    def test_single_objective_evenly_spaced(self):
        assert crowding_distance([(0.0,), (5.0,), (10.0,)]) == [
            float("inf"), 1.0, float("inf")
        ]

    def test_two_aligned_objectives_sum(self):
        distances = crowding_distance([(0, 0), (5, 5), (10, 10)])
        assert distances[0] == float("inf")
        assert distances[2] == float("inf")
        assert distances[1] == 2.0

    def test_unevenly_spaced_interior(self):
        distances = crowding_distance([(0.0,), (1.0,), (10.0,)])
        assert distances[1] == 1.0  # (10 - 0) / (10 - 0)

    def test_zero_range_objective_contributes_nothing(self):
        distances = crowding_distance([(1, 0), (1, 5), (1, 10)])
        assert distances == [float("inf"), 1.0, float("inf")]

    def test_empty_and_singleton(self):
        assert crowding_distance([]) == []
        assert crowding_distance([(3, 4)]) == [float("inf")]


class TestNSGA2:
    def _exhaustive_best(self, app, model, hosts, latency=None, user_host=None):
        task_order = sorted(app.tasks)
        best = None
        for genome in itertools.product(range(len(hosts)), repeat=len(task_order)):
            objectives = genome_objectives(
                genome, task_order, hosts, app, model, latency, user_host
            )
            if best is None or objectives[0] < best:
                best = objectives[0]
        return best

    def test_same_seed_same_decision(self):
        app = build_application("GameOfLifeParallelized", task_count=4)
        model = ExecTimeModel({
            "h1": profile(2, 1000.0, 0.0),
            "h2": profile(4, 2000.0, 0.1),
            "h3": profile(8, 2400.0, 0.5),
        })
        first = schedule_nsga2(app, model, params={"seed": 11})
        second = schedule_nsga2(app, model, params={"seed": 11})
        assert first == second
        assert first.scheduler == "NSGA2"

    def test_finds_exhaustive_optimum_on_tiny_instance(self):
        app = build_application("NaiveFormulaParallelized")
        model = ExecTimeModel({
            "h1": profile(2, 1000.0, 0.0),
            "h2": profile(1, 1500.0, 0.2),
        })
        hosts = ["h1", "h2"]
        decision = schedule_nsga2(app, model, hosts, params={"seed": 3})
        assert decision.objectives[0] == self._exhaustive_best(app, model, hosts)

    def test_single_host_collapses(self):
        app = build_application("NaiveFormulaSerialized")
        model = uniform_model(["only"])
        decision = schedule_nsga2(app, model, params={"seed": 0})
        assert decision.hosts_used() == {"only"}

    def test_saturated_hosts_excluded(self):
        app = build_application("NaiveFormulaParallelized")
        model = ExecTimeModel({"busy": profile(util=1.0), "calm": profile()})
        decision = schedule_nsga2(app, model, params={"seed": 0})
        assert decision.hosts_used() == {"calm"}

    def test_population_floor(self):
        app = build_application("NaiveFormulaParallelized")
        with pytest.raises(SchedulerError):
            schedule_nsga2(app, uniform_model(["h"]), params={"populationSize": 1})

    @settings(deadline=None, max_examples=15)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_any_seed_yields_a_complete_placement(self, seed):
        app = build_application("GameOfLifePyramid", task_count=3)
        model = uniform_model(["h1", "h2"])
        decision = schedule_nsga2(
            app, model, params={"seed": seed, "generations": 5}
        )
        assert sorted(n for n, _ in decision.assignment) == sorted(app.task_names)
        assert len(decision.objectives) == 2


class TestBestMasterChoice:
    def test_empty_pool_is_none(self):
        assert get_best_master([]) is None

    def test_seeded_choice_is_reproducible(self):
        pool = ["m1", "m2", "m3"]
        assert get_best_master(pool, random.Random(5)) == get_best_master(
            pool, random.Random(5)
        )

    def test_every_candidate_is_reachable(self):
        pool = ["m1", "m2", "m3"]
        seen = {get_best_master(pool, random.Random(s)) for s in range(50)}
        assert seen == set(pool)


class TestPolicyRegistry:
    def test_live_policies(self):
        ranking = init_scheduler_by_name("RankingBased")
        assert isinstance(ranking, RankingBasedScheduler) and ranking.available
        nsga2 = init_scheduler_by_name("NSGA2", {"seed": 9})
        assert isinstance(nsga2, NSGA2Scheduler) and nsga2.available
        assert nsga2.params["seed"] == 9
        assert nsga2.params["populationSize"] == 16

    def test_recognized_but_unimplemented(self):
        for name in ("OHNSGA", "NSGA3"):
            placeholder = init_scheduler_by_name(name)
            assert isinstance(placeholder, PlaceholderScheduler)
            assert not placeholder.available
            with pytest.raises(SchedulerUnavailableError):
                placeholder.schedule(None, None)

    def test_unknown_name_is_none(self):
        assert init_scheduler_by_name("RoundRobin") is None

    def test_policies_schedule_through_common_interface(self):
        app = build_application("NaiveFormulaParallelized")
        model = uniform_model(["h1", "h2"])
        for name in ("RankingBased", "NSGA2"):
            decision = init_scheduler_by_name(name).schedule(app, model)
            assert sorted(n for n, _ in decision.assignment) == sorted(app.task_names)
