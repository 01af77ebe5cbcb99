"""Synthetic traffic tests: click model, sampling, drivers, whole-run behavior."""
from __future__ import annotations

import json
import random
from collections import Counter

import httpx
import pytest
from fastapi.testclient import TestClient

from interlab.config import load_config
from interlab.gateway import Gateway, PageResult
from interlab.metrics import aggregate_round
from interlab.model import ClickEvent, InterleavedEntry, TaskType, TeamLabel
from interlab.service import create_app
from interlab.simulator import (
    ClickModel,
    HttpDriver,
    InProcessDriver,
    RelevanceOracle,
    TrafficConfig,
    run_simulation,
    sample_queries,
    simulate_clicks,
    zipf_weights,
)

from conftest import build_site
from test_gateway import StubSystem, stub_gateway, two_stub_systems


def entry(doc, team=TeamLabel.EXP):
    return InterleavedEntry(doc_id=doc, team=team)


ALWAYS_CLICK = ClickModel(decay=1.0, attract_exp=1.0, attract_base=1.0)


class TestClickModel:
    def test_geometric_examination(self):
        model = ClickModel(decay=0.5)
        assert [model.examine_prob(r) for r in (1, 2, 3)] == [1.0, 0.5, 0.25]

    def test_explicit_examination_table_wins(self):
        model = ClickModel(decay=0.5, examination=(1.0, 0.25))
        assert model.examine_prob(1) == 1.0
        assert model.examine_prob(2) == 0.25
        assert model.examine_prob(3) == 0.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"decay": 0.0},
            {"decay": 1.5},
            {"attract_exp": 1.5},
            {"attract_base": -0.1},
            {"examination": (0.5, 1.2)},
            {"elements": ()},
            {"elements": (("Title", 0.5),)},
            {"elements": (("Title", 1.5), ("Details", -0.5))},
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            ClickModel(**kwargs)

    def test_task_presets(self):
        search = ClickModel.for_task(TaskType.RANKING)
        panel = ClickModel.for_task(TaskType.RECOMMENDATION)
        assert search.attract_exp == search.attract_base == 0.65
        assert panel.attract_exp == panel.attract_base == 0.05
        tuned = ClickModel.for_task(TaskType.RANKING, attract_exp=0.9)
        assert (tuned.attract_exp, tuned.attract_base) == (0.9, 0.65)


class TestQuerySampling:
    def test_zipf_weights_values(self):
        assert zipf_weights(4, 1.0) == [1.0, 0.5, 1.0 / 3.0, 0.25]
        assert zipf_weights(3, 0.0) == [1.0, 1.0, 1.0]

    def test_stream_is_deterministic_per_seed(self):
        vocab = [f"q{i}" for i in range(20)]
        config = TrafficConfig(sessions=1, seed=5)
        first = [next(sample_queries(vocab, config)) for _ in range(1)]
        stream_a = sample_queries(vocab, config)
        stream_b = sample_queries(vocab, config)
        draws_a = [next(stream_a) for _ in range(200)]
        draws_b = [next(stream_b) for _ in range(200)]
        assert draws_a == draws_b
        assert first[0] == draws_a[0]
        other = sample_queries(vocab, TrafficConfig(sessions=1, seed=6))
        assert [next(other) for _ in range(200)] != draws_a

    def test_rank_one_to_rank_ten_frequency_ratio(self):
        vocab = [f"q{i:02d}" for i in range(50)]
        stream = sample_queries(vocab, TrafficConfig(sessions=1, seed=17))
        counts = Counter(next(stream) for _ in range(50_000))
        ratio = counts["q00"] / counts["q09"]
        assert 8.0 < ratio < 12.0

    def test_empty_vocabulary_rejected(self):
        with pytest.raises(ValueError, match="vocabulary"):
            next(sample_queries([], TrafficConfig(sessions=1)))


class TestTrafficConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"sessions": -1},
            {"sessions": 1, "queries_per_session": 0.5},
            {"sessions": 1, "zipf_exponent": -0.1},
            {"sessions": 1, "relevant_top_m": -1},
        ],
    )
    def test_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TrafficConfig(**kwargs)


class TestSimulateClicks:
    def test_deterministic_for_equal_seeds(self):
        entries = [entry("a"), entry("b", TeamLabel.BASE), entry("c")]
        model = ClickModel(decay=0.9, attract_exp=0.7, attract_base=0.7)
        first = simulate_clicks(entries, {"a", "b", "c"}, model, 42, ts=10.0)
        second = simulate_clicks(entries, {"a", "b", "c"}, model, 42, ts=10.0)
        assert first == second and first

    def test_certain_model_clicks_every_entry_in_order(self):
        entries = [entry("a"), entry("b", TeamLabel.BASE), entry("c")]
        clicks = simulate_clicks(entries, {"a", "b", "c"}, ALWAYS_CLICK, 1, ts=100.0)
        assert [c.doc_id for c in clicks] == ["a", "b", "c"]
        # Click timestamps step with the page position below the request time.
        assert [c.ts for c in clicks] == [101.0, 102.0, 103.0]

    def test_only_relevant_documents_are_clicked(self):
        entries = [entry("a"), entry("b"), entry("c")]
        clicks = simulate_clicks(entries, {"b"}, ALWAYS_CLICK, 3)
        assert [c.doc_id for c in clicks] == ["b"]
        assert simulate_clicks(entries, frozenset(), ALWAYS_CLICK, 3) == []

    def test_attractiveness_separates_teams(self):
        entries = [entry("a", TeamLabel.EXP), entry("b", TeamLabel.BASE)]
        model = ClickModel(decay=1.0, attract_exp=1.0, attract_base=0.0)
        clicks = simulate_clicks(entries, {"a", "b"}, model, 7)
        assert [c.doc_id for c in clicks] == ["a"]

    def test_single_element_distribution(self):
        model = ClickModel(
            decay=1.0, attract_exp=1.0, attract_base=1.0, elements=(("Order", 1.0),)
        )
        clicks = simulate_clicks([entry("a")], {"a"}, model, 11)
        assert [c.serp_element for c in clicks] == ["Order"]

    def test_element_frequencies_follow_distribution(self):
        rng = random.Random(99)
        counts = Counter()
        for _ in range(20_000):
            (click,) = simulate_clicks([entry("d")], {"d"}, ALWAYS_CLICK, rng)
            counts[click.serp_element] += 1
        assert abs(counts["Details"] / 20_000 - 0.35) < 0.02
        assert abs(counts["Order"] / 20_000 - 0.02) < 0.008

    def test_examination_decays_with_rank(self):
        entries = [entry(f"d{i}") for i in range(5)]
        relevant = {e.doc_id for e in entries}
        model = ClickModel(decay=0.7, attract_exp=1.0, attract_base=1.0)
        rng = random.Random(4)
        by_rank = Counter()
        for _ in range(4_000):
            for click in simulate_clicks(entries, relevant, model, rng):
                by_rank[click.doc_id] += 1
        counts = [by_rank[f"d{i}"] for i in range(5)]
        assert counts == sorted(counts, reverse=True)
        assert counts[0] == 4_000
        assert abs(counts[1] / counts[0] - 0.7) < 0.05


class TestRelevanceOracle:
    class CountingAdapter:
        def __init__(self, inner):
            self.inner = inner
            self.calls = 0
            self.descriptor = inner.descriptor

        def respond(self, request, page, rpp):
            self.calls += 1
            return self.inner.respond(request, page, rpp)

    def test_top_slice_and_caching(self):
        adapter = self.CountingAdapter(StubSystem("ref", ["a", "b", "c", "d"]))
        oracle = RelevanceOracle(adapter, top_m=2)
        assert oracle("covid") == frozenset({"a", "b"})
        assert oracle("covid") == frozenset({"a", "b"})
        assert adapter.calls == 1

    def test_unresponsive_reference_yields_empty_set(self):
        inner = StubSystem("ref", ["a", "b"])
        inner.mode = "silent"
        adapter = self.CountingAdapter(inner)
        oracle = RelevanceOracle(adapter, top_m=2)
        assert oracle("covid") == frozenset()
        assert oracle("covid") == frozenset()
        assert adapter.calls == 1


class RecordingDriver:
    """Driver double that logs calls and serves a fixed two-document page."""

    def __init__(self, impression_ids=True):
        self.impression_ids = impression_ids
        self.calls = []
        self.feedbacks = []

    def page(self, task, request, site_user, ts, rpp):
        self.calls.append((task, request, site_user, ts, rpp))
        return PageResult(
            session_id="s-00000001",
            impression_id=f"imp-{len(self.calls):08d}" if self.impression_ids else None,
            request=request,
            task=task,
            page=0,
            rpp=rpp or 10,
            num_found=2,
            exp_system="cand" if self.impression_ids else None,
            base_system="prod",
            entries=(entry("d1", TeamLabel.EXP), entry("d2", TeamLabel.BASE)),
        )

    def feedback(self, impression_id, clicks):
        self.feedbacks.append((impression_id, tuple(clicks)))


class FailingDriver(RecordingDriver):
    def page(self, task, request, site_user, ts, rpp):
        raise httpx.ConnectError("gateway is gone")


class TestRunShape:
    def test_one_query_sessions_and_schedule(self):
        driver = RecordingDriver()
        config = TrafficConfig(sessions=4, queries_per_session=1.0, seed=3)
        summary = run_simulation(
            driver, config, ALWAYS_CLICK, ["covid"], lambda request: frozenset({"d1", "d2"})
        )
        assert summary.sessions == 4
        assert summary.requests == 4
        assert summary.interleaved_impressions == 4
        assert summary.feedback_posts == 4
        assert summary.clicks == 8
        assert summary.aborted is None
        users = [call[2] for call in driver.calls]
        assert users == [f"sim-user-{i:06d}" for i in range(4)]
        assert [call[3] for call in driver.calls] == [
            config.start_ts + i * 60.0 for i in range(4)
        ]
        assert all(call[0] is TaskType.RANKING for call in driver.calls)
        assert {imp for imp, _ in driver.feedbacks} == {f"imp-{i:08d}" for i in range(1, 5)}

    def test_session_cap_and_intra_session_clock(self):
        driver = RecordingDriver()
        config = TrafficConfig(
            sessions=3, queries_per_session=40.0, max_session_queries=5, seed=1
        )
        run_simulation(driver, config, ALWAYS_CLICK, ["covid"], lambda r: frozenset())
        per_user = Counter(call[2] for call in driver.calls)
        assert set(per_user) == {f"sim-user-{i:06d}" for i in range(3)}
        assert all(1 <= n <= 5 for n in per_user.values())
        for i in range(3):
            stamps = [c[3] for c in driver.calls if c[2] == f"sim-user-{i:06d}"]
            base = config.start_ts + i * 60.0
            assert stamps == [base + 30.0 * j for j in range(len(stamps))]

    def test_baseline_only_pages_counted_without_feedback(self):
        driver = RecordingDriver(impression_ids=False)
        config = TrafficConfig(sessions=5, queries_per_session=1.0, seed=2)
        summary = run_simulation(
            driver, config, ALWAYS_CLICK, ["covid"], lambda r: frozenset({"d1"})
        )
        assert summary.baseline_only_pages == summary.requests == 5
        assert summary.interleaved_impressions == 0
        assert summary.feedback_posts == 0
        assert driver.feedbacks == []

    def test_unreachable_gateway_aborts_with_partial_summary(self):
        summary = run_simulation(
            FailingDriver(),
            TrafficConfig(sessions=3, queries_per_session=1.0, seed=0),
            ALWAYS_CLICK,
            ["covid"],
            lambda r: frozenset(),
        )
        assert summary.aborted is not None
        assert summary.aborted.startswith("gateway unreachable")
        assert summary.requests == 0
        assert summary.sessions == 1

    def test_zero_sessions_is_a_noop(self):
        summary = run_simulation(
            RecordingDriver(),
            TrafficConfig(sessions=0),
            ALWAYS_CLICK,
            [],
            lambda r: frozenset(),
        )
        assert summary.requests == 0 and summary.sessions == 0

    def test_empty_vocabulary_with_traffic_rejected(self):
        with pytest.raises(ValueError, match="vocabulary"):
            run_simulation(
                RecordingDriver(),
                TrafficConfig(sessions=1),
                ALWAYS_CLICK,
                [],
                lambda r: frozenset(),
            )

    def test_summary_dict_keys(self):
        summary = run_simulation(
            RecordingDriver(),
            TrafficConfig(sessions=1, queries_per_session=1.0),
            ALWAYS_CLICK,
            ["covid"],
            lambda r: frozenset(),
        )
        assert summary.to_dict() == {
            "sessions": 1,
            "requests": 1,
            "interleaved_impressions": 1,
            "baseline_only_pages": 0,
            "clicks": 0,
            "feedback_posts": 0,
            "aborted": None,
        }


class TestHttpDriver:
    def make(self, tmp_path):
        gateway = stub_gateway(tmp_path, list(two_stub_systems()))
        client = TestClient(create_app(gateway))
        return gateway, HttpDriver("http://testserver", client=client)

    def test_page_round_trip_matches_store(self, tmp_path):
        gateway, driver = self.make(tmp_path)
        result = driver.page(TaskType.RANKING, "covid", "u-1", ts=77.0, rpp=4)
        assert result.impression_id == "imp-00000001"
        assert result.session_id == "s-00000001"
        assert (result.exp_system, result.base_system) == ("cand", "prod")
        stored = gateway.store.get_impression("imp-00000001")
        assert stored.interleaved.entries == result.entries
        assert stored.ts == 77.0

    def test_feedback_lands_in_store(self, tmp_path):
        gateway, driver = self.make(tmp_path)
        result = driver.page(TaskType.RANKING, "covid", "u-1", ts=77.0, rpp=4)
        driver.feedback(
            result.impression_id,
            [ClickEvent(doc_id=result.entries[0].doc_id, serp_element="Title", ts=78.0)],
        )
        (event,) = gateway.store.snapshot().clicks[result.impression_id]
        assert (event.serp_element, event.ts) == ("Title", 78.0)

    def test_whole_run_over_the_wire(self, tmp_path):
        gateway, driver = self.make(tmp_path)
        config = TrafficConfig(sessions=6, queries_per_session=1.0, seed=9, rpp=4)
        summary = run_simulation(
            driver,
            config,
            ALWAYS_CLICK,
            ["covid"],
            lambda request: frozenset({"e1", "b1"}),
        )
        assert summary.aborted is None
        assert summary.requests == 6
        assert summary.interleaved_impressions == 6
        assert gateway.store.snapshot().total_clicks == summary.clicks > 0


class TestEndToEndBehavior:
    def site_run(self, root, sessions, model, seed=13):
        site = build_site(root)
        gateway = Gateway.from_config(load_config(site["config"]))
        rows = [json.loads(line) for line in site["head_queries"].read_text().splitlines()]
        vocabulary = [row["qstr"] for row in rows]
        oracle = RelevanceOracle(gateway.adapters["base-bm25"], top_m=3)
        config = TrafficConfig(sessions=sessions, seed=seed, rpp=10)
        summary = run_simulation(
            InProcessDriver(gateway), config, model, vocabulary, oracle
        )
        return gateway, summary

    def test_identical_systems_split_decisions_evenly(self, tmp_path):
        model = ClickModel.for_task(TaskType.RANKING)
        gateway, summary = self.site_run(tmp_path, sessions=250, model=model)
        assert summary.aborted is None
        assert summary.interleaved_impressions == summary.requests > 250
        report = aggregate_round(gateway.store.snapshot())
        row = next(r for r in report.systems if r.system == "exp-bm25")
        assert row.wins + row.losses > 30
        assert 0.3 <= row.outcome <= 0.7
        gateway.store.close()

    def test_run_is_reproducible_byte_for_byte(self, tmp_path):
        model = ClickModel.for_task(TaskType.RANKING)
        logs = []
        for name in ("alpha", "beta"):
            (tmp_path / name).mkdir()
            gateway, _ = self.site_run(tmp_path / name, sessions=40, model=model)
            gateway.store.close()
            logs.append((tmp_path / name / "runtime" / "feedback.jsonl").read_bytes())
        assert logs[0] == logs[1]

    def test_more_attractive_experiment_wins(self, tmp_path):
        base = StubSystem("prod", [f"d{i}" for i in range(8)], baseline=True)
        exp = StubSystem("cand", [f"d{i}" for i in range(8)])
        gateway = stub_gateway(tmp_path, [base, exp])
        model = ClickModel(decay=0.7, attract_exp=0.9, attract_base=0.1)
        config = TrafficConfig(sessions=200, queries_per_session=1.0, seed=21, rpp=6)
        run_simulation(
            InProcessDriver(gateway),
            config,
            model,
            ["covid"],
            lambda request: frozenset(f"d{i}" for i in range(8)),
        )
        report = aggregate_round(gateway.store.snapshot())
        row = next(r for r in report.systems if r.system == "cand")
        assert row.wins + row.losses > 50
        assert row.outcome > 0.55

    def test_burying_relevant_documents_loses_every_decision(self, tmp_path):
        docs = [f"d{i}" for i in range(8)]
        base = StubSystem("prod", docs, baseline=True)
        exp = StubSystem("cand", list(reversed(docs)))
        gateway = stub_gateway(tmp_path, [base, exp])
        model = ClickModel(decay=0.7, attract_exp=0.8, attract_base=0.8)
        config = TrafficConfig(sessions=150, queries_per_session=1.0, seed=34, rpp=6)
        run_simulation(
            InProcessDriver(gateway),
            config,
            model,
            ["covid"],
            lambda request: frozenset({"d0", "d1", "d2"}),
        )
        report = aggregate_round(gateway.store.snapshot())
        row = next(r for r in report.systems if r.system == "cand")
        # The experiment never drafts a relevant document onto the page, so
        # every clicked impression is a loss.
        assert row.losses > 40
        assert row.wins == 0
        assert row.outcome == 0.0
