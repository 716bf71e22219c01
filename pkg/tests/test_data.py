import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subgraph_infomax.data import (
    DatasetBundle,
    ExpectedStats,
    ObservationProtocol,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    make_splits,
    sample_observed,
    save_bundle,
    validate_bundle,
)
from subgraph_infomax.graph import GlobalGraph, SubgraphRecord


def ordered_record():
    return SubgraphRecord(
        node_ids=(1, 2, 3, 4, 5),
        edge_pairs=(),
        label=0,
        observation_order=(4, 2, 5, 1, 3),
    )


def big_record(n=30):
    return SubgraphRecord(node_ids=tuple(range(n)), edge_pairs=(), label=0)


class TestSampleObserved:
    def test_ordered_prefix(self):
        protocol = ObservationProtocol(n_obs=3, ordered=True, train_jitter=False)
        got = sample_observed(ordered_record(), protocol, "train", np.random.default_rng(0))
        assert got == (4, 2, 5)

    def test_ordered_always_prefix_property(self):
        record = ordered_record()
        for n_obs in range(1, 6):
            protocol = ObservationProtocol(n_obs=n_obs, ordered=True, train_jitter=False)
            got = sample_observed(record, protocol, "val")
            assert got == record.observation_order[:n_obs]

    def test_ordered_without_order_rejected(self):
        protocol = ObservationProtocol(n_obs=2, ordered=True)
        with pytest.raises(ValueError):
            sample_observed(big_record(), protocol, "val")

    def test_eval_sets_frozen_across_calls(self):
        protocol = ObservationProtocol(n_obs=4)
        record = big_record()
        first = sample_observed(record, protocol, "val")
        second = sample_observed(record, protocol, "val")
        assert first == second

    def test_val_and_test_sets_differ_in_general(self):
        protocol = ObservationProtocol(n_obs=6)
        record = big_record()
        assert sample_observed(record, protocol, "val") != sample_observed(record, protocol, "test")

    def test_eval_seed_changes_frozen_sets(self):
        record = big_record()
        a = sample_observed(record, ObservationProtocol(n_obs=5, eval_fixed_seed=1), "test")
        b = sample_observed(record, ObservationProtocol(n_obs=5, eval_fixed_seed=2), "test")
        assert a != b

    def test_train_jitter_covers_all_five_sizes(self):
        protocol = ObservationProtocol(n_obs=8, train_jitter=True)
        record = big_record()
        rng = np.random.default_rng(0)
        sizes = {
            len(sample_observed(record, protocol, "train", rng)) for _ in range(1000)
        }
        assert sizes == {6, 7, 8, 9, 10}

    def test_train_resampling_varies(self):
        protocol = ObservationProtocol(n_obs=4, train_jitter=False)
        record = big_record()
        rng = np.random.default_rng(0)
        seen = {sample_observed(record, protocol, "train", rng) for _ in range(100)}
        assert len(seen) >= 2

    def test_sizes_clamped_to_subgraph(self):
        small = SubgraphRecord(node_ids=(0, 1, 2), edge_pairs=(), label=0)
        protocol = ObservationProtocol(n_obs=10, train_jitter=False)
        assert len(sample_observed(small, protocol, "val")) == 3

    def test_train_requires_rng(self):
        protocol = ObservationProtocol(n_obs=2)
        with pytest.raises(ValueError):
            sample_observed(big_record(), protocol, "train")


class TestMakeSplits:
    def test_seventy_fifteen_fifteen(self):
        assignment = make_splits(100, (0.7, 0.15, 0.15), seed=0)
        counts = {s: assignment.count(s) for s in ("train", "val", "test")}
        assert counts == {"train": 70, "val": 15, "test": 15}

    def test_all_train(self):
        assert set(make_splits(10, (1.0, 0.0, 0.0), seed=0)) == {"train"}

    def test_deterministic_per_seed(self):
        assert make_splits(50, (0.7, 0.15, 0.15), seed=3) == make_splits(50, (0.7, 0.15, 0.15), seed=3)

    def test_negative_ratio_rejected(self):
        with pytest.raises(ValueError):
            make_splits(10, (1.2, -0.2, 0.0), seed=0)

    def test_ratios_must_sum_to_one(self):
        with pytest.raises(ValueError):
            make_splits(10, (0.5, 0.2, 0.2), seed=0)


class TestSynthetic:
    def test_deterministic_bundle(self):
        spec = SyntheticSpec(num_nodes=80, num_subgraphs=20, seed=11)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        assert a.graph.edges == b.graph.edges
        assert all(
            ra.node_ids == rb.node_ids and ra.label == rb.label
            for ra, rb in zip(a.records, b.records)
        )
        assert np.array_equal(a.embedding_values, b.embedding_values)
        assert a.splits == b.splits

    def test_bundle_passes_validator(self):
        bundle = generate_synthetic(SyntheticSpec(num_nodes=120, num_subgraphs=30, seed=2))
        validate_bundle(bundle)

    def test_sizes_respect_observation_floor(self):
        spec = SyntheticSpec(num_nodes=100, num_subgraphs=15, n_obs=6,
                             subgraph_size_min=4, subgraph_size_max=12, seed=3)
        bundle = generate_synthetic(spec)
        assert all(len(r.node_ids) >= spec.n_obs + 2 for r in bundle.records)

    def test_noise_free_features_reveal_community(self):
        # With zero noise and zero leak, every node of a subgraph carries its
        # community's exact indicator pattern: any 4 observed rows vote the label.
        spec = SyntheticSpec(
            num_nodes=100, num_subgraphs=12, feature_noise=0.0,
            community_leak=0.0, seed=4,
        )
        bundle = generate_synthetic(spec)
        features = bundle.embedding_values
        for record in bundle.records:
            for start in range(0, len(record.node_ids) - 3):
                block = [features[n] for n in record.node_ids[start : start + 4]]
                votes = [int(np.argmax(row[: spec.communities])) for row in block]
                majority = np.bincount(votes).argmax()
                assert majority == record.label

    def test_observation_order_is_walk_order(self):
        bundle = generate_synthetic(SyntheticSpec(num_nodes=80, num_subgraphs=10, seed=6))
        for record in bundle.records:
            assert record.observation_order is not None
            assert sorted(record.observation_order) == list(record.node_ids)

    def test_infeasible_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(num_nodes=10, subgraph_size_max=50)


class TestBundle:
    def test_frozen_eval_consistent_across_instances(self):
        spec = SyntheticSpec(num_nodes=90, num_subgraphs=16, seed=8)
        protocol = ObservationProtocol(n_obs=3)
        a = generate_synthetic(spec).frozen_eval(protocol, "test")
        b = generate_synthetic(spec).frozen_eval(protocol, "test")
        assert a == b

    def test_frozen_eval_rejects_train(self):
        bundle = generate_synthetic(SyntheticSpec(num_nodes=90, num_subgraphs=16, seed=8))
        with pytest.raises(ValueError):
            bundle.frozen_eval(ObservationProtocol(), "train")

    def test_majority_class_rate(self):
        graph = GlobalGraph(4, [(0, 1), (1, 0)])
        records = tuple(
            SubgraphRecord(node_ids=(0, 1), edge_pairs=((0, 1), (1, 0)), label=lab)
            for lab in (0, 0, 1)
        )
        bundle = DatasetBundle(graph, records, 2, ("test", "test", "test"))
        assert bundle.majority_class_rate("test") == pytest.approx(2 / 3)

    def test_validator_rejects_foreign_edge(self):
        graph = GlobalGraph(4, [(0, 1), (1, 0)])
        record = SubgraphRecord(node_ids=(2, 3), edge_pairs=((2, 3),), label=0)
        bundle = DatasetBundle(graph, (record,), 1, ("train",))
        with pytest.raises(ValueError, match="not a global edge"):
            validate_bundle(bundle)


class TestFileRoundTrip:
    def test_save_and_load_reproduce_bundle(self, tmp_path):
        spec = SyntheticSpec(num_nodes=70, num_subgraphs=12, seed=9)
        bundle = generate_synthetic(spec)
        paths = save_bundle(bundle, tmp_path)
        loaded = load_dataset(
            paths["edges"],
            paths["subgraphs"],
            embeddings=paths["embeddings"],
            split=paths["splits"],
        )
        assert loaded.graph.num_nodes == bundle.graph.num_nodes
        assert loaded.graph.edges == bundle.graph.edges
        assert loaded.splits == bundle.splits
        assert np.array_equal(loaded.embedding_values, bundle.embedding_values)
        for got, want in zip(loaded.records, bundle.records):
            assert got.node_ids == want.node_ids
            assert got.label == want.label
            assert got.edge_pairs == want.edge_pairs
            assert got.observation_order == want.observation_order

    def test_malformed_edge_line_reports_lineno(self, tmp_path):
        edge_file = tmp_path / "edges.txt"
        edge_file.write_text("0 1\n0 1 2\n", encoding="utf-8")
        sub_file = tmp_path / "subs.tsv"
        sub_file.write_text("0\t0,1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="edges.txt:2"):
            load_dataset(edge_file, sub_file)

    def test_single_node_subgraphs_excluded(self, tmp_path, caplog):
        (tmp_path / "edges.txt").write_text("0 1\n1 2\n", encoding="utf-8")
        (tmp_path / "subs.tsv").write_text("0\t0,1\n1\t2\n", encoding="utf-8")
        with caplog.at_level("WARNING"):
            bundle = load_dataset(tmp_path / "edges.txt", tmp_path / "subs.tsv")
        assert len(bundle.records) == 1
        assert any("single-node" in r.message for r in caplog.records)

    def test_empty_subgraph_file_warns(self, tmp_path, caplog):
        (tmp_path / "edges.txt").write_text("0 1\n", encoding="utf-8")
        (tmp_path / "subs.tsv").write_text("", encoding="utf-8")
        with caplog.at_level("WARNING"):
            bundle = load_dataset(tmp_path / "edges.txt", tmp_path / "subs.tsv")
        assert bundle.records == ()
        assert any("empty" in r.message for r in caplog.records)

    def test_expected_stats_mismatch_raises(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 1\n", encoding="utf-8")
        (tmp_path / "subs.tsv").write_text("0\t0,1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="subgraph count"):
            load_dataset(
                tmp_path / "edges.txt",
                tmp_path / "subs.tsv",
                expected=ExpectedStats(num_subgraphs=99),
            )

    def test_expected_stats_match_passes(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 1\n1 2\n", encoding="utf-8")
        (tmp_path / "subs.tsv").write_text("5\t0,1\n7\t1,2\n", encoding="utf-8")
        bundle = load_dataset(
            tmp_path / "edges.txt",
            tmp_path / "subs.tsv",
            expected=ExpectedStats(num_subgraphs=2, num_classes=2, num_global_nodes=3),
        )
        assert bundle.num_classes == 2
        assert {r.label for r in bundle.records} == {0, 1}

    def test_undirected_symmetrization(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 1\n", encoding="utf-8")
        (tmp_path / "subs.tsv").write_text("0\t0,1\n", encoding="utf-8")
        bundle = load_dataset(tmp_path / "edges.txt", tmp_path / "subs.tsv")
        assert bundle.graph.edges == ((0, 1), (1, 0))
        directed = load_dataset(tmp_path / "edges.txt", tmp_path / "subs.tsv", directed=True)
        assert directed.graph.edges == ((0, 1),)
