"""Core type invariants and the node serialization round-trip."""

import pytest

from vragent.errors import ConfigError
from vragent.types import (
    AgentNode,
    EntitySet,
    Observation,
    Query,
    RoiRegion,
    SearchConfig,
    node_from_json,
    node_to_json,
    validate_node,
)


class TestValidateNode:
    def test_fresh_root_is_valid(self):
        assert validate_node(AgentNode(node_id=0)) == []

    def test_reward_out_of_range(self):
        node = AgentNode(node_id=1, reward=7)
        assert any("reward out of range" in v for v in validate_node(node))

    def test_depth_discontinuity(self):
        parent = AgentNode(node_id=0, depth=1)
        child = AgentNode(node_id=1, parent_id=0, depth=3)
        assert any("depth discontinuity" in v for v in validate_node(child, parent))

    def test_cumulative_reward_ceiling(self):
        node = AgentNode(node_id=1, depth=1, parent_id=0, visit_count=2, cumulative_reward=11.0)
        assert any("cumulative reward exceeds" in v for v in validate_node(node))

    def test_observation_length_mismatch(self):
        obs = Observation(ancestor_guidance=["g"], ancestor_answers=[])
        node = AgentNode(node_id=1, parent_id=0, depth=1, observation=obs)
        assert any("ancestor lists" in v for v in validate_node(node))

    def test_total_function_never_raises(self):
        node = AgentNode(node_id=5, depth=-2, reward=9, visit_count=-1,
                         cumulative_reward=-3.0)
        problems = validate_node(node)
        assert len(problems) >= 4


class TestSerialization:
    def test_round_trip_is_field_identical(self):
        obs = Observation(
            ancestor_guidance=["g1", "g2"], ancestor_answers=["a1", "a2"],
            sibling_guidance=["sg"], sibling_answers=["sa"], sibling_feedback=["sf"],
        )
        node = AgentNode(
            node_id=3, parent_id=1, depth=2, roi_index=1, guidance="look left",
            answer="opacity", reward=4, feedback="good", feedback_student="revise",
            refined_answer="opacity, left base", observation=obs, visit_count=3,
            cumulative_reward=11.0, children=[5, 6], flagged=True,
        )
        assert node_from_json(node_to_json(node)) == node

    def test_round_trip_of_defaults(self):
        node = AgentNode(node_id=0)
        assert node_from_json(node_to_json(node)) == node


class TestDomainTypes:
    def test_query_requires_id_and_question(self):
        with pytest.raises(ValueError):
            Query(id="", question="q", image_ref="i")
        with pytest.raises(ValueError):
            Query(id="x", question="", image_ref="i")

    def test_roi_violations(self):
        bad = RoiRegion(bbox=(0.5, 0.1, 0.4, 0.2), confidence=1.5, label="x")
        problems = bad.violations()
        assert len(problems) == 2
        assert RoiRegion(bbox=(0.0, 0.0, 1.0, 1.0), confidence=1.0, label="ok").violations() == []

    def test_entity_set_deduplicates_preserving_order(self):
        es = EntitySet.from_list(["lung", "heart", "lung", " heart "])
        assert es.entities == ("lung", "heart")

    def test_whole_image_fallback_region(self):
        roi = RoiRegion.whole_image()
        assert roi.bbox == (0.0, 0.0, 1.0, 1.0)
        assert roi.confidence == 1.0


class TestSearchConfig:
    def test_defaults_validate(self):
        SearchConfig().validate()

    def test_reflection_threshold_cannot_exceed_early_stop(self):
        with pytest.raises(ConfigError):
            SearchConfig(early_stop_score=3, reflection_score_threshold=4).validate()

    def test_round_trip(self):
        cfg = SearchConfig(max_depth=4, rng_seed=99)
        assert SearchConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            SearchConfig.from_dict({"max_dpeth": 3})
