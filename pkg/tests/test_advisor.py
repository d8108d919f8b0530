"""Advisor tests: extraction from fixture logs, Algorithm-style training, voting."""

from __future__ import annotations

import json

import numpy as np
import pytest

from chatassist.advisor import (
    AdviceItem,
    AdviceType,
    AdvisorBundle,
    Ensemble,
    EnsembleAdvisor,
    EnsembleConfig,
    Recommendation,
    advise,
    build_catalog,
    class_space,
    encode_demonstrations,
    evaluate_top_k,
    extract_symbolic_demonstrations,
    item_from_ref,
    tally_votes,
    train_ensemble,
    verify_gate,
    vote,
)
from chatassist.errors import (
    GateUnsatisfiableError,
    InsufficientDataError,
    UnorderedLogError,
)
from chatassist.events import Event, SessionLog
from chatassist.network import (
    ArchConfig,
    LabeledDataset,
    Network,
    NetworkSpec,
    TrainConfig,
)
from chatassist.vectors import (
    InformationVector,
    KnownWordTable,
    LabelList,
    TagEvent,
    apply_tag,
    encode,
)

LABELS = LabelList(labels=("income", "savings", "sex", "university"))
VOCAB = KnownWordTable(LABELS, values={
    "income": ["40k", "60k"],
    "savings": ["10k", "20k"],
    "sex": ["male", "female"],
    "university": ["UCLA", "MIT"],
})

QUICK = EnsembleConfig(
    ensemble_size=5,
    p_threshold=0.5,
    min_rows_per_member=2,
    max_attempts=60,
    arch=ArchConfig(max_depth=2, min_width=4, max_width=8),
    train=TrainConfig(epochs=40, learning_rate=0.3, batch_size=8),
)


def constant_net(input_dim: int, n_classes: int, cls: int) -> Network:
    """A network that votes ``cls`` regardless of input."""
    spec = NetworkSpec(input_dim=input_dim, output_dim=n_classes,
                       hidden_layers=(2,), seed=0)
    bias = np.zeros(n_classes)
    bias[cls] = 10.0
    return Network(spec=spec,
                   weights=[np.zeros((input_dim, 2)), np.zeros((2, n_classes))],
                   biases=[np.zeros(2), bias])


def make_vote_ensemble(votes: list[int], n_classes: int,
                       first: float = 0.40, secondary: float = 0.25) -> Ensemble:
    refs = [f"ask:label{i}" for i in range(1, n_classes)]
    items = {ref: item_from_ref(ref) for ref in refs}
    dummy = LabeledDataset(X=np.zeros((1, 3)), y=np.zeros(1, dtype=np.int64),
                           n_classes=n_classes)
    return Ensemble(
        advice_type=AdviceType.TOPIC_ACQUISITION,
        members=[constant_net(3, n_classes, v) for v in votes],
        member_gate_scores=[1.0] * len(votes),
        classes=[()] + [(ref,) for ref in refs],
        items=items,
        p_threshold=0.0,
        first_option_threshold=first,
        secondary_option_threshold=secondary,
        ensemble_size=len(votes),
        test_data=dummy,
    )


def event(ts, kind, actor, payload, client="c1", session="s1") -> Event:
    return Event(ts_ms=ts, session_id=session, client_id=client, actor=actor,
                 kind=kind, payload=payload)


@pytest.fixture()
def fixture_log() -> SessionLog:
    """Six-event session: ask, answer+tag, calculator use, resolution."""
    events = [
        event(0, "message", "client", {"text": "hi, I need loan help",
                                       "message_index": 0}),
        event(1_000, "message", "operator",
              {"text": "Which university?", "message_index": 0,
               "action": {"kind": "ask", "ref": "university"}}),
        event(2_000, "message", "client", {"text": "I go to UCLA",
                                           "message_index": 1}),
        event(3_000, "tag", "operator",
              {"category": "university", "value": "UCLA", "message_index": 1,
               "source": "manual"}),
        event(4_000, "resource_use", "operator", {"ref": "loan_calculator"}),
        event(5_000, "message", "operator",
              {"text": "Here are your federal loan options...", "message_index": 1,
               "action": {"kind": "provide", "ref": "federal_loan_options"}}),
    ]
    return SessionLog(session_id="s1", events=events)


class TestExtraction:
    def test_hand_traced_fixture(self, fixture_log):
        pairs = extract_symbolic_demonstrations([fixture_log], LABELS, VOCAB)
        blank = InformationVector.blank(LABELS)
        after_tag = apply_tag(
            blank,
            TagEvent(session_id="s1", category="university", value="UCLA",
                     message_index=1, timestamp_ms=3_000),
            LABELS, VOCAB,
        )

        topic = pairs[AdviceType.TOPIC_ACQUISITION]
        assert topic == [(blank, "ask:university"), (after_tag, None)]

        resolution = pairs[AdviceType.RESOLUTION]
        assert resolution == [
            (blank, "provide:federal_loan_options"),
            (after_tag, "provide:federal_loan_options"),
        ]

        useful = pairs[AdviceType.USEFUL_INFORMATION]
        assert useful == [
            (blank, "resource:loan_calculator"),
            (after_tag, "resource:loan_calculator"),
        ]

    def test_final_snapshot_maps_to_silent_class(self, fixture_log):
        pairs = extract_symbolic_demonstrations([fixture_log], LABELS, VOCAB)
        for kind in (AdviceType.TOPIC_ACQUISITION,):
            assert pairs[kind][-1][1] is None
        catalog = build_catalog(pairs)
        classes = class_space(pairs[AdviceType.TOPIC_ACQUISITION], catalog)
        data = encode_demonstrations(pairs[AdviceType.TOPIC_ACQUISITION], VOCAB,
                                     classes)
        assert data.y[-1] == 0  # silent class

    def test_unordered_log_rejected(self, fixture_log):
        fixture_log.events.reverse()
        with pytest.raises(UnorderedLogError):
            extract_symbolic_demonstrations([fixture_log], LABELS, VOCAB)

    def test_catalog_synthesis(self, fixture_log):
        pairs = extract_symbolic_demonstrations([fixture_log], LABELS, VOCAB)
        catalog = build_catalog(pairs)
        assert set(catalog) == {"ask:university", "provide:federal_loan_options",
                                "resource:loan_calculator"}
        assert catalog["ask:university"].type is AdviceType.TOPIC_ACQUISITION
        assert catalog["ask:university"].action_ref == "university"


def opening_question_demos(n_majority: int = 10, n_other: int = 10):
    """Demos teaching: from a blank vector ask university, afterwards ask income."""
    blank = InformationVector.blank(LABELS)
    tagged = apply_tag(
        blank,
        TagEvent(session_id="s", category="university", value="UCLA",
                 message_index=0, timestamp_ms=0),
        LABELS, VOCAB,
    )
    pairs = [(blank, "ask:university")] * n_majority
    pairs += [(tagged, "ask:income")] * n_other
    return pairs


def trained_topic_ensemble(seed: int = 0) -> Ensemble:
    pairs = opening_question_demos()
    items = build_catalog({AdviceType.TOPIC_ACQUISITION: pairs})
    classes = class_space(pairs, items)
    data = encode_demonstrations(pairs, VOCAB, classes)
    return train_ensemble(data, classes, items, AdviceType.TOPIC_ACQUISITION,
                          config=QUICK, rng_seed=seed)


class TestVote:
    def test_unanimity(self):
        ensemble = make_vote_ensemble([1] * 6, n_classes=3, first=0.5)
        rec = vote(ensemble, np.zeros(3))
        assert not rec.silent
        assert len(rec.options) == 1
        assert rec.options[0].rank == 1.0
        assert rec.options[0].items[0].id == "ask:label1"

    def test_split_40_35_25_literal_thresholds(self):
        # 40/35/25 over classes 1/2/3: slot 0 fails 0.5, slot 1 clears 0.3
        votes = [1] * 8 + [2] * 7 + [3] * 5
        ensemble = make_vote_ensemble(votes, n_classes=4, first=0.5, secondary=0.3)
        rec = vote(ensemble, np.zeros(3))
        assert [option.items[0].id for option in rec.options] == ["ask:label2"]
        assert rec.options[0].rank == pytest.approx(0.35)

    def test_all_silent_votes_abstain(self):
        ensemble = make_vote_ensemble([0] * 5, n_classes=3)
        rec = vote(ensemble, np.zeros(3))
        assert rec.silent and rec.options == ()

    def test_silent_class_occupies_a_slot(self):
        # 3 silent votes (60%) take slot 0 but carry nothing; class 1 (40%)
        # occupies slot 1 and clears the secondary threshold
        ensemble = make_vote_ensemble([0, 0, 0, 1, 1], n_classes=3,
                                      first=0.5, secondary=0.25)
        rec = vote(ensemble, np.zeros(3))
        assert [option.class_index for option in rec.options] == [1]
        assert rec.options[0].rank == pytest.approx(0.4)

    def test_member_order_invariance(self):
        votes = [1, 2, 1, 0, 2, 1, 3]
        base = vote(make_vote_ensemble(votes, 4), np.zeros(3))
        rng = np.random.default_rng(0)
        for _ in range(10):
            shuffled = list(rng.permutation(votes))
            assert vote(make_vote_ensemble(shuffled, 4), np.zeros(3)) == base

    def test_at_most_two_options(self):
        votes = [1, 1, 2, 2, 3, 3, 0]
        rec = vote(make_vote_ensemble(votes, 4, first=0.0, secondary=0.0),
                   np.zeros(3))
        assert len(rec.options) <= 2

    def test_threshold_monotonicity_spot_check(self):
        votes = (1, 1, 1, 2, 2, 3)
        base = {cls for cls, _ in tally_votes(votes, 0.2, 0.2)}
        for first in (0.3, 0.5, 0.9):
            for secondary in (0.3, 0.5, 0.9):
                tightened = {cls for cls, _ in tally_votes(votes, first, secondary)}
                assert tightened <= base

    def test_equal_votes_lower_class_index_first(self):
        votes = [2, 1, 2, 1]
        selected = tally_votes(votes, 0.1, 0.1)
        assert [cls for cls, _ in selected] == [1, 2]


class TestTrainEnsemble:
    def test_vacuous_gate_keeps_first_candidates(self):
        pairs = opening_question_demos()
        items = build_catalog({AdviceType.TOPIC_ACQUISITION: pairs})
        classes = class_space(pairs, items)
        data = encode_demonstrations(pairs, VOCAB, classes)
        config = EnsembleConfig(
            ensemble_size=3, p_threshold=0.0, min_rows_per_member=2,
            arch=QUICK.arch, train=TrainConfig(epochs=2, learning_rate=0.1),
        )
        ensemble = train_ensemble(data, classes, items,
                                  AdviceType.TOPIC_ACQUISITION, config, rng_seed=1)
        assert len(ensemble.members) == 3

    def test_impossible_gate_raises(self):
        rng = np.random.default_rng(0)
        data = LabeledDataset(X=rng.normal(size=(40, 4)),
                              y=rng.integers(0, 2, size=40), n_classes=2)
        classes = [(), ("ask:income",)]
        items = {"ask:income": item_from_ref("ask:income")}
        config = EnsembleConfig(
            ensemble_size=2, p_threshold=1.0, min_rows_per_member=2, max_attempts=4,
            arch=QUICK.arch, train=TrainConfig(epochs=2, learning_rate=0.1),
        )
        with pytest.raises(GateUnsatisfiableError):
            train_ensemble(data, classes, items, AdviceType.TOPIC_ACQUISITION,
                           config, rng_seed=2)

    def test_insufficient_rows(self):
        pairs = opening_question_demos(3, 3)
        items = build_catalog({AdviceType.TOPIC_ACQUISITION: pairs})
        classes = class_space(pairs, items)
        data = encode_demonstrations(pairs, VOCAB, classes)
        with pytest.raises(InsufficientDataError):
            train_ensemble(data, classes, items, AdviceType.TOPIC_ACQUISITION,
                           EnsembleConfig(ensemble_size=5, min_rows_per_member=10),
                           rng_seed=0)

    def test_single_class_rejected(self):
        pairs = [(InformationVector.blank(LABELS), "ask:income")] * 40
        items = build_catalog({AdviceType.TOPIC_ACQUISITION: pairs})
        classes = class_space(pairs, items)
        data = encode_demonstrations(pairs, VOCAB, classes)
        with pytest.raises(InsufficientDataError):
            train_ensemble(data, classes, items, AdviceType.TOPIC_ACQUISITION,
                           QUICK, rng_seed=0)

    def test_deterministic_given_seed(self):
        a = trained_topic_ensemble(seed=5)
        b = trained_topic_ensemble(seed=5)
        from chatassist.advisor import ensemble_to_dict
        assert json.dumps(ensemble_to_dict(a), sort_keys=True) == \
            json.dumps(ensemble_to_dict(b), sort_keys=True)

    def test_every_member_cleared_the_gate(self):
        ensemble = trained_topic_ensemble()
        assert all(score > ensemble.p_threshold
                   for score in ensemble.member_gate_scores)
        verify_gate(ensemble)


class TestAdvise:
    def test_opening_question_recommended_from_blank(self):
        ensemble = trained_topic_ensemble()
        recs = advise(InformationVector.blank(LABELS),
                      {AdviceType.TOPIC_ACQUISITION: ensemble}, VOCAB)
        topic = recs[AdviceType.TOPIC_ACQUISITION]
        assert not topic.silent
        assert topic.options[0].items[0].id == "ask:university"

    def test_fully_known_vector_silences_topic_advice(self):
        ensemble = trained_topic_ensemble()
        x = InformationVector(V=("40k", "10k", "male", "UCLA"), W=(1, 1, 1, 1), t=4)
        recs = advise(x, {AdviceType.TOPIC_ACQUISITION: ensemble}, VOCAB)
        assert recs[AdviceType.TOPIC_ACQUISITION].silent

    def test_types_without_ensembles_stay_silent(self):
        ensemble = trained_topic_ensemble()
        recs = advise(InformationVector.blank(LABELS),
                      {AdviceType.TOPIC_ACQUISITION: ensemble}, VOCAB)
        assert recs[AdviceType.RESOLUTION].silent
        assert recs[AdviceType.USEFUL_INFORMATION].silent

    def test_selective_service_resource_for_male_applicant(self):
        # demos: male applicants were shown the registration-requirement page
        blank = InformationVector.blank(LABELS)
        male = apply_tag(blank, TagEvent(session_id="s", category="sex",
                                         value="male", message_index=0,
                                         timestamp_ms=0), LABELS, VOCAB)
        female = apply_tag(blank, TagEvent(session_id="s", category="sex",
                                           value="female", message_index=0,
                                           timestamp_ms=0), LABELS, VOCAB)
        pairs = [(male, "resource:selective_service_info")] * 12
        pairs += [(female, None)] * 12
        items = build_catalog({AdviceType.USEFUL_INFORMATION: pairs})
        classes = class_space(pairs, items)
        data = encode_demonstrations(pairs, VOCAB, classes)
        ensemble = train_ensemble(data, classes, items,
                                  AdviceType.USEFUL_INFORMATION, QUICK, rng_seed=3)
        recs = advise(male, {AdviceType.USEFUL_INFORMATION: ensemble}, VOCAB)
        ids = [item.id for option in recs[AdviceType.USEFUL_INFORMATION].options
               for item in option.items]
        assert "resource:selective_service_info" in ids


class TestEvaluateTopK:
    def test_single_perfect_member(self):
        # identity-style net: logits echo the one-hot input
        spec = NetworkSpec(input_dim=3, output_dim=3, hidden_layers=(3,), seed=0)
        member = Network(spec=spec,
                         weights=[np.eye(3) * 5.0, np.eye(3) * 5.0],
                         biases=[np.zeros(3), np.zeros(3)])
        ensemble = make_vote_ensemble([0], n_classes=3)
        ensemble.members = [member]
        X = np.eye(3)
        data = LabeledDataset(X=X, y=np.array([0, 1, 2]), n_classes=3)
        assert evaluate_top_k(ensemble, data, k=1) == 1.0

    def test_k_at_least_class_count(self):
        ensemble = make_vote_ensemble([1, 2, 0], n_classes=3)
        data = LabeledDataset(X=np.zeros((6, 3)),
                              y=np.array([0, 1, 2, 0, 1, 2]), n_classes=3)
        assert evaluate_top_k(ensemble, data, k=3) == 1.0

    def test_hand_counted_fixture(self):
        # members always vote [1,1,2,0,3] -> counts c0=1,c1=2,c2=1,c3=1
        # vote-count ranking: class 1 first, then 0, 2, 3 by index; top-2={1,0}
        ensemble = make_vote_ensemble([1, 1, 2, 0, 3], n_classes=4)
        y = np.array([0, 1, 2, 3, 1, 1, 0, 2, 3, 1])
        data = LabeledDataset(X=np.zeros((10, 3)), y=y, n_classes=4)
        expected = sum(1 for cls in y if cls in (0, 1)) / 10
        assert evaluate_top_k(ensemble, data, k=2) == expected


class TestBundle:
    def test_roundtrip_and_gate_reverify(self):
        ensemble = trained_topic_ensemble()
        bundle = AdvisorBundle(schema_hash="abc123",
                               ensembles={AdviceType.TOPIC_ACQUISITION: ensemble})
        payload = json.loads(json.dumps(bundle.to_dict()))
        loaded = AdvisorBundle.from_dict(payload)
        restored = loaded.ensembles[AdviceType.TOPIC_ACQUISITION]
        scores = verify_gate(restored)
        assert scores == ensemble.member_gate_scores
        assert restored.test_digest == ensemble.test_digest

    def test_tampered_gate_detected(self):
        ensemble = trained_topic_ensemble()
        ensemble.p_threshold = 1.0
        with pytest.raises(GateUnsatisfiableError):
            verify_gate(ensemble)

    def test_recommendations_identical_after_reload(self):
        ensemble = trained_topic_ensemble()
        bundle = AdvisorBundle(schema_hash="x",
                               ensembles={AdviceType.TOPIC_ACQUISITION: ensemble})
        loaded = AdvisorBundle.from_dict(json.loads(json.dumps(bundle.to_dict())))
        x = encode(InformationVector.blank(LABELS), VOCAB)
        assert vote(loaded.ensembles[AdviceType.TOPIC_ACQUISITION], x) == \
            vote(ensemble, x)


class TestEstimatorFacade:
    def test_fit_predict_on_separable_data(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(120, 4))
        y = (X[:, 0] > 0).astype(np.int64) + 1  # classes 1 and 2; 0 stays silent
        advisor = EnsembleAdvisor(ensemble_size=3, p_threshold=0.5, max_attempts=30,
                                  max_depth=2, min_width=4, max_width=8,
                                  epochs=25, learning_rate=0.3, random_state=0)
        advisor.fit(X, y)
        accuracy = (advisor.predict(X) == y).mean()
        assert accuracy >= 0.9

    def test_get_params_roundtrip(self):
        advisor = EnsembleAdvisor(ensemble_size=7)
        params = advisor.get_params()
        assert params["ensemble_size"] == 7
        clone = EnsembleAdvisor(**params)
        assert clone.get_params() == params

    def test_predict_proba_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 4))
        y = (X[:, 1] > 0).astype(np.int64) + 1
        advisor = EnsembleAdvisor(ensemble_size=3, p_threshold=0.4, max_attempts=30,
                                  max_depth=1, min_width=4, max_width=6,
                                  epochs=20, learning_rate=0.3, random_state=1)
        advisor.fit(X, y)
        shares = advisor.predict_proba(X[:5])
        assert np.allclose(shares.sum(axis=1), 1.0)
