"""Learning-from-demonstration advice: extraction, ensemble training, voting.

Demonstration pairs couple an information-vector snapshot with the operator
action that followed it.  Per advice type, an ensemble of randomly generated
networks is trained on resampled subsets and accuracy-gated; at advice time
each member casts its top class and the two most common options pass vote-share
thresholds, so the recommender can offer one option, two, or stay silent.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import (
    DimMismatchError,
    GateUnsatisfiableError,
    InsufficientDataError,
    UnknownActionRefError,
)
from .events import Event, SessionLog
from .ioutil import digest
from .network import (
    ArchConfig,
    LabeledDataset,
    Network,
    TrainConfig,
    generate_random_network,
    network_from_dict,
    network_to_dict,
    predict_proba,
    top_k_accuracy,
    train,
)
from .vectors import (
    InformationVector,
    KnownWordTable,
    LabelList,
    TagEvent,
    apply_tag,
    encode,
    encoded_length,
)

BUNDLE_FORMAT_VERSION = 1

#: Class index reserved for "no advice" in every ensemble's class space.
SILENT_CLASS = 0


class AdviceType(str, enum.Enum):
    TOPIC_ACQUISITION = "topic_acquisition"
    RESOLUTION = "resolution"
    USEFUL_INFORMATION = "useful_information"


#: Action-ref prefix per advice type, e.g. "ask:university".
ACTION_PREFIX = {
    AdviceType.TOPIC_ACQUISITION: "ask",
    AdviceType.RESOLUTION: "provide",
    AdviceType.USEFUL_INFORMATION: "resource",
}
TYPE_OF_PREFIX = {prefix: kind for kind, prefix in ACTION_PREFIX.items()}


@dataclass(frozen=True)
class AdviceItem:
    """One advisable action: a question to ask, an answer to give, a resource to open."""

    id: str
    type: AdviceType
    display_text: str
    action_ref: str | None = None


def item_from_ref(item_id: str) -> AdviceItem:
    """Synthesize a displayable item from an action id like ``ask:university``."""
    prefix, _, ref = item_id.partition(":")
    if prefix not in TYPE_OF_PREFIX or not ref:
        raise UnknownActionRefError(f"malformed action id {item_id!r}")
    kind = TYPE_OF_PREFIX[prefix]
    words = ref.replace("_", " ")
    text = {
        AdviceType.TOPIC_ACQUISITION: f"Ask the client about their {words}",
        AdviceType.RESOLUTION: f"Provide: {words}",
        AdviceType.USEFUL_INFORMATION: f"Open: {words}",
    }[kind]
    return AdviceItem(id=item_id, type=kind, display_text=text, action_ref=ref)


@dataclass(frozen=True)
class RankedOption:
    """One voted advice-set with its vote share and the items it carries."""

    class_index: int
    rank: float
    items: tuple[AdviceItem, ...]


@dataclass(frozen=True)
class Recommendation:
    """At most two advice-sets, or silence."""

    options: tuple[RankedOption, ...] = ()

    @property
    def silent(self) -> bool:
        return not self.options

    def to_payload(self) -> dict:
        return {
            "silent": self.silent,
            "options": [
                {
                    "rank": option.rank,
                    "items": [
                        {"id": item.id, "display_text": item.display_text}
                        for item in option.items
                    ],
                }
                for option in self.options
            ],
        }


@dataclass
class Ensemble:
    """Trained ensemble for one advice type, plus everything needed to audit it.

    ``classes[0]`` is always the empty (silent) set.  The held-out rows used to
    gate members are archived so the gate can be re-verified from a bundle.
    """

    advice_type: AdviceType
    members: list[Network]
    member_gate_scores: list[float]
    classes: list[tuple[str, ...]]
    items: dict[str, AdviceItem]
    p_threshold: float
    first_option_threshold: float
    secondary_option_threshold: float
    ensemble_size: int
    test_data: LabeledDataset
    train_digest: str = ""
    test_digest: str = ""

    def __post_init__(self) -> None:
        if not self.classes or self.classes[SILENT_CLASS] != ():
            raise ValueError("classes[0] must be the empty (silent) set")
        if len(self.members) != self.ensemble_size:
            raise ValueError("member count differs from the configured ensemble size")

    @property
    def input_dim(self) -> int:
        return self.members[0].spec.input_dim

    def class_items(self, class_index: int) -> tuple[AdviceItem, ...]:
        return tuple(self.items[item_id] for item_id in self.classes[class_index])


# --- demonstration extraction ------------------------------------------------


def _operator_actions(events: Sequence[Event], client_id: str) -> list[tuple[int, AdviceType, str]]:
    """(event position, advice type, action id) for each observable operator action."""
    actions = []
    for position, event in enumerate(events):
        if event.client_id != client_id or event.actor != "operator":
            continue
        if event.kind == "message":
            action = event.payload.get("action")
            if not action:
                continue
            kind, ref = action.get("kind"), action.get("ref")
            if kind == "ask" and ref:
                actions.append((position, AdviceType.TOPIC_ACQUISITION, f"ask:{ref}"))
            elif kind == "provide" and ref:
                actions.append((position, AdviceType.RESOLUTION, f"provide:{ref}"))
        elif event.kind == "resource_use":
            ref = event.payload.get("ref")
            if ref:
                actions.append((position, AdviceType.USEFUL_INFORMATION, f"resource:{ref}"))
    return actions


def _tag_events(events: Sequence[Event], client_id: str,
                session_id: str) -> list[tuple[int, TagEvent]]:
    tags = []
    for position, event in enumerate(events):
        if event.client_id != client_id or event.kind != "tag":
            continue
        payload = event.payload
        tags.append((position, TagEvent(
            session_id=session_id,
            category=payload["category"],
            value=payload["value"],
            message_index=int(payload.get("message_index", 0)),
            timestamp_ms=event.ts_ms,
            source=payload.get("source", "manual"),
        )))
    return tags


SymbolicPair = tuple[InformationVector, "str | None"]


def extract_symbolic_demonstrations(
    logs: Iterable[SessionLog],
    labels: LabelList,
    vocab: KnownWordTable,
) -> dict[AdviceType, list[SymbolicPair]]:
    """Snapshot/next-action pairs per advice type, still in symbolic form.

    For every client: each tag produces a snapshot, and the target for each
    advice type is the operator's next observable action of that type after
    the snapshot (None when no such action follows).
    """
    pairs: dict[AdviceType, list[SymbolicPair]] = {kind: [] for kind in AdviceType}
    for log in logs:
        log.validate_order()
        for client_id in log.client_ids:
            actions = _operator_actions(log.events, client_id)
            snapshots: list[tuple[int, InformationVector]] = [
                (-1, InformationVector.blank(labels))
            ]
            current = snapshots[0][1]
            for position, tag in _tag_events(log.events, client_id, log.session_id):
                updated = apply_tag(current, tag, labels, vocab)
                if updated is not current:
                    snapshots.append((position, updated))
                    current = updated
            for snap_position, snapshot in snapshots:
                for kind in AdviceType:
                    target = next(
                        (action_id for position, action_kind, action_id in actions
                         if position > snap_position and action_kind is kind),
                        None,
                    )
                    pairs[kind].append((snapshot, target))
    return pairs


def build_catalog(
    symbolic: Mapping[AdviceType, Sequence[SymbolicPair]],
    base_items: Mapping[str, AdviceItem] | None = None,
) -> dict[str, AdviceItem]:
    """Close the advice-item universe over the action ids observed in the data.

    ``base_items`` supplies display texts for ids it knows; everything else is
    synthesized from the id.
    """
    base_items = base_items or {}
    catalog: dict[str, AdviceItem] = {}
    for pairs in symbolic.values():
        for _, action_id in pairs:
            if action_id is None or action_id in catalog:
                continue
            catalog[action_id] = base_items.get(action_id) or item_from_ref(action_id)
    return dict(sorted(catalog.items()))


def class_space(
    symbolic_pairs: Sequence[SymbolicPair], items: Mapping[str, AdviceItem]
) -> list[tuple[str, ...]]:
    """Silent class plus one singleton class per distinct observed action id."""
    refs = sorted({action_id for _, action_id in symbolic_pairs if action_id is not None})
    for ref in refs:
        if ref not in items:
            raise UnknownActionRefError(f"action id {ref!r} is not in the catalog")
    return [()] + [(ref,) for ref in refs]


def encode_demonstrations(
    symbolic_pairs: Sequence[SymbolicPair],
    vocab: KnownWordTable,
    classes: Sequence[tuple[str, ...]],
) -> LabeledDataset:
    index_of = {cls: i for i, cls in enumerate(tuple(c) for c in classes)}
    X = np.stack([encode(x, vocab) for x, _ in symbolic_pairs]) if symbolic_pairs \
        else np.zeros((0, encoded_length(vocab)))
    y = np.empty(len(symbolic_pairs), dtype=np.int64)
    for row, (_, action_id) in enumerate(symbolic_pairs):
        key = () if action_id is None else (action_id,)
        if key not in index_of:
            raise UnknownActionRefError(f"action id {action_id!r} has no class")
        y[row] = index_of[key]
    return LabeledDataset(X=X, y=y, n_classes=len(classes))


def extract_demonstrations(
    logs: Iterable[SessionLog],
    labels: LabelList,
    vocab: KnownWordTable,
    items: Mapping[str, AdviceItem],
) -> dict[AdviceType, tuple[LabeledDataset, list[tuple[str, ...]]]]:
    """Encoded demonstration datasets per advice type, with their class spaces."""
    symbolic = extract_symbolic_demonstrations(logs, labels, vocab)
    out = {}
    for kind in AdviceType:
        kind_items = {i: item for i, item in items.items() if item.type is kind}
        classes = class_space(symbolic[kind], kind_items)
        out[kind] = (encode_demonstrations(symbolic[kind], vocab, classes), classes)
    return out


# --- ensemble training (resample, generate, train, gate) ---------------------


@dataclass(frozen=True)
class EnsembleConfig:
    ensemble_size: int = 25
    p_threshold: float | None = None  # None: majority-class share + 0.05
    first_option_threshold: float = 0.40
    secondary_option_threshold: float = 0.25
    test_fraction: float = 0.2
    min_rows_per_member: int = 10
    max_attempts: int = 400
    arch: ArchConfig = ArchConfig()
    train: TrainConfig = TrainConfig()


def majority_class_share(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.bincount(y).max() / len(y))


def _random_subset(rng: np.random.Generator, n_rows: int) -> np.ndarray:
    return rng.integers(0, n_rows, size=n_rows)


def _balanced_subset(rng: np.random.Generator, y: np.ndarray) -> np.ndarray:
    """Equal rows per present class, each resampled with replacement.

    The per-class count is the median class frequency of the source rows.
    """
    present = np.unique(y)
    counts = np.array([(y == cls).sum() for cls in present])
    per_class = max(1, int(round(float(np.median(counts)))))
    picks = [
        rng.choice(np.flatnonzero(y == cls), size=per_class, replace=True)
        for cls in present
    ]
    return np.concatenate(picks)


def train_ensemble(
    data: LabeledDataset,
    classes: Sequence[tuple[str, ...]],
    items: Mapping[str, AdviceItem],
    advice_type: AdviceType,
    config: EnsembleConfig | None = None,
    rng_seed: int = 0,
) -> Ensemble:
    """Grow an ensemble until enough gated members are kept.

    Per candidate: flip between a bootstrap subset and a class-balanced subset,
    generate a random-architecture network, train it, and keep it only when
    its top-1 accuracy on the one fixed held-out split beats the gate.  Aborts
    after ``max_attempts`` consecutive-run rejections in total.
    """
    config = config or EnsembleConfig()
    if len(np.unique(data.y)) < 2:
        raise InsufficientDataError("need at least 2 distinct classes")
    floor = config.min_rows_per_member * config.ensemble_size
    if len(data) < floor:
        raise InsufficientDataError(f"need at least {floor} rows, got {len(data)}")

    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(data))
    n_test = max(1, int(round(len(data) * config.test_fraction)))
    test = data.subset(order[:n_test])
    train_rows = data.subset(order[n_test:])

    p_threshold = config.p_threshold
    if p_threshold is None:
        p_threshold = majority_class_share(data.y) + 0.05

    members: list[Network] = []
    gate_scores: list[float] = []
    rejections = 0
    while len(members) < config.ensemble_size:
        num = float(rng.uniform())
        if num > 0.5:
            subset = train_rows.subset(_random_subset(rng, len(train_rows)))
        else:
            subset = train_rows.subset(_balanced_subset(rng, train_rows.y))
        candidate = generate_random_network(
            int(rng.integers(0, 2**63)), data.X.shape[1], data.n_classes, config.arch
        )
        trained = train(candidate, subset, config.train)
        score = top_k_accuracy(trained, test, k=1)
        if score > p_threshold:
            members.append(trained)
            gate_scores.append(score)
        else:
            rejections += 1
            if rejections >= config.max_attempts:
                raise GateUnsatisfiableError(
                    f"{rejections} candidates failed the {p_threshold:.3f} gate; "
                    "lower p_threshold or provide more data"
                )
    return Ensemble(
        advice_type=advice_type,
        members=members,
        member_gate_scores=gate_scores,
        classes=[tuple(c) for c in classes],
        items=dict(items),
        p_threshold=p_threshold,
        first_option_threshold=config.first_option_threshold,
        secondary_option_threshold=config.secondary_option_threshold,
        ensemble_size=config.ensemble_size,
        test_data=test,
        train_digest=dataset_digest(train_rows),
        test_digest=dataset_digest(test),
    )


def dataset_digest(data: LabeledDataset) -> str:
    return digest({"X": data.X.tolist(), "y": data.y.tolist(),
                   "n_classes": data.n_classes})


# --- voting -------------------------------------------------------------------


def tally_votes(
    votes: Sequence[int],
    first_option_threshold: float,
    secondary_option_threshold: float,
) -> list[tuple[int, float]]:
    """Thresholded two-slot majority rule over raw member votes.

    The two most common options are ranked by vote share; slot 0 must clear
    the first threshold and slot 1 the secondary threshold, independently.
    Ties order lower class indices first.  The silent class may occupy a slot.
    """
    if not votes:
        return []
    counts = Counter(votes)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    best_options = ordered[:2]
    thresholds = (first_option_threshold, secondary_option_threshold)
    selected = []
    for slot, (cls, count) in enumerate(best_options):
        rank = count / len(votes)
        if rank > thresholds[slot]:
            selected.append((cls, rank))
    return selected


def member_votes(ensemble: Ensemble, x: np.ndarray) -> list[int]:
    return [int(np.argmax(predict_proba(member, x))) for member in ensemble.members]


def vote(ensemble: Ensemble, x: np.ndarray) -> Recommendation:
    """Algorithmic advice for one encoded snapshot: 0, 1 or 2 options.

    A selected silent class carries no items, so it contributes silence.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ensemble.input_dim,):
        raise DimMismatchError(
            f"input has shape {x.shape}, ensemble expects ({ensemble.input_dim},)"
        )
    selected = tally_votes(
        member_votes(ensemble, x),
        ensemble.first_option_threshold,
        ensemble.secondary_option_threshold,
    )
    options = tuple(
        RankedOption(class_index=cls, rank=rank, items=ensemble.class_items(cls))
        for cls, rank in selected
        if cls != SILENT_CLASS
    )
    return Recommendation(options=options)


def advise(
    x: InformationVector,
    ensembles: Mapping[AdviceType, Ensemble],
    vocab: KnownWordTable,
) -> dict[AdviceType, Recommendation]:
    """Per-type recommendations for a snapshot.

    Topic-acquisition options lose any item that asks about a label whose
    presence bit is already set; advice types without a trained ensemble stay
    silent.
    """
    x.check(vocab.labels)
    encoded = encode(x, vocab)
    known = {
        label for label, bit in zip(vocab.labels, x.W) if bit == 1
    }
    out: dict[AdviceType, Recommendation] = {}
    for kind in AdviceType:
        ensemble = ensembles.get(kind)
        if ensemble is None:
            out[kind] = Recommendation()
            continue
        recommendation = vote(ensemble, encoded)
        if kind is AdviceType.TOPIC_ACQUISITION:
            kept = []
            for option in recommendation.options:
                items = tuple(
                    item for item in option.items
                    if item.action_ref not in known
                )
                if items:
                    kept.append(replace(option, items=items))
            recommendation = Recommendation(options=tuple(kept))
        out[kind] = recommendation
    return out


def evaluate_top_k(ensemble: Ensemble, test: LabeledDataset, k: int = 2) -> float:
    """Hit rate of the true class within the ``k`` highest-vote-count classes."""
    if len(test) == 0:
        raise InsufficientDataError("cannot evaluate on an empty dataset")
    votes = np.stack(
        [np.argmax(predict_proba(member, test.X), axis=1) for member in ensemble.members],
        axis=1,
    )
    counts = np.zeros((len(test), test.n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(len(test)), votes.shape[1])
    np.add.at(counts, (rows, votes.reshape(-1)), 1)
    ranked = np.argsort(-counts, axis=1, kind="stable")[:, :k]
    hits = (ranked == test.y[:, None]).any(axis=1)
    return float(hits.mean())


def verify_gate(ensemble: Ensemble) -> list[float]:
    """Recompute each member's gate score on the archived held-out rows.

    Returns the scores; raises if any member no longer clears the gate.
    """
    scores = [top_k_accuracy(member, ensemble.test_data, k=1)
              for member in ensemble.members]
    bad = [s for s in scores if s <= ensemble.p_threshold]
    if bad:
        raise GateUnsatisfiableError(
            f"{len(bad)} members at or below the {ensemble.p_threshold:.3f} gate"
        )
    return scores


# --- sklearn-style wrapper ----------------------------------------------------


class EnsembleAdvisor(BaseEstimator, ClassifierMixin):
    """Estimator facade over the gated random-network ensemble.

    ``fit`` consumes an encoded feature matrix and integer class targets
    (class 0 meaning "no action"); ``predict`` returns the top-voted class and
    ``predict_proba`` the vote shares, so the model slots into standard
    pipelines and model-selection tooling.
    """

    def __init__(self, ensemble_size: int = 25, p_threshold: float | None = None,
                 first_option_threshold: float = 0.40,
                 secondary_option_threshold: float = 0.25,
                 test_fraction: float = 0.2, max_attempts: int = 400,
                 max_depth: int = 4, min_width: int = 16, max_width: int = 128,
                 epochs: int = 30, learning_rate: float = 0.05,
                 batch_size: int = 32, random_state: int = 0):
        self.ensemble_size = ensemble_size
        self.p_threshold = p_threshold
        self.first_option_threshold = first_option_threshold
        self.secondary_option_threshold = secondary_option_threshold
        self.test_fraction = test_fraction
        self.max_attempts = max_attempts
        self.max_depth = max_depth
        self.min_width = min_width
        self.max_width = max_width
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def _config(self) -> EnsembleConfig:
        return EnsembleConfig(
            ensemble_size=self.ensemble_size,
            p_threshold=self.p_threshold,
            first_option_threshold=self.first_option_threshold,
            secondary_option_threshold=self.secondary_option_threshold,
            test_fraction=self.test_fraction,
            max_attempts=self.max_attempts,
            arch=ArchConfig(max_depth=self.max_depth, min_width=self.min_width,
                            max_width=self.max_width),
            train=TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                              batch_size=self.batch_size),
        )

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n_classes = int(y.max()) + 1 if len(y) else 0
        classes = [()] + [(f"class:{i}",) for i in range(1, n_classes)]
        items = {f"class:{i}": AdviceItem(id=f"class:{i}",
                                          type=AdviceType.TOPIC_ACQUISITION,
                                          display_text=f"class {i}",
                                          action_ref=f"class_{i}")
                 for i in range(1, n_classes)}
        data = LabeledDataset(X=X, y=y, n_classes=n_classes)
        self.ensemble_ = train_ensemble(
            data, classes, items, AdviceType.TOPIC_ACQUISITION,
            config=self._config(), rng_seed=self.random_state,
        )
        self.classes_ = np.arange(n_classes)
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        votes = np.stack(
            [np.argmax(predict_proba(member, X), axis=1)
             for member in self.ensemble_.members],
            axis=1,
        )
        shares = np.zeros((len(X), len(self.classes_)))
        rows = np.repeat(np.arange(len(X)), votes.shape[1])
        np.add.at(shares, (rows, votes.reshape(-1)), 1.0)
        return shares / votes.shape[1]

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


# --- bundle serialization -------------------------------------------------------


def _item_to_dict(item: AdviceItem) -> dict:
    return {"id": item.id, "type": item.type.value,
            "display_text": item.display_text, "action_ref": item.action_ref}


def _item_from_dict(payload: Mapping) -> AdviceItem:
    return AdviceItem(id=payload["id"], type=AdviceType(payload["type"]),
                      display_text=payload["display_text"],
                      action_ref=payload.get("action_ref"))


def ensemble_to_dict(ensemble: Ensemble) -> dict:
    return {
        "advice_type": ensemble.advice_type.value,
        "classes": [list(c) for c in ensemble.classes],
        "items": {i: _item_to_dict(item) for i, item in ensemble.items.items()},
        "p_threshold": ensemble.p_threshold,
        "first_option_threshold": ensemble.first_option_threshold,
        "secondary_option_threshold": ensemble.secondary_option_threshold,
        "ensemble_size": ensemble.ensemble_size,
        "member_gate_scores": ensemble.member_gate_scores,
        "members": [network_to_dict(member) for member in ensemble.members],
        "test_data": {
            "X": ensemble.test_data.X.tolist(),
            "y": ensemble.test_data.y.tolist(),
            "n_classes": ensemble.test_data.n_classes,
        },
        "train_digest": ensemble.train_digest,
        "test_digest": ensemble.test_digest,
    }


def ensemble_from_dict(payload: Mapping) -> Ensemble:
    test = LabeledDataset(
        X=np.asarray(payload["test_data"]["X"], dtype=np.float64),
        y=np.asarray(payload["test_data"]["y"], dtype=np.int64),
        n_classes=payload["test_data"]["n_classes"],
    )
    return Ensemble(
        advice_type=AdviceType(payload["advice_type"]),
        members=[network_from_dict(m) for m in payload["members"]],
        member_gate_scores=list(payload["member_gate_scores"]),
        classes=[tuple(c) for c in payload["classes"]],
        items={i: _item_from_dict(d) for i, d in payload["items"].items()},
        p_threshold=payload["p_threshold"],
        first_option_threshold=payload["first_option_threshold"],
        secondary_option_threshold=payload["secondary_option_threshold"],
        ensemble_size=payload["ensemble_size"],
        test_data=test,
        train_digest=payload["train_digest"],
        test_digest=payload["test_digest"],
    )


@dataclass
class AdvisorBundle:
    """Everything the live advisor needs, trained against one schema."""

    schema_hash: str
    ensembles: dict[AdviceType, Ensemble]
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "version": BUNDLE_FORMAT_VERSION,
            "schema_hash": self.schema_hash,
            "seed": self.seed,
            "ensembles": {
                kind.value: ensemble_to_dict(ensemble)
                for kind, ensemble in self.ensembles.items()
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "AdvisorBundle":
        if payload.get("version") != BUNDLE_FORMAT_VERSION:
            raise ValueError(f"unsupported bundle version {payload.get('version')!r}")
        return cls(
            schema_hash=payload["schema_hash"],
            seed=int(payload.get("seed", 0)),
            ensembles={
                AdviceType(kind): ensemble_from_dict(value)
                for kind, value in payload["ensembles"].items()
            },
        )
