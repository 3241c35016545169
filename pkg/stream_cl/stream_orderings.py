"""
Seeded stream orderings over the train split of a manifest.

Every plan is a pure function of ``(manifest, parameters, seed)``; all
randomness comes from :class:`stream_cl.rng.Xoshiro256`. Random draws are
consumed in a fixed order documented on each constructor so the sequences
can be regenerated elsewhere.
"""

import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, TypeAlias

from stream_cl.errors import OrderingError
from stream_cl.feature_store import DatasetManifest, ManifestRecord
from stream_cl.rng import Xoshiro256

ORDERING_KIND: TypeAlias = Literal[
    "iid", "class_iid", "instance", "low_shot_instance", "k_shot_class_iid"
]
ORDERING_KINDS: tuple[ORDERING_KIND, ...] = typing.get_args(ORDERING_KIND)


@dataclass(frozen=True)
class Checkpoint:
    position: int
    """Number of samples consumed when evaluation happens."""
    seen_classes: frozenset[int]


@dataclass(frozen=True)
class OrderingPlan:
    kind: ORDERING_KIND
    seed: int
    sequence: tuple[int, ...]
    checkpoints: tuple[Checkpoint, ...]
    eval_extra: tuple[int, ...] = field(default=())
    """Train samples handed to the evaluation pool (k-shot leftovers)."""

    def __post_init__(self):
        if len(set(self.sequence)) != len(self.sequence):
            raise OrderingError("A sample appears twice in the sequence")
        if not self.checkpoints:
            raise OrderingError("A plan needs at least one checkpoint")
        previous: Checkpoint | None = None
        for cp in self.checkpoints:
            if not 0 < cp.position <= len(self.sequence):
                raise OrderingError(f"Checkpoint position {cp.position} out of range")
            if previous is not None:
                if cp.position <= previous.position:
                    raise OrderingError("Checkpoint positions must strictly increase")
                if not previous.seen_classes <= cp.seen_classes:
                    raise OrderingError("Seen-class sets must be nested")
            previous = cp

    def __len__(self) -> int:
        return len(self.sequence)

    @property
    def final_seen_classes(self) -> frozenset[int]:
        return self.checkpoints[-1].seen_classes

    def final_only(self) -> "OrderingPlan":
        """Same sequence, evaluated once at the end."""
        return OrderingPlan(
            kind=self.kind,
            seed=self.seed,
            sequence=self.sequence,
            checkpoints=(self.checkpoints[-1],),
            eval_extra=self.eval_extra,
        )

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "sequence": list(self.sequence),
            "checkpoints": [
                {"position": cp.position, "seen_classes": sorted(cp.seen_classes)}
                for cp in self.checkpoints
            ],
            "eval_extra": list(self.eval_extra),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, typing.Any]) -> "OrderingPlan":
        kind = doc["kind"]
        if kind not in ORDERING_KINDS:
            raise OrderingError(f"Unknown ordering kind: {kind}")
        return cls(
            kind=kind,
            seed=int(doc["seed"]),
            sequence=tuple(int(s) for s in doc["sequence"]),
            checkpoints=tuple(
                Checkpoint(int(cp["position"]), frozenset(int(c) for c in cp["seen_classes"]))
                for cp in doc["checkpoints"]
            ),
            eval_extra=tuple(int(s) for s in doc.get("eval_extra", ())),
        )

    def to_json(self, path: Path | str) -> Path:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
        return Path(path)

    @classmethod
    def from_json(cls, path: Path | str) -> "OrderingPlan":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _train_records(manifest: DatasetManifest) -> list[ManifestRecord]:
    train = manifest.train
    if not train:
        raise OrderingError("Manifest has an empty train split")
    return train


def _by_class(records: list[ManifestRecord]) -> dict[int, list[ManifestRecord]]:
    groups: dict[int, list[ManifestRecord]] = {}
    for r in records:
        groups.setdefault(r.class_id, []).append(r)
    return dict(sorted(groups.items()))


def _block_checkpoints(blocks: list[tuple[int, list[int]]]) -> tuple[Checkpoint, ...]:
    """One checkpoint after each ``(class_id, ids)`` block."""
    checkpoints: list[Checkpoint] = []
    seen: set[int] = set()
    position = 0
    for class_id, ids in blocks:
        position += len(ids)
        seen.add(class_id)
        checkpoints.append(Checkpoint(position, frozenset(seen)))
    return tuple(checkpoints)


def make_iid(manifest: DatasetManifest, seed: int) -> OrderingPlan:
    """Uniform shuffle of all train samples (one Fisher-Yates pass)."""
    train = _train_records(manifest)
    ids = [r.sample_id for r in train]
    Xoshiro256(seed).shuffle(ids)
    classes = frozenset(r.class_id for r in train)
    return OrderingPlan("iid", seed, tuple(ids), (Checkpoint(len(ids), classes),))


def make_class_iid(manifest: DatasetManifest, seed: int) -> OrderingPlan:
    """
    Class blocks in shuffled order, samples shuffled inside each block.
    Draws: class order first, then each block in presentation order.
    """
    train = _train_records(manifest)
    per_class = _by_class(train)
    rng = Xoshiro256(seed)

    class_order = rng.shuffle(list(per_class))
    blocks: list[tuple[int, list[int]]] = []
    for class_id in class_order:
        ids = rng.shuffle([r.sample_id for r in per_class[class_id]])
        blocks.append((class_id, ids))

    sequence = tuple(s for _, ids in blocks for s in ids)
    return OrderingPlan("class_iid", seed, sequence, _block_checkpoints(blocks))


def make_instance(manifest: DatasetManifest, seed: int) -> OrderingPlan:
    """
    Whole groups (videos) in shuffled order; frames keep manifest order.
    Groups are listed by ascending ``group_id`` before the shuffle.
    """
    train = _train_records(manifest)
    groups: dict[int, list[ManifestRecord]] = {}
    for r in train:
        if r.group_id is None:
            raise OrderingError(
                f"Missing group metadata for train sample {r.sample_id}"
            )
        groups.setdefault(r.group_id, []).append(r)

    group_order = Xoshiro256(seed).shuffle(sorted(groups))
    sequence = tuple(r.sample_id for g in group_order for r in groups[g])
    classes = frozenset(r.class_id for r in train)
    return OrderingPlan("instance", seed, sequence, (Checkpoint(len(sequence), classes),))


def make_low_shot_instance(manifest: DatasetManifest, seed: int) -> OrderingPlan:
    """
    One uniformly chosen group per class, classes in shuffled order, with a
    checkpoint after every group.
    Draws: class order first, then one group per class in presentation order.
    """
    train = _train_records(manifest)
    per_class = _by_class(train)
    rng = Xoshiro256(seed)

    class_groups: dict[int, dict[int, list[ManifestRecord]]] = {}
    for class_id, records in per_class.items():
        groups: dict[int, list[ManifestRecord]] = {}
        for r in records:
            if r.group_id is None:
                continue
            groups.setdefault(r.group_id, []).append(r)
        if not groups:
            raise OrderingError(f"Class {class_id} has zero groups")
        class_groups[class_id] = groups

    blocks: list[tuple[int, list[int]]] = []
    for class_id in rng.shuffle(list(class_groups)):
        groups = class_groups[class_id]
        chosen = rng.choice(sorted(groups))
        blocks.append((class_id, [r.sample_id for r in groups[chosen]]))

    sequence = tuple(s for _, ids in blocks for s in ids)
    return OrderingPlan("low_shot_instance", seed, sequence, _block_checkpoints(blocks))


def make_k_shot_class_iid(manifest: DatasetManifest, k: int, seed: int) -> OrderingPlan:
    """
    ``k`` samples per class arranged class-iid; the remaining train samples
    join the evaluation pool.
    Draws: per class in ascending id a partial Fisher-Yates selection, then
    the class order, then each block in presentation order.
    """
    if k < 1:
        raise OrderingError(f"k must be >= 1, got {k}")
    train = _train_records(manifest)
    per_class = _by_class(train)
    rng = Xoshiro256(seed)

    chosen: dict[int, list[int]] = {}
    leftovers: list[int] = []
    for class_id, records in per_class.items():
        if len(records) < k + 1:
            raise OrderingError(
                f"Class {class_id} has {len(records)} samples, needs at least {k + 1}"
            )
        ids = [r.sample_id for r in records]
        picked = rng.sample(ids, k)
        picked_set = set(picked)
        chosen[class_id] = picked
        leftovers.extend(s for s in ids if s not in picked_set)

    blocks: list[tuple[int, list[int]]] = []
    for class_id in rng.shuffle(list(chosen)):
        blocks.append((class_id, rng.shuffle(list(chosen[class_id]))))

    sequence = tuple(s for _, ids in blocks for s in ids)
    return OrderingPlan(
        "k_shot_class_iid",
        seed,
        sequence,
        _block_checkpoints(blocks),
        eval_extra=tuple(leftovers),
    )


def make_plan(
    kind: ORDERING_KIND, manifest: DatasetManifest, seed: int, *, k: int = 5
) -> OrderingPlan:
    if kind == "iid":
        return make_iid(manifest, seed)
    elif kind == "class_iid":
        return make_class_iid(manifest, seed)
    elif kind == "instance":
        return make_instance(manifest, seed)
    elif kind == "low_shot_instance":
        return make_low_shot_instance(manifest, seed)
    elif kind == "k_shot_class_iid":
        return make_k_shot_class_iid(manifest, k, seed)
    else:
        raise OrderingError(
            f"Unknown ordering kind: {kind}. Please choose one of: {list(ORDERING_KINDS)}"
        )
