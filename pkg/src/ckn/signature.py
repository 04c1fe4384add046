"""Experiment signatures and pairwise similarity.

A signature is an ordered numeric feature vector read from an instance's
``param.<name>`` properties according to a registered schema. Cosine
similarity works on raw values. Euclidean and Manhattan similarities
min-max normalize every feature over the comparison set first and map the
distance ``d`` to ``1 / (1 + d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from ckn.errors import (
    EmptyInput,
    InvalidQuery,
    MissingFeature,
    NonNumericFeature,
    NoSignatures,
    NormMismatch,
    NotFound,
    SchemaMismatch,
    UnknownSchema,
    WrongKind,
    ZeroVector,
)
from ckn.graph import GraphStore, NodeKind

GRAY_SCOTT = "gray-scott-v1"
OSU_BANDWIDTH = "osu-bw-v1"

# name -> ordered feature names; an empty tuple is a reserved, unusable slot
SCHEMAS: dict[str, tuple[str, ...]] = {
    GRAY_SCOTT: ("L", "Du", "Dv", "F", "k"),
    OSU_BANDWIDTH: (),
}


def register_schema(name: str, features: Sequence[str]) -> None:
    features = tuple(features)
    if not name or not features:
        raise ValueError("schema needs a name and at least one feature")
    if len(set(features)) != len(features):
        raise ValueError(f"duplicate feature names in schema {name}")
    SCHEMAS[name] = features


def schema_features(name: str) -> tuple[str, ...]:
    features = SCHEMAS.get(name)
    if features is None:
        raise UnknownSchema(name)
    if not features:
        raise UnknownSchema(f"schema {name} is reserved but has no features yet")
    return features


class SimilarityMetric(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"

    @classmethod
    def parse(cls, text: "str | SimilarityMetric") -> "SimilarityMetric":
        if isinstance(text, cls):
            return text
        key = text.strip().lower()
        if key.endswith("sim"):
            key = key[:-3]
        try:
            return cls(key)
        except ValueError:
            raise InvalidQuery(f"unknown metric {text!r}") from None

    @property
    def is_distance(self) -> bool:
        return self is not SimilarityMetric.COSINE


@dataclass(frozen=True)
class Signature:
    schema: str
    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.values):
            raise ValueError("names and values differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("signature values must be finite")

    @classmethod
    def from_mapping(cls, schema: str, values: dict[str, float]) -> "Signature":
        names = schema_features(schema)
        missing = [n for n in names if n not in values]
        if missing:
            raise MissingFeature(missing[0])
        return cls(schema, names, tuple(float(values[n]) for n in names))

    @property
    def features(self) -> list[tuple[str, float]]:
        return list(zip(self.names, self.values))


@dataclass(frozen=True)
class NormContext:
    schema: str
    names: tuple[str, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def normalize(self, sig: Signature) -> tuple[float, ...]:
        if sig.schema != self.schema or sig.names != self.names:
            raise NormMismatch(f"norm built for {self.schema}, signature is {sig.schema}")
        return tuple(
            0.0 if hi == lo else (x - lo) / (hi - lo)
            for x, lo, hi in zip(sig.values, self.mins, self.maxs)
        )


def _check_comparable(a: Signature, b: Signature) -> None:
    if a.schema != b.schema or a.names != b.names:
        raise SchemaMismatch(f"{a.schema} vs {b.schema}")


def build_norm_context(sigs: Iterable[Signature]) -> NormContext:
    sigs = list(sigs)
    if not sigs:
        raise EmptyInput("need at least one signature")
    first = sigs[0]
    for s in sigs[1:]:
        _check_comparable(first, s)
    columns = list(zip(*(s.values for s in sigs)))
    return NormContext(
        first.schema,
        first.names,
        tuple(min(c) for c in columns),
        tuple(max(c) for c in columns),
    )


def cosine_similarity(a: Signature, b: Signature) -> float:
    _check_comparable(a, b)
    norm_a = math.sqrt(math.fsum(x * x for x in a.values))
    norm_b = math.sqrt(math.fsum(y * y for y in b.values))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for an all-zero signature")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    return max(-1.0, min(1.0, dot / (norm_a * norm_b)))


def distance(a: Signature, b: Signature, metric: SimilarityMetric, norm: NormContext) -> float:
    """Normalized L2 or L1 distance between two signatures."""
    _check_comparable(a, b)
    metric = SimilarityMetric.parse(metric)
    na, nb = norm.normalize(a), norm.normalize(b)
    if metric is SimilarityMetric.EUCLIDEAN:
        return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(na, nb)))
    if metric is SimilarityMetric.MANHATTAN:
        return math.fsum(abs(x - y) for x, y in zip(na, nb))
    raise InvalidQuery(f"{metric.value} is not a distance metric")


def distance_similarity(a: Signature, b: Signature, metric: SimilarityMetric, norm: NormContext) -> float:
    return 1.0 / (1.0 + distance(a, b, metric, norm))


def similarity(
    a: Signature,
    b: Signature,
    metric: SimilarityMetric,
    norm: NormContext | None = None,
) -> float:
    metric = SimilarityMetric.parse(metric)
    if metric is SimilarityMetric.COSINE:
        return cosine_similarity(a, b)
    if norm is None:
        norm = build_norm_context([a, b])
    return distance_similarity(a, b, metric, norm)


# -- store integration ----------------------------------------------------

def parse_feature(name: str, raw: str | None, instance: str | None = None) -> float:
    if raw is None:
        raise MissingFeature(name, instance)
    try:
        value = float(raw)
    except ValueError:
        raise NonNumericFeature(name, instance) from None
    if not math.isfinite(value):
        raise NonNumericFeature(name, instance)
    return value


def extract_signature(
    store: GraphStore,
    instance: str,
    schema: str = GRAY_SCOTT,
    *,
    persist: bool = True,
) -> Signature:
    """Build the instance's signature from its ``param.*`` properties.

    With ``persist`` the features are written back to the node as
    ``sig.<name>`` plus ``sig.schema``.
    """
    names = schema_features(schema)
    node = store.get_node(instance)
    if node.kind is not NodeKind.INSTANCE:
        raise WrongKind(f"{instance} is a {node.kind.value}, expected Instance")
    values = tuple(parse_feature(n, node.properties.get(f"param.{n}"), instance) for n in names)
    sig = Signature(schema, names, values)
    if persist:
        props = {f"sig.{n}": repr(v) for n, v in zip(names, values)}
        props["sig.schema"] = schema
        if any(node.properties.get(k) != v for k, v in props.items()):
            store.update_node(instance, props)
    return sig


def sign_instance(store: GraphStore, instance: str) -> Signature | None:
    """Attach the first registered schema whose features the instance carries."""
    for schema, features in SCHEMAS.items():
        if not features:
            continue
        try:
            return extract_signature(store, instance, schema, persist=True)
        except (MissingFeature, NonNumericFeature):
            continue
    return None


@dataclass
class SimilarityMatrix:
    ids: list[str]
    metric: SimilarityMetric
    schema: str
    values: list[list[float]]

    @property
    def norm(self) -> str:
        return "minmax" if self.metric.is_distance else "raw"

    def is_symmetric(self, tol: float = 0.0) -> bool:
        n = len(self.ids)
        return all(abs(self.values[i][j] - self.values[j][i]) <= tol for i in range(n) for j in range(n))

    def off_diagonal(self) -> list[float]:
        n = len(self.ids)
        return [self.values[i][j] for i in range(n) for j in range(i + 1, n)]

    def to_tsv(self) -> str:
        lines = [f"# metric={self.metric.value}", f"# schema={self.schema}", f"# norm={self.norm}"]
        lines.append("\t".join(["id", *self.ids]))
        for node_id, row in zip(self.ids, self.values):
            lines.append("\t".join([node_id, *(repr(v) for v in row)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "SimilarityMatrix":
        meta: dict[str, str] = {}
        rows: list[list[str]] = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            elif line:
                rows.append(line.split("\t"))
        if not rows:
            raise ValueError("matrix file has no header row")
        ids = rows[0][1:]
        if [r[0] for r in rows[1:]] != ids:
            raise ValueError("row ids do not match header ids")
        values = [[float(x) for x in r[1:]] for r in rows[1:]]
        if any(len(r) != len(ids) for r in values):
            raise ValueError("matrix is not square")
        return cls(ids, SimilarityMetric.parse(meta.get("metric", "")), meta.get("schema", ""), values)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "schema": self.schema,
            "norm": self.norm,
            "ids": self.ids,
            "values": self.values,
        }

    def heatmap_pgm(self, cell: int = 16) -> bytes:
        """Binary PGM image; darker pixels mean lower similarity.

        The gray scale spans the metric's full range ([-1, 1] for cosine,
        [0, 1] otherwise) so compressed value bands stay visibly compressed.
        """
        lo = -1.0 if self.metric is SimilarityMetric.COSINE else 0.0
        n = len(self.ids)
        side = n * cell
        pixels = bytearray()
        for i in range(n):
            row = bytearray()
            for j in range(n):
                level = round(255 * (self.values[i][j] - lo) / (1.0 - lo))
                row.extend([max(0, min(255, level))] * cell)
            pixels.extend(bytes(row) * cell)
        return f"P5\n{side} {side}\n255\n".encode("ascii") + bytes(pixels)


def pairwise_matrix(ids: Sequence[str], sigs: Sequence[Signature], metric: SimilarityMetric) -> SimilarityMatrix:
    """Symmetric matrix over ``sigs``; distance metrics normalize over exactly this set."""
    metric = SimilarityMetric.parse(metric)
    if len(ids) != len(sigs):
        raise ValueError("ids and signatures differ in length")
    if not sigs:
        raise EmptyInput("need at least one signature")
    norm = build_norm_context(sigs) if metric.is_distance else None
    n = len(sigs)
    values = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            try:
                if metric.is_distance:
                    v = distance_similarity(sigs[i], sigs[j], metric, norm)
                elif i == j:
                    cosine_similarity(sigs[i], sigs[i])  # raises ZeroVector
                    v = 1.0
                else:
                    v = cosine_similarity(sigs[i], sigs[j])
            except ZeroVector as exc:
                raise ZeroVector(f"{exc} ({ids[i]} / {ids[j]})") from None
            values[i][j] = values[j][i] = v
    return SimilarityMatrix(list(ids), metric, sigs[0].schema, values)


def similarity_matrix(
    store: GraphStore,
    instances: Sequence[str],
    metric: SimilarityMetric,
    schema: str = GRAY_SCOTT,
) -> SimilarityMatrix:
    if len(instances) < 2:
        raise EmptyInput("a similarity matrix needs at least two instances")
    sigs = [extract_signature(store, i, schema, persist=False) for i in instances]
    return pairwise_matrix(list(instances), sigs, metric)


def campaign_signatures(store: GraphStore, campaign: str, schema: str) -> list[tuple[str, Signature]]:
    """Signatures for every instance of ``campaign`` that carries the schema's features."""
    from ckn.query import campaign_instances

    signed = []
    for instance in campaign_instances(store, campaign):
        try:
            signed.append((instance, extract_signature(store, instance, schema, persist=False)))
        except (MissingFeature, NonNumericFeature):
            continue
    return signed


def find_similar(
    store: GraphStore,
    target: Signature,
    campaign: str,
    metric: SimilarityMetric = SimilarityMetric.EUCLIDEAN,
    top_k: int = 5,
) -> list[tuple[str, float]]:
    """Campaign instances most similar to ``target``.

    For distance metrics the normalization covers the campaign's signatures
    plus the target itself. Ties are broken by instance id.
    """
    metric = SimilarityMetric.parse(metric)
    if top_k < 1:
        raise InvalidQuery("top_k must be at least 1")
    if not store.has_node(campaign):
        raise NotFound(campaign)
    signed = campaign_signatures(store, campaign, target.schema)
    if not signed:
        raise NoSignatures(f"no signed instances in {campaign}")
    norm = build_norm_context([target, *(s for _, s in signed)]) if metric.is_distance else None
    scored = [(instance, similarity(target, sig, metric, norm)) for instance, sig in signed]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:top_k]
