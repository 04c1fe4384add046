import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckn.errors import (
    EmptyInput,
    InvalidQuery,
    MissingFeature,
    NoSignatures,
    NonNumericFeature,
    NormMismatch,
    NotFound,
    SchemaMismatch,
    UnknownSchema,
    ZeroVector,
)
from ckn.graph import GraphNode, GraphStore, NodeKind
from ckn.ingest import CampaignSpec, ingest_run, ingest_spec
from ckn.signature import (
    GRAY_SCOTT,
    OSU_BANDWIDTH,
    Signature,
    SimilarityMetric,
    SimilarityMatrix,
    build_norm_context,
    cosine_similarity,
    distance,
    distance_similarity,
    extract_signature,
    find_similar,
    pairwise_matrix,
    similarity,
    similarity_matrix,
)
from conftest import make_log
from oracles import naive_cosine, naive_matrix, naive_normalize

COS, EUC, MAN = SimilarityMetric.COSINE, SimilarityMetric.EUCLIDEAN, SimilarityMetric.MANHATTAN
NAMES = ("L", "Du", "Dv", "F", "k")


def gs(*values) -> Signature:
    return Signature(GRAY_SCOTT, NAMES, tuple(float(v) for v in values))


def instance_store(**params) -> GraphStore:
    store = GraphStore()
    props = {"sweep": "s", **{f"param.{k}": v for k, v in params.items()}}
    store.add_node(GraphNode("i1", NodeKind.INSTANCE, props))
    return store


def test_extract_copies_fields():
    store = instance_store(L="64", Du="0.2", Dv="0.1", F="0.02", k="0.048")
    sig = extract_signature(store, "i1", GRAY_SCOTT)
    assert sig.features == [("L", 64.0), ("Du", 0.2), ("Dv", 0.1), ("F", 0.02), ("k", 0.048)]
    props = store.get_node("i1").properties
    assert props["sig.k"] == "0.048" and props["sig.schema"] == GRAY_SCOTT


def test_missing_feature():
    store = instance_store(L="64", Du="0.2", Dv="0.1", F="0.02")
    with pytest.raises(MissingFeature) as info:
        extract_signature(store, "i1", GRAY_SCOTT)
    assert info.value.name == "k"


def test_non_numeric_feature():
    store = instance_store(L="64", Du="0.2", Dv="0.1", F="fast", k="0.05")
    with pytest.raises(NonNumericFeature) as info:
        extract_signature(store, "i1", GRAY_SCOTT)
    assert info.value.name == "F"


def test_unknown_and_reserved_schema():
    store = instance_store(L="64")
    with pytest.raises(UnknownSchema):
        extract_signature(store, "i1", "nope-v0")
    with pytest.raises(UnknownSchema):
        extract_signature(store, "i1", OSU_BANDWIDTH)


def test_cosine_identity_and_orthogonality():
    x = gs(64, 0.2, 0.1, 0.02, 0.048)
    assert cosine_similarity(x, x) == pytest.approx(1.0, abs=1e-12)
    a = Signature("pair", ("p", "q"), (1.0, 0.0))
    b = Signature("pair", ("p", "q"), (0.0, 1.0))
    assert cosine_similarity(a, b) == 0.0


def test_cosine_against_arithmetic_oracle():
    a, b = (64, 0.2, 0.1, 0.02, 0.048), (64, 0.2, 0.1, 0.06, 0.062)
    assert cosine_similarity(gs(*a), gs(*b)) == pytest.approx(naive_cosine(a, b), abs=1e-12)


def test_cosine_errors():
    with pytest.raises(ZeroVector):
        cosine_similarity(gs(0, 0, 0, 0, 0), gs(1, 1, 1, 1, 1))
    with pytest.raises(SchemaMismatch):
        cosine_similarity(gs(1, 1, 1, 1, 1), Signature("other", NAMES, (1.0,) * 5))


def test_distance_identity_and_extremes():
    a, b = gs(64, 0.2, 0.1, 0.01, 0.05), gs(64, 0.2, 0.1, 0.06, 0.05)
    norm = build_norm_context([a, b])
    assert distance_similarity(a, a, EUC, norm) == 1.0
    assert distance_similarity(a, b, EUC, norm) == 0.5
    assert distance_similarity(a, b, MAN, norm) == 0.5


def test_norm_mismatch():
    other = Signature("other", NAMES, (1.0,) * 5)
    norm = build_norm_context([other])
    with pytest.raises(NormMismatch):
        distance_similarity(gs(1, 1, 1, 1, 1), gs(1, 1, 1, 1, 1), EUC, norm)


def test_four_signature_set_matches_oracle():
    vectors = [[64, 0.2, 0.1, 0.01, 0.05], [64, 0.2, 0.1, 0.06, 0.05],
               [32, 0.2, 0.05, 0.02, 0.062], [128, 0.16, 0.08, 0.04, 0.06]]
    sigs = [gs(*v) for v in vectors]
    ids = [f"s{i}" for i in range(4)]
    for metric in (COS, EUC, MAN):
        got = pairwise_matrix(ids, sigs, metric).values
        want = naive_matrix(vectors, metric.value)
        for i in range(4):
            for j in range(4):
                assert got[i][j] == pytest.approx(want[i][j], abs=1e-12)


def test_norm_context_cases():
    single = build_norm_context([gs(64, 0.2, 0.1, 0.02, 0.05)])
    assert single.normalize(gs(64, 0.2, 0.1, 0.02, 0.05)) == (0.0,) * 5
    sigs = [gs(64, 0.2, 0.1, f, 0.05) for f in (0.01, 0.03, 0.06)]
    norm = build_norm_context(sigs)
    assert norm.normalize(sigs[2])[3] == 1.0
    with pytest.raises(EmptyInput):
        build_norm_context([])
    with pytest.raises(SchemaMismatch):
        build_norm_context([sigs[0], Signature("other", NAMES, (1.0,) * 5)])


def test_norm_context_random_sets():
    rng = random.Random(2)
    for _ in range(20):
        vectors = [[rng.uniform(-5, 5) for _ in NAMES] for _ in range(rng.randint(1, 12))]
        norm = build_norm_context([gs(*v) for v in vectors])
        assert list(norm.mins) == [min(c) for c in zip(*vectors)]
        assert list(norm.maxs) == [max(c) for c in zip(*vectors)]
        expected = naive_normalize(vectors)
        for vec, row in zip(vectors, expected):
            assert norm.normalize(gs(*vec)) == pytest.approx(row, abs=1e-12)


finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
vec5 = st.lists(finite, min_size=5, max_size=5)


@settings(max_examples=200, deadline=None)
@given(vec5, vec5, vec5)
def test_symmetry_range_and_triangle(a, b, c):
    sa, sb, sc = gs(*a), gs(*b), gs(*c)
    norm = build_norm_context([sa, sb, sc])
    for metric in (EUC, MAN):
        ab = distance_similarity(sa, sb, metric, norm)
        assert ab == distance_similarity(sb, sa, metric, norm)
        assert 0.0 < ab <= 1.0
        d = lambda x, y: distance(x, y, metric, norm)  # noqa: E731
        assert d(sa, sc) <= d(sa, sb) + d(sb, sc) + 1e-9
    if any(a) and any(b):
        cab = cosine_similarity(sa, sb)
        assert abs(cab - cosine_similarity(sb, sa)) <= 1e-12
        assert -1.0 <= cab <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=10_000), min_size=3, max_size=3, unique=True))
def test_euclidean_monotone_in_one_feature(steps):
    # gaps on a 1e-4 grid; sub-ulp gaps would round 1/(1+d) to exactly 1
    g1, g2, g3 = (s / 10_000 for s in sorted(steps))
    base = gs(64, 0.2, 0.1, 0.0, 0.05)
    sigs = [gs(64, 0.2, 0.1, g, 0.05) for g in (g1, g2, g3)]
    norm = build_norm_context([base, gs(64, 0.2, 0.1, 1.0, 0.05)])
    values = [distance_similarity(base, s, EUC, norm) for s in sigs]
    assert values[0] > values[1] > values[2]


def test_identity_iff_equal_under_norm():
    a = gs(64, 0.2, 0.1, 0.01, 0.05)
    b = gs(64, 0.2, 0.1, 0.01, 0.05)
    c = gs(32, 0.2, 0.1, 0.01, 0.05)
    norm = build_norm_context([a, c])
    assert similarity(a, b, EUC, norm) == 1.0
    assert similarity(a, c, EUC, norm) < 1.0
    # a feature held constant over the set does not count
    flat = build_norm_context([a, b])
    assert similarity(a, c, MAN, flat) == 1.0


def test_metric_parsing():
    assert SimilarityMetric.parse("EuclideanSim") is EUC
    assert SimilarityMetric.parse("manhattan") is MAN
    assert SimilarityMetric.parse("Cosine") is COS
    with pytest.raises(InvalidQuery):
        SimilarityMetric.parse("jaccard")


def grid_campaign(F_values, k_values, name="grid"):
    store = GraphStore()
    spec = CampaignSpec.from_dict({
        "campaign": name, "owner": "alice",
        "sweep_groups": [{"name": "fk", "researcher": "bob",
                          "parameters": {"L": ["64"], "Du": ["0.2"], "Dv": ["0.1"],
                                         "F": list(F_values), "k": list(k_values)}}],
    })
    ingest_spec(store, spec)
    for i, params in enumerate(dict(p) for p in spec.sweep_groups[0].sweeps()):
        ingest_run(store, make_log(spec, "fk", params, f"{name}-{i:02d}"))
    return store


def test_matrix_of_two_identical_instances():
    store = GraphStore()
    for i in ("a", "b"):
        store.add_node(GraphNode(i, NodeKind.INSTANCE, {
            "sweep": "s", "param.L": "64", "param.Du": "0.2", "param.Dv": "0.1",
            "param.F": "0.02", "param.k": "0.05"}))
    for metric in (COS, EUC, MAN):
        assert similarity_matrix(store, ["a", "b"], metric).values == [[1.0, 1.0], [1.0, 1.0]]


def test_matrix_needs_two_and_reports_instance():
    store = instance_store(L="64", Du="0.2", Dv="0.1", F="0.02", k="0.05")
    with pytest.raises(EmptyInput):
        similarity_matrix(store, ["i1"], COS)
    store.add_node(GraphNode("i2", NodeKind.INSTANCE, {"sweep": "s", "param.L": "1"}))
    with pytest.raises(MissingFeature) as info:
        similarity_matrix(store, ["i1", "i2"], EUC)
    assert info.value.instance == "i2"


def test_matrix_symmetric_and_matches_oracle():
    F, k = ("0.01", "0.02", "0.04", "0.06"), ("0.045", "0.05", "0.055", "0.062")
    store = grid_campaign(F, k)
    ids = store.node_ids()
    ids = [i for i in ids if store.kind_of(i) is NodeKind.INSTANCE]
    vectors = [[64, 0.2, 0.1, float(f), float(kk)] for f in F for kk in k]
    for metric in (COS, EUC, MAN):
        m = similarity_matrix(store, ids, metric)
        assert m.is_symmetric()
        want = naive_matrix(vectors, metric.value)
        assert all(abs(m.values[i][j] - want[i][j]) <= 1e-12 for i in range(16) for j in range(16))
        assert all(m.values[i][i] == 1.0 for i in range(16))


def test_tsv_round_trip_and_header():
    sigs = [gs(64, 0.2, 0.1, f, 0.05) for f in (0.01, 0.02, 0.05)]
    m = pairwise_matrix(["a", "b", "c"], sigs, EUC)
    text = m.to_tsv()
    lines = text.splitlines()
    assert lines[:3] == ["# metric=euclidean", f"# schema={GRAY_SCOTT}", "# norm=minmax"]
    assert lines[3] == "id\ta\tb\tc"
    back = SimilarityMatrix.from_tsv(text)
    assert back.ids == m.ids and back.values == m.values and back.metric is EUC
    assert pairwise_matrix(["a", "b", "c"], sigs, COS).norm == "raw"


def test_heatmap_pgm():
    sigs = [gs(64, 0.2, 0.1, f, 0.05) for f in (0.01, 0.05)]
    m = pairwise_matrix(["a", "b"], sigs, EUC)
    data = m.heatmap_pgm(cell=4)
    header = b"P5\n8 8\n255\n"
    assert data.startswith(header)
    pixels = data[len(header):]
    assert len(pixels) == 64
    assert pixels[0] == 255  # diagonal, similarity 1
    assert pixels[4] == round(255 * 0.5)  # darker for lower similarity


def test_find_similar_exact_match_first():
    store = grid_campaign(("0.01", "0.02", "0.04"), ("0.05", "0.06"))
    target = gs(64, 0.2, 0.1, 0.02, 0.06)
    hits = find_similar(store, target, "grid", EUC, top_k=3)
    assert hits[0] == ("grid-03", 1.0)
    assert len(hits) == 3
    assert len(find_similar(store, target, "grid", MAN, top_k=50)) == 6


def test_find_similar_errors():
    store = grid_campaign(("0.01",), ("0.05",))
    with pytest.raises(NotFound):
        find_similar(store, gs(1, 1, 1, 1, 1), "missing", EUC)
    store.add_node(GraphNode("empty", NodeKind.CAMPAIGN))
    with pytest.raises(NoSignatures):
        find_similar(store, gs(1, 1, 1, 1, 1), "empty", EUC)


def test_find_similar_random_campaign_matches_oracle():
    rng = random.Random(9)
    F = sorted({f"{rng.uniform(0.01, 0.07):.4f}" for _ in range(5)})
    k = sorted({f"{rng.uniform(0.04, 0.07):.4f}" for _ in range(4)})
    store = grid_campaign(F, k)
    ids = sorted(i for i in store.node_ids() if store.kind_of(i) is NodeKind.INSTANCE)
    assert len(ids) == 20
    vectors = {i: [64, 0.2, 0.1, float(store.get_node(i).properties["param.F"]),
                   float(store.get_node(i).properties["param.k"])] for i in ids}
    target = [64, 0.2, 0.1, 0.035, 0.055]
    for metric in (COS, EUC, MAN):
        rows = naive_matrix([target, *vectors.values()], metric.value)[0][1:]
        expected = sorted(zip(ids, rows), key=lambda t: (-t[1], t[0]))[:7]
        got = find_similar(store, gs(*target), "grid", metric, top_k=7)
        assert [i for i, _ in got] == [i for i, _ in expected]
        assert all(math.isclose(a, b, abs_tol=1e-12) for (_, a), (_, b) in zip(got, expected))
