import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nidsgan.flows import (
    CATEGORICAL,
    DatasetError,
    Feature,
    FeatureSchema,
    FlowDataset,
    NSLKDD_COLUMNS,
    NSLKDD_CATEGORICAL,
    SyntheticSpec,
    class_centroids,
    decode_categoricals,
    encode_records,
    load_cicids,
    load_nslkdd,
    merge_cicids_classes,
    minmax_scale,
    nearest_centroid_predict,
    stratified_split,
    synthetic_dataset,
)

NSL_LABELS = ["normal", "neptune", "smurf", "ipsweep", "satan", "guess_passwd", "buffer_overflow"]


def nsl_row(rng, protos=("tcp", "udp", "icmp"), services=("http", "ftp", "smtp"), flags=("SF", "S0", "REJ")):
    row = []
    for col in NSLKDD_COLUMNS:
        if col == "protocol_type":
            row.append(str(rng.choice(protos)))
        elif col == "service":
            row.append(str(rng.choice(services)))
        elif col == "flag":
            row.append(str(rng.choice(flags)))
        else:
            row.append(str(int(rng.integers(0, 50))))
    return row + [str(rng.choice(NSL_LABELS)), str(int(rng.integers(0, 21)))]


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


# -- scaling ----------------------------------------------------------------


def test_minmax_fresh_column():
    out, stats = minmax_scale(np.array([[2.0], [4.0], [6.0]]))
    assert out[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert stats.min[0] == 2 and stats.max[0] == 6


def test_minmax_constant_column_maps_to_zero():
    out, _ = minmax_scale(np.array([[5.0], [5.0]]))
    assert out[:, 0].tolist() == [0.0, 0.0]


def test_minmax_clamps_with_given_stats():
    _, stats = minmax_scale(np.array([[0.0], [8.0]]))
    out, _ = minmax_scale(np.array([[10.0]]), stats)
    assert out[0, 0] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 10_000))
def test_minmax_fresh_range_and_idempotence(rows, cols, seed):
    X = np.random.default_rng(seed).normal(size=(rows, cols)) * 10
    X[:, 0] = 3.0  # one constant column
    out, stats = minmax_scale(X)
    assert np.all(out[:, 0] == 0)
    for j in range(1, cols):
        assert out[:, j].min() == 0.0 and np.isclose(out[:, j].max(), 1.0)
    again, _ = minmax_scale(X, stats)
    np.testing.assert_allclose(again, out)


# -- encoding ---------------------------------------------------------------


def _schema():
    feats = (
        Feature("a"),
        Feature("proto", CATEGORICAL, levels=("tcp", "udp", "icmp")),
        Feature("b"),
        Feature("svc", CATEGORICAL, levels=("http", "dns")),
    )
    return FeatureSchema(feats, ("Benign", "Bad"), "Benign")


def test_schema_groups_and_index():
    s = _schema()
    assert s.n_raw == 4 and s.n_encoded == 7
    assert s.one_hot_groups == [(1, 4), (5, 7)]
    assert s.raw_index().tolist() == [0, 1, 1, 1, 2, 3, 3]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["tcp", "udp", "icmp"]), st.sampled_from(["http", "dns"])), min_size=1, max_size=20))
def test_encoding_round_trip(levels):
    s = _schema()
    recs = [[1.0, p, 2.0, v] for p, v in levels]
    X = encode_records(s, recs)
    back = decode_categoricals(s, X)
    assert [(r["proto"], r["svc"]) for r in back] == levels


def test_unknown_level_is_zero_group_and_reported():
    from nidsgan.flows import LoadReport

    rep = LoadReport()
    X = encode_records(_schema(), [[0.0, "gre", 1.0, "dns"]], rep)
    assert X[0, 1:4].tolist() == [0, 0, 0]
    assert rep.unknown_levels == {"proto": {"gre": 1}}


# -- NSL-KDD ----------------------------------------------------------------


def hand_encode(rows, train_rows):
    """Row-by-row reference encoder written independently of the package."""
    levels = {c: [] for c in NSLKDD_CATEGORICAL}
    for r in train_rows:
        for c in NSLKDD_CATEGORICAL:
            v = r[NSLKDD_COLUMNS.index(c)]
            if v not in levels[c]:
                levels[c].append(v)

    def raw(r):
        out = []
        for i, c in enumerate(NSLKDD_COLUMNS):
            if c in levels:
                out += [1.0 if r[i] == lvl else 0.0 for lvl in levels[c]]
            else:
                out.append(float(r[i]))
        return out

    tr = np.array([raw(r) for r in train_rows])
    lo, hi = tr.min(axis=0), tr.max(axis=0)
    onehot = np.zeros(tr.shape[1], dtype=bool)
    pos = 0
    for c in NSLKDD_COLUMNS:
        w = len(levels[c]) if c in levels else 1
        if c in levels:
            onehot[pos:pos + w] = True
        pos += w
    lo[onehot], hi[onehot] = 0.0, 1.0
    out = []
    for r in rows:
        v = np.array(raw(r))
        s = np.where(hi > lo, (v - lo) / np.where(hi > lo, hi - lo, 1), 0.0)
        out.append(np.clip(s, 0, 1))
    return np.array(out)


def test_nslkdd_matches_hand_encoder(tmp_path):
    rng = np.random.default_rng(7)
    train = [nsl_row(rng) for _ in range(50)]
    test = [nsl_row(rng) for _ in range(20)]
    tr, te = load_nslkdd(write_rows(tmp_path / "tr.txt", train), write_rows(tmp_path / "te.txt", test))
    np.testing.assert_allclose(tr.X, hand_encode(train, train), atol=1e-12)
    np.testing.assert_allclose(te.X, hand_encode(test, train), atol=1e-12)
    assert tr.label_set == ("Benign", "DoS", "Probe", "R2L", "U2R")
    assert tr.schema.n_raw == 41


def test_nslkdd_single_level_categoricals(tmp_path):
    rng = np.random.default_rng(2)
    rows = [nsl_row(rng, ("tcp",), ("http",), ("SF",)) for _ in range(3)]
    tr, _ = load_nslkdd(write_rows(tmp_path / "a.txt", rows), write_rows(tmp_path / "b.txt", rows))
    assert [hi - lo for lo, hi in tr.schema.one_hot_groups] == [1, 1, 1]
    numeric = [i for i, c in enumerate(NSLKDD_COLUMNS) if c not in NSLKDD_CATEGORICAL]
    raw = np.array([[float(r[i]) for i in numeric] for r in rows])
    expected, _ = minmax_scale(raw)
    keep = [j for j, f in enumerate(tr.schema.features) if f.kind != CATEGORICAL]
    cols = [tr.schema.spans()[j][0] for j in keep]
    np.testing.assert_allclose(tr.X[:, cols], expected)


def test_nslkdd_rejects_malformed_and_reports_unknown_levels(tmp_path):
    rng = np.random.default_rng(5)
    train = [nsl_row(rng, protos=("tcp",)) for _ in range(10)]
    test = [nsl_row(rng, protos=("udp",)) for _ in range(4)] + [["1", "2", "3"]]
    tr, te = load_nslkdd(write_rows(tmp_path / "a.txt", train), write_rows(tmp_path / "b.txt", test))
    assert len(te) == 4
    assert te.report.unknown_levels["protocol_type"]["udp"] == 4
    assert te.report.rejected_rows[0][:2] == ("b.txt", 4)


def test_nslkdd_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_nslkdd(tmp_path / "nope.txt", tmp_path / "nope2.txt")


# -- CICIDS -----------------------------------------------------------------


def test_merge_cicids_classes():
    assert merge_cicids_classes("FTP-Patator") == "Pat"
    assert merge_cicids_classes("Benign") == "Benign"
    assert merge_cicids_classes("BENIGN") == "Benign"
    assert merge_cicids_classes("Heartbleed") == "DoS"
    with pytest.raises(DatasetError):
        merge_cicids_classes("Teleportation")


CIC_HEADER = ["Flow ID", "Source IP", "Destination Port", "Protocol", "Timestamp", "Flow Duration",
              "Total Fwd Packets", "Flow Bytes/s", "SYN Flag Count", "Label"]


def cic_rows(rng, n, labels):
    rows = []
    for _ in range(n):
        rows.append(["id", "1.2.3.4", str(int(rng.integers(1, 9000))), str(rng.choice(["6", "17"])), "t",
                     str(int(rng.integers(0, 1e6))), str(int(rng.integers(1, 100))),
                     str(rng.choice(["Infinity", "12.5", "NaN", "300"])), str(int(rng.integers(0, 2))),
                     str(rng.choice(labels))])
    return rows


def test_cicids_manifest_and_stratification(tmp_path):
    rng = np.random.default_rng(0)
    labels = ["BENIGN", "DDoS", "PortScan", "Bot", "FTP-Patator"]
    path = write_rows(tmp_path / "c.csv", [CIC_HEADER] + cic_rows(rng, 200, labels))
    tr, te = load_cicids([path])
    assert tr.label_set == ("Benign", "Bot", "Pat", "DoS", "Inf", "Port", "Web")
    names = [f.name for f in tr.schema.features]
    assert "Flow ID" not in names and "Timestamp" not in names and "Source IP" not in names
    assert tr.schema.feature("Protocol").levels == ("6", "17")
    assert tr.schema.feature("SYN Flag Count").protocol_tag == "tcp"
    assert any("infinite" in n for n in tr.report.notes)
    whole = np.bincount(np.concatenate([tr.y, te.y]), minlength=7) / 200
    # exact counting oracle for the proportions
    for part in (tr, te):
        frac = np.bincount(part.y, minlength=7) / len(part)
        assert np.all(np.abs(frac - whole) <= 0.02)


def test_cicids_benign_only_split(tmp_path):
    rng = np.random.default_rng(1)
    path = write_rows(tmp_path / "c.csv", [CIC_HEADER] + cic_rows(rng, 101, ["BENIGN"]))
    tr, te = load_cicids(tmp_path)
    assert set(tr.y) == {0} and set(te.y) == {0}
    assert abs(len(te) - 101 * 0.25) <= 1


# -- split / synthetic ------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=300), st.floats(0.0, 1.0), st.integers(0, 99))
def test_stratified_split_conserves_counts(y, frac, seed):
    y = np.array(y)
    tr, te = stratified_split(y, frac, seed)
    assert len(np.intersect1d(tr, te)) == 0
    np.testing.assert_array_equal(np.bincount(y[tr], minlength=5) + np.bincount(y[te], minlength=5),
                                  np.bincount(y, minlength=5))


def test_synthetic_is_deterministic():
    a = synthetic_dataset(SyntheticSpec(seed=11))
    b = synthetic_dataset(SyntheticSpec(seed=11))
    for x, y in zip(a, b):
        assert np.array_equal(x.X, y.X) and np.array_equal(x.y, y.y)


def test_synthetic_zero_separation_is_chance():
    tr, te = synthetic_dataset(SyntheticSpec(separation=0.0, class_counts=(2000, 2000), seed=1))
    pred = nearest_centroid_predict(class_centroids(tr), te.X)
    assert abs(np.mean(pred == te.y) - 0.5) < 0.05


def test_synthetic_separation_six_nearest_centroid():
    tr, te = synthetic_dataset(SyntheticSpec(separation=6.0, class_counts=(500, 500), seed=0))
    pred = nearest_centroid_predict(class_centroids(tr), np.vstack([tr.X, te.X]))
    assert np.mean(pred == np.concatenate([tr.y, te.y])) >= 0.99


def test_synthetic_marks_frozen_features():
    tr, _ = synthetic_dataset(SyntheticSpec(n_features=20, frozen_fraction=0.25))
    assert sum(f.attack_semantic for f in tr.schema.features) == 5


def test_dataset_rejects_out_of_cube_and_round_trips(tmp_path, blobs):
    tr, _ = blobs
    with pytest.raises(ValueError):
        FlowDataset(tr.schema, tr.X + 2, tr.y, tr.scaling_stats)
    tr.save(tmp_path / "d.npz")
    back = FlowDataset.load(tmp_path / "d.npz")
    assert np.array_equal(back.X, tr.X) and back.schema == tr.schema
