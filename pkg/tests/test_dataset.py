"""Define tests for dataset scanning, splitting and sampling."""
import logging

from PIL import Image
import numpy as np
import pytest

from deeper_fcdd.dataset import (
    ablation_sample,
    filter_class,
    ground_truth_path,
    load_hazard_weights,
    read_manifest,
    scan,
    split,
    split_counts,
    write_manifest,
)
from deeper_fcdd.errors import ConfigError, DataError, ShortfallError


def write_sidecar(path, *rows):
    """Write a hazard sidecar with the given data rows."""
    path.write_text("\n".join(["image_id,weight", *rows]) + "\n", encoding="utf-8")
    return path


@pytest.mark.parametrize(
    "total,expected",
    [
        (0, [0, 0, 0]),
        (1, [1, 0, 0]),
        (7, [5, 1, 1]),
        (8, [6, 1, 1]),
        (12, [8, 2, 2]),
        (100, [65, 15, 20]),
    ],
)
def test_split_counts(expected, total):
    """Test that cal and test are floored and train takes the leftovers."""
    assert split_counts(total, (0.65, 0.15, 0.20)) == expected


def test_scan_matches_synth(corpus, tmp_path):
    """Test that scanning a written corpus recovers its manifest."""
    scanned = scan(tmp_path / "data")
    assert [record.image_id for record in scanned] == [
        record.image_id for record in corpus
    ]
    assert [record.path for record in scanned] == [record.path for record in corpus]
    assert scanned.class_names == ["fire", "flood"]
    assert all(record.split is None for record in scanned)
    assert scanned.labels.count(1) == 16


def test_scan_reports_every_offender(tmp_path):
    """Test that all class directories without images are named."""
    for name in ("alpha", "beta"):
        (tmp_path / name / "normal").mkdir(parents=True)
    gamma = tmp_path / "gamma" / "normal"
    gamma.mkdir(parents=True)
    Image.new("RGB", (4, 4)).save(gamma / "a.png")
    with pytest.raises(DataError) as err:
        scan(tmp_path)
    assert "alpha" in str(err.value)
    assert "beta" in str(err.value)
    assert "gamma" not in str(err.value)


def test_scan_rejects_bad_roots(tmp_path):
    """Test missing roots, empty roots and corrupt images."""
    with pytest.raises(DataError):
        scan(tmp_path / "missing")
    with pytest.raises(DataError):
        scan(tmp_path)
    broken = tmp_path / "fire" / "anomalous"
    broken.mkdir(parents=True)
    (broken / "a.png").write_bytes(b"not a png")
    with pytest.raises(DataError):
        scan(tmp_path)
    assert len(scan(tmp_path, verify=False)) == 1


def test_split_is_stratified(split_corpus):
    """Test per-stratum counts of the tiny corpus."""
    for class_name in ("fire", "flood"):
        for split_name, normal, anomalous in (
            ("train", 8, 6),
            ("cal", 2, 1),
            ("test", 2, 1),
        ):
            labels = split_corpus.select(split_name, class_name).labels
            assert labels.count(0) == normal
            assert labels.count(1) == anomalous
    assert split_corpus.seed == 3


def test_split_is_seeded(corpus):
    """Test that the split depends on the seed alone."""
    first = [record.split for record in split(corpus, seed=3)]
    second = [record.split for record in split(corpus, seed=3)]
    other = [record.split for record in split(corpus, seed=4)]
    assert first == second
    assert first != other


@pytest.mark.parametrize("ratio", [(0.5, 0.5), (0.7, 0.2, 0.2), (1.2, -0.1, -0.1)])
def test_split_rejects_ratio(corpus, ratio):
    """Test ratio validation."""
    with pytest.raises(ConfigError):
        split(corpus, ratio)


def test_ablation_sample(corpus):
    """Test pooled normal and per-class anomalous draws."""
    sample = ablation_sample(corpus, 10, 6, seed=1)
    assert len(sample) == 16
    assert sample.labels.count(0) == 10
    for class_name in ("fire", "flood"):
        assert sample.select(class_name=class_name).labels.count(1) == 3
    assert all(record.split is None for record in sample)
    order = [record.image_id for record in corpus]
    positions = [order.index(record.image_id) for record in sample]
    assert positions == sorted(positions)

    again = ablation_sample(corpus, 10, 6, seed=1)
    assert [record.image_id for record in again] == [
        record.image_id for record in sample
    ]


def test_ablation_sample_uneven_share(corpus):
    """Test that the first classes take the remainder."""
    sample = ablation_sample(corpus, 0, 5)
    assert sample.select(class_name="fire").labels.count(1) == 3
    assert sample.select(class_name="flood").labels.count(1) == 2


def test_ablation_shortfall(corpus):
    """Test that an oversized request names its stratum."""
    with pytest.raises(ShortfallError) as err:
        ablation_sample(corpus, 30, 6)
    assert err.value.stratum == "normal (pooled)"
    assert (err.value.requested, err.value.available) == (30, 24)
    assert err.value.exit_code == 3

    with pytest.raises(ShortfallError) as err:
        ablation_sample(corpus, 0, 18, per_class_anomalous=9)
    assert err.value.stratum == "fire/anomalous"

    with pytest.raises(ConfigError):
        ablation_sample(corpus, 0, 6, per_class_anomalous=2)


def test_filter_class(corpus):
    """Test restricting to one class."""
    assert filter_class(corpus, None) is corpus
    assert filter_class(corpus, "fire").class_names == ["fire"]
    with pytest.raises(ConfigError):
        filter_class(corpus, "earthquake")


def test_hazard_weights(caplog, corpus, tmp_path):
    """Test matching sidecar weights by image id."""
    sidecar = write_sidecar(
        tmp_path / "hazard.csv",
        "fire/anomalous/anomalous_00000,3.0",
        "fire/normal/normal_00001,0.5",
        "elsewhere/normal/x,2.0",
    )
    with caplog.at_level(logging.WARNING):
        weighted = load_hazard_weights(corpus, sidecar)
    assert "elsewhere/normal/x" in caplog.text
    weights = {record.image_id: record.hazard_weight for record in weighted}
    assert weights["fire/anomalous/anomalous_00000"] == 3.0
    assert weights["fire/normal/normal_00001"] == 0.5
    assert weights["flood/normal/normal_00001"] == 1.0

    plain = load_hazard_weights(weighted, None)
    assert {record.hazard_weight for record in plain} == {1.0}


@pytest.mark.parametrize(
    "rows,message",
    [
        (("fire/normal/normal_00000,abc",), "row 2"),
        (("fire/normal/normal_00000,1.0", "fire/normal/normal_00001,0"), "row 3"),
        (("fire/normal/normal_00000,-2",), "must be > 0"),
        (("fire/normal/normal_00000,1", "fire/normal/normal_00000,2"), "duplicate"),
    ],
)
def test_hazard_sidecar_errors(corpus, message, rows, tmp_path):
    """Test that bad sidecar rows are reported with their row number."""
    sidecar = write_sidecar(tmp_path / "hazard.csv", *rows)
    with pytest.raises(DataError) as err:
        load_hazard_weights(corpus, sidecar)
    assert message in str(err.value)


def test_hazard_sidecar_missing(corpus, tmp_path):
    """Test that a configured but absent sidecar is an error."""
    with pytest.raises(DataError):
        load_hazard_weights(corpus, tmp_path / "nope.csv")
    (tmp_path / "bad.csv").write_text("id,w\na,1\n", encoding="utf-8")
    with pytest.raises(DataError):
        load_hazard_weights(corpus, tmp_path / "bad.csv")


def test_ground_truth_path(corpus, tmp_path):
    """Test that anomalous images find their masks."""
    anomalous = next(record for record in corpus if record.label == 1)
    normal = next(record for record in corpus if record.label == 0)
    mask = ground_truth_path(corpus, anomalous)
    assert mask == tmp_path / "data" / "fire" / "ground_truth" / "anomalous_00000.png"
    assert ground_truth_path(corpus, normal) is None


def test_manifest_file(split_corpus, tmp_path):
    """Test that a manifest written elsewhere still resolves every image."""
    path = write_manifest(tmp_path / "run" / "manifest.csv", split_corpus)
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=3 source=synthetic"
    assert lines[1] == "image_id,path,class,label,split,hazard_weight"

    loaded = read_manifest(path)
    assert loaded.seed == 3
    assert loaded.source == split_corpus.source
    assert [record.image_id for record in loaded] == [
        record.image_id for record in split_corpus
    ]
    assert [record.split for record in loaded] == [
        record.split for record in split_corpus
    ]
    for original, record in zip(split_corpus, loaded):
        expected = split_corpus.resolve(original).resolve()
        assert loaded.resolve(record).resolve() == expected
        assert record.path.startswith("../data/")


def test_manifest_file_errors(tmp_path):
    """Test unreadable and malformed manifests."""
    with pytest.raises(DataError):
        read_manifest(tmp_path / "missing.csv")
    headerless = tmp_path / "headerless.csv"
    headerless.write_text("image_id,path,class,label,split,hazard_weight\n")
    with pytest.raises(DataError):
        read_manifest(headerless)
    malformed = tmp_path / "malformed.csv"
    malformed.write_text(
        "# seed=1 source=x\nimage_id,path,class,label,split,hazard_weight\n"
        "a,a.png,fire,7,,1.0\n"
    )
    with pytest.raises(DataError):
        read_manifest(malformed)


def test_manifest_pixels_round_trip(corpus):
    """Test that manifest paths point at decodable images."""
    record = corpus.records[0]
    with Image.open(corpus.resolve(record)) as image:
        assert np.asarray(image).shape == (16, 16, 3)
