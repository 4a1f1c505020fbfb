"""Define tests for upsampling and rendering."""
import math

import numpy as np
from PIL import Image
import pytest

from deeper_fcdd.errors import RejectedInputError
from deeper_fcdd.heatmap import (
    DisplayRange,
    Heatmap,
    display_range,
    gaussian2d,
    histogram,
    load_colormap,
    mass_inside,
    overlay,
    read_pfm,
    render,
    upsample,
    write_pfm,
    write_png,
)
from deeper_fcdd.model.geometry import FieldGeometry
from deeper_fcdd.objective import AnomalyMap

GRID = FieldGeometry(
    jump=(4, 4), extent=(8, 8), start=(2.0, 2.0), out_dims=(4, 4), in_dims=(16, 16)
)


def one_hot(x, y, value=1.0, dims=(4, 4)):
    """Return a map with a single nonzero cell."""
    values = np.zeros(dims)
    values[x, y] = value
    return AnomalyMap(values, "one-hot")


def brute_force(anomaly_map, geometry, delta):
    """Return the heatmap by summing every Gaussian at every pixel."""
    height, width = geometry.in_dims
    rows, cols = np.mgrid[0:height, 0:width]
    result = np.zeros((height, width))
    for x in range(geometry.out_dims[0]):
        for y in range(geometry.out_dims[1]):
            a1, a2 = geometry.center(x, y)
            result += anomaly_map.values[x, y] * gaussian2d(a1, a2, delta, rows, cols)
    return result


def test_gaussian2d():
    """Test the peak density and the delta check."""
    assert gaussian2d(3.0, 4.0, 2.0, 3.0, 4.0) == pytest.approx(1 / (8 * math.pi))
    with pytest.raises(RejectedInputError):
        gaussian2d(0.0, 0.0, 0.0, 0.0, 0.0)


def test_upsample_matches_brute_force(backbone, rng):
    """Test the reference upsampler on a receptive-field geometry."""
    geometry = backbone.geometry
    anomaly_map = AnomalyMap(rng.uniform(size=geometry.out_dims), "img")
    heatmap = upsample(anomaly_map, geometry)
    assert heatmap.image_id == "img"
    assert heatmap.delta == geometry.default_delta
    assert heatmap.values.shape == (16, 16)
    expected = brute_force(anomaly_map, geometry, geometry.default_delta)
    assert np.allclose(heatmap.values, expected, rtol=1e-12, atol=1e-15)


def test_fast_upsample_agrees(rng):
    """Test the truncated upsampler against the reference."""
    geometry = FieldGeometry(
        jump=(8, 8),
        extent=(22, 22),
        start=(3.5, 3.5),
        out_dims=(8, 8),
        in_dims=(64, 64),
    )
    anomaly_map = AnomalyMap(rng.uniform(size=(8, 8)))
    reference = upsample(anomaly_map, geometry, 3.0)
    fast = upsample(anomaly_map, geometry, 3.0, mode="fast")
    error = np.max(np.abs(fast.values - reference.values))
    assert error <= 1e-6 * reference.values.max()


def random_geometry(rng, out_dims=(7, 7)):
    """Return a field geometry a strided, padded chain could produce."""
    jump = tuple(int(value) for value in rng.integers(1, 9, size=2))
    extent = tuple(int(value) for value in rng.integers(2, 17, size=2))
    padding = [int(rng.integers(0, (size - 1) // 2 + 1)) for size in extent]
    start = tuple((size - 1) / 2 - pad for size, pad in zip(extent, padding))
    in_dims = tuple(
        (out - 1) * step + size - 2 * pad
        for out, step, size, pad in zip(out_dims, jump, extent, padding)
    )
    return FieldGeometry(
        jump=jump, extent=extent, start=start, out_dims=out_dims, in_dims=in_dims
    )


@pytest.mark.parametrize("seed", range(100))
def test_random_maps_match_brute_force(seed):
    """Test both upsamplers on random 7x7 maps over random geometries."""
    rng = np.random.default_rng(seed)
    geometry = random_geometry(rng)
    anomaly_map = AnomalyMap(rng.uniform(size=(7, 7)) * rng.uniform(0.1, 10.0))
    expected = brute_force(anomaly_map, geometry, geometry.default_delta)
    scale = expected.max()

    reference = upsample(anomaly_map, geometry).values
    assert np.max(np.abs(reference - expected)) <= 1e-9 * scale
    fast = upsample(anomaly_map, geometry, mode="fast").values
    assert np.max(np.abs(fast - reference)) <= 1e-6 * scale


def test_single_cell_peaks_at_its_center():
    """Test that one cell spreads unit mass around its field center."""
    heatmap = upsample(one_hot(1, 2), GRID, 1.0)
    assert np.unravel_index(np.argmax(heatmap.values), (16, 16)) == (6, 10)
    assert heatmap.values.sum() == pytest.approx(1.0, abs=1e-6)


def test_upsample_is_linear(rng):
    """Test additivity and homogeneity in the map values."""
    first = rng.uniform(size=(4, 4))
    second = rng.uniform(size=(4, 4))
    combined = upsample(AnomalyMap(2.0 * first + second), GRID).values
    separate = (
        2.0 * upsample(AnomalyMap(first), GRID).values
        + upsample(AnomalyMap(second), GRID).values
    )
    assert np.allclose(combined, separate, rtol=1e-12)


def test_zero_map_gives_zero_heatmap():
    """Test the all-zero map."""
    assert not upsample(AnomalyMap(np.zeros((4, 4))), GRID).values.any()
    assert not upsample(AnomalyMap(np.zeros((4, 4))), GRID, mode="fast").values.any()


def test_upsample_rejects():
    """Test dims, delta and mode checks."""
    with pytest.raises(RejectedInputError):
        upsample(AnomalyMap(np.zeros((3, 4))), GRID)
    with pytest.raises(RejectedInputError):
        upsample(one_hot(0, 0), GRID, -1.0)
    with pytest.raises(RejectedInputError):
        upsample(one_hot(0, 0), GRID, mode="bicubic")


def test_display_range():
    """Test the quartile cap and both fallbacks."""
    values = np.arange(9, dtype=np.float64)
    assert display_range(values) == DisplayRange(0.0, 2.0, 0.25)
    assert display_range(values, 0.5) == DisplayRange(0.0, 4.0, 0.5)
    assert display_range([np.array([5.0]), Heatmap(np.array([[6.0]]))]) == DisplayRange(
        5.0, 6.0
    )
    assert display_range(np.full((2, 2), 3.0)) == DisplayRange(3.0, 4.0)
    with pytest.raises(RejectedInputError):
        display_range(values, 0.0)
    with pytest.raises(RejectedInputError):
        display_range([])
    with pytest.raises(RejectedInputError):
        DisplayRange(1.0, 1.0)


def test_render_golden(render_golden):
    """Test rendering against hand-computed pixels."""
    display = DisplayRange(**render_golden["display"])
    heatmap = Heatmap(np.array(render_golden["values"]))
    rendered = render(heatmap, display)
    assert rendered.dtype == np.uint8
    assert rendered.tolist() == render_golden["pixels"]


def test_colormap_ends():
    """Test that the table runs from blue to red."""
    table = load_colormap()
    assert table.shape == (256, 3)
    assert table[0].tolist() == [0, 0, 255]
    assert table[255].tolist() == [255, 0, 0]


def test_overlay():
    """Test alpha blending with half-up rounding."""
    raw = np.full((1, 2, 3), 100, dtype=np.uint8)
    rendered = np.full((1, 2, 3), 201, dtype=np.uint8)
    assert overlay(raw, rendered, 0.5).tolist() == [[[151] * 3] * 2]
    assert np.array_equal(overlay(raw, rendered, 0.0), raw)
    assert np.array_equal(overlay(raw, rendered, 1.0), rendered)
    with pytest.raises(RejectedInputError):
        overlay(raw, rendered[:, :1], 0.5)
    with pytest.raises(RejectedInputError):
        overlay(raw, rendered, 1.5)


def test_histogram(tmp_path):
    """Test per-label counts over shared edges."""
    scores = [(0.0, 0), (1.0, 0), (1.5, 1), (4.0, 1), (3.9, 0)]
    result = histogram(scores, 4)
    assert result.edges.tolist() == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert result.normal_counts.tolist() == [1, 1, 0, 1]
    assert result.anomalous_counts.tolist() == [0, 1, 0, 1]

    lines = result.write_csv(tmp_path / "histogram.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,normal_count,anomalous_count"
    assert lines[1] == "0.0,1.0,1,0"
    assert len(lines) == 5

    with pytest.raises(RejectedInputError):
        histogram(scores, 0)
    with pytest.raises(RejectedInputError):
        histogram([], 3)


def test_mass_inside():
    """Test mask mass with and without dilation."""
    heatmap = upsample(one_hot(1, 2), GRID, 1.0)
    mask = np.zeros((16, 16), dtype=bool)
    mask[6, 10] = True
    assert mass_inside(heatmap, mask) == pytest.approx(1 / (2 * math.pi), rel=1e-5)
    assert mass_inside(heatmap, mask, radius=3.0) > 0.95
    assert mass_inside(heatmap, np.ones((16, 16))) == pytest.approx(1.0)
    assert mass_inside(Heatmap(np.zeros((16, 16))), mask) == 0.0
    with pytest.raises(RejectedInputError):
        mass_inside(heatmap, mask[:8])


def test_pfm(rng, tmp_path):
    """Test the float map layout."""
    values = rng.normal(size=(3, 5)).astype(np.float32)
    path = write_pfm(tmp_path / "raw" / "a.pfm", values)
    payload = path.read_bytes()
    assert payload.startswith(b"Pf\n5 3\n-1.0\n")
    first = np.frombuffer(payload[len(b"Pf\n5 3\n-1.0\n") :], dtype="<f4", count=1)[0]
    assert first == values[2, 0]
    assert np.array_equal(read_pfm(path), values)


def test_png(tmp_path):
    """Test that rendered images are written losslessly."""
    rgb = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
    path = write_png(tmp_path / "heatmaps" / "a.png", rgb)
    with Image.open(path) as image:
        assert np.array_equal(np.asarray(image), rgb)
