import numpy as np
import pytest

from occrobnet import synthdata as sd
from occrobnet import tensor as T
from occrobnet.backbone import (N_OBJECT_POINTS, Backbone, HeatmapHead, SegmentationHead,
                                gather_columns, render_gt_heatmaps, sample_object_points)
from occrobnet.errors import DimensionError
from occrobnet.tensor import Tensor


@pytest.fixture(scope="module")
def nets():
    rng = np.random.default_rng(0)
    return Backbone(rng, 64), HeatmapHead(rng, 64), SegmentationHead(rng, 64)


def test_feature_shape_and_finite_for_zero_image(nets):
    f = nets[0](np.zeros((64, 64, 3)))
    assert f.shape == (32, 32, 64)
    assert np.all(np.isfinite(f.data))


def test_one_pixel_changes_features(nets):
    img = np.random.default_rng(1).uniform(size=(64, 64, 3))
    other = img.copy()
    other[30, 30] = 1.0 - other[30, 30]
    assert not np.array_equal(nets[0](img).data, nets[0](other).data)


def test_wrong_image_shape(nets):
    with pytest.raises(DimensionError):
        nets[0](np.zeros((32, 32, 3)))


def test_heatmaps_count_and_range(nets):
    h = nets[1](nets[0](np.random.default_rng(2).uniform(size=(64, 64, 3))))
    assert h.shape == (42, 32, 32)
    assert h.data.min() >= 0.0 and h.data.max() <= 1.0


def test_untrained_heatmaps_near_uniform(nets):
    h = nets[1](nets[0](np.random.default_rng(3).uniform(size=(64, 64, 3)))).data
    # no structure yet: every map sits close to its own mean
    assert np.abs(h - h.mean(axis=(1, 2), keepdims=True)).max() < 0.05


def test_segmentation_distribution(nets):
    s = nets[2](nets[0](np.random.default_rng(4).uniform(size=(64, 64, 3)))).data
    assert s.shape == (32, 32, 4)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-9)


def _label_map(n_object):
    labels = np.zeros((32, 32), dtype=np.int64)
    rows, cols = np.unravel_index(np.arange(n_object), (32, 32))
    labels[rows, cols] = sd.OBJECT
    return labels


def test_sample_many_object_pixels_distinct():
    labels = _label_map(400)
    pts = sample_object_points(labels, None, seed=5)
    assert pts.points.shape == (N_OBJECT_POINTS, 2)
    assert len({tuple(p) for p in pts.points}) == 20
    assert np.all(labels[pts.points[:, 1], pts.points[:, 0]] == sd.OBJECT)
    assert not pts.degenerate


def test_sample_few_object_pixels_with_replacement():
    labels = _label_map(5)
    pts = sample_object_points(labels, None, seed=5)
    assert len(pts.points) == 20
    assert np.all(labels[pts.points[:, 1], pts.points[:, 0]] == sd.OBJECT)
    assert len({tuple(p) for p in pts.points}) <= 5


def test_sample_no_object_pixels_degenerate_centroid():
    probs = np.zeros((32, 32, 4))
    probs[..., 0] = 1.0
    probs[10:12, 20:22, 3] = 0.4   # object mass never wins the argmax
    pts = sample_object_points(probs, None, seed=1)
    assert pts.degenerate
    assert np.all(pts.points == pts.points[0])
    assert tuple(pts.points[0]) in {(20, 10), (21, 11), (20, 11), (21, 10)}


def test_sample_deterministic_and_seed_sensitive():
    labels = _label_map(300)
    a = sample_object_points(labels, None, seed=9).points
    b = sample_object_points(labels, None, seed=9).points
    c = sample_object_points(labels, None, seed=10).points
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_sample_accepts_distribution_and_gathers_features():
    probs = np.zeros((32, 32, 4))
    probs[..., 0] = 1.0
    probs[5:15, 5:15] = [0.1, 0.0, 0.0, 0.9]
    feats = Tensor(np.random.default_rng(0).normal(size=(32, 32, 8)))
    pts = sample_object_points(probs, feats, seed=3)
    assert pts.features.shape == (20, 8)
    u, v = pts.points[0]
    assert np.array_equal(pts.features.data[0], feats.data[v, u])
    assert np.array_equal(gather_columns(feats, pts.points).data, pts.features.data)


def test_gt_heatmap_center_peak():
    maps = render_gt_heatmaps(np.array([[16.0, 16.0]]), np.array([True]), 1.5)
    v, u = np.unravel_index(maps[0].argmax(), (32, 32))
    assert (u, v) == (16, 16) and maps[0, 16, 16] == 1.0


def test_gt_heatmap_outside_frame_zero():
    maps = render_gt_heatmaps(np.array([[-5.0, 10.0], [40.0, 3.0]]), np.array([True, True]), 1.5)
    assert not maps.any()


def test_gt_heatmap_mass_matches_gaussian_integral():
    sigma = 1.5
    maps = render_gt_heatmaps(np.array([[15.3, 16.6]]), np.array([True]), sigma)
    assert maps[0].sum() == pytest.approx(2 * np.pi * sigma ** 2, rel=0.02)


def test_gt_heatmap_translation_equivariance():
    base = render_gt_heatmaps(np.array([[10.0, 12.0]]), np.array([True]))[0]
    moved = render_gt_heatmaps(np.array([[13.0, 8.0]]), np.array([True]))[0]
    v0, u0 = np.unravel_index(base.argmax(), base.shape)
    v1, u1 = np.unravel_index(moved.argmax(), moved.shape)
    assert (u1 - u0, v1 - v0) == (3, -4)


def test_heatmap_dims_asserted_for_any_channel_count():
    for c in (8, 16):
        net = Backbone(np.random.default_rng(c), c)
        assert net(np.zeros((64, 64, 3))).shape == (32, 32, c)


def test_backbone_gradients_flow(nets):
    backbone = nets[0]
    f = backbone(np.random.default_rng(5).uniform(size=(64, 64, 3)))
    T.zero_grads(backbone.parameters())
    T.backward(T.sum(f))
    assert all(np.any(p.grad != 0) for p in backbone.parameters())
