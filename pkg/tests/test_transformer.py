import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occrobnet import tensor as T
from occrobnet.errors import ContractError, DimensionError
from occrobnet.tensor import Parameter, Tensor
from occrobnet.transformer import (BACKGROUND_CLASS, N_IDENTITY_CLASSES, OBJECT_CLASS, Attention,
                                   DecoderLayer, EncoderLayer, PoseTransformer, TokenEmbedding,
                                   assign_gt_identities, assign_object_identities, combined_attention,
                                   extract_peaks, identity_label, positional_encoding, rot6d_to_matrix)


def attention_loop(q, k, v, use_sigmoid=True):
    m, d = q.shape
    n = k.shape[0]
    out = np.zeros((m, v.shape[1]))
    for i in range(m):
        s = [sum(q[i, t] * k[j, t] for t in range(d)) / np.sqrt(d) for j in range(n)]
        mx = max(s)
        e = [np.exp(x - mx) for x in s]
        z = sum(e)
        for j in range(n):
            c = e[j] / z
            if use_sigmoid:
                c *= 1.0 / (1.0 + np.exp(-s[j]))
            out[i] += c * v[j]
    return out


# --- combined attention ----------------------------------------------------------

def test_single_token_output_is_sigmoid_scaled_value(rng):
    q, v = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    out = combined_attention(Tensor(q), Tensor(q), Tensor(v)).data
    gate = 1.0 / (1.0 + np.exp(-(q @ q.T)[0, 0] / np.sqrt(8)))
    assert np.allclose(out, gate * v, atol=1e-14)


def test_zero_query_gives_half_mean_value(rng):
    k, v = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    out = combined_attention(Tensor(np.zeros((3, 8))), Tensor(k), Tensor(v)).data
    assert np.allclose(out, 0.5 * v.mean(axis=0), atol=1e-14)


def test_attention_matches_loop_oracle(rng):
    q, k, v = rng.normal(size=(4, 8)), rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    for sig in (True, False):
        got = combined_attention(Tensor(q), Tensor(k), Tensor(v), use_sigmoid=sig).data
        assert np.abs(got - attention_loop(q, k, v, sig)).max() <= 1e-12


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31 - 1),
       st.floats(0.1, 30.0))
def test_gating_bound_property(m, n, d, seed, scale):
    r = np.random.default_rng(seed)
    q, k, v = (r.normal(scale=scale, size=s) for s in ((m, d), (n, d), (n, d)))
    _, maps = combined_attention(Tensor(q), Tensor(k), Tensor(v), return_maps=True)
    assert np.all(maps.combined >= 0) and np.all(maps.combined <= maps.soft)
    assert np.all(maps.combined.sum(axis=1) <= 1.0)
    assert np.all((maps.sig > 0) & (maps.sig < 1) | (maps.sig == 0) | (maps.sig == 1))


def test_disabled_sigmoid_is_plain_softmax(rng):
    q, k, v = rng.normal(size=(5, 6)), rng.normal(size=(7, 6)), rng.normal(size=(7, 6))
    out, maps = combined_attention(Tensor(q), Tensor(k), Tensor(v), use_sigmoid=False, return_maps=True)
    s = q @ k.T / np.sqrt(6)
    soft = np.exp(s - s.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    assert maps.sig is None
    assert np.abs(out.data - soft @ v).max() <= 1e-12


def test_attention_dimension_errors(rng):
    with pytest.raises(DimensionError):
        combined_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))))
    with pytest.raises(DimensionError):
        combined_attention(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))))


def test_attention_gradients(rng):
    q = Parameter(rng.normal(size=(3, 4)), "q")
    k = Parameter(rng.normal(size=(5, 4)), "k")
    v = Parameter(rng.normal(size=(5, 4)), "v")
    w = rng.normal(size=(3, 4))
    loss = lambda: T.sum(combined_attention(q, k, v) * w)  # noqa: E731
    T.zero_grads([q, k, v])
    T.backward(loss())
    for p in (q, k, v):
        fd = T.finite_difference_grad(loss, p)
        assert np.allclose(p.grad, fd, atol=1e-8)


def test_multihead_splits_columns(rng):
    att = Attention(np.random.default_rng(0), 8, heads=2)
    x = Tensor(rng.normal(size=(4, 8)))
    out = att(x, x)
    q, k, v = att.wq(x).data, att.wk(x).data, att.wv(x).data
    heads = [attention_loop(q[:, h * 4:(h + 1) * 4], k[:, h * 4:(h + 1) * 4], v[:, h * 4:(h + 1) * 4])
             for h in range(2)]
    assert np.allclose(out.data, np.concatenate(heads, axis=1) @ att.wo.weight.data, atol=1e-12)


# --- encoder / decoder -------------------------------------------------------------

def test_encoder_zero_weights_near_identity(rng):
    layer = EncoderLayer(np.random.default_rng(0), 16, 16, 1)
    for p in layer.attn.parameters() + layer.ffn.parameters():
        p.data[...] = 0
    x = rng.normal(size=(5, 16))
    assert np.allclose(layer(Tensor(x)).data, x, atol=1e-12)


def test_shapes_preserved_for_any_token_count():
    net = PoseTransformer(np.random.default_rng(0), 16, 16, 2, 2, 1, 48)
    for m in (1, 3, 17):
        tokens = Tensor(np.random.default_rng(m).normal(size=(m, 16)))
        enc = net.encode(tokens)
        assert enc.shape == (m, 16)
        assert net.decode(enc).shape == (48, 16)


def test_empty_encoder_input_rejected():
    net = PoseTransformer(np.random.default_rng(0), 16, 16, 1, 1, 1, 44)
    with pytest.raises(ContractError):
        net.encode(Tensor(np.zeros((0, 16))))


def test_cross_attention_single_token_copies_value(rng):
    layer = DecoderLayer(np.random.default_rng(1), 8, 8, 1)
    mem = Tensor(rng.normal(size=(1, 8)))
    x = Tensor(rng.normal(size=(6, 8)))
    att = layer.cross_attn
    q, k, v = att.wq(x).data, att.wk(mem).data, att.wv(mem).data
    gate = 1.0 / (1.0 + np.exp(-(q @ k.T) / np.sqrt(8)))
    expected = gate @ v @ att.wo.weight.data + att.wo.bias.data
    assert np.allclose(att(x, mem).data, expected, atol=1e-12)


def test_encoder_decoder_gradients(rng):
    net = PoseTransformer(np.random.default_rng(2), 8, 8, 2, 2, 1, 44)
    tokens = Parameter(rng.normal(size=(4, 8)), "tokens")
    w = rng.normal(size=(44, 8))

    def loss():
        return T.sum(net.decode(net.encode(tokens)) * w)

    params = [tokens, net.encoder[0].attn.wq.weight, net.decoder[1].cross_attn.wk.weight, net.queries]
    T.zero_grads(net.parameters() + [tokens])
    T.backward(loss())
    for p in params:
        idx = [tuple(i) for i in np.random.default_rng(0).integers(0, p.shape, size=(6, p.ndim))]
        fd = T.finite_difference_grad(loss, p, indices=idx)
        an = np.array([p.grad[i] for i in idx])
        assert (np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6)).max() < 1e-4


def test_permutation_equivariance(rng):
    net = PoseTransformer(np.random.default_rng(3), 16, 16, 2, 1, 1, 44)
    emb = TokenEmbedding(np.random.default_rng(4), 5, 16)
    cols = rng.normal(size=(6, 5))
    pos = rng.integers(0, 32, size=(6, 2))
    perm = rng.permutation(6)
    out = net.encode(emb(Tensor(cols), pos)).data
    out_p = net.encode(emb(Tensor(cols[perm]), pos[perm])).data
    assert np.allclose(out[perm], out_p, atol=1e-9)
    dec = net.decode(net.encode(emb(Tensor(cols), pos))).data
    dec_p = net.decode(net.encode(emb(Tensor(cols[perm]), pos[perm]))).data
    assert np.allclose(dec, dec_p, atol=1e-9)


# --- identities ---------------------------------------------------------------------

def test_identity_distribution(rng):
    net = PoseTransformer(np.random.default_rng(0), 16, 16, 1, 1, 1, 44)
    probs = net.predict_identities(Tensor(rng.normal(size=(7, 16)))).data
    assert probs.shape == (7, N_IDENTITY_CLASSES) and N_IDENTITY_CLASSES == 2 * 21 + 2
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_identity_label_vocabulary():
    assert identity_label(0) == ("left", 0)
    assert identity_label(20) == ("left", 20)
    assert identity_label(21) == ("right", 0)
    assert identity_label(OBJECT_CLASS) == ("object", None)
    assert identity_label(BACKGROUND_CLASS) == ("background", None)


def test_assign_exact_hit_and_background():
    gt = np.array([[5.0, 5.0], [20.0, 20.0]])
    assert assign_gt_identities(np.array([[20, 20]]), gt, 3.0).tolist() == [1]
    far = np.array([[10, 25]])
    assert assign_gt_identities(far, np.array([[15.0, 25.0], [10.0, 30.0]]), 3.0).tolist() == [BACKGROUND_CLASS]


def test_assign_tie_breaks_to_smaller_index():
    gt = np.full((42, 2), -100.0)
    gt[4] = [10.0, 12.0]
    gt[7] = [10.0, 8.0]
    assert assign_gt_identities(np.array([[10, 10]]), gt, 3.0).tolist() == [4]


def test_assign_respects_valid_mask_and_gamma():
    gt = np.array([[5.0, 5.0], [6.0, 5.0]])
    assert assign_gt_identities(np.array([[5, 5]]), gt, 3.0, valid=[False, True]).tolist() == [1]
    assert assign_gt_identities(np.array([[5, 9]]), gt, 3.0).tolist() == [BACKGROUND_CLASS]
    with pytest.raises(ContractError):
        assign_gt_identities(np.array([[5, 5]]), gt, 0.0)


@given(st.lists(st.tuples(st.integers(0, 31), st.integers(0, 31)), min_size=1, max_size=10),
       st.integers(0, 1000))
def test_assign_deterministic_and_nearest(peaks, seed):
    gt = np.random.default_rng(seed).uniform(0, 32, size=(42, 2))
    peaks = np.array(peaks)
    a = assign_gt_identities(peaks, gt)
    assert np.array_equal(a, assign_gt_identities(peaks, gt))
    for p, label in zip(peaks, a):
        d = np.linalg.norm(gt - p, axis=1)
        if label == BACKGROUND_CLASS:
            assert d.min() > 3.0
        else:
            assert d[label] == pytest.approx(d.min()) and d.min() <= 3.0


def test_object_identities():
    labels = np.zeros((32, 32), dtype=np.int64)
    labels[3, 4] = 3
    out = assign_object_identities(np.array([[4, 3], [0, 0]]), labels, 3)
    assert out.tolist() == [OBJECT_CLASS, BACKGROUND_CLASS]


# --- peaks --------------------------------------------------------------------------

def _gauss(u, v, amp):
    yy, xx = np.mgrid[0:32, 0:32]
    return amp * np.exp(-((xx - u) ** 2 + (yy - v) ** 2) / (2 * 1.5 ** 2))


def peaks_oracle(maps, threshold):
    found = set()
    for m in maps:
        for y in range(32):
            for x in range(32):
                if m[y, x] <= threshold:
                    continue
                neigh = [m[yy, xx] for yy in range(max(0, y - 1), min(32, y + 2))
                         for xx in range(max(0, x - 1), min(32, x + 2)) if (yy, xx) != (y, x)]
                if all(m[y, x] >= n for n in neigh):
                    found.add((y, x))
    return [(x, y) for y, x in sorted(found)]


def test_single_peak():
    maps = np.zeros((42, 32, 32))
    maps[3] = _gauss(7, 19, 1.0)
    assert extract_peaks(maps).tolist() == [[7, 19]]


def test_zero_maps_no_peaks():
    assert extract_peaks(np.zeros((42, 32, 32))).shape == (0, 2)


def test_two_peaks_against_scan_oracle():
    maps = np.zeros((42, 32, 32))
    maps[0] = _gauss(10, 12, 0.9) + _gauss(20, 12, 0.8)
    got = extract_peaks(maps, 0.5)
    assert got.tolist() == [[10, 12], [20, 12]]
    assert [tuple(p) for p in got] == peaks_oracle(maps, 0.5)


def test_random_peaks_against_scan_oracle(rng):
    maps = rng.uniform(size=(42, 32, 32)) ** 8
    assert [tuple(p) for p in extract_peaks(maps, 0.5)] == peaks_oracle(maps, 0.5)


def test_max_peaks_keeps_strongest():
    maps = np.zeros((42, 32, 32))
    maps[0] = _gauss(5, 5, 0.6) + _gauss(15, 5, 0.9) + _gauss(25, 25, 0.7)
    assert extract_peaks(maps, 0.5, max_peaks=2).tolist() == [[15, 5], [25, 25]]


# --- tokens and poses --------------------------------------------------------------

def test_positional_encoding_and_token_dim():
    pe = positional_encoding(np.array([[0, 0], [3, 7]]), 256)
    assert pe.shape == (2, 256)
    assert np.allclose(pe[0, :64], 0) and np.allclose(pe[0, 64:128], 1)
    emb = TokenEmbedding(np.random.default_rng(0), 64)
    assert emb(Tensor(np.zeros((3, 64))), np.array([[1, 2], [3, 4], [5, 6]])).shape == (3, 256)


def test_rot6d_orthonormal(rng):
    for _ in range(20):
        r = rot6d_to_matrix(Tensor(rng.normal(size=6))).data
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-6)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-6)


def test_rot6d_identity():
    assert np.allclose(rot6d_to_matrix(Tensor([1.0, 0, 0, 0, 1.0, 0])).data, np.eye(3), atol=1e-15)


def test_pose_output_shapes(rng):
    net = PoseTransformer(np.random.default_rng(0), 16, 16, 1, 1, 1, 50)
    pose = net.predict_poses(net.decode(net.encode(Tensor(rng.normal(size=(4, 16))))))
    assert pose.joints.shape == (2, 21, 3)
    assert np.all(pose.joints.data[:, 0] == 0)
    assert pose.rel_translation.shape == (3,)
    assert pose.rotation.shape == (3, 3) and pose.translation.shape == (3,)
    r = pose.rotation.data
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-6) and np.linalg.det(r) == pytest.approx(1, abs=1e-6)


def test_num_queries_must_cover_slots():
    with pytest.raises(ContractError):
        PoseTransformer(np.random.default_rng(0), 16, 16, 1, 1, 1, 43)


def test_row_sum_never_rounds_above_one():
    r = np.random.default_rng(2)
    for _ in range(300):
        m, n, d = r.integers(1, 12, size=3)
        q, k = r.normal(scale=5.0, size=(m, d)), r.normal(scale=5.0, size=(n, d))
        _, maps = combined_attention(Tensor(q), Tensor(k), Tensor(k), return_maps=True)
        assert np.all(maps.combined.sum(axis=1) <= 1.0)
        assert np.all(maps.combined <= maps.soft)
