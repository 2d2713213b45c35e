"""Smoke tests for the python bindings; runs standalone or under pytest."""

import math
import os
import tempfile

import numpy as np

import capsforge


def test_squash_norms():
    v = capsforge.squash(np.array([[0.0, 0.0, 0.0], [2 / 3, 1 / 3, 2 / 3], [2.0, 1.0, 2.0]], dtype=np.float32))
    norms = np.linalg.norm(v, axis=-1)
    assert abs(norms[0] - 0.0) < 1e-6
    assert abs(norms[1] - 0.5) < 1e-6
    assert abs(norms[2] - 0.9) < 1e-6


def test_softmax_rows():
    p = capsforge.softmax(np.random.RandomState(0).randn(3, 5).astype(np.float32), axis=1)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-5)
    assert (p > 0).all()


def test_route_shapes_and_simplex():
    rs = np.random.RandomState(1)
    uhat = rs.randn(2, 6, 4, 3).astype(np.float32)
    out = capsforge.route(uhat, iters=3)
    assert out["v"].shape == (2, 4, 3)
    assert out["couplings"].shape == (2, 6, 4)
    assert np.allclose(out["couplings"].sum(axis=2), 1.0, atol=1e-5)
    assert (np.linalg.norm(out["v"], axis=-1) < 1.0).all()


def test_conv2d_matches_numpy():
    rs = np.random.RandomState(2)
    x = rs.randn(1, 2, 5, 5).astype(np.float32)
    k = rs.randn(3, 2, 3, 3).astype(np.float32)
    b = rs.randn(3).astype(np.float32)
    y = capsforge.conv2d(x, k, b, stride=1)
    assert y.shape == (1, 3, 3, 3)
    ref = np.zeros_like(y)
    for f in range(3):
        for oy in range(3):
            for ox in range(3):
                ref[0, f, oy, ox] = (x[0, :, oy : oy + 3, ox : ox + 3] * k[f]).sum() + b[f]
    assert np.allclose(y, ref, atol=1e-4)


def test_margin_loss_zero_when_confident():
    norms = np.array([[0.95, 0.05], [0.05, 0.95]], dtype=np.float32)
    assert capsforge.margin_loss(norms, [0, 1]) < 1e-6
    assert capsforge.margin_loss(norms, [1, 0]) > 0.5


def test_pca_rank():
    rs = np.random.RandomState(3)
    basis = np.linalg.qr(rs.randn(6, 6))[0][:3]
    rows = rs.randn(50, 3) @ basis
    out = capsforge.pca(rows, out_dims=3)
    assert abs(out["explained"].sum() - 1.0) < 1e-9
    assert np.allclose(np.linalg.norm(out["sphereized"], axis=1), 1.0, atol=1e-9)


def test_affine_identity():
    rs = np.random.RandomState(4)
    img = rs.rand(9, 9).astype(np.float32)
    assert np.allclose(capsforge.apply_affine(img), img, atol=1e-5)


def test_model_end_to_end():
    cfg = {
        "in_h": 12,
        "in_w": 12,
        "conv1_maps": 4,
        "conv1_kernel": 5,
        "primary_types": 2,
        "primary_kernel": 5,
        "num_classes": 2,
        "digit_dim": 8,
        "decoder_hidden": [16, 16],
    }
    model = capsforge.Model(cfg, seed=7)
    assert model.parameter_count > 0

    rs = np.random.RandomState(5)
    images = rs.rand(4, 1, 12, 12).astype(np.float32)
    labels = [0, 1, 0, 1]
    out = model.forward(images)
    assert out["norms"].shape == (4, 2)
    assert len(out["predicted"]) == 4
    assert np.allclose(out["couplings"].sum(axis=2), 1.0, atol=1e-5)

    first = model.loss(images, labels)["total"]
    for _ in range(10):
        model.train_step(images, labels, lr=1e-3)
    assert model.loss(images, labels)["total"] < first

    recon = model.reconstruct(images)
    assert recon.shape == (4, 144)
    assert (recon > 0).all() and (recon < 1).all()

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path)
        clone = capsforge.Model(cfg, seed=999)
        clone.load(path)
        assert np.array_equal(clone.forward(images)["norms"], out_after := model.forward(images)["norms"])
        assert math.isfinite(out_after.sum())


def test_load_idx(tmp_dir=None):
    import struct

    with tempfile.TemporaryDirectory() as tmp:
        img_path = os.path.join(tmp, "img.idx")
        lab_path = os.path.join(tmp, "lab.idx")
        with open(img_path, "wb") as f:
            f.write(struct.pack(">IIII", 0x803, 2, 3, 3))
            f.write(bytes(range(18)))
        with open(lab_path, "wb") as f:
            f.write(struct.pack(">II", 0x801, 2))
            f.write(bytes([7, 1]))
        images, labels = capsforge.load_idx(img_path, lab_path)
        assert images.shape == (2, 1, 3, 3)
        assert labels.tolist() == [7, 1]
        assert abs(images[1, 0, 0, 0] - 9 / 255) < 1e-6


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_") and callable(v)]
    for fn in tests:
        fn()
        print(f"ok: {fn.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
