import csv

import numpy as np
import pytest
import torch

from wmsync import checkpoint, datasets, nets, training
from wmsync.layout import generate_layout

TINY = nets.NetConfig(template=8, gen_channels=(4, 4, 4), code_channels=2, ext_channels=(4, 4, 4),
                      features=25, head_channels=(2, 2))


def tiny_model(seed=0, dtype=torch.float64):
    return nets.TemplateModel.create(7, TINY, seed=seed, dtype=dtype)


@pytest.fixture(scope="module")
def tiny_images():
    return datasets.builtin_corpus("train", 24, seed=0, size=64)


def _attack(n, cfg, seed=0):
    return training.sample_batch_attack(np.random.default_rng(seed), n, cfg)


class TestPretrain:
    def test_reaches_threshold_deterministically(self):
        target = nets.pretrain_target(64, seed=0)
        runs = []
        for _ in range(2):
            m = tiny_model()
            runs.append(training.pretrain_generator(m, target, budget=3000, threshold=0.3, lr=1e-2))
        assert runs[0].converged and runs[0].status == "ok"
        assert runs[0].final_mse < 0.3
        assert runs[0].steps == runs[1].steps and runs[0].final_mse == runs[1].final_mse

    def test_budget_exhausted_warns(self):
        m = tiny_model()
        with pytest.warns(RuntimeWarning):
            rep = training.pretrain_generator(m, nets.pretrain_target(64), budget=3, threshold=1e-6)
        assert not rep.converged and rep.status == "budget_exhausted"
        assert m.train_meta["pretrain_steps"] == 3


class TestBatchAttack:
    def test_ranges(self):
        atk = _attack(2000, training.TrainConfig())
        assert atk.params.shape == (2000, 5)
        assert atk.params[:, 0].min() >= 0 and atk.params[:, 0].max() <= 90
        assert np.all((atk.resample >= 0.7) & (atk.resample <= 1.5))
        assert np.all(atk.noise_var <= 200)
        jq = atk.jpeg_q[atk.jpeg_q > 0]
        assert jq.min() >= 30 and jq.max() <= 100
        # a sample is either scaled on the canvas or resized, never both
        scaled = np.any(atk.params[:, 1:3] != 1.0, axis=1)
        resized = np.any(atk.resample != 1.0, axis=1)
        assert not np.any(scaled & resized)

    def test_identity_fraction(self):
        atk = _attack(4000, training.TrainConfig(p_identity=0.25))
        still = np.all(atk.params == (0.0, 1.0, 1.0, 0.0, 0.0), axis=1) & np.all(atk.resample == 1.0, axis=1)
        assert 0.2 < still.mean() < 0.3
        none = _attack(500, training.TrainConfig(p_identity=0.0))
        assert not np.any(np.all(none.params == (0.0, 1.0, 1.0, 0.0, 0.0), axis=1))

    def test_identity_attack_is_identity(self, tiny_images):
        cfg = training.TrainConfig(rot_range=(0, 0), scale_range=(1, 1), trans_max=0, p_noise=0, p_jpeg=0)
        x = torch.tensor(tiny_images[:3, None])
        out = training.attack_tensor(x, _attack(3, cfg), torch.Generator().manual_seed(0))
        assert torch.allclose(out, x, atol=1e-9)

    def test_jpeg_straight_through(self, tiny_images):
        cfg = training.TrainConfig(rot_range=(0, 0), scale_range=(1, 1), trans_max=0, p_noise=0, p_jpeg=1)
        x = torch.tensor(tiny_images[:2, None], requires_grad=True)
        out = training.attack_tensor(x, _attack(2, cfg), torch.Generator())
        assert torch.equal(out, torch.round(out))
        out.sum().backward()
        assert torch.all(x.grad == 1)


def _flat(params):
    return torch.nn.utils.parameters_to_vector(params)


def _set(params, vec):
    torch.nn.utils.vector_to_parameters(vec, params)


def _fd_check(params, loss_fn, n_dirs=10, h=1e-5, seed=0):
    """Max relative error between g.v and the central difference along v."""
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    grad = torch.cat([p.grad.reshape(-1) for p in params])
    theta = _flat(params).detach().clone()
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_dirs):
            v = torch.randn(theta.shape, generator=gen, dtype=theta.dtype)
            v /= v.norm()
            _set(params, theta + h * v)
            up = loss_fn().item()
            _set(params, theta - h * v)
            down = loss_fn().item()
            fd = (up - down) / (2 * h)
            an = float(grad @ v)
            worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-12))
        _set(params, theta)
    return worst


class TestGradients:
    """Analytic gradients vs central differences on a tiny float64 model."""

    @pytest.fixture
    def setup(self, tiny_images):
        m = tiny_model(seed=1)
        assert m.n_params() <= 10_000
        cfg = training.TrainConfig(p_noise=1.0, noise_max=50, p_jpeg=0.0)
        atk = _attack(4, cfg, seed=3)
        x = torch.tensor(tiny_images[:4, None])
        return m, cfg, atk, x

    def test_loss_g(self, setup):
        m, *_ = setup
        layout = generate_layout(7, size=64)
        err = _fd_check(m.generator.parameters(), lambda: nets.loss_g(m.raw_noise(layout)))
        assert err < 1e-4

    def test_loss_e(self, setup):
        m, cfg, atk, x = setup
        layout = generate_layout(7, size=64)

        def le():
            gen = torch.Generator().manual_seed(5)
            marked = x + m.raw_noise(layout) * m.mask_tensor(layout)
            k_ext = m.extractor(training.attack_tensor(marked, atk, gen) / 255.0)
            return nets.loss_e(k_ext, m.k_tensor(layout), torch.tensor(atk.params))

        params = list(m.generator.parameters()) + list(m.extractor.parameters())
        assert _fd_check(params, le) < 1e-4

    def test_end_to_end(self, setup):
        m, cfg, atk, x = setup

        def total():
            return training.end_to_end_loss(m, x, atk, torch.Generator().manual_seed(5), cfg)[0]

        assert _fd_check(list(m.parameters()), total) < 1e-4


class TestEndToEnd:
    def test_runs_and_records_curve(self, tiny_images, tmp_path):
        m = tiny_model(dtype=torch.float32)
        cfg = training.TrainConfig(batch=8)
        rep = training.train_end_to_end(m, tiny_images[:16], 2, seed=0, cfg=cfg, heldout=tiny_images[16:],
                                        curve_path=tmp_path / "curve.csv")
        assert [r["epoch"] for r in rep.curve] == [0, 1]
        assert m.train_meta["epochs"] == 2
        rows = list(csv.DictReader(open(tmp_path / "curve.csv")))
        assert set(rows[0]) >= {"epoch", "L_g", "L_d", "loss", "heldout_L_d"}

    def test_deterministic(self, tiny_images):
        curves = []
        for _ in range(2):
            m = tiny_model(dtype=torch.float32)
            curves.append(training.train_end_to_end(m, tiny_images[:8], 1, seed=4,
                                                    cfg=training.TrainConfig(batch=4)).curve)
        assert curves[0] == curves[1]

    def test_nan_aborts(self, tiny_images):
        m = tiny_model(dtype=torch.float32)
        with torch.no_grad():
            m.generator.code.fill_(float("nan"))
        with pytest.raises(training.TrainingDiverged):
            training.train_end_to_end(m, tiny_images[:4], 1, cfg=training.TrainConfig(batch=4))

    def test_wrong_image_size(self):
        with pytest.raises(ValueError):
            training.train_end_to_end(tiny_model(), np.zeros((2, 32, 32)), 1)

    def test_freeze_generator(self, tiny_images):
        m = tiny_model(dtype=torch.float32)
        before = m.generator.code.detach().clone()
        training.train_end_to_end(m, tiny_images[:4], 1, cfg=training.TrainConfig(batch=4, freeze_generator=True))
        assert torch.equal(before, m.generator.code)

    def test_warmups_reduce_loss(self, tiny_images):
        m = tiny_model(dtype=torch.float32)
        cfg = training.TrainConfig(rot_range=(0, 10), scale_range=(0.9, 1.1), trans_max=0.05)
        hist = training.pretrain_matcher(m, 150, seed=0, batch=32, cfg=cfg)
        assert np.mean(hist[-20:]) < np.mean(hist[:20])
        hist = training.pretrain_extractor(m, tiny_images, 20, crop=32, batch=4, cfg=cfg, log_every=0)
        assert len(hist) == 20 and np.all(np.isfinite(hist))
        with pytest.raises(ValueError):
            training.pretrain_extractor(m, tiny_images, 1, crop=30)


class TestMatcherTuning:
    def test_collect_and_tune(self, tiny_images):
        m = tiny_model(dtype=torch.float32)
        cfg = training.TrainConfig(rot_range=(0, 10), scale_range=(0.9, 1.1), trans_max=0.05)
        k_ext, params = training.collect_extractions(m, tiny_images, 10, seed=1, cfg=cfg, batch=4)
        assert k_ext.shape == (10, 1, 8, 8) and params.shape == (10, 5)
        again, _ = training.collect_extractions(m, tiny_images, 10, seed=1, cfg=cfg, batch=4)
        assert torch.equal(k_ext, again)
        ext_before = [p.detach().clone() for p in m.extractor.parameters()]
        hist = training.tune_matcher(m, k_ext, params, 30, batch=5, lr=3e-3)
        assert len(hist) == 30 and hist[-1] < hist[0]
        assert all(torch.equal(a, b) for a, b in zip(ext_before, m.extractor.parameters()))


class TestCheckpoint:
    def test_round_trip(self, tmp_path, layout):
        m = nets.TemplateModel.create(7, seed=2)
        m.train_meta["note"] = "x"
        path = tmp_path / "m.ckpt"
        checkpoint.save_model(m, path)
        back = checkpoint.load_model(path)
        assert back.cfg == m.cfg and back.layout_key == 7 and back.train_meta["note"] == "x"
        assert np.array_equal(back.generate_noise(layout), m.generate_noise(layout))
        for a, b in zip(m.parameters(), back.parameters()):
            assert torch.equal(a, b)

    def test_bytes_deterministic(self):
        m = tiny_model()
        assert checkpoint.to_bytes(m) == checkpoint.to_bytes(m)
        assert checkpoint.from_bytes(checkpoint.to_bytes(m)).dtype == torch.float64

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            checkpoint.from_bytes(b"not a zip")

    def test_rejects_other_version(self):
        import io
        import json
        import zipfile

        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            zf.writestr("meta.json", json.dumps({"format": checkpoint.FORMAT, "version": 99}))
        with pytest.raises(ValueError):
            checkpoint.from_bytes(buf.getvalue())
