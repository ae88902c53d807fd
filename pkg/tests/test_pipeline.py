import numpy as np
import pytest

from wmsync import geometry as geo
from wmsync import nets, qim
from wmsync import pipeline as pipe
from wmsync.layout import resize_layout
from wmsync.metrics import ber


@pytest.fixture(scope="module")
def model():
    return nets.TemplateModel.create(7, seed=0)


@pytest.fixture(scope="module")
def cfg():
    return pipe.PipelineConfig()


class TestEmbed:
    def test_canvas_equals_direct_pipeline(self, photo, model, cfg, layout):
        p = qim.Payload.random(256, seed=0)
        res = pipe.embed_image(photo, p, model, cfg)
        direct = qim.embed_payload(photo, layout, p) + model.generate_noise(layout)
        assert np.array_equal(res.stego_unclipped, direct)
        assert np.array_equal(res.stego_image, np.clip(direct, 0, 255))

    def test_any_size_signal_identity(self, photo, model, cfg):
        img = np.round(geo.resize(photo, (300, 420)))
        res = pipe.embed_image(img, qim.Payload.random(256, seed=1), model, cfg)
        assert res.stego_image.shape == img.shape
        assert np.array_equal(res.stego_unclipped - img, res.signal)
        assert res.psnr == pytest.approx(pipe.psnr(res.stego_image, img))

    @pytest.mark.parametrize("shape", [(300, 420), (768, 1024)])
    def test_any_size_decodes(self, photo, cfg, shape):
        img = np.round(geo.resize(photo, shape))
        p = qim.Payload.random(256, seed=3)
        res = pipe.embed_image(img, p, None, cfg)
        rep = pipe.decode_image(res.stego_image, cfg=cfg, mode="gt", gt=geo.RstParams())
        assert ber(rep.payload, p) == 0.0

    def test_template_blocks_only_get_template(self, photo, cfg, layout):
        res = pipe.embed_image(photo, qim.Payload.random(256, seed=2), None, cfg)
        mask = resize_layout(layout, 512).K_r.astype(bool)
        assert np.all(res.signal[mask] == 0)

    def test_color_image(self, cfg):
        from skimage import data

        rgb = geo.resize(data.astronaut()[..., 0].astype(float), (256, 256))
        rgb = np.stack([rgb, rgb * 0.9, rgb * 0.8], axis=-1)
        res = pipe.embed_image(rgb, qim.Payload.random(256, seed=3), None, cfg)
        assert res.stego_image.shape == rgb.shape
        d = res.stego_unclipped - rgb
        assert np.allclose(d[..., 0], d[..., 1]) and np.allclose(d[..., 1], d[..., 2])

    def test_rejects_wrong_payload_and_key(self, photo, model, cfg):
        with pytest.raises(ValueError):
            pipe.embed_image(photo, qim.Payload.random(100), None, cfg)
        with pytest.raises(ValueError):
            pipe.embed_image(photo, qim.Payload.random(256), model, pipe.PipelineConfig(key=8))
        with pytest.raises(ValueError):
            pipe.embed_image(np.zeros((4, 4, 2)), qim.Payload.random(256), None, cfg)


class TestDecode:
    def test_round_trip_no_attack(self, test_images, cfg):
        for i, img in enumerate(test_images):
            p = qim.Payload.random(256, seed=i)
            stego = pipe.embed_image(img, p, None, cfg).stego_image
            for mode, gt in (("none", None), ("gt", geo.RstParams())):
                rep = pipe.decode_image(stego, None, cfg=cfg, mode=mode, gt=gt)
                assert rep.payload == p
                assert rep.recovered_image.shape == (512, 512)
                assert np.all((rep.per_block_confidence >= 0) & (rep.per_block_confidence <= 1.5))

    def test_wrong_key_is_random(self, test_images, cfg):
        bers = []
        for i, img in enumerate(test_images):
            p = qim.Payload.random(256, seed=i)
            stego = pipe.embed_image(img, p, None, cfg).stego_image
            bers.append(ber(pipe.decode_image(stego, None, key=8, cfg=cfg, mode="none").payload, p))
        assert abs(np.mean(bers) - 0.5) < 0.1

    def test_gt_recovery_beats_none_at_30_degrees(self, test_images, cfg):
        a = geo.AttackSpec(geo.RstParams(30.0))
        gt_b, none_b = [], []
        for i, img in enumerate(test_images):
            p = qim.Payload.random(256, seed=i)
            att = geo.apply_attack(pipe.embed_image(img, p, None, cfg).stego_image, a)
            gt_b.append(ber(pipe.decode_image(att, None, cfg=cfg, mode="gt", gt=geo.effective_rst(a)).payload, p))
            none_b.append(ber(pipe.decode_image(att, None, cfg=cfg, mode="none").payload, p))
        assert np.mean(gt_b) < np.mean(none_b)

    def test_mode_errors(self, photo, cfg):
        with pytest.raises(ValueError):
            pipe.decode_image(photo, None, cfg=cfg, mode="template")
        with pytest.raises(ValueError):
            pipe.decode_image(photo, None, cfg=cfg, mode="gt")
        with pytest.raises(ValueError):
            pipe.decode_image(photo, None, cfg=cfg, mode="oracle")

    def test_template_mode_runs(self, photo, model, cfg):
        stego = pipe.embed_image(photo, qim.Payload.random(256, seed=0), model, cfg).stego_image
        rep = pipe.decode_image(stego, model, cfg=cfg)
        assert isinstance(rep.est_rst, geo.RstParams) and len(rep.payload) == 256

    def test_decoder_is_blind(self, photo, cfg, monkeypatch):
        # decoding sees only the received pixels: the same pixels give the same report
        stego = pipe.embed_image(photo, qim.Payload.random(256, seed=0), None, cfg).stego_image
        a = pipe.decode_image(stego.copy(), None, cfg=cfg, mode="none")
        b = pipe.decode_image(stego.copy(), None, cfg=cfg, mode="none")
        assert a.payload == b.payload


class TestRecover:
    def test_identity(self, photo):
        assert np.array_equal(pipe.recover_image(photo, geo.RstParams()), photo)

    def test_round_trip(self, test_images):
        p = geo.RstParams(25.0, 1.1, 1.1, 0.05, 0.0)
        mask = np.zeros((512, 512), bool)
        mask[130:-130, 130:-130] = True
        errs = [np.mean(np.abs(pipe.recover_image(geo.apply_rst(im, p), p) - im)[mask]) for im in test_images]
        assert np.mean(errs) < 2.0

    def test_anisotropic_rotation(self, photo):
        p = geo.RstParams(20.0, 1.2, 0.9)
        out = pipe.recover_image(geo.apply_rst(photo, p), p)
        assert out.shape == (512, 512)

    def test_matrix_to_rst(self):
        p = geo.RstParams(33.0, 1.2, 0.9, 0.1, -0.05)
        q = pipe.matrix_to_rst(geo.rst_matrix(p))
        assert np.allclose(q.as_array(), p.as_array())


class TestCompensation:
    def test_resize_attack_gt(self, test_images, cfg):
        a = geo.AttackSpec(geo.RstParams(0, 1.2, 1.2), jpeg_q=100)
        on, off = [], []
        for i, img in enumerate(test_images):
            p = qim.Payload.random(256, seed=i)
            att = geo.apply_attack(pipe.embed_image(img, p, None, cfg).stego_image, a)
            gt = geo.effective_rst(a)
            on.append(ber(pipe.decode_image(att, None, cfg=cfg, mode="gt", gt=gt).payload, p))
            off_cfg = pipe.PipelineConfig(compensate=False)
            off.append(ber(pipe.decode_image(att, None, cfg=off_cfg, mode="gt", gt=gt).payload, p))
        assert np.mean(on) <= 0.05
        assert np.mean(on) < np.mean(off)
