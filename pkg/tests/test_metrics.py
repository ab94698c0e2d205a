import numpy as np
import pytest

from shadowsynth import colorspace as cs
from shadowsynth import imgio
from shadowsynth import metrics as mx


def _random_pairs(n=4, size=32, seed=0):
    rng = np.random.default_rng(seed)
    preds, gts, masks = [], [], []
    for _ in range(n):
        preds.append(rng.uniform(0, 100, (size, size, 3)))
        gts.append(rng.uniform(0, 100, (size, size, 3)))
        masks.append((rng.random((size, size)) < rng.uniform(0.2, 0.8)).astype(np.uint8))
    return preds, gts, masks


def brute_rmse_star(preds, gts, masks):
    total, count = 0.0, 0
    for p, g, m in zip(preds, gts, masks):
        for i in range(p.shape[0]):
            for j in range(p.shape[1]):
                if m[i, j]:
                    total += np.abs(p[i, j] - g[i, j]).sum() / 3.0
                    count += 1
    return total / count


def brute_rmse(preds, gts, masks):
    vals = []
    for p, g, m in zip(preds, gts, masks):
        tot, cnt = 0.0, 0
        for i in range(p.shape[0]):
            for j in range(p.shape[1]):
                if m[i, j]:
                    tot += np.abs(p[i, j] - g[i, j]).sum() / 3.0
                    cnt += 1
        if cnt:
            vals.append(tot / cnt)
    return float(np.mean(vals))


def brute_psnr(pred, gt, mask):
    se, cnt = 0.0, 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if mask[i, j]:
                se += ((pred[i, j] - gt[i, j]) ** 2).sum()
                cnt += 3
    mse = se / cnt
    return 100.0 if mse == 0 else min(100.0, 10 * np.log10(1 / mse))


class TestRmseStar:
    def test_identical_images(self):
        preds, _, masks = _random_pairs(2)
        assert mx.rmse_star(preds, preds, masks) == 0.0

    def test_area_weighted_combination(self):
        preds, gts, masks = _random_pairs(2, size=16, seed=1)
        v1 = mx.rmse_star(preds[:1], gts[:1], masks[:1])
        v2 = mx.rmse_star(preds[1:], gts[1:], masks[1:])
        n1, n2 = masks[0].sum(), masks[1].sum()
        combined = mx.rmse_star(preds, gts, masks)
        assert abs(combined - (n1 * v1 + n2 * v2) / (n1 + n2)) < 1e-12

    def test_constant_l_offset(self):
        rng = np.random.default_rng(2)
        gt = rng.uniform(10, 90, (8, 8, 3))
        pred = gt.copy()
        pred[..., 0] += 4.5
        mask = np.ones((8, 8), np.uint8)
        # per-pixel error averages the three channel differences
        assert abs(mx.rmse_star([pred], [gt], [mask]) - 1.5) < 1e-12

    def test_matches_brute_force(self):
        preds, gts, masks = _random_pairs(3, size=12, seed=3)
        assert abs(mx.rmse_star(preds, gts, masks) - brute_rmse_star(preds, gts, masks)) < 1e-9


class TestRmse:
    def test_identical(self):
        preds, _, masks = _random_pairs(2, seed=4)
        assert mx.rmse(preds, preds, masks) == 0.0

    def test_mean_of_per_image_values(self):
        # construct two images with known per-image errors 2 and 4
        gt = np.zeros((4, 4, 3))
        p1 = gt.copy()
        p1[..., :] += 2.0  # per-pixel error 2
        p2 = gt.copy()
        p2[..., :] += 4.0
        masks = [np.ones((4, 4), np.uint8)] * 2
        assert abs(mx.rmse([p1, p2], [gt, gt], masks) - 3.0) < 1e-12

    def test_differs_from_star_on_unequal_masks(self):
        preds, gts, masks = _random_pairs(3, size=12, seed=5)
        star = mx.rmse_star(preds, gts, masks)
        per_image = mx.rmse(preds, gts, masks)
        assert abs(per_image - brute_rmse(preds, gts, masks)) < 1e-9
        assert star != per_image  # masks have different areas

    def test_equals_star_when_mask_areas_match(self):
        rng = np.random.default_rng(6)
        preds = [rng.uniform(0, 100, (8, 8, 3)) for _ in range(3)]
        gts = [rng.uniform(0, 100, (8, 8, 3)) for _ in range(3)]
        mask = np.zeros((8, 8), np.uint8)
        mask[2:6, 2:6] = 1
        masks = [mask] * 3
        star = mx.rmse_star(preds, gts, masks)
        per_image = mx.rmse(preds, gts, masks)
        assert abs(star - per_image) < 1e-12


class TestPsnr:
    def test_identical_capped(self):
        img = np.random.default_rng(7).random((8, 8, 3))
        assert mx.psnr(img, img) == 100.0

    def test_half_gray_vs_black(self):
        pred = np.full((8, 8, 3), 0.5)
        gt = np.zeros((8, 8, 3))
        assert abs(mx.psnr(pred, gt) - 10 * np.log10(1 / 0.25)) < 1e-9

    def test_matches_brute_force_masked(self):
        rng = np.random.default_rng(8)
        for _ in range(3):
            pred = rng.random((10, 10, 3))
            gt = rng.random((10, 10, 3))
            mask = (rng.random((10, 10)) < 0.5).astype(np.uint8)
            assert abs(mx.psnr(pred, gt, mask) - brute_psnr(pred, gt, mask)) < 1e-9


class TestSsim:
    def test_identical_is_one(self):
        img = np.random.default_rng(9).random((24, 24, 3))
        assert abs(mx.ssim(img, img) - 1.0) < 1e-12

    def test_matches_reference_implementation(self):
        sk = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(10)
        for seed in range(3):
            pred = rng.random((32, 32, 3))
            gt = rng.random((32, 32, 3))
            ours = mx.ssim(pred, gt)
            ref = sk.structural_similarity(
                pred,
                gt,
                channel_axis=2,
                data_range=1.0,
                gaussian_weights=True,
                sigma=1.5,
                use_sample_covariance=False,
            )
            assert abs(ours - ref) < 1e-4

    def test_inverted_binary_image_vs_reference(self):
        sk = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(11)
        gt = (rng.random((32, 32, 3)) < 0.5).astype(np.float64)
        pred = 1.0 - gt
        ours = mx.ssim(pred, gt)
        ref = sk.structural_similarity(
            pred, gt, channel_axis=2, data_range=1.0,
            gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
        )
        assert abs(ours - ref) < 1e-4

    def test_bounded(self):
        rng = np.random.default_rng(12)
        for seed in range(5):
            a, b = rng.random((24, 24, 3)), rng.random((24, 24, 3))
            val = mx.ssim(a, b)
            assert -1.0 <= val <= 1.0

    def test_masked_variant_subsets_map(self):
        rng = np.random.default_rng(13)
        a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
        mask = np.zeros((32, 32), np.uint8)
        mask[8:24, 8:24] = 1
        smap, pad = mx.ssim_map(a, b)
        expected = smap[pad:-pad, pad:-pad][mask[pad:-pad, pad:-pad].astype(bool)].mean()
        assert abs(mx.ssim(a, b, mask) - expected) < 1e-12

    def test_too_small_rejected(self):
        img = np.zeros((8, 8, 3))
        with pytest.raises(ValueError, match="at least"):
            mx.ssim(img, img)


def _write_eval_dirs(tmp_path, n=3, size=32, seed=0, identical=False):
    rng = np.random.default_rng(seed)
    for sub in ("pred", "gt", "mask"):
        (tmp_path / sub).mkdir(exist_ok=True)
    for i in range(n):
        gt = rng.random((size, size, 3))
        pred = gt if identical else np.clip(gt + rng.normal(0, 0.1, gt.shape), 0, 1)
        mask = np.zeros((size, size), np.uint8)
        mask[4 : size // 2, 4 : size // 2] = 1
        name = f"img_{i}.png"
        imgio.save_image(tmp_path / "pred" / name, pred)
        imgio.save_image(tmp_path / "gt" / name, gt)
        imgio.save_mask_array(tmp_path / "mask" / name, mask)


class TestEvaluate:
    def test_identical_dirs(self, tmp_path):
        _write_eval_dirs(tmp_path, identical=True)
        report = mx.evaluate(tmp_path / "pred", tmp_path / "gt", tmp_path / "mask", resize_to=None)
        for region in mx.REGIONS:
            assert report.regions[region]["rmse"] == 0.0
            assert report.regions[region]["rmse_star"] == 0.0
            assert report.regions[region]["psnr"] == 100.0
            assert abs(report.regions[region]["ssim"] - 1.0) < 1e-9
        assert report.count == 3

    def test_unmatched_filenames_listed(self, tmp_path):
        _write_eval_dirs(tmp_path)
        (tmp_path / "pred" / "img_0.png").unlink()
        with pytest.raises(ValueError, match="img_0.png"):
            mx.evaluate(tmp_path / "pred", tmp_path / "gt", tmp_path / "mask")

    def test_resize_applied(self, tmp_path):
        _write_eval_dirs(tmp_path, size=64)
        report = mx.evaluate(
            tmp_path / "pred", tmp_path / "gt", tmp_path / "mask", resize_to=32
        )
        assert report.resize_to == (32, 32)

    def test_known_constant_attenuation(self, tmp_path):
        # analytic construction: prediction darkens L by a fixed factor
        # inside the mask, so the masked LAB error is known in closed form
        rng = np.random.default_rng(20)
        for sub in ("pred", "gt", "mask"):
            (tmp_path / sub).mkdir(exist_ok=True)
        gts, preds, masks = [], [], []
        for i in range(2):
            # near-gray so the darkened version stays inside the sRGB gamut
            gray = rng.uniform(0.3, 0.9, (32, 32, 1))
            gt_rgb = np.clip(gray + rng.uniform(-0.02, 0.02, (32, 32, 3)), 0, 1)
            mask = np.zeros((32, 32), np.uint8)
            mask[6:20, 8:26] = 1
            lab = cs.rgb_to_lab(gt_rgb)
            shadow_lab = lab.copy()
            shadow_lab[..., 0] *= np.where(mask, 0.5, 1.0)
            pred_rgb = cs.lab_to_rgb(shadow_lab)
            name = f"t{i}.png"
            imgio.save_image(tmp_path / "pred" / name, pred_rgb)
            imgio.save_image(tmp_path / "gt" / name, gt_rgb)
            imgio.save_mask_array(tmp_path / "mask" / name, mask)
            gts.append(gt_rgb)
            preds.append(pred_rgb)
            masks.append(mask)
        report = mx.evaluate(
            tmp_path / "pred", tmp_path / "gt", tmp_path / "mask", resize_to=None
        )
        # closed form up to PNG quantization: error = mean(|0.5 L|)/3 in mask
        expected = []
        for gt_rgb, mask in zip(gts, masks):
            lvals = cs.rgb_to_lab(gt_rgb)[..., 0]
            expected.append((0.5 * lvals[mask.astype(bool)]).mean() / 3.0)
        got = report.regions["shadow"]["rmse"]
        # both pred and gt pass through 8-bit PNGs, each worth ~0.1 LAB units
        assert abs(got - float(np.mean(expected))) < 0.25

    def test_permutation_symmetry(self):
        preds, gts, masks = _random_pairs(4, size=16, seed=21)
        perm = [2, 0, 3, 1]
        a = mx.rmse_star(preds, gts, masks)
        b = mx.rmse_star([preds[i] for i in perm], [gts[i] for i in perm], [masks[i] for i in perm])
        assert abs(a - b) < 1e-12
        a2 = mx.rmse(preds, gts, masks)
        b2 = mx.rmse([preds[i] for i in perm], [gts[i] for i in perm], [masks[i] for i in perm])
        assert abs(a2 - b2) < 1e-12

    def test_report_serialization(self, tmp_path):
        _write_eval_dirs(tmp_path, identical=True)
        report = mx.evaluate(tmp_path / "pred", tmp_path / "gt", tmp_path / "mask", resize_to=None)
        assert "shadow" in report.to_json()
        csv = report.to_csv()
        assert csv.startswith("region,rmse_star,rmse,psnr,ssim")
        assert len(csv.strip().splitlines()) == 4
        assert "images: 3" in report.table()


def test_resize_commutes_with_prior_resize(tmp_path):
    # resizing inputs to the eval size beforehand must equal evaluate's
    # internal resize at the same target
    import cv2

    rng = np.random.default_rng(30)
    for sub in ("pred", "gt", "mask", "pred2", "gt2", "mask2"):
        (tmp_path / sub).mkdir()
    for i in range(2):
        pred = rng.random((48, 48, 3))
        gt = rng.random((48, 48, 3))
        mask = np.zeros((48, 48), np.uint8)
        mask[10:30, 10:30] = 1
        name = f"r{i}.png"
        imgio.save_image(tmp_path / "pred" / name, pred)
        imgio.save_image(tmp_path / "gt" / name, gt)
        imgio.save_mask_array(tmp_path / "mask" / name, mask)
        # pre-resized copies (same method: bilinear / nearest)
        pred_r = cv2.resize(
            imgio.load_image(tmp_path / "pred" / name), (24, 24), interpolation=cv2.INTER_LINEAR
        )
        gt_r = cv2.resize(
            imgio.load_image(tmp_path / "gt" / name), (24, 24), interpolation=cv2.INTER_LINEAR
        )
        mask_r = cv2.resize(mask, (24, 24), interpolation=cv2.INTER_NEAREST)
        imgio.save_image(tmp_path / "pred2" / name, pred_r)
        imgio.save_image(tmp_path / "gt2" / name, gt_r)
        imgio.save_mask_array(tmp_path / "mask2" / name, mask_r)
    internal = mx.evaluate(tmp_path / "pred", tmp_path / "gt", tmp_path / "mask", resize_to=24)
    external = mx.evaluate(tmp_path / "pred2", tmp_path / "gt2", tmp_path / "mask2", resize_to=None)
    for region in mx.REGIONS:
        for metric in mx.METRIC_NAMES:
            a = internal.regions[region][metric]
            b = external.regions[region][metric]
            assert abs(a - b) < 0.05  # differs only by one 8-bit quantization
