import math

import numpy as np
import pytest

from watermamba import oracles
from watermamba.exceptions import ImageFormatException, MetricException
from watermamba.metrics import (
    MetricReport, MetricRow, eme, evaluate_dir, psnr, rgb_to_lab, ssim,
    uciqe, uciqe_components, uicm, uiconm, uiqm, uism
)
from watermamba.rng import Rng


def _image(seed: int, h: int = 16, w: int = 16) -> np.ndarray:
    return Rng(seed).uniform(h * w * 3).reshape(h, w, 3)


def test_psnr_closed_form():
    a = np.full((8, 8, 3), 100.0)
    assert psnr(a, a + 16, peak=255.0) == pytest.approx(24.0483, abs=1e-4)


def test_psnr_of_identical_images_is_infinite():
    image = _image(0)
    assert psnr(image, image) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(MetricException):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim():
    image = _image(1, 32, 32)

    # Then
    assert ssim(image, image) == pytest.approx(1.0, abs=1e-12)
    assert ssim(image, 1 - image) < 0.5
    with pytest.raises(MetricException, match="at least 11x11"):
        ssim(np.zeros((10, 40, 3)), np.zeros((10, 40, 3)))


def test_constant_grey_scores_zero():
    grey = np.full((16, 16, 3), 0.5)
    assert uiqm(grey) == pytest.approx(0.0, abs=1e-9)
    assert uciqe(grey) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_uiqm_matches_loop_oracle(seed):
    image = _image(seed, 17, 20)

    # Then
    assert uicm(image) == pytest.approx(oracles.uicm(image), abs=1e-9)
    assert uism(image) == pytest.approx(oracles.uism(image), abs=1e-9)
    assert uiconm(image) == pytest.approx(oracles.uiconm(image), abs=1e-9)
    assert uiqm(image) == pytest.approx(oracles.uiqm(image), abs=1e-9)


@pytest.mark.parametrize("seed", [3, 4])
def test_uciqe_matches_loop_oracle(seed):
    image = _image(seed)
    assert uciqe(image) == pytest.approx(oracles.uciqe(image), abs=1e-9)


def test_eme_ignores_partial_blocks():
    assert eme(np.ones((7, 30))) == 0.0
    channel = np.ones((8, 8))
    channel[0, 0] = math.e
    assert eme(channel) == pytest.approx(2.0)


def test_lab_white_and_black():
    lab = rgb_to_lab(np.array([[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]]))
    np.testing.assert_allclose(lab[0, 0], [100.0, 0.0, 0.0], atol=1e-6)
    np.testing.assert_allclose(lab[0, 1], [0.0, 0.0, 0.0], atol=1e-6)


def test_colourful_image_outscores_grey():
    colourful = _image(5)
    sigma_c, contrast_l, saturation = uciqe_components(colourful)
    assert sigma_c > 0 and contrast_l > 0 and saturation > 0
    assert uciqe(colourful) > uciqe(np.full((16, 16, 3), 0.5))


def test_metrics_reject_non_rgb():
    with pytest.raises(MetricException):
        uiqm(np.zeros((8, 8)))


def test_report_csv_round_trip():
    report = MetricReport([
        MetricRow("a.png", psnr=math.inf, ssim=1.0, uiqm=0.25, uciqe=0.5),
        MetricRow("b.png", uiqm=1.0 / 3.0),
    ])

    # When
    text = report.to_csv()

    # Then
    assert text.splitlines()[0] == "path,psnr,ssim,uiqm,uciqe"
    assert text.splitlines()[1] == "a.png,inf,1.0,0.25,0.5"
    assert MetricReport.from_csv(text) == report


def test_report_csv_header_is_checked():
    with pytest.raises(ValueError):
        MetricReport.from_csv("file,score\nx,1\n")


def test_report_aggregate_skips_missing_values():
    report = MetricReport([
        MetricRow("a.png", uiqm=1.0, uciqe=0.2),
        MetricRow("b.png", uiqm=3.0),
    ])

    # When
    means = report.aggregate()

    # Then
    assert means["uiqm"] == 2.0
    assert means["uciqe"] == 0.2
    assert means["psnr"] is None
    assert report.counts() == { "psnr": 0, "ssim": 0, "uiqm": 2, "uciqe": 1 }


def test_evaluate_dir_with_references(image_dirs):
    in_dir, ref_dir = image_dirs

    # When
    report = evaluate_dir(in_dir, ref_dir, workers=2)

    # Then
    assert [row.path for row in report.rows] == ["a.png", "b.png", "c.png"]
    a, b, c = report.rows
    assert a.psnr > 10 and 0 < a.ssim < 1
    assert a.uiqm is not None and a.uciqe is not None
    assert c.psnr is None and c.warning == "unpaired"


def test_evaluate_dir_no_reference_metrics(image_dirs):
    in_dir, _ = image_dirs

    # When
    report = evaluate_dir(in_dir, metrics=("uiqm",))

    # Then
    assert len(report.rows) == 3
    assert all(row.uciqe is None and row.uiqm is not None for row in report.rows)


def test_evaluate_dir_strict_mode_raises(image_dirs):
    in_dir, _ = image_dirs
    with pytest.raises(ImageFormatException):
        evaluate_dir(in_dir, metrics=("uiqm",), strict=True)


def test_evaluate_dir_argument_errors(image_dirs):
    in_dir, _ = image_dirs
    with pytest.raises(ValueError, match="reference directory"):
        evaluate_dir(in_dir, metrics=("psnr",))
    with pytest.raises(ValueError, match="Unknown metrics"):
        evaluate_dir(in_dir, metrics=("niqe",))


def test_psnr_is_symmetric_and_falls_as_the_error_grows():
    image = _image(6)
    rows = [2, 4, 8, 16]

    # When
    scores = []
    for k in rows:
        noisy = image.copy()
        noisy[:k] += 0.1
        scores.append(psnr(image, noisy))

    # Then
    assert all(later < earlier for earlier, later in zip(scores, scores[1:]))
    noisy = image + 0.05
    assert psnr(image, noisy) == psnr(noisy, image)


def test_ssim_is_symmetric():
    a, b = _image(7, 24, 24), _image(8, 24, 24)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_of_an_inverted_checkerboard_is_negative():
    board = (np.indices((32, 32)).sum(axis=0) % 2).astype(np.float64)
    board = np.repeat(board[..., None], 3, axis=2)
    assert ssim(board, 1 - board) < 0


@pytest.mark.parametrize("transform", [
    lambda image: image[::-1],
    lambda image: image[:, ::-1],
    lambda image: image[::-1, ::-1],
], ids=["vertical_flip", "horizontal_flip", "rotate_180"])
def test_no_reference_metrics_ignore_flips(transform):
    image = _image(9, 24, 32)
    moved = np.ascontiguousarray(transform(image))

    # Then
    assert uiqm(moved) == pytest.approx(uiqm(image), abs=1e-6)
    assert uciqe(moved) == pytest.approx(uciqe(image), abs=1e-6)
