"""Evaluation metrics, the Dice-gated QC filter and report rows.

Conventions fixed here: Dice of two empty masks is 1.0; the QC gate is a
strict "> threshold"; Dice-TP-only averages over samples where the QC model
predicts a nonempty scar; patient positivity = any image with predicted scar
area >= min_area; confusion matrices are ordered [TN, FP, FN, TP].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

QC_DICE_THRESHOLD = 0.6
PATIENT_MIN_SCAR_AREA = 5  # pixels at 64x64


@dataclass
class GeneratedSample:
    image: np.ndarray
    bundle_id: str
    predicted_scar_mask: np.ndarray
    dice_vs_condition: float
    passed: bool
    source_id: str = ""


@dataclass
class MetricsReport:
    ssim_whole: tuple = (0.0, 0.0)  # (mean, sd)
    rmse_whole: tuple = (0.0, 0.0)
    ssim_cropped: tuple = (0.0, 0.0)
    rmse_cropped: tuple = (0.0, 0.0)
    dice_tp_only: tuple = (0.0, 0.0)
    pass_pct: float = 0.0
    downstream: dict = field(default_factory=dict)


def dice(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM with a Gaussian window, dynamic range L = 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if min(a.shape) < window:
        raise ValueError("image smaller than the SSIM window")
    c1 = 0.01**2
    c2 = 0.03**2
    k = _gaussian_kernel(window, sigma)

    def filt(x):
        return signal.convolve2d(x, k, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def crop_around_lv(image: np.ndarray, myo_mask: np.ndarray, margin: int = 8) -> np.ndarray:
    myo_mask = np.asarray(myo_mask, dtype=bool)
    if not myo_mask.any():
        raise ValueError("empty myocardium mask")
    ys, xs = np.nonzero(myo_mask)
    y0 = max(ys.min() - margin, 0)
    y1 = min(ys.max() + margin + 1, image.shape[0])
    x0 = max(xs.min() - margin, 0)
    x1 = min(xs.max() + margin + 1, image.shape[1])
    return np.asarray(image)[y0:y1, x0:x1]


def qc_filter(samples: list, qc_model, threshold: float = QC_DICE_THRESHOLD) -> list:
    """Score each (image, bundle) pair with the QC segmenter; passed samples
    carry the predicted mask as downstream ground truth.

    Returns a GeneratedSample per input (passed and failed alike); filter on
    .passed for the retained set.
    """
    from . import rewardseg  # deferred: rewardseg depends on this module's dice

    out = []
    for k, (image, bundle) in enumerate(samples):
        _, label_map = rewardseg.segment(qc_model, image)
        pred = label_map == 2
        d = dice(pred, bundle.target_scar_mask)
        out.append(GeneratedSample(
            image=image, bundle_id=f"{bundle.source_id}_b{k}",
            predicted_scar_mask=pred, dice_vs_condition=d,
            passed=d > threshold, source_id=bundle.source_id))
    return out


def pass_rate(samples: list) -> float:
    if not samples:
        raise ValueError("empty sample list")
    return 100.0 * sum(s.passed for s in samples) / len(samples)


def patient_detection(predictions: dict, labels: dict,
                      min_area: int = PATIENT_MIN_SCAR_AREA) -> dict:
    """Patient-level detection metrics from per-image predicted scar areas.

    predictions: patient_id -> list of predicted scar areas (pixels);
    labels: patient_id -> true is_positive. A patient is called positive if
    any image reaches min_area.
    """
    tn = fp = fn = tp = 0
    for pid, areas in predictions.items():
        if not areas:
            raise ValueError(f"patient {pid} has no images")
        pred_pos = any(a >= min_area for a in areas)
        if labels[pid]:
            tp += pred_pos
            fn += not pred_pos
        else:
            fp += pred_pos
            tn += not pred_pos
    return confusion_metrics([tn, fp, fn, tp])


def confusion_metrics(confusion: list) -> dict:
    """Accuracy and balanced accuracy from a [TN, FP, FN, TP] confusion matrix."""
    tn, fp, fn, tp = confusion
    n = tn + fp + fn + tp
    if tp + fn == 0 or tn + fp == 0:
        raise ValueError("degenerate cohort")
    return {
        "accuracy": (tn + tp) / n,
        "balanced_accuracy": 0.5 * (tp / (tp + fn) + tn / (tn + fp)),
        "confusion": [int(tn), int(fp), int(fn), int(tp)],
    }


def _mean_sd(values) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    return (float(arr.mean()), float(arr.std()))


def evaluate_generation(generated: list, sources: dict, margin: int = 8) -> MetricsReport:
    """Image-quality and conditioning metrics of generated samples against
    their source images. sources: source_id -> (image, myo_mask)."""
    if not generated:
        raise ValueError("no generated samples")
    ssim_w, rmse_w, ssim_c, rmse_c = [], [], [], []
    tp_dices = []
    for s in generated:
        src_img, src_myo = sources[s.source_id]
        ssim_w.append(ssim(s.image, src_img))
        rmse_w.append(rmse(s.image, src_img))
        a = crop_around_lv(s.image, src_myo, margin)
        b = crop_around_lv(src_img, src_myo, margin)
        ssim_c.append(ssim(a, b))
        rmse_c.append(rmse(a, b))
        if s.predicted_scar_mask.any():
            tp_dices.append(s.dice_vs_condition)
    return MetricsReport(
        ssim_whole=_mean_sd(ssim_w), rmse_whole=_mean_sd(rmse_w),
        ssim_cropped=_mean_sd(ssim_c), rmse_cropped=_mean_sd(rmse_c),
        dice_tp_only=_mean_sd(tp_dices) if tp_dices else (0.0, 0.0),
        pass_pct=pass_rate(generated))


def render_generation_row(name: str, report: MetricsReport) -> str:
    """One aligned-text row in the paper-style column order:
    SSIM, RMSE (whole); SSIM, RMSE (cropped); Dice-TP; Pass%."""
    cols = [
        f"{report.ssim_whole[0]:.3f} ± {report.ssim_whole[1]:.2f}",
        f"{report.rmse_whole[0]:.3f} ± {report.rmse_whole[1]:.3f}",
        f"{report.ssim_cropped[0]:.3f} ± {report.ssim_cropped[1]:.2f}",
        f"{report.rmse_cropped[0]:.3f} ± {report.rmse_cropped[1]:.3f}",
        f"{report.dice_tp_only[0]:.3f} ± {report.dice_tp_only[1]:.2f}",
        f"{report.pass_pct:.1f}%",
    ]
    return f"{name:<16}" + "".join(f"{c:>16}" for c in cols)
