"""Spatial (DOA) and fidelity (SDR / SI-SDR) metrics plus the evaluation report."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio import BinauralClip, atomic_write_bytes
from .errors import DomainError

EPS = 1e-10
CAP_DB = -10.0 * math.log10(EPS)  # 100 dB


def doa_mae(estimate_deg: float, true_deg: float) -> float:
    """Absolute angular error on the circle, in [0, 180]."""
    for v in (estimate_deg, true_deg):
        if not 0 <= v < 360:
            raise DomainError(f"azimuth {v} outside [0, 360)")
    diff = abs(estimate_deg - true_deg)
    return min(diff, 360.0 - diff)


def doa_acc(pred_classes, true_classes) -> float:
    pred = list(pred_classes)
    true = list(true_classes)
    if not pred or len(pred) != len(true):
        raise DomainError(f"need equal-length non-empty lists, got {len(pred)} and {len(true)}")
    hits = sum(int(p == t) for p, t in zip(pred, true))
    return 100.0 * hits / len(pred)


def _flat(clip) -> np.ndarray:
    if isinstance(clip, BinauralClip):
        return clip.samples.reshape(-1)
    return np.asarray(clip, dtype=np.float64).reshape(-1)


def _ratio_db(signal_energy: float, error_energy: float) -> float:
    return 10.0 * math.log10(signal_energy / max(error_energy, EPS * signal_energy))


def sdr(estimate, reference) -> float:
    """Energy-ratio SDR over both ears flattened into one 2N vector, capped at +100 dB."""
    est, ref = _flat(estimate), _flat(reference)
    if est.shape != ref.shape:
        raise DomainError(f"shape mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise DomainError("reference is all zeros")
    resid = ref - est
    return _ratio_db(ref_energy, float(resid @ resid))


def sisdr(estimate, reference) -> float:
    """Scale-invariant SDR; one common scale for both ears.

    Returns ``-inf`` when the estimate is orthogonal to the reference.
    """
    est, ref = _flat(estimate), _flat(reference)
    if est.shape != ref.shape:
        raise DomainError(f"shape mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise DomainError("reference is all zeros")
    alpha = float(est @ ref) / ref_energy
    if alpha == 0.0:
        return -math.inf
    target = alpha * ref
    resid = target - est
    return _ratio_db(float(target @ target), float(resid @ resid))


@dataclass
class ExampleRecord:
    azimuth_true: int
    azimuth_pred: int
    mae_deg: float
    correct: bool
    sdr_db: float
    sisdr_db: float


@dataclass
class EvalReport:
    records: list[ExampleRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, azimuth_true: int, azimuth_pred: int, estimate, reference) -> ExampleRecord:
        rec = ExampleRecord(
            azimuth_true=int(azimuth_true),
            azimuth_pred=int(azimuth_pred),
            mae_deg=doa_mae(azimuth_pred, azimuth_true),
            correct=int(azimuth_pred) == int(azimuth_true),
            sdr_db=sdr(estimate, reference),
            sisdr_db=sisdr(estimate, reference),
        )
        self.records.append(rec)
        return rec

    @property
    def aggregates(self) -> dict:
        if not self.records:
            raise DomainError("empty report")
        return {
            "mae_deg": float(np.mean([r.mae_deg for r in self.records])),
            "acc_pct": doa_acc([r.azimuth_pred for r in self.records], [r.azimuth_true for r in self.records]),
            "sdr_db": float(np.mean([r.sdr_db for r in self.records])),
            "sisdr_db": float(np.mean([r.sisdr_db for r in self.records])),
            "count": len(self.records),
        }

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "aggregates": self.aggregates,
                "records": [asdict(r) for r in self.records]}

    def write_json(self, path) -> None:
        atomic_write_bytes(path, (json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n").encode())

    def to_csv(self, label: str = "model") -> str:
        agg = self.aggregates
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["Method", "MAE", "ACC (%)", "SDR (dB)", "SISDR (dB)"])
        writer.writerow([label, f"{agg['mae_deg']:.2f}", f"{agg['acc_pct']:.2f}",
                         f"{agg['sdr_db']:.2f}", f"{agg['sisdr_db']:.2f}"])
        return buf.getvalue()

    def write_csv(self, path, label: str = "model") -> None:
        atomic_write_bytes(path, self.to_csv(label).encode())
