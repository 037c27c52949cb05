"""Error budget: gate metrics under cumulative noise tiers A to E."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..device import DeviceParams
from ..dynamics import TIERS, NoiseModel, idle_frame
from ..metrics import GateMetrics, gate_metrics
from .gate import CalibratedGate


@dataclass(frozen=True)
class AblationResult:
    tiers: tuple
    metrics: tuple  # GateMetrics per tier
    gates: tuple  # CalibratedGate used per tier

    def by_tier(self) -> dict[str, GateMetrics]:
        return dict(zip(self.tiers, self.metrics))

    def infidelities(self, phase_corrected: bool = False) -> np.ndarray:
        return np.array([m.infidelity_pc if phase_corrected else m.infidelity_eps for m in self.metrics])

    def leakages(self) -> np.ndarray:
        return np.array([m.leakage_l1 for m in self.metrics])

    def rows(self):
        for t, m in zip(self.tiers, self.metrics):
            yield t, m.infidelity_eps, m.infidelity_pc, m.leakage_l1, m.phi_2q_deg


def ablation(params: DeviceParams, gate: CalibratedGate, tiers=TIERS, distorted_gate: CalibratedGate | None = None,
             dt: float = 0.1e-9, **noise_kw) -> AblationResult:
    """Simulate a calibrated gate under each noise tier.

    Distortions shift the conditional and single-qubit phases by far more
    than any decoherence, so a gate is only meaningful under them after being
    re-tuned with them present. ``distorted_gate`` (calibrated with
    distortions on) is used for tier E when given.
    """
    frame = idle_frame(params)
    tiers = tuple(t.upper() for t in tiers)
    ms, used = [], []
    for t in tiers:
        g = distorted_gate if (t == "E" and distorted_gate is not None) else gate
        noise = NoiseModel.from_tier(t, **noise_kw)
        ms.append(gate_metrics(g.simulate(params, noise, dt=dt, frame=frame)))
        used.append(g)
    return AblationResult(tiers, tuple(ms), tuple(used))
