"""Procedural gait-cycle pose generator (desk-scale training corpus).

Each pose is one instant of a trot: diagonal leg pairs share a phase, the
left/right legs of a girdle are half a cycle apart. Flexion lives on the Y
(lateral) Euler component; abduction (X) and twist (Z) are small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# leg order matches the bundled skeleton's prior_joints: fl, fr, hl, hr
LEG_PHASE = np.array([0.0, np.pi, np.pi, 0.0])


@dataclass(frozen=True)
class GaitAmplitudes:
    upper: float = 0.55
    lower: float = 0.8
    cannon: float = 0.6
    upper_bias: float = 0.1
    abduction: float = 0.08
    twist: float = 0.05
    lean: float = 0.1
    stride_min: float = 0.5

    def bound(self) -> float:
        """Largest absolute angle the generator can emit."""
        return max(
            self.upper + abs(self.upper_bias),
            self.lower,
            self.cannon,
            self.abduction + self.lean,
            self.twist,
        )


def gait_pose(phase: float, stride: float = 1.0, lean: float = 0.0, amp: GaitAmplitudes = GaitAmplitudes()) -> np.ndarray:
    """Closed-form 36-angle pose at gait ``phase`` for a stride scale in [0, 1]."""
    pose = np.zeros((4, 3, 3))
    for leg, off in enumerate(LEG_PHASE):
        p = phase + off
        front = leg < 2
        sign = 1.0 if front else -1.0
        pose[leg, 0] = [
            amp.abduction * stride * np.cos(p) + lean,
            sign * (amp.upper * stride * np.sin(p)) + amp.upper_bias * sign,
            amp.twist * stride * np.sin(2 * p),
        ]
        # pure cosine: left/right knees are antisymmetric and peak at phase 0 and pi
        pose[leg, 1, 1] = -sign * amp.lower * stride * np.cos(p)
        pose[leg, 2, 1] = amp.cannon * stride * np.sin(p + np.pi / 2)
    return pose.reshape(-1)


def procedural_gait_corpus(n: int, seed: int = 0, amp: GaitAmplitudes = GaitAmplitudes()) -> np.ndarray:
    """``n`` poses with uniformly drawn phase, stride scale and body lean."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2 * np.pi, n)
    stride = rng.uniform(amp.stride_min, 1.0, n)
    lean = rng.uniform(-amp.lean, amp.lean, n)
    return np.stack([gait_pose(p, s, l, amp) for p, s, l in zip(phase, stride, lean)])
