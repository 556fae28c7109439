"""Shared oracles for the module tests and the acceptance suite."""
import numpy as np
import torch

from audiospa.backbone import AudioSpa, BackboneConfig, huber_loss
from audiospa.text_conditioning import StubEncoder, encode_text


def gradient_check(num_params: int = 20, seed: int = 0, h: float = 1e-6) -> np.ndarray:
    """Relative errors between autograd and central differences on a tiny float64 generator.

    B=2 blocks, D=4 channels, N=64 samples, batch of two prompts.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = AudioSpa(BackboneConfig(residual_channels=4, num_blocks=2, heads=4)).double()
    enc = StubEncoder()
    tokens = torch.stack([encode_text("At 40 degrees, the tone rings out.", enc),
                          encode_text("At 220 degrees, the tone rings out.", enc)])
    x = torch.from_numpy(rng.standard_normal((2, 64)))
    y = torch.from_numpy(rng.standard_normal((2, 2, 64)))

    def loss() -> torch.Tensor:
        return huber_loss(model(x, tokens), y)

    model.zero_grad()
    loss().backward()
    params = [p for p in model.parameters()]
    sizes = np.array([p.numel() for p in params])
    flat = rng.choice(int(sizes.sum()), size=num_params, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errors = []
    with torch.no_grad():
        for f in flat:
            i = int(np.searchsorted(offsets, f, side="right") - 1)
            p, j = params[i].view(-1), int(f - offsets[i])
            analytic = float(params[i].grad.view(-1)[j])
            old = float(p[j])
            p[j] = old + h
            up = float(loss())
            p[j] = old - h
            down = float(loss())
            p[j] = old
            numeric = (up - down) / (2 * h)
            errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
    return np.array(errors)


def direct_convolve(x, h):
    """O(N * Nr) loop; independent of any FFT path."""
    out = np.zeros(len(x) + len(h) - 1)
    for i, xi in enumerate(x):
        out[i:i + len(h)] += xi * h
    return out


# hand-computed: d / c * fs, rounded half away from zero
DELAY_TABLE = [
    ((343.0, 343.0, 24000), 24000),
    ((1.47, 343.0, 24000), 103),   # 102.857...
    ((0.001, 343.0, 24000), 0),    # 0.0699...
    ((1.0, 343.0, 24000), 70),     # 69.971...
    ((2.0, 343.0, 48000), 280),    # 279.883...
    ((1.5, 340.0, 16000), 71),     # 70.588...
    ((1.2, 343.0, 44100), 154),    # 154.285...
    ((0.0625, 1.0, 8), 1),         # exact tie 0.5
    ((2.5, 1.0, 1), 3),            # exact tie 2.5
    ((0.75, 1.0, 2), 2),           # exact tie 1.5
]
