"""
Temporal Gaussian mixture kernels for the inflated TGM (iTGM) layer.

M Gaussians over the temporal taps 0..L-1 are parameterized by unconstrained
centers mu_hat and log-variances sigma_hat:

    mu    = (L - 1) / 2 * (tanh(mu_hat) + 1)      in [0, L-1]
    var   = exp(sigma_hat)
    Khat[m, l] = exp(-(l - mu_m)^2 / (2 var_m)) / Z_m,   sum_l Khat[m, l] = 1

and each output channel i mixes them with soft-attention weights
softmax(a[i, :]), giving a Cout x L kernel whose rows sum to one.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from src.search_space.space import TEMPORAL_LENGTHS

Z_FLOOR = 1e-30


@dataclass
class TGMParams:
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    a: np.ndarray
    length: int

    def __post_init__(self):
        if self.length < 1 or self.length % 2 == 0:
            raise ValueError(f"temporal length must be a positive odd integer, got {self.length}")
        if self.mu_hat.ndim != 1 or self.sigma_hat.shape != self.mu_hat.shape:
            raise ValueError("mu_hat and sigma_hat must be vectors of equal length M")
        if self.a.ndim != 2 or self.a.shape[1] != self.mixtures:
            raise ValueError(f"mixing weights must be Cout x M, got {self.a.shape}")
        if self.mixtures > self.length:
            raise ValueError(f"M={self.mixtures} must not exceed L={self.length}")

    @property
    def mixtures(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def out_channels(self) -> int:
        return self.a.shape[0]

    def centers(self) -> np.ndarray:
        return 0.5 * (self.length - 1) * (np.tanh(self.mu_hat) + 1.0)

    def widths(self) -> np.ndarray:
        return np.sqrt(np.exp(self.sigma_hat))


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _mixture_terms(tgm: TGMParams) -> Dict[str, np.ndarray]:
    for name in ("mu_hat", "sigma_hat", "a"):
        if not np.all(np.isfinite(getattr(tgm, name))):
            raise ValueError(f"iTGM parameter {name} contains non-finite values")
    mu = tgm.centers()
    var = np.exp(tgm.sigma_hat)
    taps = np.arange(tgm.length, dtype=mu.dtype)
    diff = taps[None, :] - mu[:, None]
    logits = -(diff ** 2) / (2.0 * var[:, None])
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    khat = e / np.maximum(e.sum(axis=1, keepdims=True), Z_FLOOR)
    weights = _softmax(tgm.a)
    return {"diff": diff, "var": var, "khat": khat, "weights": weights}


def build_gaussian_mixture_kernel(tgm: TGMParams) -> np.ndarray:
    """Materializes the Cout x L mixture kernel; rows are non-negative and sum to one."""
    terms = _mixture_terms(tgm)
    return terms["weights"] @ terms["khat"]


def gaussian_mixture_kernel_backward(
    tgm: TGMParams, grad_kernel: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Back-propagates dLoss/dK (Cout x L) to (mu_hat, sigma_hat, a).

    The chain runs through the mixing softmax, the per-Gaussian normalization
    over taps, the exp variance map and the tanh center map.
    """
    terms = _mixture_terms(tgm)
    khat, weights, diff, var = terms["khat"], terms["weights"], terms["diff"], terms["var"]

    grad_weights = grad_kernel @ khat.T
    grad_a = weights * (grad_weights - np.sum(weights * grad_weights, axis=1, keepdims=True))

    grad_khat = weights.T @ grad_kernel
    grad_logits = khat * (grad_khat - np.sum(khat * grad_khat, axis=1, keepdims=True))

    dmu_dmu_hat = 0.5 * (tgm.length - 1) * (1.0 - np.tanh(tgm.mu_hat) ** 2)
    grad_mu_hat = np.sum(grad_logits * diff / var[:, None], axis=1) * dmu_dmu_hat
    grad_sigma_hat = np.sum(grad_logits * diff ** 2 / (2.0 * var[:, None]), axis=1)
    return grad_mu_hat, grad_sigma_hat, grad_a


def materialize_itgm_kernel(spatial: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """
    Composes the H x W x Cin x Cout spatial kernel with the Cout x L temporal
    mixture into the equivalent L x H x W x Cin x Cout 3D kernel.
    """
    return spatial[None, ...] * kernel.T[:, None, None, None, :]


def stretch_itgm(
    tgm: TGMParams, new_length: int, allowed_lengths: Iterable[int] = TEMPORAL_LENGTHS
) -> TGMParams:
    """
    Re-instantiates an iTGM temporal kernel at a longer length.

    Centers and widths are scaled by (new_L - 1) / (L - 1), so relative center
    positions mu / (L - 1) are unchanged. Under the tanh center map this leaves
    mu_hat untouched; the width scaling shifts sigma_hat by 2 log(ratio).
    """
    if tgm.length == 1:
        raise ValueError("cannot stretch a length-1 kernel: the scale ratio is undefined")
    if new_length not in set(allowed_lengths):
        raise ValueError(f"new length {new_length} is not an allowed temporal size")
    if new_length < tgm.length:
        raise ValueError(f"new length {new_length} is shorter than the current length {tgm.length}")
    ratio = (new_length - 1) / (tgm.length - 1)
    return TGMParams(
        mu_hat=tgm.mu_hat.copy(),
        sigma_hat=tgm.sigma_hat + 2.0 * np.log(ratio),
        a=tgm.a.copy(),
        length=new_length,
    )
