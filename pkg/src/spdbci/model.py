"""End-to-end model: manifold feature extractor, multi-head tangent
transform, and the tangent-space classifier, wired for training with
hand-derived gradients.

Forward path per trial: covariance tensor (S, F, M, M) -> BiMap/RBN/ReEig
blocks -> LogEig -> K bilinear heads -> reshape -> per-band conv ->
band-importance gate -> linear head -> class logits.
"""

from __future__ import annotations

import json

import numpy as np

from .classifier import TangentClassifier, inverse_reshape, reshape_features
from .eeg_io import ModelBundle
from .errors import ShapeMismatch
from .layers import BiMapLayer, LogEigLayer, RbnLayer, ReEigLayer, random_stiefel
from .selection import MbtHeads, SelectionTransform


class Model:
    """Trainable pipeline over per-trial covariance tensors."""

    def __init__(
        self,
        selection: SelectionTransform,
        n_windows: int,
        n_bands: int,
        n_channels: int,
        n_classes: int,
        k_heads: int,
        reeig_epsilon: float = 1e-4,
        bimap_layers: int = 2,
        karcher_iterations: int = 10,
        rbn_momentum: float = 0.9,
        conv_out: int = 4,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.selection = selection
        self.n_windows = n_windows
        self.n_bands = n_bands
        self.n_channels = n_channels
        self.n_classes = n_classes
        self.m = selection.W_hat.shape[1]

        self.net: list = []
        for _ in range(bimap_layers):
            self.net.append(
                BiMapLayer(random_stiefel(rng, n_channels, n_channels).T)
            )
            self.net.append(RbnLayer(n_channels, karcher_iterations, rbn_momentum))
            self.net.append(ReEigLayer(reeig_epsilon))
        self.logeig = LogEigLayer()
        self.heads = MbtHeads.initialize(selection.W_hat, k_heads, rng)
        self.clf = TangentClassifier(
            n_bands=n_bands,
            n_windows=n_windows,
            feat_len=k_heads * self.m * self.m,
            n_classes=n_classes,
            conv_out=conv_out,
            rng=rng,
        )

    # ------------------------------------------------------------------

    def forward(self, covs: np.ndarray, training: bool = True) -> np.ndarray:
        """(B, S, F, M, M) covariance batch -> (B, C) logits."""
        b, s, f, m, _ = covs.shape
        if (s, f, m) != (self.n_windows, self.n_bands, self.n_channels):
            raise ShapeMismatch(
                f"covariance tensor {covs.shape[1:]} does not match model "
                f"({self.n_windows}, {self.n_bands}, {self.n_channels})"
            )
        x = covs.reshape(b * s * f, m, m)
        for layer in self.net:
            x = layer.forward(x, training)
        tangent = self.logeig.forward(x, training)
        stacked = self.heads.forward(tangent, training)  # (BSF, K, m, m)
        k, mm = self.heads.K, self.m
        stacked = stacked.reshape(b, s, f, k, mm, mm)
        fmap = reshape_features(stacked)  # (B, F, 1, S, K*m*m)
        return self.clf.forward(fmap, training)

    def backward(self, grad_logits: np.ndarray) -> None:
        b = grad_logits.shape[0]
        k, mm = self.heads.K, self.m
        d_fmap = self.clf.backward(grad_logits)
        d_stacked = inverse_reshape(d_fmap, k, mm)
        d_stacked = d_stacked.reshape(b * self.n_windows * self.n_bands, k, mm, mm)
        d_tangent = self.heads.backward(d_stacked)
        grad = self.logeig.backward(d_tangent)
        for layer in reversed(self.net):
            grad = layer.backward(grad)

    def step(self, lr: float) -> None:
        self.clf.step(lr)
        self.heads.step(lr)
        for layer in self.net:
            layer.step(lr)

    # ------------------------------------------------------------------

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        """All learnable parameters, in a stable order."""
        arrays: dict[str, np.ndarray] = {}
        for k, w in enumerate(self.heads.weights):
            arrays[f"head_{k}"] = w
        idx = 0
        for layer in self.net:
            if isinstance(layer, BiMapLayer):
                arrays[f"bimap_{idx}"] = layer.weight
                idx += 1
        for name, arr in self.clf.parameters().items():
            arrays[f"clf_{name}"] = arr
        return arrays

    def buffer_arrays(self) -> dict[str, np.ndarray]:
        """Non-learnable state (running means, selection byproducts)."""
        arrays: dict[str, np.ndarray] = {
            "sel_W_hat": self.selection.W_hat,
            "sel_channels": np.asarray(self.selection.selected_channels, dtype=np.float64),
            "sel_L": self.selection.L_matrix,
            "sel_trace": np.asarray(self.selection.objective_trace, dtype=np.float64),
        }
        idx = 0
        for layer in self.net:
            if isinstance(layer, RbnLayer):
                arrays[f"rbn_mean_{idx}"] = layer.running_mean
                idx += 1
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k in range(self.heads.K):
            self.heads.weights[k] = arrays[f"head_{k}"].copy()
        bidx = ridx = 0
        for layer in self.net:
            if isinstance(layer, BiMapLayer):
                layer.weight = arrays[f"bimap_{bidx}"].copy()
                bidx += 1
            elif isinstance(layer, RbnLayer):
                layer.running_mean = arrays[f"rbn_mean_{ridx}"].copy()
                ridx += 1
        for name in ("kernel", "bias", "w1", "w2", "head_w", "head_b"):
            setattr(self.clf, name, arrays[f"clf_{name}"].copy())


def count_parameters(model: Model) -> int:
    """Exact number of scalar learnable parameters."""
    return int(sum(arr.size for arr in model.parameter_arrays().values()))


def model_to_bundle(model: Model, config: dict[str, str]) -> ModelBundle:
    arrays = dict(model.parameter_arrays())
    arrays.update(model.buffer_arrays())
    snapshot = dict(config)
    n_bimap = sum(1 for layer in model.net if isinstance(layer, BiMapLayer))
    reeig_eps = next(l.epsilon for l in model.net if isinstance(l, ReEigLayer))
    snapshot["_model_meta"] = json.dumps(
        {
            "n_windows": model.n_windows,
            "n_bands": model.n_bands,
            "n_channels": model.n_channels,
            "n_classes": model.n_classes,
            "k_heads": model.heads.K,
            "m": model.m,
            "iterations_run": model.selection.iterations_run,
            "bimap_layers": n_bimap,
            "reeig_epsilon": reeig_eps,
            "conv_out": int(model.clf.kernel.shape[0]),
        },
        sort_keys=True,
    )
    return ModelBundle(
        config=snapshot,
        arrays=arrays,
        parameter_count=count_parameters(model),
    )


def model_from_bundle(bundle: ModelBundle) -> Model:
    meta = json.loads(bundle.config["_model_meta"])
    selection = SelectionTransform(
        W_hat=bundle.arrays["sel_W_hat"].copy(),
        selected_channels=[int(i) for i in bundle.arrays["sel_channels"]],
        L_matrix=bundle.arrays["sel_L"].copy(),
        iterations_run=int(meta["iterations_run"]),
        objective_trace=[float(v) for v in bundle.arrays["sel_trace"]],
    )
    model = Model(
        selection,
        n_windows=meta["n_windows"],
        n_bands=meta["n_bands"],
        n_channels=meta["n_channels"],
        n_classes=meta["n_classes"],
        k_heads=meta["k_heads"],
        reeig_epsilon=meta["reeig_epsilon"],
        bimap_layers=meta["bimap_layers"],
        conv_out=meta["conv_out"],
    )
    model.load_arrays(bundle.arrays)
    return model
