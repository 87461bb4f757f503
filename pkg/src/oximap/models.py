"""The four SpO2 estimator variants and their losses.

plain:    one branch on the raw map X (3 channels).
early:    one branch on concat(X_DC, X_AC) (6 channels).
filter:   two branches on X_DC and X_AC, channel-gating fusion after each
          of the four residual stages, GAP outputs concatenated into one
          linear head.
end2end:  filter topology preceded by learned DC/AC extraction heads
          (depthwise temporal convolutions) applied to X.

A branch is a stem (3x3 conv, stride 2, BN, ReLU) followed by four
residual stages; each stage is one block of two 3x3 convs with BN/ReLU
and a shortcut, stride 2 at stages 2..4. Weights are He-uniform from the
config seed; fusion gate layers start at zero so fusion begins as the
identity. Backbone parameters are drawn before the extraction heads, so
filter and end2end share backbone initializations for equal seeds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensornet import (
    BatchNormState,
    MmtmParams,
    Tensor,
    batchnorm,
    concat,
    conv2d,
    depthwise_conv,
    gap,
    linear,
    load_params,
    mmtm_fuse,
    mmtm_joint_dim,
    mse_loss,
    negcorr_loss,
    relu,
    save_params,
)

__all__ = [
    "ModelConfig",
    "SpO2Prediction",
    "Model",
    "build_model",
    "loss_spo2",
    "loss_end_to_end",
    "count_params",
    "save_model",
    "load_model",
]

VARIANTS = ("plain", "early", "filter", "end2end")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "filter"
    stage_channels: tuple[int, ...] = (8, 16, 32, 64)
    stem_stride: int = 2
    d_spo2: int = 10
    alpha: float = 0.1
    dcac_kernel: int = 31
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        ch = tuple(int(c) for c in self.stage_channels)
        if len(ch) != 4 or any(c < 1 for c in ch):
            raise ConfigError(f"stage_channels must be 4 positive counts, got {self.stage_channels}")
        object.__setattr__(self, "stage_channels", ch)
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.d_spo2 < 2:
            raise ConfigError(f"d_spo2 must be >= 2, got {self.d_spo2}")
        if self.dcac_kernel < 1 or self.dcac_kernel % 2 == 0:
            raise ConfigError(f"dcac_kernel must be odd and >= 1, got {self.dcac_kernel}")
        if self.stem_stride < 1:
            raise ConfigError(f"stem_stride must be >= 1, got {self.stem_stride}")


@dataclass
class SpO2Prediction:
    y_out: Tensor  # (B, d_spo2), scaled units, unclamped
    x_dc_hat: Tensor | None = None
    x_ac_hat: Tensor | None = None


def _batched(v):
    """Promote (3,N,T) input to a 1-batch tensor; report whether it was."""
    if v is None:
        return None, False
    t = v if isinstance(v, Tensor) else Tensor(np.asarray(v))
    if t.ndim == 3:
        return t.reshape((1, *t.shape)), True
    if t.ndim == 4:
        return t, False
    raise ShapeError(f"expected (3,N,T) or (B,3,N,T) input, got shape {t.shape}")


class _Init:
    """Sequential He-uniform initializer; draw order defines the seed contract."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def he_uniform(self, shape, fan_in: int) -> np.ndarray:
        bound = np.sqrt(6.0 / fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Model:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        self.mode = "train"
        self._build(_Init(cfg.seed))

    # -- construction ---------------------------------------------------------

    def _param(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data, requires_grad=True)

    def _add_bn(self, name: str, channels: int) -> None:
        self._param(f"{name}.gamma", np.ones(channels, dtype=np.float32))
        self._param(f"{name}.beta", np.zeros(channels, dtype=np.float32))
        self.bn[name] = BatchNormState.create(channels)

    def _add_conv(self, init: _Init, name: str, cout: int, cin: int, k: tuple[int, int]) -> None:
        self._param(name, init.he_uniform((cout, cin, k[0], k[1]), cin * k[0] * k[1]))

    def _add_branch(self, init: _Init, prefix: str, in_ch: int) -> None:
        ch = self.cfg.stage_channels
        self._add_conv(init, f"{prefix}.stem.w", ch[0], in_ch, (3, 3))
        self._add_bn(f"{prefix}.stem.bn", ch[0])
        prev = ch[0]
        for i, c in enumerate(ch, start=1):
            stride = 1 if i == 1 else 2
            self._add_conv(init, f"{prefix}.s{i}.conv1.w", c, prev, (3, 3))
            self._add_bn(f"{prefix}.s{i}.bn1", c)
            self._add_conv(init, f"{prefix}.s{i}.conv2.w", c, c, (3, 3))
            self._add_bn(f"{prefix}.s{i}.bn2", c)
            if stride != 1 or prev != c:
                self._add_conv(init, f"{prefix}.s{i}.proj.w", c, prev, (1, 1))
                self._add_bn(f"{prefix}.s{i}.proj.bn", c)
            prev = c

    def _add_mmtm(self, init: _Init, name: str, c: int) -> None:
        cz = mmtm_joint_dim(c, c)
        self._param(f"{name}.w_z", init.he_uniform((cz, 2 * c), 2 * c))
        self._param(f"{name}.b_z", np.zeros(cz, dtype=np.float32))
        # zero gates: fusion starts as the exact identity
        self._param(f"{name}.w_a", np.zeros((c, cz), dtype=np.float32))
        self._param(f"{name}.b_a", np.zeros(c, dtype=np.float32))
        self._param(f"{name}.w_b", np.zeros((c, cz), dtype=np.float32))
        self._param(f"{name}.b_b", np.zeros(c, dtype=np.float32))

    def _add_dcac_head(self, init: _Init, name: str) -> None:
        k = self.cfg.dcac_kernel
        self._param(f"{name}.dw1.w", init.he_uniform((3, 1, 1, k), k))
        self._add_bn(f"{name}.bn", 3)
        self._param(f"{name}.dw2.w", init.he_uniform((3, 1, 1, k), k))
        self._param(f"{name}.dw2.b", np.zeros(3, dtype=np.float32))

    def _build(self, init: _Init) -> None:
        cfg = self.cfg
        ch = cfg.stage_channels
        if cfg.variant == "plain":
            self._add_branch(init, "b0", 3)
            feat = ch[3]
        elif cfg.variant == "early":
            self._add_branch(init, "b0", 6)
            feat = ch[3]
        else:
            self._add_branch(init, "b0", 3)
            self._add_branch(init, "b1", 3)
            for i, c in enumerate(ch, start=1):
                self._add_mmtm(init, f"mmtm{i}", c)
            feat = 2 * ch[3]
        self._param("head.w", init.he_uniform((cfg.d_spo2, feat), feat))
        self._param("head.b", np.zeros(cfg.d_spo2, dtype=np.float32))
        if cfg.variant == "end2end":
            self._add_dcac_head(init, "dcac.dc")
            self._add_dcac_head(init, "dcac.ac")

    # -- mode switching -------------------------------------------------------

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "eval"
        return self

    # -- forward pieces -------------------------------------------------------

    def _bn(self, name: str, x) :
        return batchnorm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"], self.bn[name], self.mode)

    def _stage(self, prefix: str, i: int, x):
        stride = 1 if i == 1 else 2
        p = self.params
        out = relu(self._bn(f"{prefix}.s{i}.bn1", conv2d(x, p[f"{prefix}.s{i}.conv1.w"], stride=stride, padding=1)))
        out = self._bn(f"{prefix}.s{i}.bn2", conv2d(out, p[f"{prefix}.s{i}.conv2.w"], padding=1))
        if f"{prefix}.s{i}.proj.w" in p:
            short = self._bn(f"{prefix}.s{i}.proj.bn", conv2d(x, p[f"{prefix}.s{i}.proj.w"], stride=stride))
        else:
            short = x
        return relu(out + short)

    def _stem(self, prefix: str, x):
        y = conv2d(x, self.params[f"{prefix}.stem.w"], stride=self.cfg.stem_stride, padding=1)
        return relu(self._bn(f"{prefix}.stem.bn", y))

    def _single_branch(self, x) -> Tensor:
        h = self._stem("b0", x)
        for i in range(1, 5):
            h = self._stage("b0", i, h)
        return gap(h)

    def _dual_branch(self, x_dc, x_ac) -> Tensor:
        a = self._stem("b0", x_dc)
        b = self._stem("b1", x_ac)
        for i in range(1, 5):
            a = self._stage("b0", i, a)
            b = self._stage("b1", i, b)
            m = MmtmParams(**{k: self.params[f"mmtm{i}.{k}"] for k in ("w_z", "b_z", "w_a", "b_a", "w_b", "b_b")})
            a, b = mmtm_fuse(a, b, m)
        return concat([gap(a), gap(b)], axis=1)

    def _head(self, feat) -> Tensor:
        return linear(feat, self.params["head.w"], self.params["head.b"])

    def dcac_extract(self, x) -> tuple[Tensor, Tensor]:
        """Learned DC/AC extraction; each head is depthwise 1xk -> BN -> ReLU
        -> depthwise 1xk.

        The DC head reads the raw map; the AC head reads the residual
        x - dc_hat. Short temporal kernels make poor band-pass filters --
        low-frequency drift leaks through and swamps the pulsatile
        amplitudes -- but they approximate a low-pass well, so subtracting
        the DC estimate first removes the drift to the accuracy of the DC
        head and leaves the AC head a far easier in-band cleanup.
        """
        if self.cfg.variant != "end2end":
            raise ConfigError(f"dcac_extract is only defined for the end2end variant, not {self.cfg.variant!r}")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        pad = (0, self.cfg.dcac_kernel // 2)
        p = self.params

        def head(name: str, inp):
            h = relu(self._bn(f"{name}.bn", depthwise_conv(inp, p[f"{name}.dw1.w"], padding=pad)))
            return depthwise_conv(h, p[f"{name}.dw2.w"], p[f"{name}.dw2.b"], padding=pad)

        dc_hat = head("dcac.dc", x)
        ac_hat = head("dcac.ac", x - dc_hat)
        return dc_hat, ac_hat

    def forward(self, x=None, x_dc=None, x_ac=None) -> SpO2Prediction:
        """Variant-appropriate forward pass.

        plain and end2end take the raw map x; early and filter take the
        filtered pair (x_dc, x_ac). Inputs are (3, N, T) or batched
        (B, 3, N, T); six-channel early fusion is concatenated here.
        """
        v = self.cfg.variant
        if v in ("plain", "end2end"):
            if x is None:
                raise ShapeError(f"variant {v!r} requires the raw map input x")
        elif x_dc is None or x_ac is None:
            raise ShapeError(f"variant {v!r} requires x_dc and x_ac inputs")

        x, sq_x = _batched(x)
        x_dc, sq_dc = _batched(x_dc)
        x_ac, _ = _batched(x_ac)
        squeeze = sq_x or sq_dc

        if v == "plain":
            pred = SpO2Prediction(y_out=self._head(self._single_branch(x)))
        elif v == "early":
            pred = SpO2Prediction(y_out=self._head(self._single_branch(concat([x_dc, x_ac], axis=1))))
        elif v == "filter":
            pred = SpO2Prediction(y_out=self._head(self._dual_branch(x_dc, x_ac)))
        else:
            dc_hat, ac_hat = self.dcac_extract(x)
            pred = SpO2Prediction(
                y_out=self._head(self._dual_branch(dc_hat, ac_hat)), x_dc_hat=dc_hat, x_ac_hat=ac_hat
            )
        if squeeze:
            pred.y_out = pred.y_out.reshape(pred.y_out.shape[1:])
            if pred.x_dc_hat is not None:
                pred.x_dc_hat = pred.x_dc_hat.reshape(pred.x_dc_hat.shape[1:])
                pred.x_ac_hat = pred.x_ac_hat.reshape(pred.x_ac_hat.shape[1:])
        return pred


def build_model(cfg: ModelConfig) -> Model:
    return Model(cfg)


def loss_spo2(y_out, y_gt) -> Tensor:
    """MSE plus (1 - Pearson r), each averaged over the batch."""
    return mse_loss(y_out, y_gt) + negcorr_loss(y_out, y_gt)


def loss_end_to_end(pred: SpO2Prediction, y_gt, x_dc, x_ac, alpha: float) -> Tensor:
    """Task loss plus alpha-weighted DC/AC reconstruction losses.

    alpha = 0 returns exactly the task loss (no zero-weighted graph nodes).
    """
    base = loss_spo2(pred.y_out, y_gt)
    if alpha == 0:
        return base
    if pred.x_dc_hat is None or pred.x_ac_hat is None:
        raise ShapeError("reconstruction loss requires a prediction with DC/AC estimates")
    recon = mse_loss(pred.x_dc_hat, x_dc) + mse_loss(pred.x_ac_hat, x_ac)
    return base + recon * alpha


def count_params(model: Model) -> int:
    return sum(t.size for t in model.params.values())


def save_model(model: Model, out_dir) -> None:
    """Checkpoint = parameter blob + manifest + config JSON.

    Batch-norm running statistics ride along in the blob under state.*
    names; they are state, not trainable parameters.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors: dict[str, np.ndarray] = {k: t.data for k, t in model.params.items()}
    for name, st in model.bn.items():
        tensors[f"state.{name}.running_mean"] = st.running_mean
        tensors[f"state.{name}.running_var"] = st.running_var
    save_params(tensors, out / "params.bin", out / "manifest.json")
    with open(out / "config.json", "w", encoding="utf-8") as f:
        json.dump(asdict(model.cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(ckpt_dir) -> Model:
    ckpt = Path(ckpt_dir)
    with open(ckpt / "config.json", encoding="utf-8") as f:
        raw = json.load(f)
    raw["stage_channels"] = tuple(raw["stage_channels"])
    cfg = ModelConfig(**raw)
    model = Model(cfg)
    arrays = load_params(ckpt / "params.bin", ckpt / "manifest.json")
    for name, t in model.params.items():
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise ShapeError(f"checkpoint tensor {name} has shape {arr.shape}, model expects {t.data.shape}")
        t.data = arr.astype(np.float32)
    for name, st in model.bn.items():
        st.running_mean = arrays[f"state.{name}.running_mean"].astype(np.float32)
        st.running_var = arrays[f"state.{name}.running_var"].astype(np.float32)
    return model
