"""노이즈 예측 네트워크 - PointNet 포인트 임베딩 + 트랜스포머 블록 3종

블록 종류:
    dit3d_adaln_zero     - (time, kappa) MLP가 블록마다 AdaLN shift/scale/gate 생성, 0 초기화
    pixart_adaln_single  - 시간만으로 전역 AdaLN, self-attn 게이트 후 cross-attn, 그 다음 MLP
    logen                - self-attn 직후 같은 잔차 가지 안에서 cross-attn, 게이트는 둘 다 끝난 뒤
"""

import math
from collections import OrderedDict
from typing import Dict, Optional

import numpy as np

from .config import VARIANTS, DenoiserConfig
from .encodings import EncoderConfig, encode_kappa, encode_time
from .errors import CapacityError, ConfigError, DimensionError
from .models import Condition
from .tensor import (
    Tensor,
    add,
    concat,
    conv1x1,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    no_grad,
    parameter,
    reshape,
    scale,
    silu,
    slice_cols,
    slice_rows,
    softmax_lastdim,
    transpose,
)

# AdaLN 출력 6등분 순서
SHIFT_MSA, SCALE_MSA, GATE_MSA, SHIFT_MLP, SCALE_MLP, GATE_MLP = range(6)


class DenoiserWeights:
    """노이즈 예측기의 모든 학습 파라미터"""

    def __init__(self, config: DenoiserConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params
        self.encoder = EncoderConfig.from_model(config)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise ConfigError(f"가중치 '{name}'가 없습니다 (블록 종류 {self.config.variant})") from None

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def get(self, name: str) -> Optional[Tensor]:
        return self.params.get(name)

    @property
    def dtype(self):
        return next(iter(self.params.values())).data.dtype

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k, p.data) for k, p in self.params.items())

    @classmethod
    def from_state_dict(cls, config: DenoiserConfig, state: Dict[str, np.ndarray], dtype=np.float32) -> "DenoiserWeights":
        reference = init_weights(config, seed=0, dtype=dtype)
        params = OrderedDict()
        for name, ref in reference.params.items():
            if name not in state:
                raise ConfigError(f"체크포인트에 가중치 '{name}'가 없습니다")
            value = np.asarray(state[name], dtype=dtype)
            if value.shape != ref.shape:
                raise ConfigError(f"가중치 '{name}' shape {value.shape} != {ref.shape}")
            params[name] = parameter(value.copy(), name=name, dtype=dtype)
        return cls(config, params)


# ---------------------------------------------------------------- 초기화


class _Init:
    def __init__(self, rng: np.random.Generator, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = parameter(np.asarray(value, dtype=self.dtype), name=name, dtype=self.dtype)

    def linear(self, prefix: str, fan_in: int, fan_out: int, bias: bool = True, init: str = "xavier") -> None:
        if init == "zero":
            w = np.zeros((fan_in, fan_out))
        elif init == "normal":
            w = self.rng.normal(0.0, 0.02, size=(fan_in, fan_out))
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = self.rng.uniform(-limit, limit, size=(fan_in, fan_out))
        self.add(f"{prefix}.w", w)
        if bias:
            self.add(f"{prefix}.b", np.zeros(fan_out))

    def attention(self, prefix: str, width: int) -> None:
        self.linear(f"{prefix}.q", width, width)
        self.linear(f"{prefix}.k", width, width, bias=False)
        self.linear(f"{prefix}.v", width, width)
        self.linear(f"{prefix}.proj", width, width)

    def mlp(self, prefix: str, width: int, ratio: int) -> None:
        self.linear(f"{prefix}.fc1", width, width * ratio)
        self.linear(f"{prefix}.fc2", width * ratio, width)


def init_weights(config: DenoiserConfig, seed: int = 0, dtype=np.float32) -> DenoiserWeights:
    """
    설정에 맞는 가중치 초기화

    AdaLN을 만드는 linear는 모두 0으로, 위치 임베딩과 null 임베딩도 0으로 시작한다.

    Args:
        config: 네트워크 설정
        seed: 초기화 시드
        dtype: 파라미터 dtype (학습 float32, 기울기 검사 float64)
    """
    if config.variant not in VARIANTS:
        raise ConfigError(f"알 수 없는 블록 종류: {config.variant}")
    W = config.width
    enc = EncoderConfig.from_model(config)
    init = _Init(np.random.default_rng(seed), dtype)

    init.linear("embed", 4, W)
    init.add("pos", np.zeros((config.max_points, W)))
    init.add("null", np.zeros((1, enc.cond_dim)))

    if config.variant == "dit3d_adaln_zero":
        init.linear("cond.fc1", enc.embed_dim + enc.cond_dim, W, init="normal")
        init.linear("cond.fc2", W, W, init="normal")
        for i in range(config.depth):
            init.attention(f"blocks.{i}.attn", W)
            init.mlp(f"blocks.{i}.mlp", W, config.mlp_ratio)
            init.linear(f"blocks.{i}.ada", W, 6 * W, init="zero")
    else:
        init.linear("time.fc1", enc.embed_dim, W, init="normal")
        init.linear("time.fc2", W, W, init="normal")
        init.linear("t_block", W, 6 * W, init="zero")
        init.linear("cond_proj", enc.embed_dim, W)
        for i in range(config.depth):
            init.add(f"blocks.{i}.table", init.rng.normal(size=(1, 6 * W)) / math.sqrt(W))
            init.attention(f"blocks.{i}.attn", W)
            init.attention(f"blocks.{i}.cross", W)
            init.mlp(f"blocks.{i}.mlp", W, config.mlp_ratio)

    init.add("final.g", np.ones(W))
    init.add("final.b", np.zeros(W))
    init.linear("head", W, 4)
    return DenoiserWeights(config, init.params)


# ---------------------------------------------------------------- 하위 레이어


def _lin(x: Tensor, weights: DenoiserWeights, prefix: str) -> Tensor:
    return linear(x, weights[f"{prefix}.w"], weights.get(f"{prefix}.b"))


def _attend(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: Optional[np.ndarray]) -> Tensor:
    width = q.shape[1]
    dh = width // heads
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
        scores = scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dh))
        outs.append(matmul(softmax_lastdim(scores, mask), vh))
    return outs[0] if heads == 1 else concat(outs, axis=1)


def _self_attention(x: Tensor, weights: DenoiserWeights, prefix: str, heads: int, mask) -> Tensor:
    q = _lin(x, weights, f"{prefix}.q")
    k = _lin(x, weights, f"{prefix}.k")
    v = _lin(x, weights, f"{prefix}.v")
    return _lin(_attend(q, k, v, heads, mask), weights, f"{prefix}.proj")


def _cross_attention(x: Tensor, tokens: Tensor, weights: DenoiserWeights, prefix: str, heads: int) -> Tensor:
    q = _lin(x, weights, f"{prefix}.q")
    k = _lin(tokens, weights, f"{prefix}.k")
    v = _lin(tokens, weights, f"{prefix}.v")
    return _lin(_attend(q, k, v, heads, None), weights, f"{prefix}.proj")


def _mlp(x: Tensor, weights: DenoiserWeights, prefix: str) -> Tensor:
    return _lin(gelu(_lin(x, weights, f"{prefix}.fc1")), weights, f"{prefix}.fc2")


def _modulate(x: Tensor, shift: Tensor, scale_: Tensor) -> Tensor:
    return add(add(x, mul(x, scale_)), shift)


def _chunk(mod: Tensor, width: int, index: int) -> Tensor:
    return slice_cols(mod, index * width, (index + 1) * width)


def _check_variant(variant: str, weights: DenoiserWeights) -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"알 수 없는 블록 종류: {variant} (가능: {', '.join(VARIANTS)})")
    needs_dit = variant == "dit3d_adaln_zero"
    if needs_dit != ("cond.fc1.w" in weights):
        raise ConfigError(f"블록 종류 {variant}는 {weights.config.variant} 가중치와 호환되지 않습니다")
    return variant


# ---------------------------------------------------------------- 공개 연산


def embed_points(x: Tensor, weights: DenoiserWeights) -> Tensor:
    """포인트별 conv1x1 (4 -> width) 후 슬롯별 위치 임베딩 더하기"""
    n = x.shape[0]
    if x.data.ndim != 2 or x.shape[1] != 4:
        raise DimensionError(f"입력 포인트는 (N, 4) 이어야 합니다: {x.shape}")
    if n > weights.config.max_points:
        raise CapacityError(f"포인트 수 {n}가 max_points {weights.config.max_points}를 넘습니다")
    projected = conv1x1(x, weights["embed.w"], weights["embed.b"])
    return add(projected, slice_rows(weights["pos"], 0, n))


def condition_inputs(kappa: Condition, t, weights: DenoiserWeights):
    """(cond_vec (1, C), time_vec (1, E)) 텐서. null 조건이면 학습되는 null 파라미터 자체"""
    dtype = weights.dtype
    time_vec = Tensor(encode_time(t, weights.encoder).reshape(1, -1), dtype=dtype)
    if kappa.is_null:
        return weights["null"], time_vec
    return Tensor(encode_kappa(kappa, weights.encoder).reshape(1, -1), dtype=dtype), time_vec


def build_conditioning(cond_vec: Tensor, time_vec: Tensor, weights: DenoiserWeights, variant: Optional[str] = None) -> dict:
    """
    블록 공통 조건 문맥을 한 번 계산

    Returns:
        dit3d_adaln_zero: {"c": (1, W)}
        pixart/logen: {"mod": (1, 6W) 전역 AdaLN, "tokens": (6, W) 조건 토큰}
    """
    variant = _check_variant(variant or weights.config.variant, weights)
    if variant == "dit3d_adaln_zero":
        joined = concat([time_vec, cond_vec], axis=1)
        c = _lin(silu(_lin(joined, weights, "cond.fc1")), weights, "cond.fc2")
        return {"c": c}

    t_emb = _lin(silu(_lin(time_vec, weights, "time.fc1")), weights, "time.fc2")
    mod = _lin(silu(t_emb), weights, "t_block")
    # kappa 스칼라 6개의 임베딩을 토큰 6개로
    per_scalar = reshape(cond_vec, (6, weights.encoder.embed_dim))
    tokens = _lin(per_scalar, weights, "cond_proj")
    return {"mod": mod, "tokens": tokens}


def _block(h: Tensor, ctx: dict, mask, weights: DenoiserWeights, index: int, variant: str) -> Tensor:
    W = weights.config.width
    heads = weights.config.heads
    p = f"blocks.{index}"

    if variant == "dit3d_adaln_zero":
        mod = _lin(silu(ctx["c"]), weights, f"{p}.ada")
    else:
        mod = add(ctx["mod"], weights[f"{p}.table"])
    part = lambda i: _chunk(mod, W, i)  # noqa: E731

    attn_in = _modulate(layer_norm(h), part(SHIFT_MSA), part(SCALE_MSA))
    attn = _self_attention(attn_in, weights, f"{p}.attn", heads, mask)

    if variant == "dit3d_adaln_zero":
        h = add(h, mul(attn, part(GATE_MSA)))
    elif variant == "pixart_adaln_single":
        h = add(h, mul(attn, part(GATE_MSA)))
        h = add(h, _cross_attention(h, ctx["tokens"], weights, f"{p}.cross", heads))
    else:
        branch = add(attn, _cross_attention(attn, ctx["tokens"], weights, f"{p}.cross", heads))
        h = add(h, mul(branch, part(GATE_MSA)))

    mlp_in = _modulate(layer_norm(h), part(SHIFT_MLP), part(SCALE_MLP))
    return add(h, mul(_mlp(mlp_in, weights, f"{p}.mlp"), part(GATE_MLP)))


def block_forward(
    h: Tensor,
    cond_vec,
    time_vec,
    mask: Optional[np.ndarray],
    weights: DenoiserWeights,
    index: int = 0,
    variant: Optional[str] = None,
) -> Tensor:
    """
    트랜스포머 블록 하나 적용

    Args:
        h: (N, W) 포인트 특징
        cond_vec: (C,) 또는 (1, C) 조건 인코딩
        time_vec: (E,) 또는 (1, E) 시간 인코딩
        mask: (N,) 실제 포인트 표시. None이면 전부 실제
        weights: 가중치
        index: 블록 번호
        variant: 지정하면 가중치 설정 대신 이 블록 종류로 계산
    """
    variant = _check_variant(variant or weights.config.variant, weights)
    if not 0 <= index < weights.config.depth:
        raise ConfigError(f"블록 번호 {index}가 depth {weights.config.depth} 범위를 벗어났습니다")
    cond_vec = cond_vec if isinstance(cond_vec, Tensor) else Tensor(np.reshape(cond_vec, (1, -1)), dtype=weights.dtype)
    time_vec = time_vec if isinstance(time_vec, Tensor) else Tensor(np.reshape(time_vec, (1, -1)), dtype=weights.dtype)
    ctx = build_conditioning(cond_vec, time_vec, weights, variant)
    return _block(h, ctx, mask, weights, index, variant)


def predict_noise(
    x_t,
    t,
    kappa: Condition,
    weights: DenoiserWeights,
    mask: Optional[np.ndarray] = None,
    variant: Optional[str] = None,
) -> Tensor:
    """
    노이즈 추정 eps_theta(x_t, t, kappa)

    Args:
        x_t: (N, 4) 노이즈 섞인 포인트 (Tensor 또는 배열)
        t: 타임스텝
        kappa: 조건 (null이면 무조건부)
        weights: 가중치
        mask: (N,) 실제 포인트 표시 (패딩 슬롯 출력은 무시 대상)

    Returns:
        (N, 4) 노이즈 추정 Tensor
    """
    variant = _check_variant(variant or weights.config.variant, weights)
    x = x_t if isinstance(x_t, Tensor) else Tensor(x_t, dtype=weights.dtype)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (x.shape[0],):
            raise DimensionError(f"mask shape {mask.shape} != ({x.shape[0]},)")

    h = embed_points(x, weights)
    cond_vec, time_vec = condition_inputs(kappa, t, weights)
    ctx = build_conditioning(cond_vec, time_vec, weights, variant)
    for i in range(weights.config.depth):
        h = _block(h, ctx, mask, weights, i, variant)
    h = layer_norm(h, weights["final.g"], weights["final.b"])
    return _lin(h, weights, "head")


class Denoiser:
    """
    추론용 노이즈 예측기 (numpy 입출력, 테이프 기록 없음)

    calls / null_calls 로 호출 횟수를 센다.
    """

    def __init__(self, weights: DenoiserWeights):
        self.weights = weights
        self.calls = 0
        self.null_calls = 0

    @property
    def config(self) -> DenoiserConfig:
        return self.weights.config

    def __call__(self, x_t: np.ndarray, t: int, kappa: Condition, mask: Optional[np.ndarray] = None) -> np.ndarray:
        self.calls += 1
        if kappa.is_null:
            self.null_calls += 1
        with no_grad():
            out = predict_noise(x_t, t, kappa, self.weights, mask)
        return out.data.astype(np.float64)
