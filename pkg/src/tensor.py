"""최소 텐서 엔진 - numpy 버퍼 위의 역방향 자동 미분

연산은 활성 Tape가 있고 입력 중 하나라도 requires_grad일 때만 기록된다.
Tape가 없으면 순수 numpy 순전파로 동작하므로 추론은 그대로 빠르다.

    with Tape() as tape:
        loss = sum_all(mul(x, x))
    tape.backward(loss)
"""

import json
import math
import struct
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DimensionError, InvalidDataError

_state = threading.local()

_GELU_C = math.sqrt(2.0 / math.pi)
CHECKPOINT_MAGIC = b"LGCK"


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextmanager
def default_dtype(dtype):
    """새로 만드는 텐서의 dtype 지정 (기본 float32, 기울기 검사는 float64)"""
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad():
    """블록 안에서는 활성 테이프가 있어도 기록하지 않음"""
    previous = getattr(_state, "tape", None)
    _state.tape = None
    try:
        yield
    finally:
        _state.tape = previous


class Tensor:
    """연산 기록이 가능한 밀집 텐서"""

    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        self.data = np.asarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._recorded = False
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str = "", dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """
    연산 기록 테이프 (스레드마다 하나)

    backward는 기록의 역순으로 진행하며 리프 텐서의 grad에 더한다 (덮어쓰지 않음).
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self._previous: Optional["Tape"] = None

    def __enter__(self) -> "Tape":
        self._previous = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._previous
        self._previous = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward는 스칼라 손실만 받습니다: shape={loss.shape}")
        if not loss.requires_grad:
            return

        adjoints: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[int, Tensor] = {}
        if not loss._recorded:
            leaves[id(loss)] = loss

        for node in reversed(self.nodes):
            upstream = adjoints.pop(id(node.out), None)
            if upstream is None:
                continue
            grads = node.vjp(upstream)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                adjoints[key] = adjoints[key] + g if key in adjoints else g
                if not inp._recorded:
                    leaves[key] = inp

        # 리프 grad는 한 번에 누적
        for key, leaf in leaves.items():
            g = adjoints.get(key)
            if g is None:
                continue
            g = g.astype(leaf.data.dtype, copy=False)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor) -> None:
    """loss를 만든 테이프로 역전파"""
    if loss.data.size != 1:
        raise ContractError(f"backward는 스칼라 손실만 받습니다: shape={loss.shape}")
    if loss._tape is not None:
        loss._tape.backward(loss)
    elif loss.requires_grad:
        g = np.ones_like(loss.data)
        loss.grad = g if loss.grad is None else loss.grad + g


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(out_data, dtype=out_data.dtype)
    tape = getattr(_state, "tape", None)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        out._tape = tape
        tape.nodes.append(_Node(out, tuple(inputs), vjp))
    return out


def _is_row(b: np.ndarray, a: np.ndarray) -> bool:
    """b가 a의 마지막 축에 맞는 행 벡터인지 ((W,) 또는 (1, W))"""
    if a.ndim != 2:
        return False
    return b.shape == (a.shape[1],) or b.shape == (1, a.shape[1])


def _check_binary(a: Tensor, b: Tensor, op: str) -> bool:
    if a.shape == b.shape:
        return False
    if _is_row(b.data, a.data):
        return True
    raise DimensionError(f"{op}: shape 불일치 {a.shape} vs {b.shape}")


def _reduce_row(g: np.ndarray, shape) -> np.ndarray:
    return g.sum(axis=0).reshape(shape)


# ---------------------------------------------------------------- 원소 연산


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    row = _check_binary(a, b, "add")

    def vjp(g):
        return g, (_reduce_row(g, b.shape) if row else g)

    return _record(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    row = _check_binary(a, b, "sub")

    def vjp(g):
        return g, (-_reduce_row(g, b.shape) if row else -g)

    return _record(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    row = _check_binary(a, b, "mul")

    def vjp(g):
        gb = g * a.data
        return g * b.data, (_reduce_row(gb, b.shape) if row else gb)

    return _record(a.data * b.data, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def gelu(x: Tensor) -> Tensor:
    """tanh 근사 GELU"""
    x = as_tensor(x)
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d**3)
    t = np.tanh(inner)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * d**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t**2) * dinner),)

    return _record(0.5 * d * (1.0 + t), (x,), vjp)


def silu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    d = x.data
    sig = 1.0 / (1.0 + np.exp(-d))

    def vjp(g):
        return (g * sig * (1.0 + d * (1.0 - sig)),)

    return _record(d * sig, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    return _record(np.where(positive, x.data, 0).astype(x.dtype), (x,), lambda g: (g * positive,))


# ---------------------------------------------------------------- 형태 연산


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shape 불일치 {a.shape} @ {b.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w + b (b는 행 벡터로 브로드캐스트)"""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: shape 불일치 {x.shape} @ {w.shape}")
    out = x.data @ w.data
    if b is None:
        return _record(out, (x, w), lambda g: (g @ w.data.T, x.data.T @ g))
    b = as_tensor(b)
    if b.shape not in ((w.shape[1],), (1, w.shape[1])):
        raise DimensionError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0).reshape(b.shape)

    return _record(out + b.data, (x, w, b), vjp)


def conv1x1(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """포인트별 공유 가중치 1D 컨볼루션 (커널 크기 1) = 포인트별 linear"""
    return linear(x, w, b)


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose는 2차원만 지원: {x.shape}")
    return _record(x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape 불가: {original} -> {shape}") from e
    return _record(out, (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: shape 불일치 {[t.shape for t in tensors]}") from e
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _record(out, tensors, vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols 범위 오류: {x.shape}[:, {start}:{stop}]")

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _record(x.data[:, start:stop], (x,), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError(f"slice_rows 범위 오류: {x.shape}[{start}:{stop}]")

    def vjp(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _record(x.data[start:stop], (x,), vjp)


# ---------------------------------------------------------------- 정규화 / 축소


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None, eps: float = 1e-6) -> Tensor:
    """마지막 축 layer normalization (통계는 float64로 계산)"""
    x = as_tensor(x)
    d = x.data.astype(np.float64)
    mu = d.mean(axis=-1, keepdims=True)
    var = ((d - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (d - mu) * inv
    dtype = x.data.dtype

    inputs: List[Tensor] = [x]
    out = xhat
    if gain is not None:
        gain = as_tensor(gain)
        if not _is_row(gain.data, x.data):
            raise DimensionError(f"layer_norm gain shape {gain.shape}")
        out = out * gain.data
        inputs.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        if not _is_row(bias.data, x.data):
            raise DimensionError(f"layer_norm bias shape {bias.shape}")
        out = out + bias.data
        inputs.append(bias)

    def vjp(g):
        g64 = g.astype(np.float64)
        grads = []
        gx = g64 * gain.data if gain is not None else g64
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        grads.append(dx.astype(dtype))
        if gain is not None:
            grads.append(_reduce_row(g64 * xhat, gain.shape).astype(dtype))
        if bias is not None:
            grads.append(_reduce_row(g64, bias.shape).astype(dtype))
        return tuple(grads)

    return _record(out.astype(dtype), inputs, vjp)


def softmax_lastdim(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    마지막 축 softmax

    mask가 False인 위치는 정확히 0을 출력하고 정규화 분모에도 들어가지 않는다.
    mask shape은 (K,) (모든 행 공통) 또는 x와 같은 shape.
    """
    x = as_tensor(x)
    d = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d.shape and mask.shape != (d.shape[-1],):
            raise DimensionError(f"softmax mask shape {mask.shape} vs {d.shape}")
        mask = np.broadcast_to(mask, d.shape)
        logits = np.where(mask, d, -np.inf)
    else:
        logits = d
    peak = np.max(logits, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(logits - peak)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    total = e.sum(axis=-1, keepdims=True)
    p = np.divide(e, total, out=np.zeros_like(e), where=total > 0).astype(d.dtype)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record(p, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    total = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    return _record(total, (x,), lambda g: (np.full_like(x.data, g),))


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    value = np.asarray(x.data.sum(dtype=np.float64) / n, dtype=x.dtype)
    return _record(value, (x,), lambda g: (np.full_like(x.data, g / n),))


def max_rows(x: Tensor) -> Tensor:
    """행 방향 최댓값 (N, C) -> (1, C), 동률이면 첫 행에 기울기"""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"max_rows는 2차원만 지원: {x.shape}")
    idx = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[idx, cols] = g.reshape(-1)
        return (full,)

    return _record(x.data[idx, cols].reshape(1, -1), (x,), vjp)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """평균 교차 엔트로피 (logits (B, C), labels 정수 (B,))"""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy shape 오류: {logits.shape}, {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise InvalidDataError("라벨이 클래스 범위를 벗어났습니다")
    d = logits.data.astype(np.float64)
    shifted = d - d.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(labels.size)
    value = np.asarray(-log_p[rows, labels].mean(), dtype=logits.dtype)

    def vjp(g):
        probs = np.exp(log_p)
        probs[rows, labels] -= 1.0
        return ((probs * (float(g) / labels.size)).astype(logits.dtype),)

    return _record(value, (logits,), vjp)


# ---------------------------------------------------------------- 기울기 검사


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> float:
    """
    해석적 기울기와 중앙 차분 비교

    Args:
        f: x를 받아 스칼라 Tensor를 돌려주는 순수 함수
        x: requires_grad 리프 텐서 (값을 잠시 바꿨다가 복원)
        h: 차분 간격

    Returns:
        max |analytic - numeric| / max(1e-8, |numeric|)
    """
    x.requires_grad = True
    saved_grad = x.grad
    x.grad = None
    with Tape() as tape:
        loss = f(x)
    tape.backward(loss)
    analytic = np.zeros_like(x.data, dtype=np.float64) if x.grad is None else x.grad.astype(np.float64)
    x.grad = saved_grad

    numeric = np.zeros_like(analytic)
    x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = float(f(x).data)
        flat[i] = original - h
        minus = float(f(x).data)
        flat[i] = original
        numeric.reshape(-1)[i] = (plus - minus) / (2.0 * h)

    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


def grad_check_many(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-3) -> Dict[str, float]:
    """
    여러 파라미터에 대한 grad_check (역전파 한 번, 차분은 파라미터 원소마다)

    Args:
        f: 인자 없이 파라미터를 클로저로 참조하는 스칼라 함수

    Returns:
        파라미터 이름 -> 최대 상대 오차
    """
    params = list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)

    errors: Dict[str, float] = {}
    for i, p in enumerate(params):
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
        numeric = np.zeros_like(analytic)
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            plus = float(f().data)
            flat[j] = original - h
            minus = float(f().data)
            flat[j] = original
            numeric.reshape(-1)[j] = (plus - minus) / (2.0 * h)
        err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))
        errors[p.name or str(i)] = float(err.max()) if err.size else 0.0
        p.grad = None
    return errors


# ---------------------------------------------------------------- 체크포인트


def save_checkpoint(path: Path, tensors: Dict[str, np.ndarray], header: Optional[dict] = None) -> None:
    """
    [magic 4B][header_len:uint32][JSON header][little-endian float32 데이터] 형식으로 저장

    header에는 텐서 이름/shape 목록과 호출자가 넘긴 설정 echo가 들어간다.
    """
    from .utils.io import atomic_write_bytes

    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    meta = dict(header or {})
    meta["tensors"] = entries
    head = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    payload = CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)
    atomic_write_bytes(Path(path), payload)


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], dict]:
    """save_checkpoint 의 역. (이름 -> float32 배열, 헤더) 반환"""
    path = Path(path)
    if not path.exists():
        raise InvalidDataError(f"체크포인트 파일이 없습니다: {path}")
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise InvalidDataError(f"체크포인트 형식이 아닙니다: {path}")
    (head_len,) = struct.unpack_from("<I", raw, 4)
    start = 8 + head_len
    header = json.loads(raw[8:start].decode("utf-8"))
    tensors: Dict[str, np.ndarray] = {}
    for entry in header.pop("tensors"):
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=start + entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return tensors, header
